#pragma once

// Prompt embeddings, cached pairwise distances and the RBF kernel built on
// top of them.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace vip {

/// Immutable registry of prompt ids and embeddings. Row i of embeddings()
/// belongs to id(i).
class PromptSet {
 public:
  PromptSet(std::vector<std::string> ids, Eigen::MatrixXd embeddings);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(embeddings_.cols()); }
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Eigen::MatrixXd& embeddings() const noexcept { return embeddings_; }
  std::optional<std::size_t> index_of(std::string_view id) const;

  /// Throws not_found naming the first unknown id.
  std::vector<std::size_t> indices_of(std::span<const std::string> ids) const;

 private:
  std::vector<std::string> ids_;
  Eigen::MatrixXd embeddings_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Strict lower triangle of pairwise Euclidean distances, computed once per
/// unordered pair. Entry (i, j) with i > j lives at i*(i-1)/2 + j.
class DistanceCache {
 public:
  explicit DistanceCache(const PromptSet& set);
  DistanceCache(std::vector<std::string> ids, std::vector<double> lower_triangle);

  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::span<const double> lower_triangle() const noexcept { return lower_; }
  double operator()(std::size_t i, std::size_t j) const;

  /// Fingerprint over ids and distance bits.
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::string> ids_;
  std::vector<double> lower_;
};

/// Median of the Q(Q-1)/2 distinct pairwise distances; the even case averages
/// the two middle order statistics.
double median_bandwidth(const DistanceCache& distances);
double median_bandwidth(const PromptSet& set);

class KernelMatrix {
 public:
  /// K[i][j] = exp(-d_ij^2 / (2 h^2)).
  KernelMatrix(const DistanceCache& distances, double bandwidth);

  /// Wraps an explicit matrix (crafted kernels, tests). Must be symmetric with
  /// a unit diagonal.
  static KernelMatrix from_values(Eigen::MatrixXd values, double bandwidth = 1.0);

  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.rows()); }
  double bandwidth() const noexcept { return bandwidth_; }
  const Eigen::MatrixXd& values() const noexcept { return values_; }
  double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }

 private:
  KernelMatrix() = default;
  Eigen::MatrixXd values_;
  double bandwidth_ = 1.0;
  std::uint64_t fingerprint_ = 0;
};

KernelMatrix kernel_matrix(const PromptSet& set, double bandwidth);

struct KernelBlocks {
  std::vector<std::size_t> batch;       // in caller order
  std::vector<std::size_t> complement;  // ascending
  Eigen::MatrixXd batch_batch;
  Eigen::MatrixXd complement_batch;
  Eigen::MatrixXd complement_complement;
};

KernelBlocks kernel_blocks(const KernelMatrix& kernel, std::span<const std::size_t> batch);

/// Throws invalid_input on empty, duplicate or out-of-range indices.
void validate_batch(std::span<const std::size_t> batch, std::size_t size);

// Kernel cache file: "VIPK", version byte, bandwidth, ids, lower-triangle
// distances, trailing FNV checksum. Little-endian.
inline constexpr unsigned char kKernelCacheVersion = 1;

struct KernelCache {
  DistanceCache distances;
  double bandwidth;
};

void write_kernel_cache(std::ostream& out, const DistanceCache& distances, double bandwidth);
KernelCache read_kernel_cache(std::istream& in);

}  // namespace vip
