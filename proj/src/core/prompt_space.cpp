#include "vip/prompt_space.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <unordered_set>

#include "vip/error.hpp"
#include "vip/hash.hpp"

namespace vip {

PromptSet::PromptSet(std::vector<std::string> ids, Eigen::MatrixXd embeddings)
    : ids_(std::move(ids)), embeddings_(std::move(embeddings)) {
  if (static_cast<Eigen::Index>(ids_.size()) != embeddings_.rows())
    fail(ErrorCode::invalid_input, "prompt set: " + std::to_string(ids_.size()) + " ids but " +
                                       std::to_string(embeddings_.rows()) + " embeddings");
  if (!ids_.empty() && embeddings_.cols() < 1)
    fail(ErrorCode::invalid_input, "prompt set: embedding dimension must be >= 1");
  if (!embeddings_.allFinite())
    fail(ErrorCode::invalid_input, "prompt set: embeddings contain non-finite values");
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second)
      fail(ErrorCode::invalid_input, "prompt set: duplicate prompt id '" + ids_[i] + "'");
  }
}

std::optional<std::size_t> PromptSet::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> PromptSet::indices_of(std::span<const std::string> ids) const {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto idx = index_of(id);
    if (!idx) fail(ErrorCode::not_found, "unknown prompt id '" + id + "'");
    out.push_back(*idx);
  }
  return out;
}

namespace {

std::size_t tri_index(std::size_t i, std::size_t j) { return i * (i - 1) / 2 + j; }

}  // namespace

DistanceCache::DistanceCache(const PromptSet& set) : ids_(set.ids()) {
  const auto& x = set.embeddings();
  const std::size_t q = set.size();
  lower_.resize(q < 2 ? 0 : q * (q - 1) / 2);
  for (std::size_t i = 1; i < q; ++i)
    for (std::size_t j = 0; j < i; ++j) lower_[tri_index(i, j)] = (x.row(i) - x.row(j)).norm();
}

DistanceCache::DistanceCache(std::vector<std::string> ids, std::vector<double> lower_triangle)
    : ids_(std::move(ids)), lower_(std::move(lower_triangle)) {
  const std::size_t q = ids_.size();
  const std::size_t expected = q < 2 ? 0 : q * (q - 1) / 2;
  if (lower_.size() != expected)
    fail(ErrorCode::invalid_input, "distance cache: expected " + std::to_string(expected) +
                                       " distances, got " + std::to_string(lower_.size()));
  for (double d : lower_)
    if (!(d >= 0.0) || !std::isfinite(d))
      fail(ErrorCode::invalid_input, "distance cache: distances must be finite and >= 0");
}

double DistanceCache::operator()(std::size_t i, std::size_t j) const {
  if (i == j) return 0.0;
  if (i < j) std::swap(i, j);
  return lower_.at(tri_index(i, j));
}

std::uint64_t DistanceCache::fingerprint() const {
  Fnv1a h;
  h.u64(ids_.size());
  for (const auto& id : ids_) h.text(id);
  for (double d : lower_) h.f64(d);
  return h.digest();
}

double median_bandwidth(const DistanceCache& distances) {
  if (distances.size() < 2)
    fail(ErrorCode::invalid_input, "median bandwidth needs at least 2 prompts");
  std::vector<double> d(distances.lower_triangle().begin(), distances.lower_triangle().end());
  const std::size_t m = d.size();
  const std::size_t mid = m / 2;
  std::nth_element(d.begin(), d.begin() + mid, d.end());
  double median = d[mid];
  if (m % 2 == 0) {
    const double lower = *std::max_element(d.begin(), d.begin() + mid);
    median = 0.5 * (lower + median);
  }
  if (median <= 0.0) {
    const bool all_zero = std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; });
    fail(ErrorCode::degenerate_geometry,
         all_zero ? "all embeddings coincide; median bandwidth would be 0 (supply an explicit bandwidth)"
                  : "median pairwise distance is 0; supply an explicit bandwidth");
  }
  return median;
}

double median_bandwidth(const PromptSet& set) {
  if (set.size() < 2) fail(ErrorCode::invalid_input, "median bandwidth needs at least 2 prompts");
  return median_bandwidth(DistanceCache(set));
}

KernelMatrix::KernelMatrix(const DistanceCache& distances, double bandwidth)
    : bandwidth_(bandwidth) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
    fail(ErrorCode::invalid_input, "kernel bandwidth must be a positive finite number");
  const auto q = static_cast<Eigen::Index>(distances.size());
  values_.resize(q, q);
  const double scale = 1.0 / (2.0 * bandwidth * bandwidth);
  for (Eigen::Index i = 0; i < q; ++i) {
    values_(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double d = distances(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      const double k = std::exp(-d * d * scale);
      values_(i, j) = k;
      values_(j, i) = k;
    }
  }
  fingerprint_ = Fnv1a().u64(distances.fingerprint()).f64(bandwidth).digest();
}

KernelMatrix KernelMatrix::from_values(Eigen::MatrixXd values, double bandwidth) {
  if (values.rows() != values.cols()) fail(ErrorCode::invalid_input, "kernel matrix must be square");
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    if (values(i, i) != 1.0) fail(ErrorCode::invalid_input, "kernel matrix must have a unit diagonal");
    for (Eigen::Index j = 0; j < i; ++j)
      if (values(i, j) != values(j, i) || !std::isfinite(values(i, j)))
        fail(ErrorCode::invalid_input, "kernel matrix must be symmetric and finite");
  }
  KernelMatrix k;
  k.values_ = std::move(values);
  k.bandwidth_ = bandwidth;
  Fnv1a h;
  h.u64(k.size());
  for (Eigen::Index i = 0; i < k.values_.size(); ++i) h.f64(k.values_.data()[i]);
  k.fingerprint_ = h.f64(bandwidth).digest();
  return k;
}

KernelMatrix kernel_matrix(const PromptSet& set, double bandwidth) {
  return KernelMatrix(DistanceCache(set), bandwidth);
}

void validate_batch(std::span<const std::size_t> batch, std::size_t size) {
  if (batch.empty()) fail(ErrorCode::invalid_input, "batch must not be empty");
  std::unordered_set<std::size_t> seen;
  for (std::size_t idx : batch) {
    if (idx >= size)
      fail(ErrorCode::invalid_input, "prompt index " + std::to_string(idx) + " out of range [0, " +
                                         std::to_string(size) + ")");
    if (!seen.insert(idx).second)
      fail(ErrorCode::invalid_input, "prompt index " + std::to_string(idx) + " repeated in batch");
  }
}

KernelBlocks kernel_blocks(const KernelMatrix& kernel, std::span<const std::size_t> batch) {
  const std::size_t q = kernel.size();
  validate_batch(batch, q);
  KernelBlocks out;
  out.batch.assign(batch.begin(), batch.end());
  std::vector<bool> in_batch(q, false);
  for (std::size_t idx : batch) in_batch[idx] = true;
  for (std::size_t i = 0; i < q; ++i)
    if (!in_batch[i]) out.complement.push_back(i);

  const auto& k = kernel.values();
  const auto nb = static_cast<Eigen::Index>(out.batch.size());
  const auto nc = static_cast<Eigen::Index>(out.complement.size());
  out.batch_batch.resize(nb, nb);
  out.complement_batch.resize(nc, nb);
  out.complement_complement.resize(nc, nc);
  for (Eigen::Index a = 0; a < nb; ++a)
    for (Eigen::Index b = 0; b < nb; ++b) out.batch_batch(a, b) = k(out.batch[a], out.batch[b]);
  for (Eigen::Index c = 0; c < nc; ++c) {
    for (Eigen::Index b = 0; b < nb; ++b)
      out.complement_batch(c, b) = k(out.complement[c], out.batch[b]);
    for (Eigen::Index d = 0; d < nc; ++d)
      out.complement_complement(c, d) = k(out.complement[c], out.complement[d]);
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'V', 'I', 'P', 'K'};

template <typename T>
void put(std::ostream& out, Fnv1a& h, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
  h.bytes(buf);
}

template <typename T>
T get(std::istream& in, Fnv1a& h) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T)))
    fail(ErrorCode::io, "kernel cache: unexpected end of file");
  h.bytes(buf);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void write_kernel_cache(std::ostream& out, const DistanceCache& distances, double bandwidth) {
  static_assert(std::endian::native == std::endian::little, "kernel cache assumes little-endian hosts");
  Fnv1a h;
  out.write(kMagic, 4);
  h.bytes({reinterpret_cast<const unsigned char*>(kMagic), 4});
  put<unsigned char>(out, h, kKernelCacheVersion);
  put<double>(out, h, bandwidth);
  put<std::uint64_t>(out, h, distances.size());
  for (const auto& id : distances.ids()) {
    put<std::uint32_t>(out, h, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    h.bytes({reinterpret_cast<const unsigned char*>(id.data()), id.size()});
  }
  for (double d : distances.lower_triangle()) put<double>(out, h, d);
  const std::uint64_t digest = h.digest();
  out.write(reinterpret_cast<const char*>(&digest), sizeof digest);
  if (!out) fail(ErrorCode::io, "kernel cache: write failed");
}

KernelCache read_kernel_cache(std::istream& in) {
  Fnv1a h;
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    fail(ErrorCode::invalid_input, "kernel cache: bad magic");
  h.bytes({reinterpret_cast<const unsigned char*>(magic), 4});
  const auto version = get<unsigned char>(in, h);
  if (version != kKernelCacheVersion)
    fail(ErrorCode::version, "kernel cache: unsupported version " + std::to_string(version));
  const double bandwidth = get<double>(in, h);
  const auto q = get<std::uint64_t>(in, h);
  if (q > (1ULL << 24)) fail(ErrorCode::invalid_input, "kernel cache: implausible prompt count");
  std::vector<std::string> ids(q);
  for (auto& id : ids) {
    const auto len = get<std::uint32_t>(in, h);
    id.resize(len);
    if (!in.read(id.data(), len)) fail(ErrorCode::io, "kernel cache: unexpected end of file");
    h.bytes({reinterpret_cast<const unsigned char*>(id.data()), id.size()});
  }
  std::vector<double> lower(q < 2 ? 0 : q * (q - 1) / 2);
  for (double& d : lower) d = get<double>(in, h);
  std::uint64_t stored = 0;
  if (!in.read(reinterpret_cast<char*>(&stored), sizeof stored))
    fail(ErrorCode::io, "kernel cache: missing checksum");
  if (stored != h.digest()) fail(ErrorCode::integrity, "kernel cache: checksum mismatch");
  return {DistanceCache(std::move(ids), std::move(lower)), bandwidth};
}

}  // namespace vip
