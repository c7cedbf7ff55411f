#pragma once

// Recursive Gaussian-process belief over per-prompt latent values.
//
// The latent g(x_q) is linked to the modelled quantity through a sigmoid
// (success probability, binary rewards) or softplus (reward variance,
// continuous rewards). Each update conditions the prior mean on the latent
// observations of one batch; the kernel matrix stays fixed and only the mean
// is propagated to the next iteration.

#include <cstddef>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "vip/prompt_space.hpp"

namespace vip {

enum class Link { sigmoid, softplus };

const char* to_string(Link link) noexcept;
Link parse_link(std::string_view name);

inline constexpr double kDefaultClipEps = 0.01;
inline constexpr double kDefaultJitter = 1e-8;
/// Floor applied to continuous-mode sample variances before softplus^-1.
inline constexpr double kVarianceFloor = 1e-6;

double sigmoid(double x) noexcept;
double logit(double p) noexcept;
double softplus(double x) noexcept;
double softplus_inverse(double y) noexcept;

/// Binary mode: logit(clip((mean(r)+1)/2, eps, 1-eps)), rewards in {-1,+1}.
/// Continuous mode: softplus^-1(max(s^2, floor)) with the unbiased s^2.
double latent_observation(std::span<const double> rewards, double clip_eps, Link link);

struct PromptRewards {
  std::size_t index;
  std::vector<double> rewards;
};

struct BatchObservation {
  std::vector<PromptRewards> entries;

  std::vector<std::size_t> indices() const;
  /// Checks non-empty reward lists, unique indices within [0, size) and, for
  /// the sigmoid link, rewards in {-1,+1}.
  void validate(std::size_t size, Link link) const;
};

class BeliefState {
 public:
  BeliefState(std::shared_ptr<const KernelMatrix> kernel, Link link, double clip_eps,
              double jitter = kDefaultJitter);
  BeliefState(std::shared_ptr<const KernelMatrix> kernel, Link link, double clip_eps,
              Eigen::VectorXd mean, double jitter = kDefaultJitter);

  std::size_t size() const noexcept { return static_cast<std::size_t>(mean_.size()); }
  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  Link link() const noexcept { return link_; }
  double clip_eps() const noexcept { return clip_eps_; }
  double jitter() const noexcept { return jitter_; }
  const KernelMatrix& kernel() const noexcept { return *kernel_; }
  const std::shared_ptr<const KernelMatrix>& kernel_ptr() const noexcept { return kernel_; }

  /// sigmoid(m[q]) or softplus(m[q]).
  double predict(std::size_t index) const;
  std::vector<double> predict(std::span<const std::size_t> batch) const;

  /// Returns the conditioned state; *this is left untouched.
  BeliefState update(const BatchObservation& obs) const;

  /// Posterior covariance over the complement of `batch` (diagnostic only;
  /// never fed back into the state).
  Eigen::MatrixXd posterior_covariance(std::span<const std::size_t> batch) const;

 private:
  std::shared_ptr<const KernelMatrix> kernel_;
  Link link_;
  double clip_eps_;
  double jitter_;
  Eigen::VectorXd mean_;
};

inline BeliefState init_belief(std::shared_ptr<const KernelMatrix> kernel, Link link,
                               double clip_eps = kDefaultClipEps) {
  return BeliefState(std::move(kernel), link, clip_eps);
}

}  // namespace vip
