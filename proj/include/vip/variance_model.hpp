#pragma once

// Closed-form per-prompt gradient variance of the projected group-relative
// estimators, the allocation coefficient a_q derived from it, and a Monte
// Carlo oracle that simulates the estimator directly.

#include <cstdint>
#include <string_view>

namespace vip {

enum class Family { dr_grpo, rloo };
enum class RewardMode { binary, continuous };

const char* to_string(Family family) noexcept;
Family parse_family(std::string_view name);
const char* to_string(RewardMode mode) noexcept;

struct VarianceInputs {
  RewardMode mode = RewardMode::binary;
  double value = 0.5;      // p_hat (binary) or predicted Var(R) (continuous)
  double sigma_z2 = 1.0;   // variance of the projected gradient Z

  static VarianceInputs binary(double p_hat, double sigma_z2 = 1.0) {
    return {RewardMode::binary, p_hat, sigma_z2};
  }
  static VarianceInputs continuous(double reward_variance, double sigma_z2 = 1.0) {
    return {RewardMode::continuous, reward_variance, sigma_z2};
  }
};

/// Var(R): 4 p (1 - p) for +-1 rewards, the supplied value otherwise.
double reward_variance(const VarianceInputs& in);

/// a_q = sigma_z2 * Var(R).
double allocation_coefficient(const VarianceInputs& in);

/// Dr.GRPO: a (n-1)/n^2; RLOO: a/(n-1). Requires n >= 2.
double gradient_variance(Family family, const VarianceInputs& in, int n);

struct RewardDistribution {
  enum class Kind { bernoulli_pm1, uniform } kind = Kind::bernoulli_pm1;
  double a = 0.5;  // P(+1) for bernoulli_pm1, lower bound for uniform
  double b = 0.0;  // upper bound for uniform

  static RewardDistribution bernoulli(double p) { return {Kind::bernoulli_pm1, p, 0.0}; }
  static RewardDistribution uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
  double variance() const;
};

struct MonteCarloConfig {
  Family family = Family::dr_grpo;
  RewardDistribution rewards;
  double sigma_z2 = 1.0;
  double z_mean = 1.0;  // nonzero by default: the estimator must not depend on it
  int n = 8;
  std::uint64_t trials = 1'000'000;
  std::uint64_t seed = 0;
};

/// Trials are processed in fixed-size chunks, each with its own seeded stream,
/// and combined in chunk order, so the result depends only on the config.
double monte_carlo_variance(const MonteCarloConfig& cfg);

}  // namespace vip
