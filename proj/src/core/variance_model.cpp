#include "vip/variance_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "vip/error.hpp"

namespace vip {

const char* to_string(Family family) noexcept {
  return family == Family::dr_grpo ? "drgrpo" : "rloo";
}

Family parse_family(std::string_view name) {
  if (name == "drgrpo" || name == "dr_grpo" || name == "dr-grpo") return Family::dr_grpo;
  if (name == "rloo") return Family::rloo;
  fail(ErrorCode::invalid_input, "unknown estimator family '" + std::string(name) + "' (drgrpo|rloo)");
}

const char* to_string(RewardMode mode) noexcept {
  return mode == RewardMode::binary ? "binary" : "continuous";
}

double reward_variance(const VarianceInputs& in) {
  if (in.mode == RewardMode::binary) {
    if (!(in.value >= 0.0 && in.value <= 1.0))
      fail(ErrorCode::invalid_input, "p_hat must lie in [0, 1]");
    return 4.0 * in.value * (1.0 - in.value);
  }
  if (!(in.value >= 0.0) || !std::isfinite(in.value))
    fail(ErrorCode::invalid_input, "reward variance must be finite and >= 0");
  return in.value;
}

double allocation_coefficient(const VarianceInputs& in) {
  if (!(in.sigma_z2 > 0.0) || !std::isfinite(in.sigma_z2))
    fail(ErrorCode::invalid_input, "sigma_z2 must be positive and finite");
  return in.sigma_z2 * reward_variance(in);
}

double gradient_variance(Family family, const VarianceInputs& in, int n) {
  if (n < 2) fail(ErrorCode::invalid_input, "gradient variance needs n >= 2 rollouts");
  const double a = allocation_coefficient(in);
  const double nd = n;
  return family == Family::dr_grpo ? a * (nd - 1.0) / (nd * nd) : a / (nd - 1.0);
}

double RewardDistribution::variance() const {
  if (kind == Kind::bernoulli_pm1) return 4.0 * a * (1.0 - a);
  return (b - a) * (b - a) / 12.0;
}

namespace {

constexpr std::uint64_t kChunk = 1 << 14;

struct Moments {
  double count = 0, mean = 0, m2 = 0;

  void push(double x) {
    count += 1;
    const double d = x - mean;
    mean += d / count;
    m2 += d * (x - mean);
  }
  void merge(const Moments& o) {
    if (o.count == 0) return;
    const double total = count + o.count;
    const double d = o.mean - mean;
    mean += d * o.count / total;
    m2 += o.m2 + d * d * count * o.count / total;
    count = total;
  }
};

Moments run_chunk(const MonteCarloConfig& cfg, std::uint64_t chunk, std::uint64_t trials) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(chunk), static_cast<std::uint32_t>(chunk >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> z(cfg.z_mean, std::sqrt(cfg.sigma_z2));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> ur(cfg.rewards.a, cfg.rewards.b);
  const int n = cfg.n;
  const double nd = n;
  // Dr.GRPO: A_j = R_j - mean(R); RLOO: A_j = R_j - mean_{k != j}(R) = n/(n-1) (R_j - mean(R)).
  const double scale = cfg.family == Family::dr_grpo ? 1.0 : nd / (nd - 1.0);
  std::vector<double> r(n), zs(n);
  Moments m;
  for (std::uint64_t t = 0; t < trials; ++t) {
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      if (cfg.rewards.kind == RewardDistribution::Kind::bernoulli_pm1)
        r[j] = u01(rng) < cfg.rewards.a ? 1.0 : -1.0;
      else
        r[j] = ur(rng);
      zs[j] = z(rng);
      sum += r[j];
    }
    const double mean = sum / nd;
    double g = 0.0;
    for (int j = 0; j < n; ++j) g += (r[j] - mean) * zs[j];
    m.push(scale * g / nd);
  }
  return m;
}

}  // namespace

double monte_carlo_variance(const MonteCarloConfig& cfg) {
  if (cfg.trials < 1) fail(ErrorCode::invalid_input, "Monte Carlo needs at least one trial");
  if (cfg.n < 2) fail(ErrorCode::invalid_input, "Monte Carlo needs n >= 2 rollouts");
  if (!(cfg.sigma_z2 > 0.0)) fail(ErrorCode::invalid_input, "sigma_z2 must be positive");
  if (cfg.rewards.kind == RewardDistribution::Kind::bernoulli_pm1 &&
      !(cfg.rewards.a >= 0.0 && cfg.rewards.a <= 1.0))
    fail(ErrorCode::invalid_input, "Bernoulli reward probability must lie in [0, 1]");
  if (cfg.rewards.kind == RewardDistribution::Kind::uniform && !(cfg.rewards.a < cfg.rewards.b))
    fail(ErrorCode::invalid_input, "uniform reward bounds must satisfy lo < hi");

  const std::uint64_t chunks = (cfg.trials + kChunk - 1) / kChunk;
  std::vector<Moments> parts(chunks);
  const unsigned workers =
      static_cast<unsigned>(std::min<std::uint64_t>(std::max(1u, std::thread::hardware_concurrency()), chunks));
  auto work = [&](unsigned w) {
    for (std::uint64_t c = w; c < chunks; c += workers) {
      const std::uint64_t todo = std::min(kChunk, cfg.trials - c * kChunk);
      parts[c] = run_chunk(cfg, c, todo);
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  Moments total;
  for (const auto& p : parts) total.merge(p);
  return total.count > 1 ? total.m2 / (total.count - 1) : 0.0;
}

}  // namespace vip
