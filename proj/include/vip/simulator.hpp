#pragma once

// Synthetic non-stationary prompt worlds and a replay of the plan / sample /
// update loop against heuristic baselines.
//
// A world is a cloud of clustered embeddings with a latent field
//   g_t(x) = g_0(x) + sum_{s<=t} (drift * phi(x)^T xi_s + trend),
// where g_0 is a sum of weighted RBF bumps (centred over the prompt set when
// the bumps are random), phi is a row-normalised RBF
// feature map over seeded drift centres and xi_s ~ N(0, I). The true success
// probability of prompt q at step t is sigmoid(g_t(x_q)).

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "vip/allocator.hpp"
#include "vip/belief.hpp"
#include "vip/prompt_space.hpp"

namespace vip::sim {

struct Bump {
  std::vector<double> center;
  double weight = 0.0;
};

struct WorldConfig {
  std::size_t prompts = 256;
  // Defaults mimic sentence embeddings: high dimension, loose clusters. Tight
  // low-dimensional clusters make batch kernel blocks nearly singular, and the
  // noise-free conditioning then amplifies sampling noise.
  std::size_t dim = 64;
  std::size_t clusters = 16;
  double cluster_spread = 1.0;   // within-cluster std relative to unit-variance centres
  std::size_t bumps = 16;
  double bump_weight = 1.5;      // std of the bump weights
  double bump_length = 0.0;      // 0: bump_length_scale * median pairwise distance
  double bump_length_scale = 0.5;
  double bias = 0.0;
  std::vector<Bump> explicit_bumps;  // replaces the random bumps when non-empty
  double drift = 0.0;            // per-step std of the latent shift at each prompt
  std::size_t drift_bases = 16;
  double drift_length = 0.0;     // 0: drift_length_scale * median pairwise distance
  double drift_length_scale = 1.0;
  double trend = 0.0;            // deterministic per-step shift of every latent
  std::size_t horizon = 128;     // steps precomputed
  std::uint64_t seed = 0;

  void validate() const;
};

class World {
 public:
  explicit World(const WorldConfig& cfg);

  const WorldConfig& config() const noexcept { return cfg_; }
  const PromptSet& prompts() const noexcept { return *prompts_; }
  std::shared_ptr<const PromptSet> prompt_ptr() const noexcept { return prompts_; }
  std::size_t size() const noexcept { return prompts_->size(); }
  std::size_t horizon() const noexcept { return cfg_.horizon; }

  /// g_0 at an arbitrary point.
  double initial_field(const Eigen::VectorXd& x) const;
  /// g_t(x_q); t in [0, horizon].
  double latent(std::size_t step, std::size_t q) const;
  double success_probability(std::size_t step, std::size_t q) const;

 private:
  WorldConfig cfg_;
  std::shared_ptr<const PromptSet> prompts_;
  std::vector<Bump> bumps_;
  double bump_length_ = 1.0;
  double offset_ = 0.0;  // centres random-bump fields over the prompt set
  Eigen::MatrixXd latent_;  // prompts x (horizon + 1)
};

World generate_world(const WorldConfig& cfg);

enum class PredictorKind { gp, moving_average, ridge };
const char* to_string(PredictorKind k) noexcept;
PredictorKind parse_predictor(std::string_view name);

struct PredictorConfig {
  PredictorKind kind = PredictorKind::gp;
  double clip_eps = kDefaultClipEps;
  std::size_t ridge_window = 1024;
  double ridge_penalty = 1.0;
  double bandwidth = 0.0;  // gp only; 0: median heuristic
};

/// One (prompt, clipped success rate) observation.
struct HistoryEntry {
  std::size_t prompt;
  double rate;
};

/// Success-rate predictions from an observation history.
///   moving_average: per-prompt mean of past rates, the global mean for
///     unseen prompts, 0.5 with no history.
///   ridge: ridge regression from [embedding, 1] to logit(rate) over the most
///     recent `ridge_window` entries (intercept unpenalised), through sigmoid.
std::vector<double> baseline_predict(PredictorKind kind, std::span<const HistoryEntry> history,
                                     const PromptSet& prompts, std::span<const std::size_t> query,
                                     const PredictorConfig& cfg);

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::vector<double> predict(std::span<const std::size_t> batch) const = 0;
  virtual void observe(const BatchObservation& obs) = 0;
};

std::unique_ptr<Predictor> make_predictor(const PredictorConfig& cfg,
                                          std::shared_ptr<const PromptSet> prompts);

enum class Strategy { vip, uniform, inverse_accuracy, inverse_variance };
const char* to_string(Strategy s) noexcept;
Strategy parse_strategy(std::string_view name);

struct RunConfig {
  Strategy strategy = Strategy::vip;
  Family family = Family::rloo;
  PredictorConfig predictor;
  std::int64_t budget = 256;  // C per batch
  std::size_t batch_size = 32;
  std::int64_t min = 3;
  std::int64_t max = 16;
  std::size_t steps = 60;
  double sigma_z2 = 1.0;
  std::uint64_t seed = 0;
};

struct StepRecord {
  std::size_t step = 0;
  std::vector<std::size_t> batch;
  std::vector<std::int64_t> allocation;
  std::vector<std::int64_t> successes;
  std::vector<double> p_hat;  // clipped to [eps, 1-eps], as fed to the allocator
  std::vector<double> p_true;
  double objective = 0.0;           // sum_q f_q(n_q) under p_hat
  double uniform_objective = 0.0;   // uniform plan under the same p_hat
  double inverse_accuracy_objective = 0.0;
  double inverse_variance_objective = 0.0;
  double mae = 0.0;
  std::int64_t rollouts = 0;
  std::int64_t cum_rollouts = 0;
  std::int64_t cum_correct = 0;
};

struct RunRecord {
  RunConfig config;
  std::vector<StepRecord> steps;
};

/// Replays `cfg.steps` iterations. Rewards for (step, prompt) come from a
/// dedicated stream, so strategies that grant a prompt the same number of
/// rollouts see the same rewards.
RunRecord run_strategy(const World& world, const RunConfig& cfg);

/// MAE_t = mean_q |p_hat - clip(successes/n, eps, 1-eps)| over the batch.
std::vector<double> predictor_mae(const RunRecord& record, double clip_eps = kDefaultClipEps);
/// Mean of the per-step MAE over steps [from, to).
double mean_mae(const RunRecord& record, std::size_t from, std::size_t to);

// Experiment files: {"world": {...}, "runs": [{"strategy", "predictor"}...],
// "family", "budget", "batch_size", "min", "max", "steps", "seeds": [...],
// "clip_eps", "sigma_z2", "ridge_window", "ridge_penalty"}. Seed s runs on
// the world generated with world.seed + s.
struct ExperimentRun {
  std::string label;
  RunConfig run;
};

struct Experiment {
  WorldConfig world;
  std::vector<ExperimentRun> runs;
  std::vector<std::uint64_t> seeds;
};

Experiment experiment_from_json(const nlohmann::json& j);

struct ExperimentResult {
  std::vector<std::string> labels;          // per record
  std::vector<std::uint64_t> seeds;         // per record
  std::vector<RunRecord> records;
};

/// Runs every (seed, run) pair, in parallel when `threads` > 1; the output
/// order is seed-major and independent of scheduling.
ExperimentResult run_experiment(const Experiment& ex, unsigned threads = 0);

nlohmann::json step_to_json(const StepRecord& s);
/// One JSON line per step, tagged with label and seed.
std::string records_jsonl(const ExperimentResult& result);
/// strategy,seed,step,objective,mae,cum_correct
std::string summary_csv(const ExperimentResult& result);

}  // namespace vip::sim
