#include "vip/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Cholesky>

#include "vip/error.hpp"
#include "vip/variance_model.hpp"

namespace vip::sim {

namespace {

using json = nlohmann::json;

// Independent streams are keyed by (seed, purpose tag, a, b).
std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag,
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kTagEmbedding = 0xE1B0;
constexpr std::uint32_t kTagBumps = 0xB011;
constexpr std::uint32_t kTagDriftBasis = 0xD1F0;
constexpr std::uint32_t kTagDriftStep = 0xD1F1;
constexpr std::uint32_t kTagShuffle = 0x5AFF;
constexpr std::uint32_t kTagReward = 0x4E3D;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double clip(double p, double eps) { return std::clamp(p, eps, 1.0 - eps); }

double rbf(const Eigen::VectorXd& x, const Eigen::VectorXd& c, double length) {
  return std::exp(-(x - c).squaredNorm() / (2.0 * length * length));
}

}  // namespace

void WorldConfig::validate() const {
  if (prompts < 2) fail(ErrorCode::invalid_input, "world needs at least 2 prompts");
  if (dim < 1) fail(ErrorCode::invalid_input, "embedding dimension must be >= 1");
  if (clusters < 1) fail(ErrorCode::invalid_input, "cluster count must be >= 1");
  if (!(cluster_spread >= 0.0)) fail(ErrorCode::invalid_input, "cluster spread must be >= 0");
  if (!(drift >= 0.0) || !std::isfinite(drift)) fail(ErrorCode::invalid_input, "drift magnitude must be finite and >= 0");
  if (!std::isfinite(trend) || !std::isfinite(bias)) fail(ErrorCode::invalid_input, "trend and bias must be finite");
  if (!(bump_length >= 0.0) || !(drift_length >= 0.0) || !(bump_length_scale > 0.0) || !(drift_length_scale > 0.0))
    fail(ErrorCode::invalid_input, "length scales must be >= 0");
  if (drift > 0.0 && drift_bases < 1) fail(ErrorCode::invalid_input, "drift needs at least one basis");
  for (const auto& b : explicit_bumps)
    if (b.center.size() != dim)
      fail(ErrorCode::invalid_input, "bump centre dimension differs from the embedding dimension");
}

World::World(const WorldConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto Q = static_cast<Eigen::Index>(cfg_.prompts);
  const auto d = static_cast<Eigen::Index>(cfg_.dim);

  {
    auto rng = stream(cfg_.seed, kTagEmbedding);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd centres(static_cast<Eigen::Index>(cfg_.clusters), d);
    for (Eigen::Index c = 0; c < centres.rows(); ++c)
      for (Eigen::Index k = 0; k < d; ++k) centres(c, k) = normal(rng);
    Eigen::MatrixXd x(Q, d);
    std::vector<std::string> ids;
    ids.reserve(cfg_.prompts);
    for (Eigen::Index q = 0; q < Q; ++q) {
      const auto c = static_cast<Eigen::Index>(static_cast<std::size_t>(q) % cfg_.clusters);
      for (Eigen::Index k = 0; k < d; ++k) x(q, k) = centres(c, k) + cfg_.cluster_spread * normal(rng);
      ids.push_back("p" + std::to_string(q));
    }
    prompts_ = std::make_shared<const PromptSet>(std::move(ids), std::move(x));
  }

  const auto& x = prompts_->embeddings();
  const bool need_median = (cfg_.bump_length == 0.0 && cfg_.explicit_bumps.empty()) ||
                           (cfg_.drift > 0.0 && cfg_.drift_length == 0.0);
  const double median = need_median ? median_bandwidth(*prompts_) : 1.0;

  auto rng = stream(cfg_.seed, kTagBumps);
  if (!cfg_.explicit_bumps.empty()) {
    bumps_ = cfg_.explicit_bumps;
    bump_length_ = cfg_.bump_length > 0.0 ? cfg_.bump_length : 1.0;
  } else {
    std::normal_distribution<double> normal(0.0, cfg_.bump_weight);
    bump_length_ = cfg_.bump_length > 0.0 ? cfg_.bump_length : cfg_.bump_length_scale * median;
    for (std::size_t k = 0; k < cfg_.bumps; ++k) {
      const auto q = static_cast<Eigen::Index>(rng() % cfg_.prompts);
      Bump b;
      b.center.resize(cfg_.dim);
      for (Eigen::Index j = 0; j < d; ++j) b.center[static_cast<std::size_t>(j)] = x(q, j);
      b.weight = normal(rng);
      bumps_.push_back(std::move(b));
    }
  }

  // Random bumps are centred over the prompt set: in high dimension every
  // prompt sits at a similar distance from every centre, and the uncentred sum
  // would mostly shift all latents together and saturate the probabilities.
  if (cfg_.explicit_bumps.empty() && !bumps_.empty()) {
    double mean = 0.0;
    for (Eigen::Index q = 0; q < Q; ++q) mean += initial_field(x.row(q).transpose()) - cfg_.bias;
    offset_ = -mean / static_cast<double>(Q);
  }
  latent_.resize(Q, static_cast<Eigen::Index>(cfg_.horizon + 1));
  for (Eigen::Index q = 0; q < Q; ++q) latent_(q, 0) = initial_field(x.row(q).transpose());

  Eigen::MatrixXd phi;
  if (cfg_.drift > 0.0) {
    auto brng = stream(cfg_.seed, kTagDriftBasis);
    const double length = cfg_.drift_length > 0.0 ? cfg_.drift_length : cfg_.drift_length_scale * median;
    const auto K = static_cast<Eigen::Index>(cfg_.drift_bases);
    phi.resize(Q, K);
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto c = static_cast<Eigen::Index>(brng() % cfg_.prompts);
      const Eigen::VectorXd centre = x.row(c).transpose();
      for (Eigen::Index q = 0; q < Q; ++q) phi(q, k) = rbf(x.row(q).transpose(), centre, length);
    }
    // Unit-norm rows: every prompt's increment has standard deviation `drift`.
    for (Eigen::Index q = 0; q < Q; ++q) {
      const double norm = phi.row(q).norm();
      if (norm > 0.0) phi.row(q) /= norm;
    }
  }
  for (std::size_t t = 1; t <= cfg_.horizon; ++t) {
    const auto col = static_cast<Eigen::Index>(t);
    latent_.col(col) = latent_.col(col - 1).array() + cfg_.trend;
    if (cfg_.drift > 0.0) {
      auto srng = stream(cfg_.seed, kTagDriftStep, t);
      std::normal_distribution<double> normal;
      Eigen::VectorXd xi(phi.cols());
      for (Eigen::Index k = 0; k < xi.size(); ++k) xi(k) = normal(srng);
      latent_.col(col) += cfg_.drift * (phi * xi);
    }
  }
}

double World::initial_field(const Eigen::VectorXd& x) const {
  double g = cfg_.bias + offset_;
  for (const auto& b : bumps_) {
    const Eigen::Map<const Eigen::VectorXd> c(b.center.data(), static_cast<Eigen::Index>(b.center.size()));
    g += b.weight * rbf(x, c, bump_length_);
  }
  return g;
}

double World::latent(std::size_t step, std::size_t q) const {
  if (step > cfg_.horizon)
    fail(ErrorCode::invalid_input, "step " + std::to_string(step) + " beyond the world horizon " +
                                       std::to_string(cfg_.horizon));
  if (q >= size()) fail(ErrorCode::invalid_input, "prompt index out of range");
  return latent_(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(step));
}

double World::success_probability(std::size_t step, std::size_t q) const {
  return sigmoid(latent(step, q));
}

World generate_world(const WorldConfig& cfg) { return World(cfg); }

// ---------------------------------------------------------------------------
// Predictors

const char* to_string(PredictorKind k) noexcept {
  switch (k) {
    case PredictorKind::gp: return "gp";
    case PredictorKind::moving_average: return "moving_average";
    case PredictorKind::ridge: return "ridge";
  }
  return "?";
}

PredictorKind parse_predictor(std::string_view name) {
  if (name == "gp") return PredictorKind::gp;
  if (name == "moving_average" || name == "ma") return PredictorKind::moving_average;
  if (name == "ridge") return PredictorKind::ridge;
  fail(ErrorCode::invalid_input, "unknown predictor '" + std::string(name) + "' (gp, moving_average, ridge)");
}

namespace {

std::vector<double> moving_average_predict(std::span<const HistoryEntry> history, std::size_t size,
                                           std::span<const std::size_t> query) {
  std::vector<double> sum(size, 0.0);
  std::vector<std::size_t> count(size, 0);
  double total = 0.0;
  for (const auto& h : history) {
    sum[h.prompt] += h.rate;
    ++count[h.prompt];
    total += h.rate;
  }
  const double fallback = history.empty() ? 0.5 : total / static_cast<double>(history.size());
  std::vector<double> out;
  out.reserve(query.size());
  for (auto q : query) out.push_back(count[q] ? sum[q] / static_cast<double>(count[q]) : fallback);
  return out;
}

Eigen::VectorXd ridge_fit(std::span<const HistoryEntry> history, const PromptSet& prompts,
                          const PredictorConfig& cfg) {
  const auto d = static_cast<Eigen::Index>(prompts.dim());
  const std::size_t start = history.size() > cfg.ridge_window ? history.size() - cfg.ridge_window : 0;
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(d + 1, d + 1);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd row(d + 1);
  for (std::size_t i = start; i < history.size(); ++i) {
    row.head(d) = prompts.embeddings().row(static_cast<Eigen::Index>(history[i].prompt)).transpose();
    row(d) = 1.0;
    xtx.noalias() += row * row.transpose();
    xty += row * logit(clip(history[i].rate, cfg.clip_eps));
  }
  for (Eigen::Index k = 0; k < d; ++k) xtx(k, k) += cfg.ridge_penalty;
  // A tiny ridge on the intercept keeps the system solvable with one sample.
  xtx(d, d) += 1e-12;
  return xtx.ldlt().solve(xty);
}

}  // namespace

std::vector<double> baseline_predict(PredictorKind kind, std::span<const HistoryEntry> history,
                                     const PromptSet& prompts, std::span<const std::size_t> query,
                                     const PredictorConfig& cfg) {
  for (auto q : query)
    if (q >= prompts.size()) fail(ErrorCode::invalid_input, "query index out of range");
  for (const auto& h : history)
    if (h.prompt >= prompts.size()) fail(ErrorCode::invalid_input, "history index out of range");
  switch (kind) {
    case PredictorKind::moving_average:
      return moving_average_predict(history, prompts.size(), query);
    case PredictorKind::ridge: {
      if (history.empty()) return std::vector<double>(query.size(), 0.5);
      const Eigen::VectorXd w = ridge_fit(history, prompts, cfg);
      const auto d = static_cast<Eigen::Index>(prompts.dim());
      std::vector<double> out;
      out.reserve(query.size());
      for (auto q : query)
        out.push_back(sigmoid(prompts.embeddings().row(static_cast<Eigen::Index>(q)).dot(w.head(d)) + w(d)));
      return out;
    }
    case PredictorKind::gp:
      break;
  }
  fail(ErrorCode::invalid_input, "baseline_predict: gp is stateful; use make_predictor");
}

namespace {

double observed_rate(std::span<const double> rewards, double eps) {
  double s = 0.0;
  for (double r : rewards) s += r;
  return clip((s / static_cast<double>(rewards.size()) + 1.0) / 2.0, eps);
}

class GpPredictor final : public Predictor {
 public:
  GpPredictor(const PredictorConfig& cfg, const PromptSet& prompts)
      : belief_(std::make_shared<const KernelMatrix>(kernel_matrix(
                    prompts, cfg.bandwidth > 0.0 ? cfg.bandwidth : median_bandwidth(prompts))),
                Link::sigmoid, cfg.clip_eps) {}

  std::vector<double> predict(std::span<const std::size_t> batch) const override {
    return belief_.predict(batch);
  }
  void observe(const BatchObservation& obs) override { belief_ = belief_.update(obs); }

 private:
  BeliefState belief_;
};

class HistoryPredictor final : public Predictor {
 public:
  HistoryPredictor(const PredictorConfig& cfg, std::shared_ptr<const PromptSet> prompts)
      : cfg_(cfg), prompts_(std::move(prompts)) {}

  std::vector<double> predict(std::span<const std::size_t> batch) const override {
    return baseline_predict(cfg_.kind, history_, *prompts_, batch, cfg_);
  }
  void observe(const BatchObservation& obs) override {
    for (const auto& e : obs.entries) history_.push_back({e.index, observed_rate(e.rewards, cfg_.clip_eps)});
  }

 private:
  PredictorConfig cfg_;
  std::shared_ptr<const PromptSet> prompts_;
  std::vector<HistoryEntry> history_;
};

}  // namespace

std::unique_ptr<Predictor> make_predictor(const PredictorConfig& cfg,
                                          std::shared_ptr<const PromptSet> prompts) {
  if (!(cfg.clip_eps > 0.0 && cfg.clip_eps < 0.5)) fail(ErrorCode::invalid_input, "clip_eps must lie in (0, 0.5)");
  if (cfg.kind == PredictorKind::gp) return std::make_unique<GpPredictor>(cfg, *prompts);
  if (cfg.kind == PredictorKind::ridge && !(cfg.ridge_penalty > 0.0))
    fail(ErrorCode::invalid_input, "ridge penalty must be > 0");
  if (cfg.kind == PredictorKind::ridge && cfg.ridge_window < 1)
    fail(ErrorCode::invalid_input, "ridge window must be >= 1");
  return std::make_unique<HistoryPredictor>(cfg, std::move(prompts));
}

// ---------------------------------------------------------------------------
// Runs

const char* to_string(Strategy s) noexcept {
  switch (s) {
    case Strategy::vip: return "vip";
    case Strategy::uniform: return "uniform";
    case Strategy::inverse_accuracy: return "inverse_accuracy";
    case Strategy::inverse_variance: return "inverse_variance";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "vip") return Strategy::vip;
  if (name == "uniform") return Strategy::uniform;
  if (name == "inverse_accuracy") return Strategy::inverse_accuracy;
  if (name == "inverse_variance") return Strategy::inverse_variance;
  fail(ErrorCode::invalid_input, "unknown strategy '" + std::string(name) +
                                     "' (vip, uniform, inverse_accuracy, inverse_variance)");
}

namespace {

std::vector<std::int64_t> heuristic_plan(Baseline kind, std::span<const double> p_hat, const RunConfig& cfg) {
  std::vector<double> stats(p_hat.begin(), p_hat.end());
  if (kind == Baseline::inverse_variance)
    for (auto& s : stats) s = s * (1.0 - s);
  return baseline_allocation(kind, stats, cfg.budget, cfg.min, cfg.max);
}

}  // namespace

RunRecord run_strategy(const World& world, const RunConfig& cfg) {
  const std::size_t Q = world.size();
  const std::size_t B = cfg.batch_size;
  if (B < 1 || B > Q)
    fail(ErrorCode::invalid_input, "batch size must lie in [1, " + std::to_string(Q) + "]");
  if (cfg.steps < 1) fail(ErrorCode::invalid_input, "steps must be >= 1");
  if (cfg.steps > world.horizon())
    fail(ErrorCode::invalid_input, "steps exceed the world horizon " + std::to_string(world.horizon()));
  if (!(cfg.sigma_z2 > 0.0)) fail(ErrorCode::invalid_input, "sigma_z2 must be > 0");
  {
    AllocationProblem probe{cfg.family, std::vector<double>(B, 1.0), cfg.budget, cfg.min, cfg.max};
    probe.validate();
  }

  auto predictor = make_predictor(cfg.predictor, world.prompt_ptr());
  const double eps = cfg.predictor.clip_eps;
  const std::size_t per_epoch = Q / B;

  RunRecord record;
  record.config = cfg;
  record.steps.reserve(cfg.steps);
  std::vector<std::size_t> order(Q);
  std::int64_t cum_rollouts = 0, cum_correct = 0;

  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const std::size_t epoch = t / per_epoch, slot = t % per_epoch;
    if (slot == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      auto rng = stream(cfg.seed, kTagShuffle, epoch);
      std::shuffle(order.begin(), order.end(), rng);
    }
    StepRecord s;
    s.step = t;
    s.batch.assign(order.begin() + static_cast<std::ptrdiff_t>(slot * B),
                   order.begin() + static_cast<std::ptrdiff_t>((slot + 1) * B));

    s.p_hat = predictor->predict(s.batch);
    for (auto& p : s.p_hat) p = clip(p, eps);

    AllocationProblem problem{cfg.family, {}, cfg.budget, cfg.min, cfg.max};
    problem.coeffs.reserve(B);
    for (double p : s.p_hat) problem.coeffs.push_back(allocation_coefficient(VarianceInputs::binary(p, cfg.sigma_z2)));

    const auto uniform = baseline_allocation(Baseline::uniform, s.p_hat, cfg.budget, cfg.min, cfg.max);
    const auto inv_acc = heuristic_plan(Baseline::inverse_accuracy, s.p_hat, cfg);
    const auto inv_var = heuristic_plan(Baseline::inverse_variance, s.p_hat, cfg);
    switch (cfg.strategy) {
      case Strategy::vip: s.allocation = allocate(problem).integer; break;
      case Strategy::uniform: s.allocation = uniform; break;
      case Strategy::inverse_accuracy: s.allocation = inv_acc; break;
      case Strategy::inverse_variance: s.allocation = inv_var; break;
    }
    s.objective = total_objective(cfg.family, problem.coeffs, std::span<const std::int64_t>(s.allocation));
    s.uniform_objective = total_objective(cfg.family, problem.coeffs, std::span<const std::int64_t>(uniform));
    s.inverse_accuracy_objective = total_objective(cfg.family, problem.coeffs, std::span<const std::int64_t>(inv_acc));
    s.inverse_variance_objective = total_objective(cfg.family, problem.coeffs, std::span<const std::int64_t>(inv_var));

    BatchObservation obs;
    obs.entries.reserve(B);
    s.p_true.reserve(B);
    s.successes.reserve(B);
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t q = s.batch[i];
      const double p = world.success_probability(t, q);
      auto rng = stream(cfg.seed, kTagReward, t, q);
      PromptRewards pr{q, {}};
      pr.rewards.reserve(static_cast<std::size_t>(s.allocation[i]));
      std::int64_t wins = 0;
      for (std::int64_t j = 0; j < s.allocation[i]; ++j) {
        const bool win = uniform01(rng) < p;
        wins += win;
        pr.rewards.push_back(win ? 1.0 : -1.0);
      }
      s.p_true.push_back(p);
      s.successes.push_back(wins);
      s.rollouts += s.allocation[i];
      cum_correct += wins;
      obs.entries.push_back(std::move(pr));
    }
    cum_rollouts += s.rollouts;
    s.cum_rollouts = cum_rollouts;
    s.cum_correct = cum_correct;

    double mae = 0.0;
    for (std::size_t i = 0; i < B; ++i)
      mae += std::abs(s.p_hat[i] - clip(static_cast<double>(s.successes[i]) / static_cast<double>(s.allocation[i]), eps));
    s.mae = mae / static_cast<double>(B);

    predictor->observe(obs);
    record.steps.push_back(std::move(s));
  }
  return record;
}

std::vector<double> predictor_mae(const RunRecord& record, double clip_eps) {
  if (record.steps.empty()) fail(ErrorCode::invalid_input, "empty run record");
  std::vector<double> out;
  out.reserve(record.steps.size());
  for (const auto& s : record.steps) {
    double mae = 0.0;
    for (std::size_t i = 0; i < s.batch.size(); ++i) {
      const double rate = static_cast<double>(s.successes[i]) / static_cast<double>(s.allocation[i]);
      mae += std::abs(s.p_hat[i] - (clip_eps > 0.0 ? clip(rate, clip_eps) : rate));
    }
    out.push_back(mae / static_cast<double>(s.batch.size()));
  }
  return out;
}

double mean_mae(const RunRecord& record, std::size_t from, std::size_t to) {
  to = std::min(to, record.steps.size());
  if (from >= to) fail(ErrorCode::invalid_input, "empty step range for mean MAE");
  double s = 0.0;
  for (std::size_t t = from; t < to; ++t) s += record.steps[t].mae;
  return s / static_cast<double>(to - from);
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::invalid_input, std::string("field '") + key + "' has the wrong type");
  }
}

WorldConfig world_from_json(const json& j) {
  WorldConfig w;
  if (!j.is_object()) fail(ErrorCode::invalid_input, "'world' must be an object");
  maybe(j, "prompts", w.prompts);
  maybe(j, "dim", w.dim);
  maybe(j, "clusters", w.clusters);
  maybe(j, "cluster_spread", w.cluster_spread);
  maybe(j, "bumps", w.bumps);
  maybe(j, "bump_weight", w.bump_weight);
  maybe(j, "bump_length", w.bump_length);
  maybe(j, "bump_length_scale", w.bump_length_scale);
  maybe(j, "drift_length_scale", w.drift_length_scale);
  maybe(j, "bias", w.bias);
  maybe(j, "drift", w.drift);
  maybe(j, "drift_bases", w.drift_bases);
  maybe(j, "drift_length", w.drift_length);
  maybe(j, "trend", w.trend);
  maybe(j, "horizon", w.horizon);
  maybe(j, "seed", w.seed);
  if (j.contains("explicit_bumps")) {
    for (const auto& b : j.at("explicit_bumps")) {
      Bump bump;
      maybe(b, "center", bump.center);
      maybe(b, "weight", bump.weight);
      w.explicit_bumps.push_back(std::move(bump));
    }
  }
  w.validate();
  return w;
}

}  // namespace

Experiment experiment_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::invalid_input, "experiment config must be a JSON object");
  Experiment ex;
  if (j.contains("world")) ex.world = world_from_json(j.at("world"));

  RunConfig base;
  std::string family = to_string(base.family);
  maybe(j, "family", family);
  base.family = parse_family(family);
  maybe(j, "budget", base.budget);
  maybe(j, "batch_size", base.batch_size);
  maybe(j, "min", base.min);
  maybe(j, "max", base.max);
  maybe(j, "steps", base.steps);
  maybe(j, "sigma_z2", base.sigma_z2);
  maybe(j, "clip_eps", base.predictor.clip_eps);
  maybe(j, "ridge_window", base.predictor.ridge_window);
  maybe(j, "ridge_penalty", base.predictor.ridge_penalty);
  maybe(j, "bandwidth", base.predictor.bandwidth);

  maybe(j, "seeds", ex.seeds);
  if (ex.seeds.empty()) ex.seeds.push_back(0);

  if (!j.contains("runs") || !j.at("runs").is_array() || j.at("runs").empty())
    fail(ErrorCode::invalid_input, "'runs' must be a non-empty array");
  for (const auto& r : j.at("runs")) {
    ExperimentRun run{"", base};
    if (r.is_string()) {
      run.run.strategy = parse_strategy(r.get<std::string>());
    } else if (r.is_object()) {
      std::string strategy = "vip", predictor = "gp";
      maybe(r, "strategy", strategy);
      maybe(r, "predictor", predictor);
      run.run.strategy = parse_strategy(strategy);
      run.run.predictor.kind = parse_predictor(predictor);
      maybe(r, "label", run.label);
    } else {
      fail(ErrorCode::invalid_input, "each run is a strategy name or an object");
    }
    if (run.label.empty())
      run.label = std::string(to_string(run.run.strategy)) + "+" + to_string(run.run.predictor.kind);
    ex.runs.push_back(std::move(run));
  }

  // Reject infeasible budgets before anything runs.
  for (const auto& r : ex.runs) {
    AllocationProblem probe{r.run.family, std::vector<double>(r.run.batch_size, 1.0), r.run.budget, r.run.min, r.run.max};
    probe.validate();
    if (r.run.steps > ex.world.horizon)
      fail(ErrorCode::invalid_input, "steps exceed the world horizon");
    if (r.run.batch_size < 1 || r.run.batch_size > ex.world.prompts)
      fail(ErrorCode::invalid_input, "batch size must lie in [1, prompts]");
  }
  return ex;
}

ExperimentResult run_experiment(const Experiment& ex, unsigned threads) {
  const std::size_t R = ex.runs.size(), S = ex.seeds.size();
  std::vector<World> worlds;
  worlds.reserve(S);
  for (auto s : ex.seeds) {
    WorldConfig w = ex.world;
    w.seed = ex.world.seed + s;
    worlds.emplace_back(w);
  }

  ExperimentResult result;
  result.records.resize(R * S);
  result.labels.resize(R * S);
  result.seeds.resize(R * S);
  auto job = [&](std::size_t k) {
    const std::size_t si = k / R, ri = k % R;
    RunConfig cfg = ex.runs[ri].run;
    cfg.seed = ex.seeds[si];
    result.records[k] = run_strategy(worlds[si], cfg);
    result.labels[k] = ex.runs[ri].label;
    result.seeds[k] = ex.seeds[si];
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, R * S));
  if (threads <= 1) {
    for (std::size_t k = 0; k < R * S; ++k) job(k);
    return result;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < threads; ++i)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t k;
          {
            std::lock_guard lock(mu);
            if (next >= R * S || error) return;
            k = next++;
          }
          try {
            job(k);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!error) error = std::current_exception();
          }
        }
      });
  }
  if (error) std::rethrow_exception(error);
  return result;
}

json step_to_json(const StepRecord& s) {
  return {{"step", s.step},
          {"batch", s.batch},
          {"allocation", s.allocation},
          {"successes", s.successes},
          {"p_hat", s.p_hat},
          {"p_true", s.p_true},
          {"objective", s.objective},
          {"uniform_objective", s.uniform_objective},
          {"inverse_accuracy_objective", s.inverse_accuracy_objective},
          {"inverse_variance_objective", s.inverse_variance_objective},
          {"mae", s.mae},
          {"rollouts", s.rollouts},
          {"cum_rollouts", s.cum_rollouts},
          {"cum_correct", s.cum_correct}};
}

std::string records_jsonl(const ExperimentResult& result) {
  std::string out;
  for (std::size_t k = 0; k < result.records.size(); ++k) {
    for (const auto& s : result.records[k].steps) {
      json j = step_to_json(s);
      j["strategy"] = result.labels[k];
      j["seed"] = result.seeds[k];
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

std::string summary_csv(const ExperimentResult& result) {
  std::string out = "strategy,seed,step,objective,mae,cum_correct\n";
  char buf[256];
  for (std::size_t k = 0; k < result.records.size(); ++k) {
    for (const auto& s : result.records[k].steps) {
      std::snprintf(buf, sizeof buf, "%s,%llu,%zu,%.17g,%.17g,%lld\n", result.labels[k].c_str(),
                    static_cast<unsigned long long>(result.seeds[k]), s.step, s.objective, s.mae,
                    static_cast<long long>(s.cum_correct));
      out += buf;
    }
  }
  return out;
}

}  // namespace vip::sim
