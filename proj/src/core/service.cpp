#include "vip/service.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vip/formats.hpp"
#include "vip/hash.hpp"

namespace vip::service {

namespace {

template <typename T>
T field_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::invalid_input, std::string("field '") + key + "' has the wrong type");
  }
}

json config_to_json(const SessionConfig& c) {
  return {{"family", to_string(c.family)}, {"budget", c.budget},   {"min", c.min},
          {"max", c.max},                  {"batch_size", c.batch_size}, {"clip_eps", c.clip_eps},
          {"sigma_z2", c.sigma_z2},        {"link", to_string(c.link)},  {"strict", c.strict},
          {"allow_overrides", c.allow_overrides}};
}

SessionConfig config_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::invalid_input, "config: must be an object");
  SessionConfig c;
  try {
    c.family = parse_family(field_or<std::string>(j, "family", to_string(c.family)));
    c.budget = field_or(j, "budget", c.budget);
    c.min = field_or(j, "min", c.min);
    c.max = field_or(j, "max", c.max);
    c.batch_size = field_or(j, "batch_size", c.batch_size);
    c.clip_eps = field_or(j, "clip_eps", c.clip_eps);
    c.sigma_z2 = field_or(j, "sigma_z2", c.sigma_z2);
    c.link = parse_link(field_or<std::string>(j, "link", to_string(c.link)));
    c.strict = field_or(j, "strict", c.strict);
    c.allow_overrides = field_or(j, "allow_overrides", c.allow_overrides);
  } catch (const Error& e) {
    fail(e.code(), std::string("config: ") + e.what());
  }
  if (c.min < 1 || c.max < c.min) fail(ErrorCode::invalid_input, "config: bounds must satisfy 1 <= min <= max");
  if (c.family == Family::rloo && c.min < 2) fail(ErrorCode::invalid_input, "config: RLOO needs min >= 2");
  if (!(c.clip_eps > 0.0 && c.clip_eps < 0.5)) fail(ErrorCode::invalid_input, "config.clip_eps: must lie in (0, 0.5)");
  if (!(c.sigma_z2 > 0.0) || !std::isfinite(c.sigma_z2)) fail(ErrorCode::invalid_input, "config.sigma_z2: must be finite and > 0");
  if (c.batch_size > 0) {
    AllocationProblem probe{c.family, std::vector<double>(c.batch_size, 1.0), c.budget, c.min, c.max};
    probe.validate();
  } else if (!c.allow_overrides && c.budget <= 0) {
    fail(ErrorCode::invalid_input, "config.budget: must be > 0 when per-request overrides are disabled");
  }
  return c;
}

std::shared_ptr<const KernelMatrix> build_kernel(const DistanceCache& dc, std::optional<double> bandwidth) {
  const double h = bandwidth ? *bandwidth : median_bandwidth(dc);
  if (!(h > 0.0) || !std::isfinite(h)) fail(ErrorCode::invalid_input, "bandwidth: must be finite and > 0");
  return std::make_shared<const KernelMatrix>(dc, h);
}

std::vector<std::string> ids_of(const PromptSet& set, const std::vector<std::size_t>& idx) {
  std::vector<std::string> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(set.id(i));
  return out;
}

// Success probabilities are clipped before they reach the allocator so every
// coefficient stays positive.
double predicted_value(const Session& s, std::size_t q) {
  const double v = s.belief.predict(q);
  return s.config.link == Link::sigmoid ? std::clamp(v, s.config.clip_eps, 1.0 - s.config.clip_eps) : v;
}

json state_to_json(const Session& s) {
  json state;
  state["config"] = config_to_json(s.config);
  state["prompts"] = prompts_to_json(*s.prompts);
  state["bandwidth"] = s.kernel->bandwidth();
  state["kernel_hash"] = to_hex(s.kernel->fingerprint());
  state["mean"] = std::vector<double>(s.belief.mean().data(), s.belief.mean().data() + s.belief.mean().size());
  state["iteration"] = s.iteration;
  if (s.pending)
    state["pending"] = {{"batch", ids_of(*s.prompts, s.pending->batch)}, {"n_int", s.pending->n_int}};
  else
    state["pending"] = nullptr;
  state["audit"] = s.audit;
  return state;
}

std::string checksum_of(const json& state) { return to_hex(Fnv1a{}.text(state.dump()).digest()); }

void write_atomically(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + tmp.string());
    out << text;
    if (!out.flush()) fail(ErrorCode::io, "cannot write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::io, "cannot rename to " + path.string() + ": " + ec.message());
}

}  // namespace

std::pair<int, const char*> error_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_input:
    case ErrorCode::degenerate_geometry: return {400, "validation"};
    case ErrorCode::not_found: return {404, "not_found"};
    case ErrorCode::conflict: return {409, "conflict"};
    case ErrorCode::infeasible: return {422, "infeasible"};
    case ErrorCode::version: return {400, "version"};
    case ErrorCode::integrity: return {400, "integrity"};
    case ErrorCode::numerical: return {500, "numerical"};
    case ErrorCode::io: return {500, "io"};
  }
  return {500, "internal"};
}

SessionManager::SessionManager(std::string snapshot_dir) : snapshot_dir_(std::move(snapshot_dir)) {}

std::string SessionManager::next_id() { return "s" + std::to_string(++counter_); }

std::shared_ptr<Session> SessionManager::find(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(ErrorCode::not_found, "unknown session '" + id + "'");
  return it->second;
}

json SessionManager::create(const json& body) {
  if (!body.is_object()) fail(ErrorCode::invalid_input, "body: must be a JSON object");
  if (!body.contains("prompts")) fail(ErrorCode::invalid_input, "prompts: missing");
  auto prompts = std::make_shared<const PromptSet>(prompts_from_json(body.at("prompts")));
  const SessionConfig cfg = config_from_json(body.value("config", json::object()));

  std::optional<double> bandwidth;
  if (body.contains("bandwidth") && !body.at("bandwidth").is_null()) {
    if (!body.at("bandwidth").is_number()) fail(ErrorCode::invalid_input, "bandwidth: must be a number");
    bandwidth = body.at("bandwidth").get<double>();
  }
  DistanceCache dc(*prompts);
  if (body.contains("kernel_cache")) {
    const auto path = field_or<std::string>(body, "kernel_cache", "");
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::invalid_input, "kernel_cache: cannot open '" + path + "'");
    KernelCache cache = [&] {
      try {
        return read_kernel_cache(in);
      } catch (const Error& e) {
        fail(ErrorCode::invalid_input, std::string("kernel_cache: ") + e.what());
      }
    }();
    if (cache.distances.fingerprint() != dc.fingerprint())
      fail(ErrorCode::invalid_input, "kernel_cache: hash " + to_hex(cache.distances.fingerprint()) +
                                         " does not match the embeddings (" + to_hex(dc.fingerprint()) + ")");
    if (!bandwidth) bandwidth = cache.bandwidth;
  }
  auto kernel = build_kernel(dc, bandwidth);
  if (body.contains("kernel_hash")) {
    const auto expected = field_or<std::string>(body, "kernel_hash", "");
    if (expected != to_hex(kernel->fingerprint()))
      fail(ErrorCode::invalid_input, "kernel_hash: expected " + expected + ", built " + to_hex(kernel->fingerprint()));
  }

  BeliefState belief(kernel, cfg.link, cfg.clip_eps);
  std::unique_lock lock(mu_);
  const std::string id = next_id();
  sessions_.emplace(id, std::make_shared<Session>(id, cfg, prompts, kernel, std::move(belief)));
  return {{"session_id", id},
          {"prompts", prompts->size()},
          {"bandwidth", kernel->bandwidth()},
          {"kernel_hash", to_hex(kernel->fingerprint())}};
}

json SessionManager::plan(const std::string& id, const json& body) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  if (!body.is_object()) fail(ErrorCode::invalid_input, "body: must be a JSON object");
  if (s->pending)
    fail(ErrorCode::conflict, "iteration " + std::to_string(s->iteration) +
                                  " already has a plan awaiting its observation");
  if (!body.contains("batch") || !body.at("batch").is_array())
    fail(ErrorCode::invalid_input, "batch: must be an array of prompt ids");
  std::vector<std::string> ids;
  for (const auto& v : body.at("batch")) {
    if (!v.is_string()) fail(ErrorCode::invalid_input, "batch: ids must be strings");
    ids.push_back(v.get<std::string>());
  }
  const auto batch = s->prompts->indices_of(ids);
  validate_batch(batch, s->prompts->size());

  AllocationProblem problem{s->config.family, {}, s->config.budget, s->config.min, s->config.max};
  for (const char* key : {"budget", "min", "max"}) {
    if (!body.contains(key)) continue;
    if (!s->config.allow_overrides)
      fail(ErrorCode::invalid_input, std::string(key) + ": per-request overrides are disabled for this session");
  }
  problem.budget = field_or(body, "budget", problem.budget);
  problem.min = field_or(body, "min", problem.min);
  problem.max = field_or(body, "max", problem.max);

  std::vector<double> sigma(batch.size(), s->config.sigma_z2);
  if (body.contains("sigma_z2")) {
    const auto& sz = body.at("sigma_z2");
    if (sz.is_number()) {
      sigma.assign(batch.size(), sz.get<double>());
    } else if (sz.is_array() && sz.size() == batch.size()) {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!sz[i].is_number()) fail(ErrorCode::invalid_input, "sigma_z2: entries must be numbers");
        sigma[i] = sz[i].get<double>();
      }
    } else {
      fail(ErrorCode::invalid_input, "sigma_z2: must be a number or one number per batch prompt");
    }
    for (double v : sigma)
      if (!(v > 0.0) || !std::isfinite(v)) fail(ErrorCode::invalid_input, "sigma_z2: must be finite and > 0");
  }

  std::vector<double> value(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    value[i] = predicted_value(*s, batch[i]);
    const auto in = s->config.link == Link::sigmoid ? VarianceInputs::binary(value[i], sigma[i])
                                                    : VarianceInputs::continuous(value[i], sigma[i]);
    problem.coeffs.push_back(allocation_coefficient(in));
  }
  const AllocationPlan plan = allocate(problem);

  json out;
  out["iteration"] = s->iteration;
  out["batch"] = ids;
  out[s->config.link == Link::sigmoid ? "p_hat" : "var_hat"] = value;
  out["a"] = problem.coeffs;
  out["budget"] = problem.budget;
  out["min"] = problem.min;
  out["max"] = problem.max;
  out["n_cont"] = plan.continuous.n;
  out["n_int"] = plan.integer;
  out["lambda_star"] = plan.continuous.lambda;
  out["objective_cont"] = plan.objective_cont;
  out["objective_int"] = plan.objective_int;
  if (plan.continuous.degenerate) out["degenerate"] = true;

  s->pending = PendingPlan{batch, plan.integer};
  json entry = out;
  entry["kind"] = "plan";
  s->audit.push_back(std::move(entry));
  return out;
}

json SessionManager::observe(const std::string& id, const json& body) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  if (!body.is_object()) fail(ErrorCode::invalid_input, "body: must be a JSON object");
  if (!s->pending)
    fail(ErrorCode::conflict, "no plan is pending for iteration " + std::to_string(s->iteration) +
                                  "; request a plan before posting rewards");
  const bool lenient = !s->config.strict || field_or(body, "lenient", false);
  if (!body.contains("rewards") || !body.at("rewards").is_array())
    fail(ErrorCode::invalid_input, "rewards: must be an array of {id, rewards}");

  const PendingPlan pending = *s->pending;  // copied: reset below
  std::map<std::size_t, std::vector<double>> by_index;
  const auto& arr = body.at("rewards");
  for (std::size_t k = 0; k < arr.size(); ++k) {
    const auto& rec = arr[k];
    const std::string where = "rewards[" + std::to_string(k) + "]";
    if (!rec.is_object() || !rec.contains("id") || !rec.at("id").is_string())
      fail(ErrorCode::invalid_input, where + ".id: must be a string");
    const auto pid = rec.at("id").get<std::string>();
    const auto idx = s->prompts->index_of(pid);
    if (!idx) fail(ErrorCode::not_found, where + ".id: unknown prompt id '" + pid + "'");
    if (std::find(pending.batch.begin(), pending.batch.end(), *idx) == pending.batch.end())
      fail(ErrorCode::invalid_input, where + ".id: '" + pid + "' is not in the planned batch");
    if (by_index.count(*idx)) fail(ErrorCode::invalid_input, where + ".id: duplicate '" + pid + "'");
    if (!rec.contains("rewards") || !rec.at("rewards").is_array())
      fail(ErrorCode::invalid_input, where + ".rewards: must be an array of numbers");
    std::vector<double> r;
    for (const auto& v : rec.at("rewards")) {
      if (!v.is_number()) fail(ErrorCode::invalid_input, where + ".rewards: must hold numbers");
      r.push_back(v.get<double>());
    }
    by_index.emplace(*idx, std::move(r));
  }

  BatchObservation obs;
  std::vector<std::string> short_counts;
  for (std::size_t i = 0; i < pending.batch.size(); ++i) {
    const auto q = pending.batch[i];
    auto it = by_index.find(q);
    if (it == by_index.end())
      fail(ErrorCode::invalid_input, "rewards: missing planned prompt '" + s->prompts->id(q) + "'");
    const auto got = static_cast<std::int64_t>(it->second.size());
    if (got != pending.n_int[i]) {
      if (!lenient || got < 1)
        fail(ErrorCode::invalid_input, "rewards: prompt '" + s->prompts->id(q) + "' has " + std::to_string(got) +
                                           " rewards, planned " + std::to_string(pending.n_int[i]));
      short_counts.push_back(s->prompts->id(q));
    }
    obs.entries.push_back({q, it->second});
  }
  try {
    obs.validate(s->prompts->size(), s->config.link);
  } catch (const Error& e) {
    fail(e.code(), std::string("rewards: ") + e.what());
  }

  BeliefState next = s->belief.update(obs);
  const double drift = (next.mean() - s->belief.mean()).cwiseAbs().mean();

  json entry;
  entry["kind"] = "observe";
  entry["iteration"] = s->iteration;
  entry["rewards"] = json::array();
  for (const auto& e : obs.entries) entry["rewards"].push_back({{"id", s->prompts->id(e.index)}, {"rewards", e.rewards}});
  if (!short_counts.empty()) entry["lenient"] = short_counts;

  s->belief = std::move(next);
  s->iteration += 1;
  s->pending.reset();
  s->audit.push_back(std::move(entry));

  json out;
  out["iteration"] = s->iteration;
  std::vector<double> values;
  for (auto q : pending.batch) values.push_back(predicted_value(*s, q));
  out["batch"] = ids_of(*s->prompts, obs.indices());
  out[s->config.link == Link::sigmoid ? "p_hat" : "var_hat"] = values;
  out["drift"] = drift;
  if (!short_counts.empty()) out["lenient"] = short_counts;
  return out;
}

json SessionManager::beliefs(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  BeliefSnapshot snap;
  snap.iteration = s->iteration;
  snap.link = s->config.link;
  snap.clip_eps = s->config.clip_eps;
  snap.mean.assign(s->belief.mean().data(), s->belief.mean().data() + s->belief.mean().size());
  snap.kernel_ref = to_hex(s->kernel->fingerprint());
  json out = belief_snapshot_to_json(snap);
  out["ids"] = s->prompts->ids();
  std::vector<double> values(s->prompts->size());
  for (std::size_t q = 0; q < values.size(); ++q) values[q] = s->belief.predict(q);
  out[s->config.link == Link::sigmoid ? "p_hat" : "var_hat"] = values;
  out["pending"] = s->pending.has_value();
  return out;
}

json SessionManager::audit(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  return {{"iteration", s->iteration}, {"entries", s->audit}};
}

json SessionManager::snapshot(const std::string& id) {
  auto s = find(id);
  json state;
  {
    std::lock_guard lock(s->mu);
    state = state_to_json(*s);
  }
  json blob{{"version", kSnapshotVersion}, {"checksum", checksum_of(state)}, {"state", std::move(state)}};
  if (!snapshot_dir_.empty()) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(snapshot_dir_, ec);
    const auto path = fs::path(snapshot_dir_) /
                      (id + "-" + std::to_string(blob["state"]["iteration"].get<std::int64_t>()) + ".json");
    write_atomically(path, blob.dump());
    json out = blob;
    out["path"] = path.string();
    return out;
  }
  return blob;
}

json SessionManager::restore(const json& body) {
  if (!body.is_object()) fail(ErrorCode::invalid_input, "body: must be a JSON object");
  json blob = body;
  if (body.contains("path") && !body.contains("state")) {
    const auto path = field_or<std::string>(body, "path", "");
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::not_found, "path: cannot open snapshot '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    blob = parse_json(ss.str(), "snapshot file");
  }
  if (!blob.contains("version") || !blob.at("version").is_number_integer())
    fail(ErrorCode::invalid_input, "version: missing");
  const int version = blob.at("version").get<int>();
  if (version != kSnapshotVersion)
    fail(ErrorCode::version, "snapshot version " + std::to_string(version) + " is incompatible with version " +
                                 std::to_string(kSnapshotVersion));
  if (!blob.contains("state") || !blob.at("state").is_object()) fail(ErrorCode::invalid_input, "state: missing");
  const json& state = blob.at("state");
  if (field_or<std::string>(blob, "checksum", "") != checksum_of(state))
    fail(ErrorCode::integrity, "checksum: snapshot state does not match its checksum");

  auto prompts = std::make_shared<const PromptSet>(prompts_from_json(state.at("prompts")));
  const SessionConfig cfg = config_from_json(state.at("config"));
  auto kernel = build_kernel(DistanceCache(*prompts), state.at("bandwidth").get<double>());
  if (to_hex(kernel->fingerprint()) != state.at("kernel_hash").get<std::string>())
    fail(ErrorCode::integrity, "kernel_hash: rebuilt kernel differs from the snapshot");
  const auto mean = state.at("mean").get<std::vector<double>>();
  Eigen::VectorXd m = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  BeliefState belief(kernel, cfg.link, cfg.clip_eps, std::move(m));

  std::unique_lock lock(mu_);
  const std::string id = next_id();
  auto s = std::make_shared<Session>(id, cfg, prompts, kernel, std::move(belief));
  s->iteration = state.at("iteration").get<std::int64_t>();
  if (!state.at("pending").is_null()) {
    const auto ids = state.at("pending").at("batch").get<std::vector<std::string>>();
    s->pending = PendingPlan{prompts->indices_of(ids), state.at("pending").at("n_int").get<std::vector<std::int64_t>>()};
  }
  s->audit = state.at("audit").get<std::vector<json>>();
  sessions_.emplace(id, s);
  return {{"session_id", id}, {"iteration", s->iteration}, {"kernel_hash", to_hex(kernel->fingerprint())}};
}

json SessionManager::health() const {
  std::shared_lock lock(mu_);
  json kernels = json::object();
  for (const auto& [id, s] : sessions_) kernels[id] = to_hex(s->kernel->fingerprint());
  return {{"status", "ok"}, {"version", kServiceVersion}, {"sessions", sessions_.size()}, {"kernels", kernels}};
}

Response SessionManager::handle(const std::string& method, const std::string& path, const std::string& body) {
  auto error = [](int status, const char* code, const std::string& message) {
    return Response{status, json{{"error", {{"code", code}, {"message", message}}}}.dump()};
  };
  try {
    std::vector<std::string> parts;
    {
      std::string p = path.substr(0, path.find('?'));
      std::stringstream ss(p);
      std::string part;
      while (std::getline(ss, part, '/'))
        if (!part.empty()) parts.push_back(part);
    }
    auto parsed = [&] { return body.empty() ? json::object() : parse_json(body, "body"); };
    auto expect = [&](const char* m) {
      if (method != m) fail(ErrorCode::invalid_input, "method " + method + " not allowed on " + path);
    };

    if (parts.size() == 1 && parts[0] == "health") {
      expect("GET");
      return {200, health().dump()};
    }
    if (!parts.empty() && parts[0] == "sessions") {
      if (parts.size() == 1) {
        expect("POST");
        return {201, create(parsed()).dump()};
      }
      if (parts.size() == 2 && parts[1] == "restore") {
        expect("POST");
        return {201, restore(parsed()).dump()};
      }
      if (parts.size() == 3) {
        const auto& id = parts[1];
        const auto& op = parts[2];
        if (op == "plan") { expect("POST"); return {200, plan(id, parsed()).dump()}; }
        if (op == "observe") { expect("POST"); return {200, observe(id, parsed()).dump()}; }
        if (op == "snapshot") { expect("POST"); return {200, snapshot(id).dump()}; }
        if (op == "beliefs") { expect("GET"); return {200, beliefs(id).dump()}; }
        if (op == "audit") { expect("GET"); return {200, audit(id).dump()}; }
      }
    }
    return error(404, "not_found", "no route for " + method + " " + path);
  } catch (const Error& e) {
    const auto [status, code] = error_status(e.code());
    return error(status, code, e.what());
  } catch (const json::exception& e) {
    return error(400, "validation", e.what());
  } catch (const std::exception& e) {
    return error(500, "internal", e.what());
  }
}

BeliefState replay_audit(const json& audit, std::shared_ptr<const PromptSet> prompts,
                         std::shared_ptr<const KernelMatrix> kernel, Link link, double clip_eps) {
  const json& entries = audit.is_object() ? audit.at("entries") : audit;
  BeliefState belief(std::move(kernel), link, clip_eps);
  for (const auto& e : entries) {
    if (e.value("kind", "") != "observe") continue;
    BatchObservation obs;
    for (const auto& r : e.at("rewards")) {
      const auto id = r.at("id").get<std::string>();
      const auto idx = prompts->index_of(id);
      if (!idx) fail(ErrorCode::not_found, "audit: unknown prompt id '" + id + "'");
      obs.entries.push_back({*idx, r.at("rewards").get<std::vector<double>>()});
    }
    belief = belief.update(obs);
  }
  return belief;
}

}  // namespace vip::service
