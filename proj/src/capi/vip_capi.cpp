#include "vip/vip.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <sstream>
#include <string>

#include "vip/allocator.hpp"
#include "vip/assumption_tests.hpp"
#include "vip/belief.hpp"
#include "vip/distributions.hpp"
#include "vip/error.hpp"
#include "vip/formats.hpp"
#include "vip/hash.hpp"
#include "vip/prompt_space.hpp"
#include "vip/service.hpp"
#include "vip/simulator.hpp"
#include "vip/variance_model.hpp"

struct vip_prompt_set {
  std::shared_ptr<const vip::PromptSet> set;
};

struct vip_kernel {
  std::shared_ptr<const vip::DistanceCache> distances;
  std::shared_ptr<const vip::KernelMatrix> kernel;
};

struct vip_belief {
  vip::BeliefState state;
};

struct vip_service {
  vip::service::SessionManager manager;
};

namespace {

thread_local std::string last_error;

vip_status status_of(vip::ErrorCode code) {
  using vip::ErrorCode;
  switch (code) {
    case ErrorCode::invalid_input: return VIP_ERR_INVALID_INPUT;
    case ErrorCode::degenerate_geometry: return VIP_ERR_DEGENERATE;
    case ErrorCode::infeasible: return VIP_ERR_INFEASIBLE;
    case ErrorCode::numerical: return VIP_ERR_NUMERICAL;
    case ErrorCode::not_found: return VIP_ERR_NOT_FOUND;
    case ErrorCode::conflict: return VIP_ERR_CONFLICT;
    case ErrorCode::version: return VIP_ERR_VERSION;
    case ErrorCode::integrity: return VIP_ERR_INTEGRITY;
    case ErrorCode::io: return VIP_ERR_IO;
  }
  return VIP_ERR_INTERNAL;
}

// Runs `fn`, translating exceptions into a status and the thread-local message.
template <typename Fn>
vip_status guarded(Fn&& fn) {
  try {
    last_error.clear();
    fn();
    return VIP_OK;
  } catch (const vip::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const nlohmann::json::exception& e) {
    last_error = e.what();
    return VIP_ERR_INVALID_INPUT;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return VIP_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return VIP_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) vip::fail(vip::ErrorCode::invalid_input, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

void emit(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

vip::Family family_of(vip_family f) {
  switch (f) {
    case VIP_FAMILY_DR_GRPO: return vip::Family::dr_grpo;
    case VIP_FAMILY_RLOO: return vip::Family::rloo;
  }
  vip::fail(vip::ErrorCode::invalid_input, "unknown family");
}

vip::Link link_of(vip_link l) {
  switch (l) {
    case VIP_LINK_SIGMOID: return vip::Link::sigmoid;
    case VIP_LINK_SOFTPLUS: return vip::Link::softplus;
  }
  vip::fail(vip::ErrorCode::invalid_input, "unknown link");
}

vip::VarianceInputs inputs_of(int continuous, double value, double sigma_z2) {
  return continuous ? vip::VarianceInputs::continuous(value, sigma_z2) : vip::VarianceInputs::binary(value, sigma_z2);
}

}  // namespace

extern "C" {

const char* vip_version(void) { return vip::service::kServiceVersion; }

const char* vip_last_error(void) { return last_error.c_str(); }

const char* vip_status_name(vip_status status) {
  switch (status) {
    case VIP_OK: return "ok";
    case VIP_ERR_INVALID_INPUT: return "invalid_input";
    case VIP_ERR_DEGENERATE: return "degenerate_geometry";
    case VIP_ERR_INFEASIBLE: return "infeasible";
    case VIP_ERR_NUMERICAL: return "numerical";
    case VIP_ERR_NOT_FOUND: return "not_found";
    case VIP_ERR_CONFLICT: return "conflict";
    case VIP_ERR_VERSION: return "version";
    case VIP_ERR_INTEGRITY: return "integrity";
    case VIP_ERR_IO: return "io";
    case VIP_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void vip_string_free(char* s) { std::free(s); }

// ---- prompt space ---------------------------------------------------------

vip_status vip_prompt_set_create(const char* const* ids, const double* embeddings, size_t count, size_t dim,
                                 vip_prompt_set** out) {
  return guarded([&] {
    require(out, "out");
    require(ids, "ids");
    require(embeddings, "embeddings");
    std::vector<std::string> names;
    names.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      require(ids[i], "ids[i]");
      names.emplace_back(ids[i]);
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
    for (size_t i = 0; i < count; ++i)
      for (size_t k = 0; k < dim; ++k) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = embeddings[i * dim + k];
    *out = new vip_prompt_set{std::make_shared<const vip::PromptSet>(std::move(names), std::move(x))};
  });
}

vip_status vip_prompt_set_load_jsonl(const char* path, vip_prompt_set** out) {
  return guarded([&] {
    require(out, "out");
    require(path, "path");
    std::ifstream in(path);
    if (!in) vip::fail(vip::ErrorCode::io, std::string("cannot open '") + path + "'");
    *out = new vip_prompt_set{std::make_shared<const vip::PromptSet>(vip::read_embeddings_jsonl(in))};
  });
}

size_t vip_prompt_set_size(const vip_prompt_set* set) { return set ? set->set->size() : 0; }
size_t vip_prompt_set_dim(const vip_prompt_set* set) { return set ? set->set->dim() : 0; }

vip_status vip_prompt_set_index(const vip_prompt_set* set, const char* id, size_t* out) {
  return guarded([&] {
    require(set, "set");
    require(id, "id");
    require(out, "out");
    auto idx = set->set->index_of(id);
    if (!idx) vip::fail(vip::ErrorCode::not_found, std::string("unknown prompt id '") + id + "'");
    *out = *idx;
  });
}

const char* vip_prompt_set_id(const vip_prompt_set* set, size_t index) {
  if (!set || index >= set->set->size()) return nullptr;
  return set->set->id(index).c_str();
}

void vip_prompt_set_free(vip_prompt_set* set) { delete set; }

vip_status vip_median_bandwidth(const vip_prompt_set* set, double* out) {
  return guarded([&] {
    require(set, "set");
    require(out, "out");
    *out = vip::median_bandwidth(*set->set);
  });
}

vip_status vip_kernel_create(const vip_prompt_set* set, double bandwidth, vip_kernel** out) {
  return guarded([&] {
    require(set, "set");
    require(out, "out");
    auto dc = std::make_shared<const vip::DistanceCache>(*set->set);
    const double h = bandwidth > 0.0 ? bandwidth : vip::median_bandwidth(*dc);
    *out = new vip_kernel{dc, std::make_shared<const vip::KernelMatrix>(*dc, h)};
  });
}

vip_status vip_kernel_save_cache(const vip_kernel* kernel, const char* path) {
  return guarded([&] {
    require(kernel, "kernel");
    require(path, "path");
    const std::string tmp = std::string(path) + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) vip::fail(vip::ErrorCode::io, "cannot write '" + tmp + "'");
      vip::write_kernel_cache(out, *kernel->distances, kernel->kernel->bandwidth());
      if (!out.flush()) vip::fail(vip::ErrorCode::io, "cannot write '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path) != 0) vip::fail(vip::ErrorCode::io, std::string("cannot rename to '") + path + "'");
  });
}

vip_status vip_kernel_load_cache(const char* path, vip_kernel** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    std::ifstream in(path, std::ios::binary);
    if (!in) vip::fail(vip::ErrorCode::io, std::string("cannot open '") + path + "'");
    auto cache = vip::read_kernel_cache(in);
    auto dc = std::make_shared<const vip::DistanceCache>(std::move(cache.distances));
    *out = new vip_kernel{dc, std::make_shared<const vip::KernelMatrix>(*dc, cache.bandwidth)};
  });
}

size_t vip_kernel_size(const vip_kernel* kernel) { return kernel ? kernel->kernel->size() : 0; }
double vip_kernel_bandwidth(const vip_kernel* kernel) { return kernel ? kernel->kernel->bandwidth() : 0.0; }
uint64_t vip_kernel_fingerprint(const vip_kernel* kernel) { return kernel ? kernel->kernel->fingerprint() : 0; }

vip_status vip_kernel_value(const vip_kernel* kernel, size_t i, size_t j, double* out) {
  return guarded([&] {
    require(kernel, "kernel");
    require(out, "out");
    if (i >= kernel->kernel->size() || j >= kernel->kernel->size())
      vip::fail(vip::ErrorCode::invalid_input, "kernel index out of range");
    *out = (*kernel->kernel)(i, j);
  });
}

void vip_kernel_free(vip_kernel* kernel) { delete kernel; }

// ---- belief ----------------------------------------------------------------

vip_status vip_belief_create(const vip_kernel* kernel, vip_link link, double clip_eps, vip_belief** out) {
  return guarded([&] {
    require(kernel, "kernel");
    require(out, "out");
    *out = new vip_belief{vip::BeliefState(kernel->kernel, link_of(link), clip_eps)};
  });
}

vip_status vip_belief_create_with_mean(const vip_kernel* kernel, vip_link link, double clip_eps, const double* mean,
                                       size_t n, vip_belief** out) {
  return guarded([&] {
    require(kernel, "kernel");
    require(mean, "mean");
    require(out, "out");
    Eigen::VectorXd m = Eigen::Map<const Eigen::VectorXd>(mean, static_cast<Eigen::Index>(n));
    *out = new vip_belief{vip::BeliefState(kernel->kernel, link_of(link), clip_eps, std::move(m))};
  });
}

vip_status vip_belief_update(const vip_belief* belief, const size_t* batch, const double* const* rewards,
                             const size_t* counts, size_t batch_len, vip_belief** out) {
  return guarded([&] {
    require(belief, "belief");
    require(batch, "batch");
    require(rewards, "rewards");
    require(counts, "counts");
    require(out, "out");
    vip::BatchObservation obs;
    for (size_t i = 0; i < batch_len; ++i) {
      if (counts[i] > 0) require(rewards[i], "rewards[i]");
      obs.entries.push_back({batch[i], std::vector<double>(rewards[i], rewards[i] + counts[i])});
    }
    *out = new vip_belief{belief->state.update(obs)};
  });
}

vip_status vip_belief_update_jsonl(const vip_belief* belief, const vip_prompt_set* set, const char* rewards_jsonl,
                                   vip_belief** out) {
  return guarded([&] {
    require(belief, "belief");
    require(set, "set");
    require(rewards_jsonl, "rewards_jsonl");
    require(out, "out");
    if (set->set->size() != belief->state.size())
      vip::fail(vip::ErrorCode::invalid_input, "prompt set and belief differ in size");
    std::istringstream in(rewards_jsonl);
    *out = new vip_belief{belief->state.update(vip::read_rewards_jsonl(in, *set->set))};
  });
}

size_t vip_belief_size(const vip_belief* belief) { return belief ? belief->state.size() : 0; }

vip_status vip_belief_mean(const vip_belief* belief, double* out, size_t n) {
  return guarded([&] {
    require(belief, "belief");
    require(out, "out");
    if (n != belief->state.size()) vip::fail(vip::ErrorCode::invalid_input, "output length differs from the belief size");
    for (size_t i = 0; i < n; ++i) out[i] = belief->state.mean()(static_cast<Eigen::Index>(i));
  });
}

vip_status vip_belief_predict(const vip_belief* belief, const size_t* indices, size_t n, double* out) {
  return guarded([&] {
    require(belief, "belief");
    require(indices, "indices");
    require(out, "out");
    for (size_t i = 0; i < n; ++i) {
      if (indices[i] >= belief->state.size()) vip::fail(vip::ErrorCode::invalid_input, "prompt index out of range");
      out[i] = belief->state.predict(indices[i]);
    }
  });
}

vip_status vip_belief_to_json(const vip_belief* belief, int64_t iteration, char** out) {
  return guarded([&] {
    require(belief, "belief");
    require(out, "out");
    vip::BeliefSnapshot s;
    s.iteration = iteration;
    s.link = belief->state.link();
    s.clip_eps = belief->state.clip_eps();
    s.mean.assign(belief->state.mean().data(), belief->state.mean().data() + belief->state.mean().size());
    s.kernel_ref = vip::to_hex(belief->state.kernel().fingerprint());
    *out = dup_string(vip::belief_snapshot_to_json(s).dump());
  });
}

vip_status vip_belief_from_json(const vip_kernel* kernel, const char* json, vip_belief** out, int64_t* iteration) {
  return guarded([&] {
    require(kernel, "kernel");
    require(json, "json");
    require(out, "out");
    const auto s = vip::belief_snapshot_from_json(vip::parse_json(json, "belief snapshot"));
    if (s.kernel_ref != vip::to_hex(kernel->kernel->fingerprint()))
      vip::fail(vip::ErrorCode::integrity, "belief snapshot refers to kernel " + s.kernel_ref + ", not " +
                                                vip::to_hex(kernel->kernel->fingerprint()));
    Eigen::VectorXd m = Eigen::Map<const Eigen::VectorXd>(s.mean.data(), static_cast<Eigen::Index>(s.mean.size()));
    *out = new vip_belief{vip::BeliefState(kernel->kernel, s.link, s.clip_eps, std::move(m))};
    if (iteration) *iteration = s.iteration;
  });
}

void vip_belief_free(vip_belief* belief) { delete belief; }

// ---- variance model --------------------------------------------------------

vip_status vip_allocation_coefficient(int continuous, double value, double sigma_z2, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = vip::allocation_coefficient(inputs_of(continuous, value, sigma_z2));
  });
}

vip_status vip_gradient_variance(vip_family family, int continuous, double value, double sigma_z2, int n,
                                 double* out) {
  return guarded([&] {
    require(out, "out");
    *out = vip::gradient_variance(family_of(family), inputs_of(continuous, value, sigma_z2), n);
  });
}

vip_status vip_monte_carlo_variance(const vip_mc_config* cfg, double* out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    vip::MonteCarloConfig mc;
    mc.family = family_of(cfg->family);
    mc.rewards = cfg->uniform_rewards ? vip::RewardDistribution::uniform(cfg->lo, cfg->hi)
                                      : vip::RewardDistribution::bernoulli(cfg->p);
    mc.sigma_z2 = cfg->sigma_z2;
    mc.z_mean = cfg->z_mean;
    mc.n = cfg->n;
    mc.trials = cfg->trials;
    mc.seed = cfg->seed;
    *out = vip::monte_carlo_variance(mc);
  });
}

// ---- allocator -------------------------------------------------------------

vip_status vip_allocate(vip_family family, const double* a, size_t count, int64_t budget, int64_t min, int64_t max,
                        double* n_cont, int64_t* n_int, double* lambda, double* objective_cont,
                        double* objective_int) {
  return guarded([&] {
    require(a, "a");
    vip::AllocationProblem p{family_of(family), std::vector<double>(a, a + count), budget, min, max};
    const auto plan = vip::allocate(p);
    for (size_t q = 0; q < count; ++q) {
      if (n_cont) n_cont[q] = plan.continuous.n[q];
      if (n_int) n_int[q] = plan.integer[q];
    }
    if (lambda) *lambda = plan.continuous.lambda;
    if (objective_cont) *objective_cont = plan.objective_cont;
    if (objective_int) *objective_int = plan.objective_int;
  });
}

vip_status vip_allocate_json(const char* problem_json, char** plan_json) {
  return guarded([&] {
    require(problem_json, "problem_json");
    require(plan_json, "plan_json");
    const auto problem = vip::problem_from_json(vip::parse_json(problem_json, "problem"));
    const auto plan = vip::allocate(problem.problem);
    *plan_json = dup_string(vip::plan_to_json(problem, plan).dump(2));
  });
}

vip_status vip_problem_from_coefficients(const char* coefficients_jsonl, vip_family family, int64_t budget,
                                         int64_t min, int64_t max, char** problem_json) {
  return guarded([&] {
    require(coefficients_jsonl, "coefficients_jsonl");
    require(problem_json, "problem_json");
    std::istringstream in(coefficients_jsonl);
    vip::NamedProblem p;
    p.problem = {family_of(family), {}, budget, min, max};
    for (auto& c : vip::read_coefficients_jsonl(in)) {
      p.ids.push_back(std::move(c.id));
      p.problem.coeffs.push_back(c.a);
    }
    *problem_json = dup_string(vip::problem_to_json(p).dump(2));
  });
}

vip_status vip_check_plan_json(const char* problem_json, const char* plan_json, int* ok, char** report_json) {
  return guarded([&] {
    require(problem_json, "problem_json");
    require(plan_json, "plan_json");
    const auto problem = vip::problem_from_json(vip::parse_json(problem_json, "problem"));
    const auto plan = vip::plan_from_json(vip::parse_json(plan_json, "plan"));
    if (plan.ids != problem.ids) vip::fail(vip::ErrorCode::invalid_input, "plan ids differ from the problem's");
    const auto check = vip::check_plan(problem.problem, plan.n_cont, plan.lambda_star, plan.n_int);
    if (ok) *ok = check.ok ? 1 : 0;
    nlohmann::json j{{"ok", check.ok},
                     {"budget_residual_cont", check.budget_residual_cont},
                     {"budget_residual_int", check.budget_residual_int},
                     {"max_kkt_residual", check.max_kkt_residual},
                     {"bounds_ok", check.bounds_ok},
                     {"violations", check.violations}};
    emit(report_json, j.dump(2));
  });
}

vip_status vip_baseline_allocation(vip_baseline kind, const double* stats, size_t count, int64_t budget, int64_t min,
                                   int64_t max, int64_t* out) {
  return guarded([&] {
    require(stats, "stats");
    require(out, "out");
    vip::Baseline b = vip::Baseline::uniform;
    switch (kind) {
      case VIP_BASELINE_UNIFORM: b = vip::Baseline::uniform; break;
      case VIP_BASELINE_INVERSE_ACCURACY: b = vip::Baseline::inverse_accuracy; break;
      case VIP_BASELINE_INVERSE_VARIANCE: b = vip::Baseline::inverse_variance; break;
      default: vip::fail(vip::ErrorCode::invalid_input, "unknown baseline");
    }
    const auto n = vip::baseline_allocation(b, std::span<const double>(stats, count), budget, min, max);
    std::copy(n.begin(), n.end(), out);
  });
}

// ---- assumption tests ------------------------------------------------------

vip_status vip_assumption_test(const char* samples_jsonl, const char* test, char** report_json, char** report_text) {
  return guarded([&] {
    require(samples_jsonl, "samples_jsonl");
    require(test, "test");
    std::istringstream in(samples_jsonl);
    const auto groups = vip::read_samples_jsonl(in);
    const std::string name = test;
    vip::TestReport r;
    if (name == "fisher" || name == "edgington") {
      for (const auto& g : groups)
        if (!g.paired())
          vip::fail(vip::ErrorCode::invalid_input, name + " needs paired (r, z) samples; group '" + g.id + "' has no r");
      r = name == "fisher" ? vip::fisher_test(groups) : vip::edgington_test(groups);
    } else if (name == "levene") {
      r = vip::levene_test(groups);
    } else if (name == "obrien") {
      r = vip::obrien_test(groups);
    } else {
      vip::fail(vip::ErrorCode::invalid_input, "unknown test '" + name + "' (fisher, edgington, levene, obrien)");
    }
    emit(report_json, vip::report_to_json(r).dump(2));
    emit(report_text, vip::render_report(r));
  });
}

vip_status vip_survival(const char* dist, const double* params, size_t nparams, double x, double* out) {
  return guarded([&] {
    require(dist, "dist");
    require(out, "out");
    if (nparams > 0) require(params, "params");
    *out = vip::stats::survival(vip::stats::parse_distribution(dist), std::span<const double>(params, nparams), x);
  });
}

// ---- simulator ---------------------------------------------------------------

vip_status vip_simulate(const char* experiment_json, unsigned threads, char** records_jsonl, char** summary_csv) {
  return guarded([&] {
    require(experiment_json, "experiment_json");
    const auto ex = vip::sim::experiment_from_json(vip::parse_json(experiment_json, "experiment"));
    const auto result = vip::sim::run_experiment(ex, threads);
    // Build both strings before handing either out, so a failure leaks nothing.
    std::string records = records_jsonl ? vip::sim::records_jsonl(result) : std::string();
    std::string csv = summary_csv ? vip::sim::summary_csv(result) : std::string();
    char* r = records_jsonl ? dup_string(records) : nullptr;
    try {
      emit(summary_csv, csv);
    } catch (...) {
      std::free(r);
      throw;
    }
    if (records_jsonl) *records_jsonl = r;
  });
}

// ---- service -----------------------------------------------------------------

vip_status vip_service_create(const char* snapshot_dir, vip_service** out) {
  return guarded([&] {
    require(out, "out");
    *out = new vip_service{vip::service::SessionManager(snapshot_dir ? snapshot_dir : "")};
  });
}

vip_status vip_service_handle(vip_service* service, const char* method, const char* path, const char* body,
                              int* http_status, char** response) {
  return guarded([&] {
    require(service, "service");
    require(method, "method");
    require(path, "path");
    require(http_status, "http_status");
    require(response, "response");
    const auto r = service->manager.handle(method, path, body ? body : "");
    *response = dup_string(r.body);
    *http_status = r.status;
  });
}

void vip_service_free(vip_service* service) { delete service; }

vip_status vip_serve(const char* config_path, const char* bind, const char* snapshot_dir) {
  return guarded([&] {
    auto cfg = vip::service::load_server_config(config_path ? config_path : "");
    if (bind && *bind) vip::service::set_bind(cfg, bind);
    if (snapshot_dir && *snapshot_dir) cfg.snapshot_dir = snapshot_dir;
    if (!vip::service::serve(cfg))
      vip::fail(vip::ErrorCode::io, "cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
  });
}

}  // extern "C"
