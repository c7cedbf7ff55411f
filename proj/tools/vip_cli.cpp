// Command-line front end. Everything goes through the C API.
//
// Exit codes: 0 success, 1 runtime/numerical failure, 2 validation or
// infeasible input.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vip/vip.h"

namespace {

using json = nlohmann::json;

constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

struct Failure {
  int exit_code;
  std::string message;
};

int exit_code_of(vip_status s) {
  switch (s) {
    case VIP_OK: return 0;
    case VIP_ERR_INVALID_INPUT:
    case VIP_ERR_DEGENERATE:
    case VIP_ERR_INFEASIBLE:
    case VIP_ERR_NOT_FOUND:
    case VIP_ERR_CONFLICT:
    case VIP_ERR_VERSION:
    case VIP_ERR_INTEGRITY: return kExitValidation;
    default: return kExitRuntime;
  }
}

void check(vip_status s) {
  if (s != VIP_OK) throw Failure{exit_code_of(s), std::string(vip_status_name(s)) + ": " + vip_last_error()};
}

[[noreturn]] void invalid(const std::string& message) { throw Failure{kExitValidation, message}; }

// Owns a string allocated by the library.
struct Owned {
  char* p = nullptr;
  ~Owned() { vip_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  ~Handle() { Free(p); }
};
using PromptSetHandle = Handle<vip_prompt_set, vip_prompt_set_free>;
using KernelHandle = Handle<vip_kernel, vip_kernel_free>;
using BeliefHandle = Handle<vip_belief, vip_belief_free>;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{kExitRuntime, "cannot open '" + path + "'"};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// "-" or empty writes to stdout; files are written to a sibling temp file and
// renamed into place so readers never see a partial output.
void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Failure{kExitRuntime, "cannot write '" + tmp + "'"};
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
    if (!out.flush()) throw Failure{kExitRuntime, "cannot write '" + tmp + "'"};
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Failure{kExitRuntime, "cannot rename to '" + path + "': " + ec.message()};
}

vip_family parse_family(const std::string& name) {
  if (name == "drgrpo" || name == "dr_grpo") return VIP_FAMILY_DR_GRPO;
  if (name == "rloo") return VIP_FAMILY_RLOO;
  invalid("unknown family '" + name + "' (drgrpo, rloo)");
}

vip_link parse_link(const std::string& name) {
  if (name == "sigmoid") return VIP_LINK_SIGMOID;
  if (name == "softplus") return VIP_LINK_SOFTPLUS;
  invalid("unknown link '" + name + "' (sigmoid, softplus)");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

// ---- subcommands -------------------------------------------------------------

struct KernelArgs {
  std::string embeddings, out;
  double bandwidth = 0.0;
};

int run_kernel(const KernelArgs& a) {
  PromptSetHandle set;
  check(vip_prompt_set_load_jsonl(a.embeddings.c_str(), &set.p));
  KernelHandle k;
  check(vip_kernel_create(set.p, a.bandwidth, &k.p));
  check(vip_kernel_save_cache(k.p, a.out.c_str()));
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(vip_kernel_fingerprint(k.p)));
  std::printf("prompts %zu  bandwidth %.17g  kernel %s\n", vip_kernel_size(k.p), vip_kernel_bandwidth(k.p), hex);
  return 0;
}

struct AllocateArgs {
  std::string problem, coeffs, out, family = "rloo";
  long long budget = -1, min = 3, max = 16;
};

int run_allocate(const AllocateArgs& a) {
  if (a.problem.empty() == a.coeffs.empty()) invalid("give exactly one of --problem or --coeffs");
  std::string problem;
  if (!a.problem.empty()) {
    problem = read_file(a.problem);
  } else {
    if (a.budget < 0) invalid("--coeffs needs --budget");
    Owned p;
    check(vip_problem_from_coefficients(read_file(a.coeffs).c_str(), parse_family(a.family), a.budget, a.min, a.max,
                                        &p.p));
    problem = p.str();
  }
  Owned plan;
  check(vip_allocate_json(problem.c_str(), &plan.p));
  write_output(a.out, plan.str());
  return 0;
}

struct CheckArgs {
  std::string problem, plan, out;
};

int run_check(const CheckArgs& a) {
  int ok = 0;
  Owned report;
  check(vip_check_plan_json(read_file(a.problem).c_str(), read_file(a.plan).c_str(), &ok, &report.p));
  write_output(a.out, report.str());
  if (!ok) {
    std::cerr << "plan check failed\n";
    return kExitValidation;
  }
  return 0;
}

struct BeliefArgs {
  std::string embeddings, belief, link = "sigmoid";
  double bandwidth = 0.0, clip_eps = 0.01;
};

// Loads the prompt set, builds the kernel and either restores the belief
// snapshot or starts from the zero-mean prior.
void load_belief(const BeliefArgs& a, PromptSetHandle& set, KernelHandle& k, BeliefHandle& b, long long& iteration) {
  check(vip_prompt_set_load_jsonl(a.embeddings.c_str(), &set.p));
  check(vip_kernel_create(set.p, a.bandwidth, &k.p));
  iteration = 0;
  if (a.belief.empty()) {
    check(vip_belief_create(k.p, parse_link(a.link), a.clip_eps, &b.p));
  } else {
    int64_t it = 0;
    check(vip_belief_from_json(k.p, read_file(a.belief).c_str(), &b.p, &it));
    iteration = it;
  }
}

struct PredictArgs {
  BeliefArgs belief;
  std::string ids, out;
};

int run_predict(const PredictArgs& a) {
  PromptSetHandle set;
  KernelHandle k;
  BeliefHandle b;
  long long iteration = 0;
  load_belief(a.belief, set, k, b, iteration);
  std::vector<size_t> idx;
  if (a.ids.empty()) {
    for (size_t i = 0; i < vip_prompt_set_size(set.p); ++i) idx.push_back(i);
  } else {
    for (const auto& id : split(a.ids, ',')) {
      size_t i = 0;
      check(vip_prompt_set_index(set.p, id.c_str(), &i));
      idx.push_back(i);
    }
  }
  std::vector<double> pred(idx.size()), mean(vip_belief_size(b.p));
  check(vip_belief_predict(b.p, idx.data(), idx.size(), pred.data()));
  check(vip_belief_mean(b.p, mean.data(), mean.size()));
  std::string text;
  for (size_t i = 0; i < idx.size(); ++i) {
    json rec{{"id", vip_prompt_set_id(set.p, idx[i])}, {"latent", mean[idx[i]]}};
    rec[a.belief.link == "sigmoid" ? "p_hat" : "var_hat"] = pred[i];
    text += rec.dump() + "\n";
  }
  write_output(a.out, text);
  return 0;
}

struct UpdateArgs {
  BeliefArgs belief;
  std::string rewards, out;
};

int run_update(const UpdateArgs& a) {
  PromptSetHandle set;
  KernelHandle k;
  BeliefHandle b;
  long long iteration = 0;
  load_belief(a.belief, set, k, b, iteration);
  BeliefHandle next;
  check(vip_belief_update_jsonl(b.p, set.p, read_file(a.rewards).c_str(), &next.p));
  Owned snapshot;
  check(vip_belief_to_json(next.p, iteration + 1, &snapshot.p));
  write_output(a.out, json::parse(snapshot.str()).dump(2));
  return 0;
}

struct TestArgs {
  std::string samples, tests = "fisher,edgington,levene,obrien", json_out;
};

int run_test(const TestArgs& a) {
  const auto samples = read_file(a.samples);
  const auto names = split(a.tests, ',');
  if (names.empty()) invalid("--tests is empty");
  json reports = json::array();
  std::string text;
  for (const auto& name : names) {
    Owned j, t;
    check(vip_assumption_test(samples.c_str(), name.c_str(), &j.p, &t.p));
    reports.push_back(json::parse(j.str()));
    text += t.str();
  }
  std::cout << text;
  if (!a.json_out.empty()) write_output(a.json_out, reports.dump(2));
  return 0;
}

struct SimulateArgs {
  std::string config, records, summary, seeds;
  long long steps = 0, budget = 0;
  unsigned threads = 0;
};

int run_simulate(const SimulateArgs& a) {
  json cfg;
  try {
    cfg = json::parse(read_file(a.config));
  } catch (const json::parse_error& e) {
    invalid(a.config + ": " + e.what());
  }
  if (!cfg.is_object()) invalid(a.config + ": must be a JSON object");
  if (a.steps > 0) cfg["steps"] = a.steps;
  if (a.budget > 0) cfg["budget"] = a.budget;
  if (!a.seeds.empty()) {
    std::vector<unsigned long long> seeds;
    for (const auto& s : split(a.seeds, ',')) {
      try {
        seeds.push_back(std::stoull(s));
      } catch (const std::exception&) {
        invalid("--seeds: bad seed '" + s + "'");
      }
    }
    cfg["seeds"] = seeds;
  }
  Owned records, summary;
  check(vip_simulate(cfg.dump().c_str(), a.threads, a.records.empty() ? nullptr : &records.p, &summary.p));
  if (!a.records.empty()) write_output(a.records, records.str());
  write_output(a.summary, summary.str());
  return 0;
}

struct McArgs {
  std::string family = "both", out, ns = "2,4,8,16", ps = "0.1,0.3,0.5,0.7,0.9", mus = "0,1,5";
  unsigned long long trials = 1'000'000, seed = 0;
  double tolerance = 0.05, sigma_z2 = 1.0;
  bool continuous = false;
};

std::vector<double> parse_reals(const std::string& flag, const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split(s, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      invalid(flag + ": bad number '" + item + "'");
    }
  }
  if (out.empty()) invalid(flag + " is empty");
  return out;
}

int run_mc_validate(const McArgs& a) {
  if (a.trials < 10'000) invalid("--trials must be >= 10000");
  std::vector<vip_family> families;
  if (a.family == "both") families = {VIP_FAMILY_DR_GRPO, VIP_FAMILY_RLOO};
  else families = {parse_family(a.family)};
  const auto ns = parse_reals("--n", a.ns);
  const auto ps = a.continuous ? std::vector<double>{0.0} : parse_reals("--p", a.ps);
  const auto mus = parse_reals("--mu-z", a.mus);
  for (double n : ns)
    if (n < 2 || n != std::floor(n)) invalid("--n: group sizes must be integers >= 2");

  std::string text = a.continuous ? "family  n  rewards        mu_z  closed_form  monte_carlo  rel_error\n"
                                  : "family  n  p     mu_z  closed_form  monte_carlo  rel_error\n";
  bool all_ok = true;
  char line[256];
  for (auto fam : families)
    for (double n : ns)
      for (double p : ps)
        for (double mu : mus) {
          vip_mc_config cfg{fam, a.continuous ? 1 : 0, p, -1.0, 1.0, a.sigma_z2, mu, static_cast<int>(n), a.trials, a.seed};
          double closed = 0.0, mc = 0.0;
          const double value = a.continuous ? 1.0 / 3.0 : p;
          check(vip_gradient_variance(fam, a.continuous ? 1 : 0, value, a.sigma_z2, static_cast<int>(n), &closed));
          check(vip_monte_carlo_variance(&cfg, &mc));
          const double rel = closed == 0.0 ? (mc == 0.0 ? 0.0 : INFINITY) : std::abs(mc - closed) / closed;
          const bool ok = rel <= a.tolerance;
          all_ok = all_ok && ok;
          const char* fname = fam == VIP_FAMILY_RLOO ? "rloo" : "drgrpo";
          if (a.continuous)
            std::snprintf(line, sizeof line, "%-6s %2d  uniform[-1,1] %5g  %11.6g  %11.6g  %9.4f%s\n", fname,
                          static_cast<int>(n), mu, closed, mc, rel, ok ? "" : "  FAIL");
          else
            std::snprintf(line, sizeof line, "%-6s %2d  %-4g  %5g  %11.6g  %11.6g  %9.4f%s\n", fname,
                          static_cast<int>(n), p, mu, closed, mc, rel, ok ? "" : "  FAIL");
          text += line;
        }
  write_output(a.out, text);
  if (!all_ok) {
    std::cerr << "relative error above tolerance " << a.tolerance << " in at least one cell\n";
    return kExitRuntime;
  }
  return 0;
}

struct ServeArgs {
  std::string config, bind, snapshot_dir;
};

int run_serve(const ServeArgs& a) {
  check(vip_serve(a.config.c_str(), a.bind.c_str(), a.snapshot_dir.c_str()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variance-informed rollout allocation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(vip_version()));

  KernelArgs kernel;
  auto* k = app.add_subcommand("kernel", "Build a kernel cache from an embeddings file");
  k->add_option("--embeddings", kernel.embeddings, "Embeddings JSONL ({id, embedding} per line)")->required();
  k->add_option("--out", kernel.out, "Kernel cache output path")->required();
  k->add_option("--bandwidth", kernel.bandwidth, "RBF bandwidth; <= 0 selects the median heuristic")->capture_default_str();

  AllocateArgs alloc;
  auto* al = app.add_subcommand("allocate", "Solve an allocation problem");
  al->add_option("--problem", alloc.problem, "Problem JSON ({family, budget, min, max, prompts: [{id, a}]})");
  al->add_option("--coeffs", alloc.coeffs, "Coefficient JSONL ({id, a} or {id, p_hat, sigma_z2}); needs --budget");
  al->add_option("--family", alloc.family, "drgrpo or rloo (with --coeffs)")->capture_default_str();
  al->add_option("--budget", alloc.budget, "Total rollouts C (with --coeffs)");
  al->add_option("--min", alloc.min, "Per-prompt minimum L (with --coeffs)")->capture_default_str();
  al->add_option("--max", alloc.max, "Per-prompt maximum U (with --coeffs)")->capture_default_str();
  al->add_option("--out", alloc.out, "Plan JSON output; '-' for stdout")->capture_default_str();

  CheckArgs chk;
  auto* ch = app.add_subcommand("check", "Independently verify a plan against its problem");
  ch->add_option("--problem", chk.problem, "Problem JSON")->required();
  ch->add_option("--plan", chk.plan, "Plan JSON")->required();
  ch->add_option("--out", chk.out, "Report output; '-' for stdout")->capture_default_str();

  auto add_belief_flags = [](CLI::App* sub, BeliefArgs& b) {
    sub->add_option("--embeddings", b.embeddings, "Embeddings JSONL")->required();
    sub->add_option("--belief", b.belief, "Belief snapshot JSON; omitted: zero-mean prior");
    sub->add_option("--link", b.link, "sigmoid or softplus (prior only)")->capture_default_str();
    sub->add_option("--bandwidth", b.bandwidth, "RBF bandwidth; <= 0 selects the median heuristic")->capture_default_str();
    sub->add_option("--clip-eps", b.clip_eps, "Clipping of empirical success rates (prior only)")->capture_default_str();
  };

  PredictArgs pred;
  auto* pr = app.add_subcommand("predict", "Predict success probabilities from a belief");
  add_belief_flags(pr, pred.belief);
  pr->add_option("--ids", pred.ids, "Comma-separated prompt ids; default all");
  pr->add_option("--out", pred.out, "Prediction JSONL output; '-' for stdout")->capture_default_str();

  UpdateArgs upd;
  auto* up = app.add_subcommand("update", "Condition a belief on a batch of rewards");
  add_belief_flags(up, upd.belief);
  up->add_option("--rewards", upd.rewards, "Reward JSONL ({id, rewards} per line)")->required();
  up->add_option("--out", upd.out, "Updated belief snapshot output; '-' for stdout")->capture_default_str();

  TestArgs tst;
  auto* te = app.add_subcommand("test", "Run assumption tests on gradient samples");
  te->add_option("--samples", tst.samples, "Samples JSONL ({id, r, z} or {id, z} per line)")->required();
  te->add_option("--tests", tst.tests, "Comma-separated subset of fisher,edgington,levene,obrien")->capture_default_str();
  te->add_option("--json", tst.json_out, "Also write the reports as JSON");

  SimulateArgs sim;
  auto* si = app.add_subcommand("simulate", "Run a simulator experiment");
  si->add_option("--config", sim.config, "Experiment JSON")->required();
  si->add_option("--records", sim.records, "Per-step JSONL records output");
  si->add_option("--summary", sim.summary, "Summary CSV output; '-' for stdout")->capture_default_str();
  si->add_option("--steps", sim.steps, "Override the config's step count");
  si->add_option("--budget", sim.budget, "Override the config's per-batch budget");
  si->add_option("--seeds", sim.seeds, "Override the config's seeds (comma-separated)");
  si->add_option("--threads", sim.threads, "Worker threads; 0 uses every core")->capture_default_str();

  McArgs mc;
  auto* mv = app.add_subcommand("mc-validate", "Compare closed-form gradient variances with Monte Carlo");
  mv->add_option("--family", mc.family, "drgrpo, rloo or both")->capture_default_str();
  mv->add_option("--n", mc.ns, "Group sizes")->capture_default_str();
  mv->add_option("--p", mc.ps, "Success probabilities")->capture_default_str();
  mv->add_option("--mu-z", mc.mus, "Means of the projected gradient")->capture_default_str();
  mv->add_option("--sigma-z2", mc.sigma_z2, "Variance of the projected gradient")->capture_default_str();
  mv->add_option("--trials", mc.trials, "Trials per cell (>= 10000)")->capture_default_str();
  mv->add_option("--seed", mc.seed, "Seed")->capture_default_str();
  mv->add_option("--tolerance", mc.tolerance, "Maximum relative error per cell")->capture_default_str();
  mv->add_flag("--continuous", mc.continuous, "Use uniform[-1,1] rewards instead of +-1 Bernoulli");
  mv->add_option("--out", mc.out, "Report output; '-' for stdout")->capture_default_str();

  ServeArgs srv;
  auto* se = app.add_subcommand("serve", "Run the HTTP session service");
  se->add_option("--config", srv.config, "Service config JSON ({bind, snapshot_dir})");
  se->add_option("--bind", srv.bind, "host:port; overrides the config file and VIP_BIND");
  se->add_option("--snapshot-dir", srv.snapshot_dir, "Overrides the config file and VIP_SNAPSHOT_DIR");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*k) return run_kernel(kernel);
    if (*al) return run_allocate(alloc);
    if (*ch) return run_check(chk);
    if (*pr) return run_predict(pred);
    if (*up) return run_update(upd);
    if (*te) return run_test(tst);
    if (*si) return run_simulate(sim);
    if (*mv) return run_mc_validate(mc);
    if (*se) return run_serve(srv);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << '\n';
    return f.exit_code;
  }
  return 0;
}
