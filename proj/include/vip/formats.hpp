#pragma once

// Line-delimited and JSON record formats shared by the CLI, the C API and
// the service.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "vip/allocator.hpp"
#include "vip/assumption_tests.hpp"
#include "vip/belief.hpp"
#include "vip/prompt_space.hpp"

namespace vip {

using json = nlohmann::json;

/// {"id": string, "embedding": [real, ...]} per line; the dimension of the
/// first record is enforced on the rest. Errors cite 1-based line numbers.
PromptSet read_embeddings_jsonl(std::istream& in);
void write_embeddings_jsonl(std::ostream& out, const PromptSet& set);
/// The same records as a JSON array; errors name the offending element.
PromptSet prompts_from_json(const json& records);
json prompts_to_json(const PromptSet& set);

struct NamedProblem {
  std::vector<std::string> ids;
  AllocationProblem problem;
};

/// {"family", "budget", "min", "max", "prompts": [{"id", "a"}...]}.
NamedProblem problem_from_json(const json& j);
json problem_to_json(const NamedProblem& p);

/// {"id", "a"} or {"id", "p_hat", "sigma_z2"} per line (sigma_z2 defaults to
/// 1); p_hat records are converted with allocation_coefficient.
struct Coefficient {
  std::string id;
  double a;
};
std::vector<Coefficient> read_coefficients_jsonl(std::istream& in);

json plan_to_json(const NamedProblem& p, const AllocationPlan& plan);

struct ParsedPlan {
  double lambda_star = 0.0;
  std::vector<std::string> ids;
  std::vector<double> n_cont;
  std::vector<std::int64_t> n_int;
};
ParsedPlan plan_from_json(const json& j);

/// {"id", "r": [...], "z": [...]} or {"id", "z": [...]} per line.
std::vector<SampleGroup> read_samples_jsonl(std::istream& in);

json report_to_json(const TestReport& r);
/// Fixed-width text table.
std::string render_report(const TestReport& r);

struct BeliefSnapshot {
  std::int64_t iteration = 0;
  Link link = Link::sigmoid;
  double clip_eps = kDefaultClipEps;
  std::vector<double> mean;
  std::string kernel_ref;
};

json belief_snapshot_to_json(const BeliefSnapshot& s);
BeliefSnapshot belief_snapshot_from_json(const json& j);

/// {"id", "rewards": [...]} per line, resolved against `set`.
BatchObservation read_rewards_jsonl(std::istream& in, const PromptSet& set);

/// Parses a JSON document, mapping parse errors to invalid_input.
json parse_json(const std::string& text, const std::string& what);

}  // namespace vip
