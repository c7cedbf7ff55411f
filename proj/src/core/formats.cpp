#include "vip/formats.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "vip/error.hpp"
#include "vip/variance_model.hpp"

namespace vip {

namespace {

// Runs `fn(record, line_no)` for each non-blank line of a JSONL stream and
// prefixes every failure with the line number.
template <typename Fn>
void for_each_record(std::istream& in, const char* what, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json rec = json::parse(line);
      if (!rec.is_object()) fail(ErrorCode::invalid_input, "record must be a JSON object");
      fn(rec, line_no);
    } catch (const json::exception& e) {
      fail(ErrorCode::invalid_input, std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.code(), std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::vector<double> real_array(const json& j, const char* field) {
  if (!j.contains(field) || !j.at(field).is_array())
    fail(ErrorCode::invalid_input, std::string("field '") + field + "' must be an array of numbers");
  std::vector<double> out;
  out.reserve(j.at(field).size());
  for (const auto& v : j.at(field)) {
    if (!v.is_number()) fail(ErrorCode::invalid_input, std::string("field '") + field + "' must hold numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::string id_field(const json& j) {
  if (!j.contains("id") || !j.at("id").is_string())
    fail(ErrorCode::invalid_input, "field 'id' must be a string");
  return j.at("id").get<std::string>();
}

template <typename T>
T required(const json& j, const char* field) {
  if (!j.contains(field)) fail(ErrorCode::invalid_input, std::string("missing field '") + field + "'");
  try {
    return j.at(field).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::invalid_input, std::string("field '") + field + "' has the wrong type");
  }
}

}  // namespace

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::invalid_input, what + ": " + e.what());
  }
}

PromptSet read_embeddings_jsonl(std::istream& in) {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  std::size_t dim = 0;
  for_each_record(in, "embeddings", [&](const json& rec, std::size_t) {
    auto id = id_field(rec);
    auto e = real_array(rec, "embedding");
    if (e.empty()) fail(ErrorCode::invalid_input, "embedding must not be empty");
    if (rows.empty())
      dim = e.size();
    else if (e.size() != dim)
      fail(ErrorCode::invalid_input, "embedding dimension " + std::to_string(e.size()) +
                                         " differs from the first record's " + std::to_string(dim));
    ids.push_back(std::move(id));
    rows.push_back(std::move(e));
  });
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < dim; ++k) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  return PromptSet(std::move(ids), std::move(x));
}

void write_embeddings_jsonl(std::ostream& out, const PromptSet& set) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    json rec;
    rec["id"] = set.id(i);
    std::vector<double> e(set.dim());
    for (std::size_t k = 0; k < set.dim(); ++k) e[k] = set.embeddings()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    rec["embedding"] = e;
    out << rec.dump() << '\n';
  }
}

PromptSet prompts_from_json(const json& records) {
  if (!records.is_array()) fail(ErrorCode::invalid_input, "prompts must be an array of {id, embedding}");
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& rec = records[k];
    try {
      if (!rec.is_object()) fail(ErrorCode::invalid_input, "must be an object");
      ids.push_back(id_field(rec));
      rows.push_back(real_array(rec, "embedding"));
      if (rows.back().empty()) fail(ErrorCode::invalid_input, "embedding must not be empty");
      if (rows.back().size() != rows.front().size())
        fail(ErrorCode::invalid_input, "embedding dimension " + std::to_string(rows.back().size()) +
                                           " differs from prompts[0]'s " + std::to_string(rows.front().size()));
    } catch (const Error& e) {
      fail(e.code(), "prompts[" + std::to_string(k) + "]: " + e.what());
    }
  }
  if (rows.empty()) fail(ErrorCode::invalid_input, "prompts must not be empty");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  return PromptSet(std::move(ids), std::move(x));
}

json prompts_to_json(const PromptSet& set) {
  json out = json::array();
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::vector<double> e(set.dim());
    for (std::size_t k = 0; k < set.dim(); ++k)
      e[k] = set.embeddings()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    out.push_back({{"id", set.id(i)}, {"embedding", std::move(e)}});
  }
  return out;
}

NamedProblem problem_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::invalid_input, "problem must be a JSON object");
  NamedProblem p;
  p.problem.family = parse_family(required<std::string>(j, "family"));
  p.problem.budget = required<std::int64_t>(j, "budget");
  p.problem.min = required<std::int64_t>(j, "min");
  p.problem.max = required<std::int64_t>(j, "max");
  if (!j.contains("prompts") || !j.at("prompts").is_array())
    fail(ErrorCode::invalid_input, "field 'prompts' must be an array");
  std::size_t k = 0;
  for (const auto& rec : j.at("prompts")) {
    try {
      p.ids.push_back(id_field(rec));
      p.problem.coeffs.push_back(required<double>(rec, "a"));
    } catch (const Error& e) {
      fail(e.code(), "prompts[" + std::to_string(k) + "]: " + e.what());
    }
    ++k;
  }
  return p;
}

json problem_to_json(const NamedProblem& p) {
  json j;
  j["family"] = to_string(p.problem.family);
  j["budget"] = p.problem.budget;
  j["min"] = p.problem.min;
  j["max"] = p.problem.max;
  j["prompts"] = json::array();
  for (std::size_t q = 0; q < p.ids.size(); ++q)
    j["prompts"].push_back({{"id", p.ids[q]}, {"a", p.problem.coeffs[q]}});
  return j;
}

std::vector<Coefficient> read_coefficients_jsonl(std::istream& in) {
  std::vector<Coefficient> out;
  for_each_record(in, "coefficients", [&](const json& rec, std::size_t) {
    Coefficient c{id_field(rec), 0.0};
    if (rec.contains("a")) {
      c.a = required<double>(rec, "a");
      if (!(c.a >= 0.0) || !std::isfinite(c.a)) fail(ErrorCode::invalid_input, "'a' must be finite and >= 0");
    } else if (rec.contains("p_hat")) {
      const double s = rec.contains("sigma_z2") ? required<double>(rec, "sigma_z2") : 1.0;
      c.a = allocation_coefficient(VarianceInputs::binary(required<double>(rec, "p_hat"), s));
    } else {
      fail(ErrorCode::invalid_input, "record needs either 'a' or 'p_hat'");
    }
    out.push_back(std::move(c));
  });
  return out;
}

json plan_to_json(const NamedProblem& p, const AllocationPlan& plan) {
  json j;
  j["lambda_star"] = plan.continuous.lambda;
  j["objective_cont"] = plan.objective_cont;
  j["objective_int"] = plan.objective_int;
  if (plan.continuous.degenerate) j["degenerate"] = true;
  j["allocations"] = json::array();
  for (std::size_t q = 0; q < p.ids.size(); ++q)
    j["allocations"].push_back(
        {{"id", p.ids[q]}, {"n_cont", plan.continuous.n[q]}, {"n_int", plan.integer[q]}});
  return j;
}

ParsedPlan plan_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::invalid_input, "plan must be a JSON object");
  ParsedPlan p;
  p.lambda_star = required<double>(j, "lambda_star");
  if (!j.contains("allocations") || !j.at("allocations").is_array())
    fail(ErrorCode::invalid_input, "field 'allocations' must be an array");
  for (const auto& a : j.at("allocations")) {
    p.ids.push_back(id_field(a));
    p.n_cont.push_back(required<double>(a, "n_cont"));
    p.n_int.push_back(required<std::int64_t>(a, "n_int"));
  }
  return p;
}

std::vector<SampleGroup> read_samples_jsonl(std::istream& in) {
  std::vector<SampleGroup> out;
  for_each_record(in, "samples", [&](const json& rec, std::size_t) {
    SampleGroup g;
    g.id = id_field(rec);
    g.z = real_array(rec, "z");
    if (rec.contains("r")) {
      g.r = real_array(rec, "r");
      if (g.r.size() != g.z.size())
        fail(ErrorCode::invalid_input, "'r' and 'z' differ in length");
    }
    if (g.z.size() < 2) fail(ErrorCode::invalid_input, "each group needs at least 2 samples");
    out.push_back(std::move(g));
  });
  return out;
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json report_to_json(const TestReport& r) {
  json j;
  j["test"] = r.test_name;
  j["statistic"] = number_or_null(r.statistic);
  j["dof"] = r.dof;
  j["p_global"] = number_or_null(r.p_global);
  j["degenerate"] = r.degenerate;
  j["per_group"] = json::array();
  for (const auto& g : r.per_group)
    j["per_group"].push_back({{"id", g.id}, {"statistic", number_or_null(g.statistic)}, {"value", number_or_null(g.value)}});
  j["skipped"] = json::array();
  for (const auto& s : r.skipped) j["skipped"].push_back({{"id", s.id}, {"reason", s.reason}});
  j["notes"] = r.notes;
  return j;
}

std::string render_report(const TestReport& r) {
  std::ostringstream out;
  char buf[160];
  std::string dof;
  for (std::size_t i = 0; i < r.dof.size(); ++i) dof += (i ? ", " : "") + std::to_string(static_cast<long long>(std::llround(r.dof[i])));
  std::snprintf(buf, sizeof buf, "%-10s  statistic %14.6g  dof (%s)  p_global %12.6g%s\n",
                r.test_name.c_str(), r.statistic, dof.c_str(), r.p_global,
                r.degenerate ? "  [degenerate]" : "");
  out << buf;
  std::snprintf(buf, sizeof buf, "  groups used %zu, skipped %zu\n", r.per_group.size(), r.skipped.size());
  out << buf;
  for (const auto& s : r.skipped) out << "  skipped " << s.id << ": " << s.reason << '\n';
  for (const auto& n : r.notes) out << "  note: " << n << '\n';
  return out.str();
}

json belief_snapshot_to_json(const BeliefSnapshot& s) {
  return {{"iteration", s.iteration},
          {"link", to_string(s.link)},
          {"clip_eps", s.clip_eps},
          {"mean", s.mean},
          {"kernel_ref", s.kernel_ref}};
}

BeliefSnapshot belief_snapshot_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::invalid_input, "belief snapshot must be a JSON object");
  BeliefSnapshot s;
  s.iteration = required<std::int64_t>(j, "iteration");
  s.link = parse_link(required<std::string>(j, "link"));
  s.clip_eps = required<double>(j, "clip_eps");
  s.mean = real_array(j, "mean");
  s.kernel_ref = required<std::string>(j, "kernel_ref");
  return s;
}

BatchObservation read_rewards_jsonl(std::istream& in, const PromptSet& set) {
  BatchObservation obs;
  for_each_record(in, "rewards", [&](const json& rec, std::size_t) {
    const auto id = id_field(rec);
    const auto idx = set.index_of(id);
    if (!idx) fail(ErrorCode::not_found, "unknown prompt id '" + id + "'");
    obs.entries.push_back({*idx, real_array(rec, "rewards")});
  });
  return obs;
}

}  // namespace vip
