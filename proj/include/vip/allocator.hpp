#pragma once

// Budget-constrained rollout allocation: minimise sum_q f_q(n_q) subject to
// sum_q n_q = C and L <= n_q <= U, where
//   Dr.GRPO: f_q(n) = a_q (n-1)/n^2
//   RLOO:    f_q(n) = a_q / (n-1).
// The continuous relaxation is solved by inverting the per-coordinate KKT
// condition for a shared multiplier and bisecting on the multiplier; the
// integer plan starts from the floors and hands out the remaining units
// greedily by marginal decrease.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vip/variance_model.hpp"

namespace vip {

struct AllocationProblem {
  Family family = Family::rloo;
  std::vector<double> coeffs;  // a_q >= 0
  std::int64_t budget = 0;     // C
  std::int64_t min = 3;        // L
  std::int64_t max = 16;       // U

  std::size_t size() const noexcept { return coeffs.size(); }
  /// invalid_input for malformed bounds/coefficients, infeasible when the
  /// budget is outside [B*L, B*U].
  void validate() const;
};

double per_prompt_objective(Family family, double a, double n);

/// -f_q'(n) / a_q: (n-2)/n^3 for Dr.GRPO, 1/(n-1)^2 for RLOO.
double marginal_rate(Family family, double n);

/// Optimal n_q for a fixed multiplier, clamped to [L, U]. a == 0 maps to L.
double kkt_inverse(Family family, double a, double lambda, std::int64_t min, std::int64_t max);

struct ContinuousSolution {
  std::vector<double> n;
  double lambda = 0.0;
  double budget_residual = 0.0;  // sum(n) - C
  int iterations = 0;
  bool degenerate = false;       // every a_q == 0: uniform split
  bool converged = true;
};

/// Sum of kkt_inverse over all prompts.
double allocation_sum(const AllocationProblem& problem, double lambda);

ContinuousSolution solve_continuous(const AllocationProblem& problem);

/// Floors of n_cont, then one unit at a time to the prompt (below U) with the
/// largest f_q(n) - f_q(n+1); ties go to the smallest index.
std::vector<std::int64_t> round_allocation(const AllocationProblem& problem,
                                           std::span<const double> n_cont);

double total_objective(Family family, std::span<const double> coeffs, std::span<const double> n);
double total_objective(Family family, std::span<const double> coeffs,
                       std::span<const std::int64_t> n);

struct AllocationPlan {
  ContinuousSolution continuous;
  std::vector<std::int64_t> integer;
  double objective_cont = 0.0;
  double objective_int = 0.0;
};

AllocationPlan allocate(const AllocationProblem& problem);

struct PlanCheck {
  double budget_residual_cont = 0.0;
  std::int64_t budget_residual_int = 0;
  double max_kkt_residual = 0.0;
  bool bounds_ok = true;
  bool ok = true;
  std::vector<std::string> violations;
};

/// Independent certificate: budget, bounds, and KKT sign/stationarity
/// conditions of the continuous part.
PlanCheck check_plan(const AllocationProblem& problem, std::span<const double> n_cont,
                     double lambda, std::span<const std::int64_t> n_int,
                     double budget_tol = 1e-6, double kkt_tol = 1e-8);

enum class Baseline { uniform, inverse_accuracy, inverse_variance };

const char* to_string(Baseline b) noexcept;
Baseline parse_baseline(std::string_view name);

inline constexpr double kBaselineEps = 0.01;

/// Weight-proportional split of `budget` clamped to [min, max]: free
/// coordinates get budget share proportional to weight, violators are pinned
/// to their bound and the rest renormalised until stable.
std::vector<double> box_project(std::span<const double> weights, double budget, double min,
                                double max);

/// Heuristic baselines. `stats` holds accuracies (inverse_accuracy) or answer
/// variances (inverse_variance); for uniform only its length (the batch size)
/// is used.
std::vector<std::int64_t> baseline_allocation(Baseline kind, std::span<const double> stats,
                                              std::int64_t budget, std::int64_t min,
                                              std::int64_t max, double eps = kBaselineEps);

}  // namespace vip
