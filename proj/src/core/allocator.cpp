#include "vip/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "vip/error.hpp"

namespace vip {

namespace {

// Outer bisection stops once the budget is met to this absolute tolerance or
// the multiplier bracket collapses.
constexpr double kBudgetTol = 1e-10;
constexpr double kBracketRelWidth = 1e-15;
constexpr int kMaxOuterIterations = 200;
constexpr double kInnerTol = 1e-12;
constexpr double kFloorSnap = 1e-9;

std::string bound_message(std::int64_t c, std::size_t b, std::int64_t l, std::int64_t u) {
  const auto bl = static_cast<std::int64_t>(b) * l;
  const auto bu = static_cast<std::int64_t>(b) * u;
  if (c < bl)
    return "budget C=" + std::to_string(c) + " is below B*L=" + std::to_string(bl) + " (B=" +
           std::to_string(b) + ", L=" + std::to_string(l) + ")";
  return "budget C=" + std::to_string(c) + " exceeds B*U=" + std::to_string(bu) + " (B=" +
         std::to_string(b) + ", U=" + std::to_string(u) + ")";
}

std::int64_t snap_floor(double v) {
  return static_cast<std::int64_t>(std::floor(v + kFloorSnap));
}

}  // namespace

void AllocationProblem::validate() const {
  if (coeffs.empty()) fail(ErrorCode::invalid_input, "allocation problem has no prompts");
  if (min < 3) fail(ErrorCode::invalid_input, "lower bound L must be >= 3, got " + std::to_string(min));
  if (max < min)
    fail(ErrorCode::invalid_input, "bounds must satisfy L <= U (L=" + std::to_string(min) +
                                       ", U=" + std::to_string(max) + ")");
  for (std::size_t q = 0; q < coeffs.size(); ++q)
    if (!(coeffs[q] >= 0.0) || !std::isfinite(coeffs[q]))
      fail(ErrorCode::invalid_input, "coefficient a[" + std::to_string(q) + "] must be finite and >= 0");
  const auto b = static_cast<std::int64_t>(coeffs.size());
  if (budget < b * min || budget > b * max)
    fail(ErrorCode::infeasible, bound_message(budget, coeffs.size(), min, max));
}

double per_prompt_objective(Family family, double a, double n) {
  if (family == Family::rloo) {
    if (n <= 1.0) fail(ErrorCode::invalid_input, "RLOO objective needs n > 1");
    return a / (n - 1.0);
  }
  if (n < 1.0) fail(ErrorCode::invalid_input, "Dr.GRPO objective needs n >= 1");
  return a * (n - 1.0) / (n * n);
}

double marginal_rate(Family family, double n) {
  if (family == Family::rloo) return 1.0 / ((n - 1.0) * (n - 1.0));
  return (n - 2.0) / (n * n * n);
}

double kkt_inverse(Family family, double a, double lambda, std::int64_t min, std::int64_t max) {
  if (!(lambda > 0.0)) fail(ErrorCode::invalid_input, "multiplier lambda must be > 0");
  if (!(a >= 0.0)) fail(ErrorCode::invalid_input, "coefficient must be >= 0");
  if (min < 3 || max < min) fail(ErrorCode::invalid_input, "bounds must satisfy 3 <= L <= U");
  const double lo = static_cast<double>(min);
  const double hi = static_cast<double>(max);
  if (a == 0.0) return lo;
  if (lambda <= a * marginal_rate(family, hi)) return hi;
  if (lambda >= a * marginal_rate(family, lo)) return lo;
  if (family == Family::rloo) return std::clamp(1.0 + std::sqrt(a / lambda), lo, hi);

  // a (n-2)/n^3 is strictly decreasing on [3, inf): bisect for the crossing.
  double left = lo, right = hi;
  for (int it = 0; it < 200 && right - left > kInnerTol; ++it) {
    const double mid = 0.5 * (left + right);
    if (a * marginal_rate(family, mid) > lambda)
      left = mid;
    else
      right = mid;
  }
  return 0.5 * (left + right);
}

double allocation_sum(const AllocationProblem& problem, double lambda) {
  double s = 0.0;
  for (double a : problem.coeffs) s += kkt_inverse(problem.family, a, lambda, problem.min, problem.max);
  return s;
}

ContinuousSolution solve_continuous(const AllocationProblem& problem) {
  problem.validate();
  const std::size_t b = problem.size();
  const double c = static_cast<double>(problem.budget);
  const double lo_n = static_cast<double>(problem.min);
  const double hi_n = static_cast<double>(problem.max);
  ContinuousSolution out;

  std::size_t zeros = 0;
  double lambda_low = std::numeric_limits<double>::infinity();
  double lambda_high = 0.0;
  for (double a : problem.coeffs) {
    if (a == 0.0) {
      ++zeros;
      continue;
    }
    lambda_low = std::min(lambda_low, a * marginal_rate(problem.family, hi_n));
    lambda_high = std::max(lambda_high, a * marginal_rate(problem.family, lo_n));
  }

  if (zeros == b) {
    out.n.assign(b, c / static_cast<double>(b));
    out.degenerate = true;
    return out;
  }

  // Informative prompts saturate at U and the flat ones absorb the excess.
  const double capacity = static_cast<double>(b - zeros) * hi_n + static_cast<double>(zeros) * lo_n;
  if (c > capacity) {
    const double extra = (c - capacity) / static_cast<double>(zeros);
    out.n.resize(b);
    for (std::size_t q = 0; q < b; ++q) out.n[q] = problem.coeffs[q] == 0.0 ? lo_n + extra : hi_n;
    out.lambda = 0.0;
    out.budget_residual = std::accumulate(out.n.begin(), out.n.end(), 0.0) - c;
    return out;
  }

  // Geometric bisection: lambda* can sit many decades below the largest
  // a_q * rate(L), so the bracket is narrowed in relative terms.
  double lo = lambda_low * (1.0 - 1e-12);
  double hi = lambda_high * (1.0 + 1e-12);
  double lambda = std::sqrt(lo * hi);
  double residual = allocation_sum(problem, lambda) - c;
  int it = 0;
  for (; it < kMaxOuterIterations; ++it) {
    lambda = std::sqrt(lo * hi);
    residual = allocation_sum(problem, lambda) - c;
    if (std::abs(residual) <= kBudgetTol || hi - lo <= kBracketRelWidth * hi) break;
    if (residual > 0.0)
      lo = lambda;
    else
      hi = lambda;
  }
  out.lambda = lambda;
  out.n.resize(b);
  for (std::size_t q = 0; q < b; ++q)
    out.n[q] = kkt_inverse(problem.family, problem.coeffs[q], lambda, problem.min, problem.max);
  out.iterations = it + 1;
  out.budget_residual = std::accumulate(out.n.begin(), out.n.end(), 0.0) - c;
  out.converged = std::abs(out.budget_residual) <= 1e-6;
  return out;
}

std::vector<std::int64_t> round_allocation(const AllocationProblem& problem,
                                           std::span<const double> n_cont) {
  problem.validate();
  const std::size_t b = problem.size();
  if (n_cont.size() != b)
    fail(ErrorCode::invalid_input, "continuous allocation has " + std::to_string(n_cont.size()) +
                                       " entries for " + std::to_string(b) + " prompts");
  std::vector<std::int64_t> n(b);
  std::int64_t used = 0;
  for (std::size_t q = 0; q < b; ++q) {
    if (!std::isfinite(n_cont[q])) fail(ErrorCode::invalid_input, "continuous allocation must be finite");
    n[q] = std::clamp(snap_floor(n_cont[q]), problem.min, problem.max);
    used += n[q];
  }
  const auto f = [&](std::size_t q, std::int64_t k) {
    return per_prompt_objective(problem.family, problem.coeffs[q], static_cast<double>(k));
  };

  std::int64_t remaining = problem.budget - used;
  while (remaining > 0) {
    std::size_t best = b;
    double best_gain = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < b; ++q) {
      if (n[q] >= problem.max) continue;
      const double gain = f(q, n[q]) - f(q, n[q] + 1);
      if (gain > best_gain) {
        best_gain = gain;
        best = q;
      }
    }
    if (best == b) fail(ErrorCode::numerical, "rounding: budget left but every prompt is at U");
    ++n[best];
    --remaining;
  }
  // Only reachable when n_cont overshoots the budget: take back the cheapest units.
  while (remaining < 0) {
    std::size_t best = b;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < b; ++q) {
      if (n[q] <= problem.min) continue;
      const double loss = f(q, n[q] - 1) - f(q, n[q]);
      if (loss < best_loss) {
        best_loss = loss;
        best = q;
      }
    }
    if (best == b) fail(ErrorCode::numerical, "rounding: budget overshoot with every prompt at L");
    --n[best];
    ++remaining;
  }
  return n;
}

double total_objective(Family family, std::span<const double> coeffs, std::span<const double> n) {
  double s = 0.0;
  for (std::size_t q = 0; q < coeffs.size(); ++q) s += per_prompt_objective(family, coeffs[q], n[q]);
  return s;
}

double total_objective(Family family, std::span<const double> coeffs,
                       std::span<const std::int64_t> n) {
  double s = 0.0;
  for (std::size_t q = 0; q < coeffs.size(); ++q)
    s += per_prompt_objective(family, coeffs[q], static_cast<double>(n[q]));
  return s;
}

AllocationPlan allocate(const AllocationProblem& problem) {
  AllocationPlan plan;
  plan.continuous = solve_continuous(problem);
  plan.integer = round_allocation(problem, plan.continuous.n);
  plan.objective_cont = total_objective(problem.family, problem.coeffs, plan.continuous.n);
  plan.objective_int = total_objective(problem.family, problem.coeffs, plan.integer);
  return plan;
}

PlanCheck check_plan(const AllocationProblem& problem, std::span<const double> n_cont,
                     double lambda, std::span<const std::int64_t> n_int, double budget_tol,
                     double kkt_tol) {
  problem.validate();
  PlanCheck out;
  const std::size_t b = problem.size();
  if (n_cont.size() != b || n_int.size() != b) {
    out.ok = false;
    out.violations.push_back("plan size does not match the problem");
    return out;
  }
  const double lo = static_cast<double>(problem.min);
  const double hi = static_cast<double>(problem.max);
  double sum_cont = 0.0;
  std::int64_t sum_int = 0;
  const bool all_zero =
      std::all_of(problem.coeffs.begin(), problem.coeffs.end(), [](double a) { return a == 0.0; });
  for (std::size_t q = 0; q < b; ++q) {
    sum_cont += n_cont[q];
    sum_int += n_int[q];
    if (n_cont[q] < lo - 1e-9 || n_cont[q] > hi + 1e-9 || n_int[q] < problem.min ||
        n_int[q] > problem.max) {
      out.bounds_ok = false;
      out.violations.push_back("prompt " + std::to_string(q) + " outside [L, U]");
    }
    if (all_zero) continue;
    const double a = problem.coeffs[q];
    // A coordinate within the snap distance of a bound is certified either as
    // active at that bound or as interior-stationary, whichever holds.
    double r = std::abs(lambda - a * marginal_rate(problem.family, n_cont[q]));
    if (lo == hi)
      r = 0.0;  // both bounds active: any multiplier is certified
    else if (n_cont[q] <= lo + 1e-9)
      r = std::min(r, std::max(0.0, a * marginal_rate(problem.family, lo) - lambda));
    else if (n_cont[q] >= hi - 1e-9)
      r = std::min(r, std::max(0.0, lambda - a * marginal_rate(problem.family, hi)));
    out.max_kkt_residual = std::max(out.max_kkt_residual, r);
  }
  out.budget_residual_cont = sum_cont - static_cast<double>(problem.budget);
  out.budget_residual_int = sum_int - problem.budget;
  if (std::abs(out.budget_residual_cont) > budget_tol)
    out.violations.push_back("continuous budget residual " + std::to_string(out.budget_residual_cont));
  if (out.budget_residual_int != 0)
    out.violations.push_back("integer budget residual " + std::to_string(out.budget_residual_int));
  if (out.max_kkt_residual > kkt_tol)
    out.violations.push_back("KKT residual " + std::to_string(out.max_kkt_residual));
  out.ok = out.violations.empty();
  return out;
}

const char* to_string(Baseline b) noexcept {
  switch (b) {
    case Baseline::uniform: return "uniform";
    case Baseline::inverse_accuracy: return "inverse_accuracy";
    case Baseline::inverse_variance: return "inverse_variance";
  }
  return "unknown";
}

Baseline parse_baseline(std::string_view name) {
  if (name == "uniform") return Baseline::uniform;
  if (name == "inverse_accuracy" || name == "inverse-accuracy") return Baseline::inverse_accuracy;
  if (name == "inverse_variance" || name == "inverse-variance") return Baseline::inverse_variance;
  fail(ErrorCode::invalid_input, "unknown baseline '" + std::string(name) + "'");
}

std::vector<double> box_project(std::span<const double> weights, double budget, double min,
                                double max) {
  const std::size_t b = weights.size();
  if (b == 0) fail(ErrorCode::invalid_input, "box projection needs at least one weight");
  for (double w : weights)
    if (!(w > 0.0) || !std::isfinite(w)) fail(ErrorCode::invalid_input, "weights must be positive");
  if (budget < min * static_cast<double>(b) - 1e-9 || budget > max * static_cast<double>(b) + 1e-9)
    fail(ErrorCode::infeasible, "budget outside [B*L, B*U]");

  std::vector<double> x(b, 0.0);
  std::vector<bool> pinned(b, false);
  for (std::size_t round = 0; round <= b; ++round) {
    double residual = budget;
    double weight = 0.0;
    for (std::size_t q = 0; q < b; ++q) {
      if (pinned[q])
        residual -= x[q];
      else
        weight += weights[q];
    }
    if (weight == 0.0) break;
    double below = 0.0, above = 0.0;
    for (std::size_t q = 0; q < b; ++q) {
      if (pinned[q]) continue;
      x[q] = residual * weights[q] / weight;
      if (x[q] < min) below += min - x[q];
      if (x[q] > max) above += x[q] - max;
    }
    if (below == 0.0 && above == 0.0) break;
    // Pin only the side with the larger total violation; the other side may
    // resolve itself once the residual is redistributed.
    for (std::size_t q = 0; q < b; ++q) {
      if (pinned[q]) continue;
      if (below >= above && x[q] < min) {
        x[q] = min;
        pinned[q] = true;
      } else if (below < above && x[q] > max) {
        x[q] = max;
        pinned[q] = true;
      }
    }
  }
  return x;
}

std::vector<std::int64_t> baseline_allocation(Baseline kind, std::span<const double> stats,
                                              std::int64_t budget, std::int64_t min,
                                              std::int64_t max, double eps) {
  if (min < 1 || max < min) fail(ErrorCode::invalid_input, "bounds must satisfy 1 <= L <= U");
  if (!(eps > 0.0)) fail(ErrorCode::invalid_input, "baseline eps must be > 0");
  const std::size_t b = stats.size();
  if (b == 0) fail(ErrorCode::invalid_input, "baseline allocation needs at least one prompt");
  const auto bi = static_cast<std::int64_t>(b);
  if (budget < bi * min || budget > bi * max)
    fail(ErrorCode::infeasible, bound_message(budget, b, min, max));

  std::vector<double> w(b, 1.0);
  for (std::size_t q = 0; q < b; ++q) {
    switch (kind) {
      case Baseline::uniform: break;
      case Baseline::inverse_accuracy:
        if (!(stats[q] >= 0.0 && stats[q] <= 1.0))
          fail(ErrorCode::invalid_input, "accuracy must lie in [0, 1]");
        w[q] = 1.0 - stats[q] + eps;
        break;
      case Baseline::inverse_variance:
        if (!(stats[q] >= 0.0) || !std::isfinite(stats[q]))
          fail(ErrorCode::invalid_input, "variance must be finite and >= 0");
        w[q] = 1.0 / (stats[q] + eps);
        break;
    }
  }
  const auto target = box_project(w, static_cast<double>(budget), static_cast<double>(min),
                                  static_cast<double>(max));
  std::vector<std::int64_t> n(b);
  std::int64_t used = 0;
  for (std::size_t q = 0; q < b; ++q) {
    n[q] = std::clamp(snap_floor(target[q]), min, max);
    used += n[q];
  }
  // Largest shortfall against the weight-proportional target goes first.
  for (std::int64_t remaining = budget - used; remaining > 0; --remaining) {
    std::size_t best = b;
    double best_gap = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < b; ++q) {
      if (n[q] >= max) continue;
      const double gap = target[q] - static_cast<double>(n[q]);
      if (gap > best_gap) {
        best_gap = gap;
        best = q;
      }
    }
    if (best == b) fail(ErrorCode::numerical, "baseline rounding: every prompt is at U");
    ++n[best];
  }
  return n;
}

}  // namespace vip
