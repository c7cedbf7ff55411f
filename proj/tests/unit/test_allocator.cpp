#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles/oracles.hpp"
#include "vip/allocator.hpp"
#include "vip/error.hpp"

using namespace vip;

namespace {

oracle::Family to_oracle(Family f) { return f == Family::dr_grpo ? oracle::Family::dr_grpo : oracle::Family::rloo; }

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected vip::Error");
  return ErrorCode::io;
}

}  // namespace

TEST_CASE("per-prompt objective") {
  CHECK(per_prompt_objective(Family::dr_grpo, 1.0, 3.0) == doctest::Approx(2.0 / 9).epsilon(1e-15));
  CHECK(per_prompt_objective(Family::rloo, 4.0, 6.0) == doctest::Approx(0.8).epsilon(1e-15));
  for (double n : {3.0, 5.5, 16.0}) {
    CHECK(per_prompt_objective(Family::dr_grpo, 0.0, n) == 0.0);
    CHECK(per_prompt_objective(Family::rloo, 0.0, n) == 0.0);
  }
  CHECK_THROWS_AS(per_prompt_objective(Family::rloo, 1.0, 1.0), Error);
}

TEST_CASE("KKT inverse") {
  CHECK(kkt_inverse(Family::rloo, 1.0, 9.0 / 49, 3, 8) == doctest::Approx(10.0 / 3).epsilon(1e-14));
  CHECK(kkt_inverse(Family::rloo, 1.0, 1.0, 3, 8) == 3.0);
  CHECK(kkt_inverse(Family::dr_grpo, 4.0, 28.0 / 729, 3, 16) == doctest::Approx(9.0).epsilon(1e-12));
  CHECK(kkt_inverse(Family::dr_grpo, 0.0, 0.1, 3, 16) == 3.0);
  CHECK(kkt_inverse(Family::rloo, 5.0, 1e-9, 3, 16) == 16.0);
  CHECK(code_of([] { kkt_inverse(Family::rloo, 1.0, 0.0, 3, 8); }) == ErrorCode::invalid_input);
}

TEST_CASE("worked continuous instances") {
  SUBCASE("RLOO, both interior") {
    AllocationProblem p{Family::rloo, {1.0, 4.0}, 9, 3, 8};
    auto s = solve_continuous(p);
    CHECK(std::abs(s.n[0] - 10.0 / 3) <= 1e-8);
    CHECK(std::abs(s.n[1] - 17.0 / 3) <= 1e-8);
    CHECK(std::abs(s.lambda - 9.0 / 49) <= 1e-8);
  }
  SUBCASE("Dr.GRPO, lower bound binds") {
    AllocationProblem p{Family::dr_grpo, {1.0, 4.0}, 12, 3, 16};
    auto s = solve_continuous(p);
    CHECK(std::abs(s.n[0] - 3.0) <= 1e-8);
    CHECK(std::abs(s.n[1] - 9.0) <= 1e-8);
    CHECK(std::abs(s.lambda - 28.0 / 729) <= 1e-8);
    CHECK(total_objective(p.family, p.coeffs, std::span<const double>(s.n)) ==
          doctest::Approx(2.0 / 9 + 32.0 / 81).epsilon(1e-10));
    // Fine grid over the budget line n1 + n2 = 12.
    double best = 1e300, arg = 0;
    for (int i = 0; i <= 600000; ++i) {
      const double n1 = 3.0 + 6.0 * i / 600000.0;
      const double v = oracle::f(oracle::Family::dr_grpo, 1.0, n1) + oracle::f(oracle::Family::dr_grpo, 4.0, 12.0 - n1);
      if (v < best) best = v, arg = n1;
    }
    CHECK(arg == doctest::Approx(3.0));
    CHECK(total_objective(p.family, p.coeffs, std::span<const double>(s.n)) <=
          best + 1e-12 + s.lambda * std::abs(s.budget_residual));
  }
  SUBCASE("equal coefficients split evenly") {
    AllocationProblem p{Family::dr_grpo, std::vector<double>(5, 0.7), 40, 3, 16};
    auto s = solve_continuous(p);
    for (double n : s.n) CHECK(std::abs(n - 8.0) <= 1e-8);
  }
}

TEST_CASE("degenerate and infeasible problems") {
  AllocationProblem zero{Family::rloo, {0.0, 0.0, 0.0}, 15, 3, 8};
  auto s = solve_continuous(zero);
  CHECK(s.degenerate);
  for (double n : s.n) CHECK(n == 5.0);

  AllocationProblem low{Family::rloo, {1.0, 4.0}, 5, 3, 8};
  try {
    low.validate();
    FAIL("expected infeasible");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::infeasible);
    CHECK(std::string(e.what()).find("B*L=6") != std::string::npos);
  }
  AllocationProblem high{Family::rloo, {1.0, 4.0}, 17, 3, 8};
  CHECK(code_of([&] { allocate(high); }) == ErrorCode::infeasible);
  AllocationProblem bad_l{Family::rloo, {1.0}, 5, 2, 8};
  CHECK(code_of([&] { bad_l.validate(); }) == ErrorCode::invalid_input);
  AllocationProblem neg{Family::rloo, {1.0, -1.0}, 8, 3, 8};
  CHECK(code_of([&] { neg.validate(); }) == ErrorCode::invalid_input);
}

TEST_CASE("continuous solution agrees with a direct dual oracle") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> ua(0.01, 5.0);
  for (int inst = 0; inst < 60; ++inst) {
    const Family fam = inst % 2 ? Family::rloo : Family::dr_grpo;
    const std::size_t b = 2 + rng() % 10;
    const std::int64_t lo = 3, hi = 3 + static_cast<std::int64_t>(rng() % 20);
    AllocationProblem p{fam, {}, 0, lo, hi};
    for (std::size_t q = 0; q < b; ++q) p.coeffs.push_back(ua(rng));
    p.budget = static_cast<std::int64_t>(b) * lo + static_cast<std::int64_t>(rng() % (b * (hi - lo) + 1));
    auto s = solve_continuous(p);
    auto [n, lambda] = oracle::continuous_optimum(to_oracle(fam), p.coeffs, static_cast<double>(p.budget), lo, hi);
    // Weak duality: the oracle's dual value bounds the primal optimum from below.
    double dual = -lambda * static_cast<double>(p.budget);
    for (std::size_t q = 0; q < b; ++q) dual += oracle::f(to_oracle(fam), p.coeffs[q], n[q]) + lambda * n[q];
    const double mine = total_objective(fam, p.coeffs, std::span<const double>(s.n));
    // A plan may undershoot the dual bound only by what its budget residual buys.
    const double slack = s.lambda * std::abs(s.budget_residual) + 1e-12 * std::max(1.0, mine);
    CHECK(dual <= mine + slack);
    CHECK(mine - dual <= 1e-8 * std::max(1.0, mine));
    // n itself is not compared: Dr.GRPO's f'' vanishes at n = 3, so near that
    // bound the minimiser is ill-conditioned in lambda while the value is not.
  }
}

TEST_CASE("scale invariance") {
  AllocationProblem p{Family::rloo, {0.2, 1.0, 3.0, 0.05}, 30, 3, 12};
  auto base = solve_continuous(p);
  for (double c : {1e-3, 1.0, 1e3}) {
    auto scaled = p;
    for (auto& a : scaled.coeffs) a *= c;
    auto s = solve_continuous(scaled);
    for (std::size_t q = 0; q < 4; ++q) CHECK(std::abs(s.n[q] - base.n[q]) <= 1e-8);
  }
}

TEST_CASE("objective is non-increasing in the budget") {
  for (auto fam : {Family::dr_grpo, Family::rloo}) {
    AllocationProblem p{fam, {0.3, 1.2, 0.8}, 9, 3, 16};
    double prev = 1e300;
    for (std::int64_t c = 9; c <= 48; ++c) {
      p.budget = c;
      auto s = solve_continuous(p);
      const double v = total_objective(fam, p.coeffs, std::span<const double>(s.n));
      CHECK(v <= prev + 1e-12);
      prev = v;
    }
  }
}

TEST_CASE("per-prompt objective is convex on [3, inf)") {
  const double h = 0.25;
  for (auto fam : {Family::dr_grpo, Family::rloo})
    for (double n = 3.0 + h; n < 40.0; n += h)
      CHECK(per_prompt_objective(fam, 1.0, n + h) - 2 * per_prompt_objective(fam, 1.0, n) +
                per_prompt_objective(fam, 1.0, n - h) >= -1e-15);
}

TEST_CASE("rounding examples") {
  AllocationProblem p{Family::rloo, {1.0, 4.0}, 9, 3, 8};
  std::vector<double> cont{10.0 / 3, 17.0 / 3};
  CHECK(round_allocation(p, cont) == std::vector<std::int64_t>{3, 6});
  CHECK(total_objective(p.family, p.coeffs, std::span<const std::int64_t>(round_allocation(p, cont))) ==
        doctest::Approx(1.3).epsilon(1e-14));
  CHECK(oracle::enumerate_optimum(oracle::Family::rloo, p.coeffs, 9, 3, 8) == doctest::Approx(1.3).epsilon(1e-14));

  std::vector<double> exact{4.0, 5.0};
  CHECK(round_allocation(p, exact) == std::vector<std::int64_t>{4, 5});

  AllocationProblem z{Family::dr_grpo, {0.0, 1.0}, 11, 3, 8};
  CHECK(allocate(z).integer == std::vector<std::int64_t>{3, 8});

  // Equal coefficients: ties go to the smallest index.
  AllocationProblem t{Family::rloo, {1.0, 1.0, 1.0}, 10, 3, 8};
  CHECK(allocate(t).integer == std::vector<std::int64_t>{4, 3, 3});
}

TEST_CASE("greedy rounding matches enumeration on small instances") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ua(0.0, 3.0);
  for (int inst = 0; inst < 100; ++inst) {
    const Family fam = inst % 2 ? Family::rloo : Family::dr_grpo;
    const std::size_t b = 1 + rng() % 4;
    const std::int64_t lo = 3 + static_cast<std::int64_t>(rng() % 3), hi = lo + static_cast<std::int64_t>(rng() % 7);
    AllocationProblem p{fam, {}, 0, lo, hi};
    for (std::size_t q = 0; q < b; ++q) p.coeffs.push_back(ua(rng));
    p.budget = static_cast<std::int64_t>(b) * lo + static_cast<std::int64_t>(rng() % (b * (hi - lo) + 1));
    auto plan = allocate(p);
    const double best = oracle::enumerate_optimum(to_oracle(fam), p.coeffs, p.budget, lo, hi);
    CHECK(plan.objective_int <= best + 1e-12 * std::max(1.0, best));
  }
}

TEST_CASE("plans are feasible and certified") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ua(0.0, 10.0);
  for (int inst = 0; inst < 100; ++inst) {
    const Family fam = inst % 2 ? Family::rloo : Family::dr_grpo;
    const std::size_t b = 1 + rng() % 64;
    const std::int64_t lo = 3, hi = 3 + static_cast<std::int64_t>(rng() % 30);
    AllocationProblem p{fam, {}, 0, lo, hi};
    for (std::size_t q = 0; q < b; ++q) p.coeffs.push_back(rng() % 7 == 0 ? 0.0 : ua(rng));
    p.budget = static_cast<std::int64_t>(b) * lo + static_cast<std::int64_t>(rng() % (b * (hi - lo) + 1));
    auto plan = allocate(p);
    CHECK(std::accumulate(plan.integer.begin(), plan.integer.end(), std::int64_t{0}) == p.budget);
    for (auto n : plan.integer) CHECK((n >= lo && n <= hi));
    auto chk = check_plan(p, plan.continuous.n, plan.continuous.lambda, plan.integer);
    CHECK(chk.ok);
  }
}

TEST_CASE("check_plan rejects a perturbed plan") {
  AllocationProblem p{Family::rloo, {1.0, 4.0}, 9, 3, 8};
  auto plan = allocate(p);
  auto cont = plan.continuous.n;
  cont[0] += 0.1;
  cont[1] -= 0.1;
  CHECK_FALSE(check_plan(p, cont, plan.continuous.lambda, plan.integer).ok);
  std::vector<std::int64_t> over{3, 7};
  CHECK_FALSE(check_plan(p, plan.continuous.n, plan.continuous.lambda, over).ok);
}

TEST_CASE("check_plan certifies a stationary coordinate just inside a bound") {
  // n_0 sits 5e-11 above L and is exactly stationary; judged only as an
  // active bound it would leave a residual of about 5e-8.
  AllocationProblem p{Family::rloo, {4000.0, 1.0}, 6, 3, 10};
  const double n0 = 3.0 + 5e-11;
  const double lambda = 4000.0 / ((n0 - 1.0) * (n0 - 1.0));
  const std::vector<double> cont{n0, 3.0};
  const std::vector<std::int64_t> integer{3, 3};
  auto chk = check_plan(p, cont, lambda, integer);
  CHECK(chk.ok);
  CHECK(chk.max_kkt_residual < 1e-12);
  // A genuinely active coordinate with the wrong multiplier sign still fails.
  CHECK_FALSE(check_plan(p, std::vector<double>{3.0, 3.0}, 900.0, integer).ok);
}

TEST_CASE("heuristic baselines") {
  std::vector<double> four(4, 0.5);
  CHECK(baseline_allocation(Baseline::uniform, four, 32, 3, 16) == std::vector<std::int64_t>{8, 8, 8, 8});

  std::vector<double> acc{0.9, 0.1};
  auto w = box_project(std::vector<double>{0.11, 0.91}, 12, 3, 9);
  CHECK(w[0] == doctest::Approx(3.0));
  CHECK(w[1] == doctest::Approx(9.0));
  CHECK(baseline_allocation(Baseline::inverse_accuracy, acc, 12, 3, 9) == std::vector<std::int64_t>{3, 9});

  std::vector<double> var(5, 0.2);
  CHECK(baseline_allocation(Baseline::inverse_variance, var, 20, 3, 16) == std::vector<std::int64_t>{4, 4, 4, 4, 4});
  CHECK(code_of([&] { baseline_allocation(Baseline::uniform, four, 11, 3, 16); }) == ErrorCode::infeasible);
}

TEST_CASE("box projection matches the proportional-clamp oracle") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> uw(0.01, 2.0);
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t b = 1 + rng() % 20;
    const double lo = 3, hi = 3 + static_cast<double>(rng() % 20);
    std::vector<double> w(b);
    for (auto& v : w) v = rng() % 4 == 0 ? 100.0 * uw(rng) : uw(rng);
    const double c = b * lo + (b * (hi - lo)) * std::uniform_real_distribution<double>(0, 1)(rng);
    auto x = box_project(w, c, lo, hi);
    auto want = oracle::proportional_projection(w, c, lo, hi);
    for (std::size_t q = 0; q < b; ++q) CHECK(x[q] == doctest::Approx(want[q]).epsilon(1e-9));
  }
}

TEST_CASE("baseline integer plans conserve the budget") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t b = 1 + rng() % 40;
    const std::int64_t lo = 3, hi = 3 + static_cast<std::int64_t>(rng() % 20);
    std::vector<double> s(b);
    for (auto& v : s) v = u(rng);
    const std::int64_t c = static_cast<std::int64_t>(b) * lo + static_cast<std::int64_t>(rng() % (b * (hi - lo) + 1));
    for (auto kind : {Baseline::uniform, Baseline::inverse_accuracy, Baseline::inverse_variance}) {
      auto n = baseline_allocation(kind, s, c, lo, hi);
      CHECK(std::accumulate(n.begin(), n.end(), std::int64_t{0}) == c);
      for (auto v : n) CHECK((v >= lo && v <= hi));
    }
  }
}
