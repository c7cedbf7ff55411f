#include <cmath>

#include "doctest.h"
#include "vip/error.hpp"
#include "vip/variance_model.hpp"

using namespace vip;

TEST_CASE("closed-form gradient variance") {
  CHECK(gradient_variance(Family::dr_grpo, VarianceInputs::binary(0.5), 8) == doctest::Approx(7.0 / 64).epsilon(1e-15));
  CHECK(gradient_variance(Family::rloo, VarianceInputs::binary(0.5), 8) == doctest::Approx(1.0 / 7).epsilon(1e-15));
  for (auto fam : {Family::dr_grpo, Family::rloo}) {
    CHECK(gradient_variance(fam, VarianceInputs::binary(0.0), 4) == 0.0);
    CHECK(gradient_variance(fam, VarianceInputs::binary(1.0), 4) == 0.0);
    CHECK(gradient_variance(fam, VarianceInputs::binary(1e-12), 4) < 1e-10);
    CHECK_THROWS_AS(gradient_variance(fam, VarianceInputs::binary(0.5), 1), Error);
  }
}

TEST_CASE("allocation coefficient") {
  CHECK(allocation_coefficient(VarianceInputs::binary(0.5, 1.0)) == doctest::Approx(1.0));
  CHECK(allocation_coefficient(VarianceInputs::binary(0.9, 1.0)) == doctest::Approx(0.36).epsilon(1e-14));
  CHECK(allocation_coefficient(VarianceInputs::continuous(2.0, 0.5)) == doctest::Approx(1.0));
  CHECK(allocation_coefficient(VarianceInputs::binary(0.3, 2.0)) ==
        doctest::Approx(allocation_coefficient(VarianceInputs::binary(0.7, 2.0))).epsilon(1e-15));
  CHECK_THROWS_AS(allocation_coefficient(VarianceInputs::binary(1.5)), Error);
  CHECK_THROWS_AS(allocation_coefficient(VarianceInputs::binary(0.5, 0.0)), Error);
  CHECK_THROWS_AS(allocation_coefficient(VarianceInputs::continuous(-1.0)), Error);
}

TEST_CASE("variance decreases in n and peaks at p = 1/2") {
  for (auto fam : {Family::dr_grpo, Family::rloo}) {
    for (int n = 2; n < 40; ++n)
      CHECK(gradient_variance(fam, VarianceInputs::binary(0.4), n + 1) <
            gradient_variance(fam, VarianceInputs::binary(0.4), n));
    for (double p = 0.05; p < 0.5; p += 0.05)
      CHECK(gradient_variance(fam, VarianceInputs::binary(p), 6) < gradient_variance(fam, VarianceInputs::binary(0.5), 6));
  }
}

TEST_CASE("Monte Carlo oracle agrees with the closed forms") {
  MonteCarloConfig cfg;
  cfg.rewards = RewardDistribution::bernoulli(0.5);
  cfg.n = 8;
  cfg.z_mean = 1.0;
  cfg.trials = 1'000'000;
  cfg.family = Family::dr_grpo;
  CHECK(std::abs(monte_carlo_variance(cfg) / 0.109375 - 1.0) < 0.02);
  cfg.family = Family::rloo;
  CHECK(std::abs(monte_carlo_variance(cfg) / (1.0 / 7) - 1.0) < 0.02);
}

TEST_CASE("Monte Carlo degenerate and deterministic cases") {
  MonteCarloConfig cfg;
  cfg.rewards = RewardDistribution::bernoulli(1.0);
  cfg.trials = 20000;
  for (auto fam : {Family::dr_grpo, Family::rloo}) {
    cfg.family = fam;
    CHECK(monte_carlo_variance(cfg) == 0.0);
  }
  cfg.rewards = RewardDistribution::bernoulli(0.3);
  cfg.seed = 5;
  CHECK(monte_carlo_variance(cfg) == monte_carlo_variance(cfg));
  auto other = cfg;
  other.seed = 6;
  CHECK(monte_carlo_variance(cfg) != monte_carlo_variance(other));
  cfg.n = 1;
  CHECK_THROWS_AS(monte_carlo_variance(cfg), Error);
}

TEST_CASE("continuous rewards drop the factor four") {
  MonteCarloConfig cfg;
  cfg.rewards = RewardDistribution::uniform(-1.0, 1.0);
  CHECK(cfg.rewards.variance() == doctest::Approx(1.0 / 3).epsilon(1e-15));
  cfg.n = 4;
  cfg.trials = 400'000;
  cfg.z_mean = 5.0;
  for (auto fam : {Family::dr_grpo, Family::rloo}) {
    cfg.family = fam;
    const double want = gradient_variance(fam, VarianceInputs::continuous(1.0 / 3), 4);
    CHECK(std::abs(monte_carlo_variance(cfg) / want - 1.0) < 0.03);
  }
}

TEST_CASE("family names") {
  CHECK(parse_family("drgrpo") == Family::dr_grpo);
  CHECK(parse_family("rloo") == Family::rloo);
  CHECK_THROWS_AS(parse_family("grpo"), Error);
}
