#include <cmath>
#include <memory>
#include <random>

#include "doctest.h"
#include "oracles/oracles.hpp"
#include "vip/belief.hpp"
#include "vip/error.hpp"

using namespace vip;

namespace {

std::shared_ptr<const KernelMatrix> two_prompt_kernel(double rho) {
  Eigen::MatrixXd m(2, 2);
  m << 1, rho, rho, 1;
  return std::make_shared<const KernelMatrix>(KernelMatrix::from_values(m));
}

std::shared_ptr<const KernelMatrix> random_kernel(std::mt19937_64& rng, std::size_t q) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd e(q, 6);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < q; ++i) {
    ids.push_back("p" + std::to_string(i));
    for (int k = 0; k < 6; ++k) e(i, k) = nd(rng);
  }
  PromptSet set(ids, e);
  return std::make_shared<const KernelMatrix>(kernel_matrix(set, median_bandwidth(set)));
}

}  // namespace

TEST_CASE("link functions") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(sigmoid(-std::log(3.0)) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus_inverse(softplus(0.7)) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(softplus_inverse(softplus(-20.0)) == doctest::Approx(-20.0).epsilon(1e-9));
  CHECK(std::isfinite(softplus(800.0)));
  CHECK(logit(sigmoid(2.5)) == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("initial belief") {
  auto k = std::make_shared<const KernelMatrix>(KernelMatrix::from_values(Eigen::MatrixXd::Identity(3, 3)));
  BeliefState s(k, Link::sigmoid, 0.01);
  CHECK(s.mean().isZero());
  for (std::size_t q = 0; q < 3; ++q) CHECK(s.predict(q) == 0.5);
  BeliefState v(k, Link::softplus, 0.01);
  for (std::size_t q = 0; q < 3; ++q) CHECK(v.predict(q) == doctest::Approx(0.693147).epsilon(1e-6));

  auto empty = std::make_shared<const KernelMatrix>(KernelMatrix::from_values(Eigen::MatrixXd(0, 0)));
  CHECK_THROWS_AS(BeliefState(empty, Link::sigmoid, 0.01), Error);
  CHECK_THROWS_AS(BeliefState(k, Link::sigmoid, 0.5), Error);
}

TEST_CASE("latent observations") {
  std::vector<double> bal{1, 1, -1, -1}, three{1, 1, 1, -1}, all(8, 1.0);
  CHECK(latent_observation(bal, 0.01, Link::sigmoid) == 0.0);
  CHECK(latent_observation(three, 0.01, Link::sigmoid) == doctest::Approx(1.098612).epsilon(1e-6));
  CHECK(latent_observation(all, 0.01, Link::sigmoid) == doctest::Approx(4.595120).epsilon(1e-6));
  std::vector<double> none, bad{1, 0.5}, one{0.3};
  CHECK_THROWS_AS(latent_observation(none, 0.01, Link::sigmoid), Error);
  CHECK_THROWS_AS(latent_observation(bad, 0.01, Link::sigmoid), Error);
  CHECK_THROWS_AS(latent_observation(one, 0.01, Link::softplus), Error);
  // Unbiased variance of (0, 2) is 2.
  std::vector<double> two{0.0, 2.0};
  CHECK(softplus(latent_observation(two, 0.01, Link::softplus)) == doctest::Approx(2.0).epsilon(1e-12));
  // Constant rewards hit the variance floor instead of -inf.
  std::vector<double> flat{0.4, 0.4, 0.4};
  CHECK(softplus(latent_observation(flat, 0.01, Link::softplus)) == doctest::Approx(kVarianceFloor).epsilon(1e-9));
}

TEST_CASE("two-prompt worked example") {
  BeliefState s(two_prompt_kernel(0.5), Link::sigmoid, 0.01);
  BatchObservation obs{{{0, {1, 1, 1, -1}}}};
  auto next = s.update(obs);
  CHECK(next.mean()(0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(next.mean()(1) == doctest::Approx(0.549306).epsilon(1e-6));
  CHECK(std::abs(next.predict(1) - 0.63397) < 1e-5);
  // Without jitter the conditioning is exact: m2 = ln(3)/2, p2 = 1/(1 + 3^{-1/2}).
  BeliefState exact(two_prompt_kernel(0.5), Link::sigmoid, 0.01, Eigen::VectorXd::Zero(2), 0.0);
  CHECK(std::abs(exact.update(obs).predict(1) - 1.0 / (1.0 + 1.0 / std::sqrt(3.0))) < 1e-12);
  // update() does not touch the source state
  CHECK(s.mean().isZero());
}

TEST_CASE("zero innovation leaves the mean unchanged") {
  std::mt19937_64 rng(11);
  auto k = random_kernel(rng, 8);
  BeliefState s(k, Link::sigmoid, 0.01);
  BatchObservation obs{{{2, {1, -1}}, {5, {-1, 1, 1, -1}}}};
  auto next = s.update(obs);
  CHECK(next.mean().cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("full batch interpolates the observations") {
  std::mt19937_64 rng(12);
  auto k = random_kernel(rng, 5);
  Eigen::VectorXd m0(5);
  m0 << 0.3, -0.2, 1.0, 0.0, -1.5;
  BeliefState s(k, Link::sigmoid, 0.01, m0);
  BatchObservation obs{{{0, {1, 1, 1, -1}}, {1, {-1}}, {2, {1, 1}}, {3, {1, -1, -1}}, {4, {1, 1, 1, 1, -1}}}};
  auto next = s.update(obs);
  for (const auto& e : obs.entries)
    CHECK(std::abs(next.mean()(e.index) - latent_observation(e.rewards, 0.01, Link::sigmoid)) <= 1e-10);
}

TEST_CASE("update matches dense block-conditioning oracle") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> coin(0, 1);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t q = 2 + inst % 9;
    auto k = random_kernel(rng, q);
    Eigen::VectorXd m0(q);
    for (std::size_t i = 0; i < q; ++i) m0(i) = 0.5 * nd(rng);
    BeliefState s(k, Link::sigmoid, 0.01, m0, 0.0);

    std::vector<std::size_t> perm(q);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t b = 1 + rng() % q;
    BatchObservation obs;
    std::vector<std::size_t> batch;
    std::vector<double> g;
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<double> r(2 + rng() % 6);
      for (auto& v : r) v = coin(rng) ? 1.0 : -1.0;
      obs.entries.push_back({perm[i], r});
      batch.push_back(perm[i]);
      g.push_back(latent_observation(r, 0.01, Link::sigmoid));
    }
    auto next = s.update(obs);

    oracle::Matrix km(q, std::vector<double>(q));
    for (std::size_t i = 0; i < q; ++i)
      for (std::size_t j = 0; j < q; ++j) km[i][j] = (*k)(i, j);
    std::vector<double> mean(m0.data(), m0.data() + q);
    auto want = oracle::gp_update(km, mean, batch, g);
    for (std::size_t i = 0; i < q; ++i) worst = std::max(worst, std::abs(next.mean()(i) - want[i]));
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("observation validation") {
  BeliefState s(two_prompt_kernel(0.5), Link::sigmoid, 0.01);
  CHECK_THROWS_AS(s.update(BatchObservation{{{0, {}}}}), Error);
  CHECK_THROWS_AS(s.update(BatchObservation{{{2, {1}}}}), Error);
  CHECK_THROWS_AS(s.update(BatchObservation{{{0, {1}}, {0, {1}}}}), Error);
  CHECK_THROWS_AS(s.update(BatchObservation{{{0, {0.5}}}}), Error);
}

TEST_CASE("singular batch block is a numerical error") {
  // Prompts 0 and 1 coincide; prompt 2 keeps the complement non-empty.
  Eigen::MatrixXd m(3, 3);
  m << 1, 1, 0.5, 1, 1, 0.5, 0.5, 0.5, 1;
  auto k = std::make_shared<const KernelMatrix>(KernelMatrix::from_values(m));
  BeliefState s(k, Link::sigmoid, 0.01, Eigen::VectorXd::Zero(3), 0.0);
  try {
    s.update(BatchObservation{{{0, {1}}, {1, {-1}}}});
    FAIL("expected numerical error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numerical);
  }
}

TEST_CASE("posterior covariance shrinks the prior") {
  auto s = BeliefState(two_prompt_kernel(0.5), Link::sigmoid, 0.01);
  std::vector<std::size_t> b{0};
  auto cov = s.posterior_covariance(b);
  CHECK(cov.rows() == 1);
  CHECK(cov(0, 0) == doctest::Approx(0.75).epsilon(1e-7));
}
