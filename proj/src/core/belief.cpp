#include "vip/belief.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "vip/error.hpp"

namespace vip {

const char* to_string(Link link) noexcept {
  return link == Link::sigmoid ? "sigmoid" : "softplus";
}

Link parse_link(std::string_view name) {
  if (name == "sigmoid") return Link::sigmoid;
  if (name == "softplus") return Link::softplus;
  fail(ErrorCode::invalid_input, "unknown link '" + std::string(name) + "' (sigmoid|softplus)");
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) noexcept { return std::log(p / (1.0 - p)); }

double softplus(double x) noexcept {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double softplus_inverse(double y) noexcept {
  if (y > 30.0) return y + std::log(-std::expm1(-y));
  return std::log(std::expm1(y));
}

namespace {

void check_clip(double clip_eps) {
  if (!(clip_eps > 0.0 && clip_eps < 0.5))
    fail(ErrorCode::invalid_input, "clip_eps must lie strictly inside (0, 0.5)");
}

}  // namespace

double latent_observation(std::span<const double> rewards, double clip_eps, Link link) {
  check_clip(clip_eps);
  if (rewards.empty()) fail(ErrorCode::invalid_input, "reward list must not be empty");
  const double n = static_cast<double>(rewards.size());
  if (link == Link::sigmoid) {
    double sum = 0.0;
    for (double r : rewards) {
      if (r != 1.0 && r != -1.0)
        fail(ErrorCode::invalid_input, "binary rewards must be -1 or +1, got " + std::to_string(r));
      sum += r;
    }
    const double p = std::clamp((sum / n + 1.0) / 2.0, clip_eps, 1.0 - clip_eps);
    return logit(p);
  }
  if (rewards.size() < 2)
    fail(ErrorCode::invalid_input, "continuous rewards need at least 2 samples for a variance");
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : rewards) {
    if (!std::isfinite(r)) fail(ErrorCode::invalid_input, "rewards must be finite");
    ss += (r - mean) * (r - mean);
  }
  return softplus_inverse(std::max(ss / (n - 1.0), kVarianceFloor));
}

std::vector<std::size_t> BatchObservation::indices() const {
  std::vector<std::size_t> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.index);
  return out;
}

void BatchObservation::validate(std::size_t size, Link link) const {
  const auto idx = indices();
  validate_batch(idx, size);
  for (const auto& e : entries) {
    if (e.rewards.empty())
      fail(ErrorCode::invalid_input, "prompt " + std::to_string(e.index) + " has no rewards");
    if (link == Link::sigmoid) {
      for (double r : e.rewards)
        if (r != 1.0 && r != -1.0)
          fail(ErrorCode::invalid_input, "prompt " + std::to_string(e.index) +
                                             ": binary rewards must be -1 or +1");
    } else if (e.rewards.size() < 2) {
      fail(ErrorCode::invalid_input, "prompt " + std::to_string(e.index) +
                                         ": continuous rewards need at least 2 samples");
    }
  }
}

BeliefState::BeliefState(std::shared_ptr<const KernelMatrix> kernel, Link link, double clip_eps,
                         double jitter)
    : BeliefState(kernel, link, clip_eps,
                  Eigen::VectorXd::Zero(kernel ? static_cast<Eigen::Index>(kernel->size()) : 0),
                  jitter) {}

BeliefState::BeliefState(std::shared_ptr<const KernelMatrix> kernel, Link link, double clip_eps,
                         Eigen::VectorXd mean, double jitter)
    : kernel_(std::move(kernel)), link_(link), clip_eps_(clip_eps), jitter_(jitter),
      mean_(std::move(mean)) {
  if (!kernel_ || kernel_->size() == 0)
    fail(ErrorCode::invalid_input, "belief needs a non-empty kernel");
  check_clip(clip_eps_);
  if (!(jitter_ >= 0.0)) fail(ErrorCode::invalid_input, "jitter must be >= 0");
  if (static_cast<std::size_t>(mean_.size()) != kernel_->size())
    fail(ErrorCode::invalid_input, "belief mean has " + std::to_string(mean_.size()) +
                                       " entries but the kernel covers " +
                                       std::to_string(kernel_->size()) + " prompts");
  if (!mean_.allFinite()) fail(ErrorCode::invalid_input, "belief mean must be finite");
}

double BeliefState::predict(std::size_t index) const {
  if (index >= size()) fail(ErrorCode::invalid_input, "prompt index out of range");
  const double m = mean_(static_cast<Eigen::Index>(index));
  return link_ == Link::sigmoid ? sigmoid(m) : softplus(m);
}

std::vector<double> BeliefState::predict(std::span<const std::size_t> batch) const {
  std::vector<double> out;
  out.reserve(batch.size());
  for (std::size_t q : batch) out.push_back(predict(q));
  return out;
}

namespace {

Eigen::LLT<Eigen::MatrixXd> factor_batch_block(const Eigen::MatrixXd& bb, double jitter) {
  Eigen::MatrixXd a = bb;
  a.diagonal().array() += jitter;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    fail(ErrorCode::numerical,
         "batch kernel block is not positive definite after jitter " + std::to_string(jitter) +
             " (eigenvalues in [" + std::to_string(lo) + ", " + std::to_string(hi) +
             "], condition " + (lo > 0 ? std::to_string(hi / lo) : std::string("inf")) + ")");
  }
  return llt;
}

}  // namespace

BeliefState BeliefState::update(const BatchObservation& obs) const {
  obs.validate(size(), link_);
  const auto batch = obs.indices();
  const auto blocks = kernel_blocks(*kernel_, batch);

  const auto nb = static_cast<Eigen::Index>(batch.size());
  Eigen::VectorXd observed(nb);
  Eigen::VectorXd innovation(nb);
  for (Eigen::Index b = 0; b < nb; ++b) {
    observed(b) = latent_observation(obs.entries[b].rewards, clip_eps_, link_);
    innovation(b) = observed(b) - mean_(static_cast<Eigen::Index>(batch[b]));
  }

  Eigen::VectorXd next = mean_;
  if (!blocks.complement.empty()) {
    const auto llt = factor_batch_block(blocks.batch_batch, jitter_);
    const Eigen::VectorXd shift = blocks.complement_batch * llt.solve(innovation);
    for (std::size_t c = 0; c < blocks.complement.size(); ++c)
      next(static_cast<Eigen::Index>(blocks.complement[c])) += shift(static_cast<Eigen::Index>(c));
  }
  for (Eigen::Index b = 0; b < nb; ++b) next(static_cast<Eigen::Index>(batch[b])) = observed(b);
  return BeliefState(kernel_, link_, clip_eps_, std::move(next), jitter_);
}

Eigen::MatrixXd BeliefState::posterior_covariance(std::span<const std::size_t> batch) const {
  const auto blocks = kernel_blocks(*kernel_, batch);
  if (blocks.complement.empty()) return {};
  const auto llt = factor_batch_block(blocks.batch_batch, jitter_);
  return blocks.complement_complement -
         blocks.complement_batch * llt.solve(blocks.complement_batch.transpose());
}

}  // namespace vip
