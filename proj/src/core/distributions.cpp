#include "vip/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/binomial.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "vip/error.hpp"

namespace vip::stats {

namespace {

void check_dof(double dof) {
  if (!(dof > 0.0) || !std::isfinite(dof))
    vip::fail(ErrorCode::invalid_input, "degrees of freedom must be positive and finite");
}

}  // namespace

Distribution parse_distribution(std::string_view name) {
  if (name == "chi_square" || name == "chi2") return Distribution::chi_square;
  if (name == "f") return Distribution::f;
  if (name == "normal") return Distribution::normal;
  if (name == "student_t" || name == "t") return Distribution::student_t;
  vip::fail(ErrorCode::invalid_input, "unknown distribution '" + std::string(name) + "'");
}

double normal_cdf(double x) { return 0.5 * boost::math::erfc(-x / std::sqrt(2.0)); }

double normal_sf(double x) { return 0.5 * boost::math::erfc(x / std::sqrt(2.0)); }

double chi_square_sf(double x, double dof) {
  check_dof(dof);
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

double f_sf(double x, double dof1, double dof2) {
  check_dof(dof1);
  check_dof(dof2);
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  // P(F > x) = I_{d2/(d2 + d1 x)}(d2/2, d1/2)
  const double z = dof2 / (dof2 + dof1 * x);
  return boost::math::ibeta(0.5 * dof2, 0.5 * dof1, z);
}

double student_t_two_sided(double t, double dof) {
  check_dof(dof);
  if (std::isinf(t)) return 0.0;
  if (t == 0.0) return 1.0;
  const double z = dof / (dof + t * t);
  return boost::math::ibeta(0.5 * dof, 0.5, z);
}

double student_t_sf(double x, double dof) {
  check_dof(dof);
  const double tail = 0.5 * student_t_two_sided(x, dof);
  return x >= 0.0 ? tail : 1.0 - tail;
}

double irwin_hall_cdf(double x, int n) {
  if (n < 1) vip::fail(ErrorCode::invalid_input, "Irwin-Hall needs n >= 1");
  if (x <= 0.0) return 0.0;
  if (x >= n) return 1.0;
  // Symmetric about n/2; evaluate the shorter alternating sum.
  const bool upper = x > 0.5 * n;
  const double y = upper ? n - x : x;
  double sum = 0.0;
  const int kmax = static_cast<int>(std::floor(y));
  for (int k = 0; k <= kmax; ++k) {
    const double term = boost::math::binomial_coefficient<double>(n, k) * std::pow(y - k, n);
    sum += (k % 2 == 0) ? term : -term;
  }
  const double cdf = std::clamp(sum / boost::math::factorial<double>(n), 0.0, 1.0);
  return upper ? 1.0 - cdf : cdf;
}

double survival(Distribution kind, std::span<const double> params, double x) {
  const auto need = [&](std::size_t k) {
    if (params.size() != k)
      vip::fail(ErrorCode::invalid_input, "distribution expects " + std::to_string(k) + " parameter(s)");
  };
  switch (kind) {
    case Distribution::chi_square: need(1); return chi_square_sf(x, params[0]);
    case Distribution::f: need(2); return f_sf(x, params[0], params[1]);
    case Distribution::normal: need(0); return normal_sf(x);
    case Distribution::student_t: need(1); return student_t_sf(x, params[0]);
  }
  return 0.0;
}

}  // namespace vip::stats
