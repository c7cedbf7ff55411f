#pragma once

#include <span>
#include <string_view>

namespace vip::stats {

enum class Distribution { chi_square, f, normal, student_t };

Distribution parse_distribution(std::string_view name);

double normal_cdf(double x);
double normal_sf(double x);
double chi_square_sf(double x, double dof);
double f_sf(double x, double dof1, double dof2);
double student_t_sf(double x, double dof);
/// P(|T| >= |t|).
double student_t_two_sided(double t, double dof);
/// CDF of the sum of n independent U(0,1) variables.
double irwin_hall_cdf(double x, int n);

/// Upper-tail probability P(X > x). params: {dof} for chi_square/student_t,
/// {dof1, dof2} for f, {} for the standard normal.
double survival(Distribution kind, std::span<const double> params, double x);

}  // namespace vip::stats
