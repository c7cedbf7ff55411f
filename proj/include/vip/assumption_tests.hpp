#pragma once

// Hypothesis tests for the estimator assumptions: first-order uncorrelation
// of rewards and projected gradients (per-group Pearson tests combined by
// Fisher's or Edgington's method) and homogeneity of the projected-gradient
// variance across prompts (Brown-Forsythe/Levene and O'Brien).

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vip {

struct SampleGroup {
  std::string id;
  std::vector<double> r;  // rewards; empty for variance-only data
  std::vector<double> z;  // projected gradients

  bool paired() const noexcept { return !r.empty(); }
};

struct GroupResult {
  std::string id;
  double statistic;  // local statistic (rho, mean transform, ...)
  double value;      // local p-value or group mean
};

struct SkippedGroup {
  std::string id;
  std::string reason;
};

struct TestReport {
  std::string test_name;
  double statistic = 0.0;
  std::vector<double> dof;
  double p_global = 1.0;  // NaN when degenerate
  bool degenerate = false;
  std::vector<GroupResult> per_group;
  std::vector<SkippedGroup> skipped;
  std::vector<std::string> notes;
};

inline constexpr double kPValueFloor = 1e-300;

struct PearsonResult {
  double rho;
  double p;
};

/// Two-sided Pearson test via t = rho sqrt((n-2)/(1-rho^2)) ~ t_{n-2}.
/// Throws invalid_input for n < 3 or mismatched lengths; returns nullopt when
/// either column is constant.
std::optional<PearsonResult> pearson_correlation_pvalue(std::span<const double> x,
                                                        std::span<const double> y);

TestReport fisher_combine(std::span<const double> pvalues);
TestReport edgington_combine(std::span<const double> pvalues);

/// Per-group Pearson p-values (degenerate groups skipped, zero p-values
/// floored) combined by Fisher's / Edgington's method.
TestReport fisher_test(std::span<const SampleGroup> groups);
TestReport edgington_test(std::span<const SampleGroup> groups);

/// Median-centred Levene (Brown-Forsythe) test on the z columns.
TestReport levene_test(std::span<const SampleGroup> groups);

/// O'Brien's transform of one group; its mean equals the unbiased variance.
std::vector<double> obrien_transform(std::span<const double> z);
TestReport obrien_test(std::span<const SampleGroup> groups);

}  // namespace vip
