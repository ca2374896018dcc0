// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "helmlm/evaluation.hpp"

namespace helmlm::statistics {

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double x, double a, double b);
/// Student t cumulative distribution with df degrees of freedom.
double student_t_cdf(double t, double df);
/// P(|T| >= |t|).
double student_t_two_sided(double t, double df);

struct TTestResult {
  double mean = 0.0;
  double variance = 0.0;  // sample variance of the differences
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  bool degenerate = false;  // zero variance with non-zero mean: p reported as 0
};

/// Paired t-test over k fold differences with variance inflated by
/// (1/k + n_test/n_train). InsufficientData for k < 2.
TTestResult corrected_resampled_ttest(std::span<const double> diffs, double n_train,
                                      double n_test);

struct FdrResult {
  std::vector<bool> reject;
  std::vector<double> adjusted;
};

/// Benjamini-Hochberg step-up procedure; results in input order.
/// InvalidArgument for p outside [0, 1].
FdrResult bh_fdr(std::span<const double> p_values, double q = 0.05);

/// mean / sample standard deviation. ZeroVariance when the deviation is 0.
double cohens_d(std::span<const double> diffs);
/// negligible (< 0.2), small (< 0.5), medium (< 0.8), large otherwise; on |d|.
std::string_view effect_label(double d);

struct Comparison {
  std::string metric;
  std::vector<double> diffs;  // a - b per fold
  TTestResult test;
  double adjusted_p = 1.0;
  bool significant = false;
  double d = 0.0;
  bool d_defined = true;
  std::string magnitude;
};

struct ComparisonReport {
  std::vector<Comparison> comparisons;
  double q = 0.05;
};

/// Compares every metric present in both reports with matching fold counts,
/// then adjusts the p-values jointly.
ComparisonReport compare_reports(const evaluation::MetricReport& a,
                                 const evaluation::MetricReport& b, double n_train,
                                 double n_test, double q = 0.05);

nlohmann::json to_json(const ComparisonReport& report);

}  // namespace helmlm::statistics
