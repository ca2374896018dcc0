// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include "helmlm/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "helmlm/errors.hpp"

namespace helmlm::statistics {

namespace {

// Lentz evaluation of the continued fraction for I_x(a, b).
double beta_fraction(double x, double a, double b) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double dm = m, m2 = 2.0 * m;
    double aa = dm * (b - dm) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + dm) * (qab + dm) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return h;
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v, double mean) {
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

}  // namespace

double incomplete_beta(double x, double a, double b) {
  if (a <= 0 || b <= 0) throw Error(ErrorCode::InvalidArgument, "incomplete beta needs a, b > 0");
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(x, a, b) / a;
  return 1.0 - front * beta_fraction(1.0 - x, b, a) / b;
}

double student_t_two_sided(double t, double df) {
  if (df <= 0) throw Error(ErrorCode::InvalidArgument, "degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(df / (df + t * t), 0.5 * df, 0.5);
}

double student_t_cdf(double t, double df) {
  const double tail = 0.5 * student_t_two_sided(t, df);
  return t >= 0 ? 1.0 - tail : tail;
}

TTestResult corrected_resampled_ttest(std::span<const double> diffs, double n_train,
                                      double n_test) {
  if (diffs.size() < 2) {
    throw Error(ErrorCode::InsufficientData, "t-test needs at least two fold differences");
  }
  if (!(n_train > 0) || n_test < 0) {
    throw Error(ErrorCode::InvalidArgument, "n_train must be positive and n_test non-negative");
  }
  TTestResult r;
  const double k = static_cast<double>(diffs.size());
  r.df = k - 1;
  r.mean = mean_of(diffs);
  r.variance = sample_variance(diffs, r.mean);
  if (r.variance == 0.0) {
    if (r.mean == 0.0) {
      r.t = 0;
      r.p = 1;
    } else {
      r.degenerate = true;
      r.t = std::copysign(std::numeric_limits<double>::infinity(), r.mean);
      r.p = 0;
    }
    return r;
  }
  r.t = r.mean / std::sqrt((1.0 / k + n_test / n_train) * r.variance);
  r.p = student_t_two_sided(r.t, r.df);
  return r;
}

FdrResult bh_fdr(std::span<const double> p_values, double q) {
  const std::size_t m = p_values.size();
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "p-value outside [0, 1]: " + std::to_string(p));
    }
  }
  FdrResult r;
  r.reject.assign(m, false);
  r.adjusted.assign(m, 1.0);
  if (m == 0) return r;
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  const double md = static_cast<double>(m);
  std::size_t cutoff = 0;  // number rejected
  for (std::size_t i = 0; i < m; ++i) {
    if (p_values[order[i]] <= static_cast<double>(i + 1) / md * q) cutoff = i + 1;
  }
  double running = 1.0;
  for (std::size_t i = m; i-- > 0;) {
    running = std::min(running, md * p_values[order[i]] / static_cast<double>(i + 1));
    r.adjusted[order[i]] = std::clamp(running, p_values[order[i]], 1.0);
    r.reject[order[i]] = i < cutoff;
  }
  return r;
}

double cohens_d(std::span<const double> diffs) {
  if (diffs.size() < 2) throw Error(ErrorCode::InsufficientData, "Cohen's d needs two values");
  const double mean = mean_of(diffs);
  const double var = sample_variance(diffs, mean);
  if (var == 0.0) throw Error(ErrorCode::ZeroVariance, "Cohen's d undefined for zero variance");
  return mean / std::sqrt(var);
}

std::string_view effect_label(double d) {
  const double a = std::abs(d);
  if (a < 0.2) return "negligible";
  if (a < 0.5) return "small";
  if (a < 0.8) return "medium";
  return "large";
}

ComparisonReport compare_reports(const evaluation::MetricReport& a,
                                 const evaluation::MetricReport& b, double n_train,
                                 double n_test, double q) {
  ComparisonReport report;
  report.q = q;
  for (const auto& [name, va] : a.values) {
    auto it = b.values.find(name);
    if (it == b.values.end()) continue;
    const auto& vb = it->second;
    if (va.size() != vb.size()) {
      throw Error(ErrorCode::ShapeMismatch, "metric " + name + ": fold counts differ (" +
                                                std::to_string(va.size()) + " vs " +
                                                std::to_string(vb.size()) + ")");
    }
    Comparison c;
    c.metric = name;
    for (std::size_t i = 0; i < va.size(); ++i) c.diffs.push_back(va[i] - vb[i]);
    c.test = corrected_resampled_ttest(c.diffs, n_train, n_test);
    try {
      c.d = cohens_d(c.diffs);
      c.magnitude = std::string(effect_label(c.d));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ZeroVariance) throw;
      c.d_defined = false;
      c.magnitude = "undefined";
    }
    report.comparisons.push_back(std::move(c));
  }
  if (report.comparisons.empty()) {
    throw Error(ErrorCode::InvalidArgument, "the reports share no metric");
  }
  std::vector<double> raw;
  for (const auto& c : report.comparisons) raw.push_back(c.test.p);
  const auto fdr = bh_fdr(raw, q);
  for (std::size_t i = 0; i < report.comparisons.size(); ++i) {
    report.comparisons[i].adjusted_p = fdr.adjusted[i];
    report.comparisons[i].significant = fdr.reject[i];
  }
  return report;
}

nlohmann::json to_json(const ComparisonReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : report.comparisons) {
    nlohmann::json row = {{"metric", c.metric},
                          {"fold_differences", c.diffs},
                          {"mean_difference", c.test.mean},
                          {"t", std::isfinite(c.test.t) ? nlohmann::json(c.test.t)
                                                        : nlohmann::json(c.test.t > 0 ? "inf" : "-inf")},
                          {"df", c.test.df},
                          {"p", c.test.p},
                          {"adjusted_p", c.adjusted_p},
                          {"significant", c.significant},
                          {"degenerate", c.test.degenerate},
                          {"magnitude", c.magnitude}};
    row["cohens_d"] = c.d_defined ? nlohmann::json(c.d) : nlohmann::json(nullptr);
    rows.push_back(std::move(row));
  }
  return {{"q", report.q}, {"comparisons", rows}};
}

}  // namespace helmlm::statistics
