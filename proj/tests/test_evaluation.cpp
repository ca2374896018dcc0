// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "helmlm/errors.hpp"
#include "helmlm/evaluation.hpp"

namespace helmlm::evaluation {
namespace {

// P(s+ > s-) + P(tie)/2 over all positive-negative pairs.
double pairwise_auc(const std::vector<int>& y, const std::vector<double>& s) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1;
      if (s[i] > s[j]) wins += 1;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Average precision evaluated threshold by threshold from scratch.
double brute_average_precision(const std::vector<int>& y, const std::vector<double>& s) {
  std::vector<double> thresholds(s.begin(), s.end());
  std::sort(thresholds.rbegin(), thresholds.rend());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double positives = 0;
  for (int v : y) positives += v;
  double ap = 0, prev = 0;
  for (double t : thresholds) {
    double tp = 0, predicted = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (s[i] >= t) {
        predicted += 1;
        tp += y[i];
      }
    }
    ap += (tp / positives - prev) * (tp / predicted);
    prev = tp / positives;
  }
  return ap;
}

TEST(Regression, HandExample) {
  const std::vector<double> t = {0, 1, 2}, p = {0, 1, 1};
  const auto m = regression_metrics(t, p);
  EXPECT_NEAR(m.mae, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.rmse, std::sqrt(1.0 / 3.0), 1e-15);
  EXPECT_NEAR(m.r2, 0.5, 1e-15);
}

TEST(Regression, PerfectAndMeanPredictor) {
  const std::vector<double> t = {1.5, -2, 3, 0.25};
  const auto m = regression_metrics(t, t);
  EXPECT_DOUBLE_EQ(m.r2, 1.0);
  EXPECT_NEAR(m.pearson, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(m.rmse, 0.0);
  EXPECT_DOUBLE_EQ(m.mae, 0.0);
  const double mean = (1.5 - 2 + 3 + 0.25) / 4;
  const std::vector<double> c(4, mean);
  EXPECT_NEAR(regression_metrics(t, c).r2, 0.0, 1e-15);
  EXPECT_TRUE(std::isnan(regression_metrics(t, c).pearson));
}

TEST(Regression, ConstantTruthRejected) {
  const std::vector<double> t = {2, 2, 2}, p = {1, 2, 3};
  try {
    regression_metrics(t, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroVariance);
  }
}

TEST(Classification, HandExample) {
  const std::vector<int> y = {1, 0, 1, 0};
  const std::vector<double> s = {0.9, 0.8, 0.7, 0.1};
  EXPECT_DOUBLE_EQ(roc_auc(y, s), 0.75);
  EXPECT_NEAR(pr_auc(y, s), 0.5 * 1.0 + 0.5 * (2.0 / 3.0), 1e-15);
}

TEST(Classification, PerfectRanking) {
  const std::vector<int> y = {0, 0, 1, 1, 1};
  const std::vector<double> s = {0.1, 0.2, 0.6, 0.7, 0.9};
  const auto m = classification_metrics(y, s, 0.5);
  EXPECT_DOUBLE_EQ(m.roc_auc, 1.0);
  EXPECT_DOUBLE_EQ(m.pr_auc, 1.0);
  EXPECT_DOUBLE_EQ(m.mcc, 1.0);
  EXPECT_DOUBLE_EQ(m.balanced_accuracy, 1.0);
}

TEST(Classification, AucMatchesPairwiseOracleWithTies) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 2 + rng() % 499;
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng() % 2);
      s[i] = static_cast<double>(rng() % 20) / 20.0;  // many ties
    }
    y[0] = 0;
    y[1] = 1;
    ASSERT_NEAR(roc_auc(y, s), pairwise_auc(y, s), 1e-12);
    ASSERT_NEAR(pr_auc(y, s), brute_average_precision(y, s), 1e-12);
  }
}

TEST(Classification, RandomScoresNearHalf) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t n = 100000;
  std::vector<int> y(n);
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 2);
    s[i] = u(rng);
  }
  EXPECT_NEAR(roc_auc(y, s), 0.5, 0.02);
}

TEST(Classification, SingleClassRejected) {
  const std::vector<int> y = {1, 1};
  const std::vector<double> s = {0.1, 0.2};
  try {
    classification_metrics(y, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingleClass);
  }
}

TEST(Classification, MccAndBalancedAccuracyByHand) {
  // tp=2 fn=1 tn=3 fp=1
  const std::vector<int> y = {1, 1, 1, 0, 0, 0, 0};
  const std::vector<double> s = {0.9, 0.8, 0.2, 0.1, 0.3, 0.4, 0.7};
  const auto m = classification_metrics(y, s, 0.5);
  const double tp = 2, fn = 1, tn = 3, fp = 1;
  const double mcc = (tp * tn - fp * fn) / std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
  EXPECT_NEAR(m.mcc, mcc, 1e-15);
  EXPECT_NEAR(m.balanced_accuracy, 0.5 * (2.0 / 3.0 + 3.0 / 4.0), 1e-15);
}

TEST(MetricReport, SampleStdAndJson) {
  MetricReport r;
  r.task = "t";
  for (double v : {1.0, 2.0, 3.0}) r.add("r2", v);
  EXPECT_DOUBLE_EQ(r.mean("r2"), 2.0);
  EXPECT_DOUBLE_EQ(r.stddev("r2"), 1.0);
  EXPECT_EQ(r.fold_count(), 3u);
  const auto back = metric_report_from_json(to_json(r));
  EXPECT_EQ(back.values, r.values);
  EXPECT_EQ(back.task, "t");
}

Eigen::MatrixXd gaussian_clusters(std::size_t per, std::vector<int>& labels, double sep,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  const double centers[3][2] = {{0, 0}, {sep, 0}, {0, sep}};
  Eigen::MatrixXd x(static_cast<Eigen::Index>(3 * per), 2);
  labels.clear();
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      const auto r = static_cast<Eigen::Index>(c * per + i);
      x(r, 0) = centers[c][0] + noise(rng);
      x(r, 1) = centers[c][1] + noise(rng);
      labels.push_back(c);
    }
  }
  return x;
}

TEST(Probe, ExactLinearTargets) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd x(200, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  Eigen::VectorXd w(6);
  w << 1.5, -2, 0.5, 3, 0, -1;
  const Eigen::VectorXd y = x * w;
  const std::vector<double> t(y.data(), y.data() + y.size());
  const auto r = linear_probe_cv(x, t, ProbeTask::Regression);
  EXPECT_EQ(r.report.fold_count(), 5u);
  EXPECT_GE(r.report.mean("r2"), 0.999);
  const auto again = linear_probe_cv(x, t, ProbeTask::Regression);
  EXPECT_EQ(again.report.values, r.report.values);
}

TEST(Probe, SeparableClasses) {
  std::vector<int> labels;
  const auto x = gaussian_clusters(50, labels, 10.0, 1);
  const std::vector<double> t(labels.begin(), labels.end());
  const auto r = linear_probe_cv(x, t, ProbeTask::Classification);
  EXPECT_DOUBLE_EQ(r.report.mean("accuracy"), 1.0);
  EXPECT_DOUBLE_EQ(r.report.mean("mcc"), 1.0);
}

TEST(Probe, TooFewSamples) {
  Eigen::MatrixXd x(3, 2);
  x.setRandom();
  const std::vector<double> t = {1, 2, 3};
  try {
    linear_probe_cv(x, t, ProbeTask::Regression);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientData);
  }
}

TEST(Knn, SeparatedClusters) {
  std::vector<int> labels;
  const auto x = gaussian_clusters(50, labels, 10.0, 2);
  EXPECT_DOUBLE_EQ(knn_classify(x, labels, 3), 1.0);
}

TEST(Knn, OneNeighbourDefinition) {
  std::vector<int> labels;
  const auto x = gaussian_clusters(20, labels, 0.8, 4);
  std::size_t agree = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = -1;
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      if (j == i) continue;
      const double d = (x.row(i) - x.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    if (labels[std::size_t(arg)] == labels[std::size_t(i)]) ++agree;
  }
  EXPECT_DOUBLE_EQ(knn_classify(x, labels, 1), double(agree) / double(x.rows()));
}

TEST(Knn, DuplicatePointsDeterministic) {
  Eigen::MatrixXd x(4, 1);
  x << 0, 0, 0, 0;
  const std::vector<int> labels = {0, 1, 0, 1};
  // neighbours are the other three points in index order, so every
  // two-against-one vote picks the other label
  const double a = knn_classify(x, labels, 3);
  EXPECT_DOUBLE_EQ(a, knn_classify(x, labels, 3));
  EXPECT_DOUBLE_EQ(a, 0.0);
  // k = 2: points 0 and 2 see a 1-1 tie settled by their first neighbour
  // (labels 1 and 0), point 1 sees {0, 0}, point 3 sees {0, 1} -> 0
  EXPECT_DOUBLE_EQ(knn_classify(x, labels, 2), 0.25);
}

// Silhouette straight from a(i), b(i).
double oracle_silhouette(const std::vector<std::array<double, 2>>& pts, const std::vector<int>& lab) {
  double total = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::map<int, std::pair<double, int>> acc;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      const double d = std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
      acc[lab[j]].first += d;
      acc[lab[j]].second += 1;
    }
    if (acc.find(lab[i]) == acc.end()) continue;
    const double a = acc[lab[i]].first / acc[lab[i]].second;
    double b = 1e300;
    for (auto& [l, v] : acc) {
      if (l != lab[i]) b = std::min(b, v.first / v.second);
    }
    total += (b - a) / std::max(a, b);
  }
  return total / double(pts.size());
}

TEST(ClusterIndices, TwoClusterHandExample) {
  const std::vector<std::array<double, 2>> pts = {{0, 0}, {0, 1}, {10, 10}, {10, 11}};
  const std::vector<int> lab = {0, 0, 1, 1};
  Eigen::MatrixXd x(4, 2);
  for (int i = 0; i < 4; ++i) x.row(i) << pts[std::size_t(i)][0], pts[std::size_t(i)][1];
  const auto c = clustering_indices(x, lab);
  // (0,0): a = 1, b = (sqrt(200) + sqrt(221)) / 2; (0,1): b = (sqrt(181) + sqrt(200)) / 2
  const double s0 = 1.0 - 2.0 / (std::sqrt(200.0) + std::sqrt(221.0));
  const double s1 = 1.0 - 2.0 / (std::sqrt(181.0) + std::sqrt(200.0));
  EXPECT_NEAR(c.silhouette, 0.5 * (s0 + s1), 1e-12);
  EXPECT_NEAR(c.silhouette, oracle_silhouette(pts, lab), 1e-12);
  EXPECT_NEAR(c.silhouette, 0.9292895, 1e-6);
}

TEST(ClusterIndices, IdenticalPointsDegenerate) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(6, 3);
  const std::vector<int> lab = {0, 1, 0, 1, 0, 1};
  const auto c = clustering_indices(x, lab);
  EXPECT_DOUBLE_EQ(c.silhouette, 0.0);
  EXPECT_DOUBLE_EQ(c.calinski_harabasz, 0.0);
  EXPECT_DOUBLE_EQ(c.davies_bouldin, 0.0);
}

TEST(ClusterIndices, SeparationMonotone) {
  std::vector<int> lab;
  const auto near = gaussian_clusters(30, lab, 2.0, 9);
  const auto far = gaussian_clusters(30, lab, 6.0, 9);
  const auto a = clustering_indices(near, lab), b = clustering_indices(far, lab);
  EXPECT_GT(b.calinski_harabasz, a.calinski_harabasz);
  EXPECT_LT(b.davies_bouldin, a.davies_bouldin);
  EXPECT_GT(b.silhouette, 0.9);
}

TEST(ClusterIndices, RangesOnRandomInputs) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g(0, 1);
  for (int trial = 0; trial < 30; ++trial) {
    Eigen::MatrixXd x(25, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    std::vector<int> lab(25);
    for (auto& l : lab) l = static_cast<int>(rng() % 4);
    lab[0] = 0;
    lab[1] = 1;
    const auto c = clustering_indices(x, lab);
    ASSERT_GE(c.silhouette, -1.0);
    ASSERT_LE(c.silhouette, 1.0);
    ASSERT_GE(c.davies_bouldin, 0.0);
    ASSERT_GE(c.calinski_harabasz, 0.0);
  }
}

TEST(ClusterIndices, SingleLabelRejected) {
  Eigen::MatrixXd x(3, 1);
  x << 0, 1, 2;
  const std::vector<int> lab = {4, 4, 4};
  EXPECT_THROW(clustering_indices(x, lab), Error);
}

}  // namespace
}  // namespace helmlm::evaluation
