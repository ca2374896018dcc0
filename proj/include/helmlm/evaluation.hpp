// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace helmlm::evaluation {

struct RegressionMetrics {
  double r2 = 0.0;
  double pearson = 0.0;  // NaN when the predictions are constant
  double rmse = 0.0;
  double mae = 0.0;
};

/// ZeroVariance when y_true is constant; ShapeMismatch on length mismatch.
RegressionMetrics regression_metrics(std::span<const double> y_true,
                                     std::span<const double> y_pred);

struct ClassificationMetrics {
  double roc_auc = 0.0;
  double pr_auc = 0.0;
  double mcc = 0.0;
  double balanced_accuracy = 0.0;
};

/// Labels are 0/1; a score >= threshold predicts the positive class.
/// SingleClass when only one label is present.
ClassificationMetrics classification_metrics(std::span<const int> y_true,
                                             std::span<const double> scores,
                                             double threshold = 0.5);

/// Mann-Whitney statistic with average ranks for ties.
double roc_auc(std::span<const int> y_true, std::span<const double> scores);
/// Average precision: sum over distinct thresholds of (R_k - R_{k-1}) P_k.
double pr_auc(std::span<const int> y_true, std::span<const double> scores);
/// Matthews correlation for k classes; 0 when undefined.
double multiclass_mcc(std::span<const int> y_true, std::span<const int> y_pred);

/// Per-fold values of several metrics for one task.
struct MetricReport {
  std::string task;
  std::map<std::string, std::vector<double>> values;

  std::size_t fold_count() const;
  double mean(const std::string& metric) const;
  /// Sample standard deviation (n - 1); 0 for a single fold.
  double stddev(const std::string& metric) const;
  void add(const std::string& metric, double value) { values[metric].push_back(value); }
};

nlohmann::json to_json(const MetricReport& report);
MetricReport metric_report_from_json(const nlohmann::json& j);

enum class ProbeTask { Regression, Classification };

struct ProbeOptions {
  std::size_t folds = 5;
  std::vector<double> l2_grid = {1e-3, 1e-2, 1e-1, 1.0, 10.0};
  double inner_validation = 0.2;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  MetricReport report;               // r2/rmse or accuracy/mcc per fold
  std::vector<double> selected_l2;   // per fold
};

/// Ridge (regression) or multinomial logistic (classification) on
/// standardized features. Classification targets must be integral class ids.
/// InsufficientData when there are fewer samples than folds.
ProbeResult linear_probe_cv(const Eigen::MatrixXd& x, std::span<const double> targets,
                            ProbeTask task, const ProbeOptions& options = {});

/// Leave-one-out k-nearest-neighbour accuracy with Euclidean distance.
/// Neighbours at equal distance are ordered by index; a vote tie goes to the
/// tied label whose member is nearest.
double knn_classify(const Eigen::MatrixXd& x, std::span<const int> labels,
                    std::size_t k = 3);

struct ClusterIndices {
  double silhouette = 0.0;
  double davies_bouldin = 0.0;
  double calinski_harabasz = 0.0;
};

/// InsufficientData with fewer than two distinct labels.
ClusterIndices clustering_indices(const Eigen::MatrixXd& x, std::span<const int> labels);

}  // namespace helmlm::evaluation
