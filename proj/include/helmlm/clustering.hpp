// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace helmlm::clustering {

struct PcaResult {
  Eigen::MatrixXd projected;           // n x dims
  Eigen::MatrixXd components;          // dims x d, orthonormal rows
  Eigen::VectorXd mean;                // d
  Eigen::VectorXd explained_variance;  // dims, non-increasing
  std::size_t available = 0;           // components with non-zero variance
};

/// Mean-centred projection onto the leading principal components. Missing
/// components (rank deficiency) come back as zero rows and zero columns.
PcaResult pca_reduce(const Eigen::MatrixXd& x, std::size_t dims);

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;  // k x d
  double inertia = 0.0;
  std::size_t iterations = 0;
};

/// Lloyd iterations from k-means++ seeds. Optional per-point weights scale
/// both seeding probabilities and centroid means.
KMeansResult kmeans_cluster(const Eigen::MatrixXd& points, std::size_t k,
                            std::uint64_t seed, std::size_t max_iter = 300,
                            const std::vector<double>& weights = {});

struct BalancedAssignment {
  std::vector<int> group;            // per point
  std::vector<double> group_weight;  // per group
  bool fallback = false;             // greedy balancing was needed
};

/// Groups weighted points into k groups whose weights stay within
/// [(1 - max_dev), (1 + max_dev)] * total / k, preferring geometric proximity.
/// When no such grouping is found, falls back to largest-first greedy
/// balancing and sets `fallback`.
BalancedAssignment constrained_kmeans(const Eigen::MatrixXd& points,
                                      const std::vector<double>& weights, std::size_t k,
                                      double max_dev, std::uint64_t seed,
                                      std::size_t max_iter = 100);

}  // namespace helmlm::clustering
