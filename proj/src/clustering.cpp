// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include "helmlm/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>

#include "helmlm/errors.hpp"

namespace helmlm::clustering {

PcaResult pca_reduce(const Eigen::MatrixXd& x, std::size_t dims) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  if (n < 2 || d == 0) throw Error(ErrorCode::InsufficientData, "PCA needs at least 2 rows");
  if (dims == 0) throw Error(ErrorCode::InvalidArgument, "PCA dims must be positive");

  PcaResult out;
  out.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd xc = x.rowwise() - out.mean.transpose();
  const double denom = static_cast<double>(n - 1);

  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // d x r, columns match values
  if (d <= n) {
    const Eigen::MatrixXd cov = (xc.transpose() * xc) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    values = es.eigenvalues().reverse();
    vectors = es.eigenvectors().rowwise().reverse();
  } else {
    // n < d: eigen-decompose the smaller Gram matrix and map back
    const Eigen::MatrixXd gram = (xc * xc.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    values = es.eigenvalues().reverse();
    const Eigen::MatrixXd u = es.eigenvectors().rowwise().reverse();
    vectors = xc.transpose() * u;
    for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
      const double norm = vectors.col(j).norm();
      if (norm > 0) vectors.col(j) /= norm;
    }
  }

  const double top = values.size() > 0 ? std::max(values(0), 0.0) : 0.0;
  const double tol = std::max(top * 1e-10, std::numeric_limits<double>::min());
  out.components = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dims), x.cols());
  out.explained_variance = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims));
  for (std::size_t j = 0; j < dims && j < static_cast<std::size_t>(values.size()); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    if (values(jj) <= tol) break;
    Eigen::VectorXd v = vectors.col(jj);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.components.row(jj) = v.transpose();
    out.explained_variance(jj) = values(jj);
    ++out.available;
  }
  out.projected = xc * out.components.transpose();
  return out;
}

namespace {

double sq_dist(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b,
               Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

Eigen::MatrixXd plus_plus_seeds(const Eigen::MatrixXd& points, const std::vector<double>& w,
                                std::size_t k, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(points.rows());
  Eigen::MatrixXd centers(static_cast<Eigen::Index>(k), points.cols());
  std::vector<std::uint8_t> chosen(n, 0);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());

  auto pick = [&](const std::vector<double>& prob) -> std::size_t {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : prob[i];
    if (!(total > 0.0)) {
      // all remaining mass is zero (duplicates): uniform over unchosen
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) free.push_back(i);
      }
      std::uniform_int_distribution<std::size_t> u(0, free.size() - 1);
      return free[u(rng)];
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double r = u(rng);
    std::size_t last = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (chosen[i]) continue;
      last = i;
      r -= prob[i];
      if (r < 0) return i;
    }
    return last;
  };

  std::size_t first = pick(w);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t idx = c == 0 ? first : [&] {
      std::vector<double> prob(n);
      for (std::size_t i = 0; i < n; ++i) prob[i] = w[i] * d2[i];
      return pick(prob);
    }();
    chosen[idx] = 1;
    centers.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(idx));
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(points, static_cast<Eigen::Index>(i), centers,
                                      static_cast<Eigen::Index>(c)));
    }
  }
  return centers;
}

std::vector<double> resolve_weights(const std::vector<double>& weights, std::size_t n) {
  if (weights.empty()) return std::vector<double>(n, 1.0);
  if (weights.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "weights do not match point count");
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(ErrorCode::InvalidArgument, "weights must be finite and non-negative");
    }
  }
  return weights;
}

}  // namespace

KMeansResult kmeans_cluster(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed,
                            std::size_t max_iter, const std::vector<double>& weights) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be positive");
  if (k > n) {
    throw Error(ErrorCode::InvalidArgument,
                "k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
  }
  const auto w = resolve_weights(weights, n);
  std::mt19937_64 rng(seed);

  KMeansResult out;
  out.centroids = plus_plus_seeds(points, w, k, rng);
  out.labels.assign(n, -1);
  const auto kk = static_cast<Eigen::Index>(k);

  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < kk; ++c) {
        const double dist = sq_dist(points, static_cast<Eigen::Index>(i), out.centroids, c);
        if (dist < best_d) {
          best_d = dist;
          best = static_cast<int>(c);
        }
      }
      if (out.labels[i] != best) {
        out.labels[i] = best;
        changed = true;
      }
    }
    out.iterations = iter + 1;
    if (!changed && iter > 0) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(kk, points.cols());
    std::vector<double> mass(k, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(out.labels[i]);
      sums.row(static_cast<Eigen::Index>(c)) += w[i] * points.row(static_cast<Eigen::Index>(i));
      mass[c] += w[i];
      ++count[c];
    }
    std::vector<std::uint8_t> used(n, 0);
    for (std::size_t c = 0; c < k; ++c) {
      const auto cc = static_cast<Eigen::Index>(c);
      if (count[c] == 0) {
        // reseed with the point farthest from its own centroid
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (used[i]) continue;
          const double dist = sq_dist(points, static_cast<Eigen::Index>(i), out.centroids,
                                      out.labels[i]);
          if (dist > far_d) {
            far_d = dist;
            far = i;
          }
        }
        used[far] = 1;
        out.centroids.row(cc) = points.row(static_cast<Eigen::Index>(far));
        changed = true;
      } else if (mass[c] > 0.0) {
        out.centroids.row(cc) = sums.row(cc) / mass[c];
      }
    }
  }

  out.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.inertia += w[i] * sq_dist(points, static_cast<Eigen::Index>(i), out.centroids,
                                  out.labels[i]);
  }
  return out;
}

namespace {

struct Bounds {
  double lower, upper;
};

bool feasible(const std::vector<double>& load, Bounds b) {
  const double slack = 1e-9 * std::max(1.0, b.upper);
  return std::all_of(load.begin(), load.end(), [&](double l) {
    return l >= b.lower - slack && l <= b.upper + slack;
  });
}

// Moves single points between groups to clear bound violations, choosing the
// move that costs the least extra distance. Returns false when stuck.
bool repair(const Eigen::MatrixXd& dist, const std::vector<double>& w, Bounds b,
            std::vector<int>& group, std::vector<double>& load) {
  const std::size_t n = w.size();
  const std::size_t k = load.size();
  const double slack = 1e-9 * std::max(1.0, b.upper);
  for (std::size_t step = 0; step < 10 * n + 10; ++step) {
    if (feasible(load, b)) return true;
    double best_cost = std::numeric_limits<double>::infinity();
    std::size_t best_i = n;
    int best_to = -1;
    for (std::size_t i = 0; i < n; ++i) {
      const auto from = static_cast<std::size_t>(group[i]);
      for (std::size_t to = 0; to < k; ++to) {
        if (to == from) continue;
        const double nf = load[from] - w[i];
        const double nt = load[to] + w[i];
        // a useful move reduces a violation without creating a new one
        const bool helps = load[from] > b.upper + slack || load[to] < b.lower - slack;
        if (!helps) continue;
        if (nt > b.upper + slack && load[to] <= b.upper + slack) continue;
        if (nf < b.lower - slack && load[from] >= b.lower - slack) continue;
        const double cost = dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(to)) -
                            dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(from));
        if (cost < best_cost) {
          best_cost = cost;
          best_i = i;
          best_to = static_cast<int>(to);
        }
      }
    }
    if (best_i == n) return false;
    load[static_cast<std::size_t>(group[best_i])] -= w[best_i];
    load[static_cast<std::size_t>(best_to)] += w[best_i];
    group[best_i] = best_to;
  }
  return feasible(load, b);
}

}  // namespace

BalancedAssignment constrained_kmeans(const Eigen::MatrixXd& points,
                                      const std::vector<double>& weights, std::size_t k,
                                      double max_dev, std::uint64_t seed,
                                      std::size_t max_iter) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k == 0 || k > n) throw Error(ErrorCode::InvalidArgument, "invalid group count");
  const auto w = resolve_weights(weights, n);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  const Bounds b{(1.0 - max_dev) * total / static_cast<double>(k),
                 (1.0 + max_dev) * total / static_cast<double>(k)};

  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centers = plus_plus_seeds(points, w, k, rng);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t c) { return w[a] > w[c]; });

  BalancedAssignment best;
  std::vector<int> group(n, -1);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    Eigen::MatrixXd dist(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) {
        dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
            sq_dist(points, static_cast<Eigen::Index>(i), centers, static_cast<Eigen::Index>(c));
      }
    }
    std::vector<int> next(n, -1);
    std::vector<double> load(k, 0.0);
    for (std::size_t i : order) {
      std::vector<std::size_t> pref(k);
      std::iota(pref.begin(), pref.end(), 0);
      std::stable_sort(pref.begin(), pref.end(), [&](std::size_t a, std::size_t c) {
        return dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) <
               dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      });
      std::size_t target = k;
      for (std::size_t c : pref) {
        if (load[c] + w[i] <= b.upper) {
          target = c;
          break;
        }
      }
      if (target == k) {
        target = static_cast<std::size_t>(
            std::min_element(load.begin(), load.end()) - load.begin());
      }
      next[i] = static_cast<int>(target);
      load[target] += w[i];
    }
    const bool ok = repair(dist, w, b, next, load);
    if (ok) {
      best.group = next;
      best.group_weight = load;
    }
    if (next == group) break;
    group = std::move(next);

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), points.cols());
    std::vector<double> mass(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(group[i]);
      sums.row(c) += w[i] * points.row(static_cast<Eigen::Index>(i));
      mass[static_cast<std::size_t>(c)] += w[i];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (mass[c] > 0) {
        centers.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / mass[c];
      }
    }
  }
  if (!best.group.empty()) return best;

  // largest-first greedy: each point goes to the currently lightest group
  best.fallback = true;
  best.group.assign(n, -1);
  best.group_weight.assign(k, 0.0);
  for (std::size_t i : order) {
    const auto c = static_cast<std::size_t>(
        std::min_element(best.group_weight.begin(), best.group_weight.end()) -
        best.group_weight.begin());
    best.group[i] = static_cast<int>(c);
    best.group_weight[c] += w[i];
  }
  return best;
}

}  // namespace helmlm::clustering
