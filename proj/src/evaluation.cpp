// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include "helmlm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "helmlm/corpus.hpp"
#include "helmlm/errors.hpp"

namespace helmlm::evaluation {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <typename A, typename B>
void require_same_length(const A& a, const B& b, const char* what) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": " + std::to_string(a.size()) +
                                              " labels vs " + std::to_string(b.size()) +
                                              " predictions");
  }
  if (a.empty()) throw Error(ErrorCode::InsufficientData, std::string(what) + ": no samples");
}

void require_binary(std::span<const int> y) {
  bool pos = false, neg = false;
  for (int v : y) {
    if (v == 1) pos = true;
    else if (v == 0) neg = true;
    else throw Error(ErrorCode::InvalidArgument, "binary labels must be 0 or 1");
  }
  if (!pos || !neg) throw Error(ErrorCode::SingleClass, "both classes are required");
}

}  // namespace

RegressionMetrics regression_metrics(std::span<const double> y_true,
                                     std::span<const double> y_pred) {
  require_same_length(y_true, y_pred, "regression_metrics");
  const double n = static_cast<double>(y_true.size());
  const double mt = std::accumulate(y_true.begin(), y_true.end(), 0.0) / n;
  const double mp = std::accumulate(y_pred.begin(), y_pred.end(), 0.0) / n;
  double ss_tot = 0, ss_res = 0, abs_err = 0, sxy = 0, spp = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double dt = y_true[i] - mt, dp = y_pred[i] - mp, e = y_true[i] - y_pred[i];
    ss_tot += dt * dt;
    ss_res += e * e;
    abs_err += std::abs(e);
    sxy += dt * dp;
    spp += dp * dp;
  }
  if (ss_tot == 0.0) {
    throw Error(ErrorCode::ZeroVariance, "y_true is constant; R2 and Pearson r are undefined");
  }
  RegressionMetrics m;
  m.r2 = 1.0 - ss_res / ss_tot;
  m.pearson = spp == 0.0 ? kNaN : sxy / std::sqrt(ss_tot * spp);
  m.rmse = std::sqrt(ss_res / n);
  m.mae = abs_err / n;
  return m;
}

double roc_auc(std::span<const int> y_true, std::span<const double> scores) {
  require_same_length(y_true, scores, "roc_auc");
  require_binary(y_true);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t) {
      if (y_true[order[t]] == 1) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const double p = static_cast<double>(n_pos), q = static_cast<double>(n - n_pos);
  return (rank_sum - p * (p + 1) / 2) / (p * q);
}

double pr_auc(std::span<const int> y_true, std::span<const double> scores) {
  require_same_length(y_true, scores, "pr_auc");
  require_binary(y_true);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double total_pos =
      static_cast<double>(std::count(y_true.begin(), y_true.end(), 1));
  double tp = 0, fp = 0, prev_recall = 0, ap = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      if (y_true[order[j]] == 1) tp += 1;
      else fp += 1;
      ++j;
    }
    const double recall = tp / total_pos;
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double multiclass_mcc(std::span<const int> y_true, std::span<const int> y_pred) {
  require_same_length(y_true, y_pred, "mcc");
  std::map<int, double> t_count, p_count;
  double correct = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    t_count[y_true[i]] += 1;
    p_count[y_pred[i]] += 1;
    if (y_true[i] == y_pred[i]) correct += 1;
  }
  const double s = static_cast<double>(y_true.size());
  double tp_sum = 0, tt = 0, pp = 0;
  for (const auto& [label, t] : t_count) {
    auto it = p_count.find(label);
    if (it != p_count.end()) tp_sum += t * it->second;
    tt += t * t;
  }
  for (const auto& [label, p] : p_count) pp += p * p;
  const double denom = std::sqrt((s * s - pp) * (s * s - tt));
  if (denom == 0.0) return 0.0;
  return (correct * s - tp_sum) / denom;
}

ClassificationMetrics classification_metrics(std::span<const int> y_true,
                                             std::span<const double> scores,
                                             double threshold) {
  ClassificationMetrics m;
  m.roc_auc = roc_auc(y_true, scores);
  m.pr_auc = pr_auc(y_true, scores);
  std::vector<int> pred(scores.size());
  double tp = 0, tn = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    pred[i] = scores[i] >= threshold ? 1 : 0;
    if (y_true[i] == 1) {
      pos += 1;
      if (pred[i] == 1) tp += 1;
    } else {
      neg += 1;
      if (pred[i] == 0) tn += 1;
    }
  }
  m.mcc = multiclass_mcc(y_true, pred);
  m.balanced_accuracy = 0.5 * (tp / pos + tn / neg);
  return m;
}

// ---------------------------------------------------------------------------

std::size_t MetricReport::fold_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : values) n = std::max(n, v.size());
  return n;
}

double MetricReport::mean(const std::string& metric) const {
  const auto& v = values.at(metric);
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double MetricReport::stddev(const std::string& metric) const {
  const auto& v = values.at(metric);
  if (v.size() < 2) return 0.0;
  const double m = mean(metric);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [name, v] : report.values) {
    metrics[name] = {{"values", v}, {"mean", report.mean(name)}, {"std", report.stddev(name)}};
  }
  return {{"task", report.task}, {"fold_count", report.fold_count()}, {"metrics", metrics}};
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    r.task = j.value("task", "");
    for (const auto& [name, m] : j.at("metrics").items()) {
      auto& out = r.values[name];
      for (const auto& x : m.at("values")) out.push_back(x.is_null() ? kNaN : x.get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("metric report: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Linear probing

namespace {

struct Standardizer {
  Eigen::RowVectorXd mean, scale;

  explicit Standardizer(const Eigen::MatrixXd& x) {
    mean = x.colwise().mean();
    const Eigen::MatrixXd c = x.rowwise() - mean;
    scale = (c.colwise().squaredNorm() / std::max<double>(1.0, double(x.rows()))).cwiseSqrt();
    for (Eigen::Index j = 0; j < scale.size(); ++j) {
      if (scale(j) < 1e-12) scale(j) = 1.0;
    }
  }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    return (x.rowwise() - mean).array().rowwise() / scale.array();
  }
};

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

template <typename V>
V take(const V& v, const std::vector<std::size_t>& idx) {
  V out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

struct RidgeModel {
  Eigen::VectorXd w;
  double intercept = 0;

  static RidgeModel fit(const Eigen::MatrixXd& x, const std::vector<double>& y, double l2) {
    RidgeModel m;
    const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
    m.intercept = yv.mean();
    const Eigen::VectorXd yc = yv.array() - m.intercept;
    Eigen::MatrixXd a = x.transpose() * x;
    a.diagonal().array() += l2;
    m.w = a.ldlt().solve(x.transpose() * yc);
    return m;
  }
  std::vector<double> predict(const Eigen::MatrixXd& x) const {
    const Eigen::VectorXd p = (x * w).array() + intercept;
    return {p.data(), p.data() + p.size()};
  }
};

// Multinomial logistic regression: mean cross-entropy + l2/2 |W|^2, bias
// unpenalized, minimized with L-BFGS.
struct LogisticModel {
  Eigen::MatrixXd w;  // (d + 1) x classes, last row is the bias

  static double objective(const Eigen::MatrixXd& xb, const std::vector<int>& y,
                          const Eigen::MatrixXd& w, double l2, Eigen::MatrixXd* grad) {
    const double n = static_cast<double>(xb.rows());
    Eigen::MatrixXd z = xb * w;
    double loss = 0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double mx = z.row(i).maxCoeff();
      z.row(i).array() = (z.row(i).array() - mx).exp();
      const double s = z.row(i).sum();
      z.row(i) /= s;
      loss -= std::log(std::max(z(i, y[static_cast<std::size_t>(i)]), 1e-300));
    }
    loss /= n;
    const auto d = w.rows() - 1;
    loss += 0.5 * l2 * w.topRows(d).squaredNorm();
    if (grad != nullptr) {
      for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, y[static_cast<std::size_t>(i)]) -= 1.0;
      *grad = xb.transpose() * z / n;
      grad->topRows(d) += l2 * w.topRows(d);
    }
    return loss;
  }

  static LogisticModel fit(const Eigen::MatrixXd& x, const std::vector<int>& y,
                           std::size_t classes, double l2) {
    Eigen::MatrixXd xb(x.rows(), x.cols() + 1);
    xb << x, Eigen::VectorXd::Ones(x.rows());
    const auto p = xb.cols(), c = static_cast<Eigen::Index>(classes);
    LogisticModel m;
    m.w = Eigen::MatrixXd::Zero(p, c);

    auto flat = [](Eigen::MatrixXd& a) {
      return Eigen::Map<Eigen::VectorXd>(a.data(), a.size());
    };
    Eigen::MatrixXd g;
    double f = objective(xb, y, m.w, l2, &g);
    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;  // (s, y)
    constexpr std::size_t kHistory = 10;
    for (int iter = 0; iter < 500; ++iter) {
      Eigen::VectorXd gv = flat(g);
      if (gv.lpNorm<Eigen::Infinity>() < 1e-8) break;
      // two-loop recursion
      Eigen::VectorXd q = gv;
      std::vector<double> alpha(memory.size());
      for (std::size_t k = memory.size(); k-- > 0;) {
        const auto& [s, yk] = memory[k];
        alpha[k] = s.dot(q) / yk.dot(s);
        q -= alpha[k] * yk;
      }
      if (!memory.empty()) {
        const auto& [s, yk] = memory.back();
        q *= s.dot(yk) / yk.squaredNorm();
      }
      for (std::size_t k = 0; k < memory.size(); ++k) {
        const auto& [s, yk] = memory[k];
        const double beta = yk.dot(q) / yk.dot(s);
        q += s * (alpha[k] - beta);
      }
      Eigen::VectorXd dir = -q;
      double slope = gv.dot(dir);
      if (slope >= 0) {
        dir = -gv;
        slope = -gv.squaredNorm();
        memory.clear();
      }
      double step = 1.0;
      Eigen::MatrixXd w_new, g_new;
      double f_new = f;
      bool accepted = false;
      for (int ls = 0; ls < 40; ++ls) {
        w_new = m.w;
        flat(w_new) += step * dir;
        f_new = objective(xb, y, w_new, l2, &g_new);
        if (f_new <= f + 1e-4 * step * slope) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;
      Eigen::VectorXd s = flat(w_new) - flat(m.w);
      Eigen::VectorXd yk = flat(g_new) - gv;
      m.w = w_new;
      g = g_new;
      const double df = f - f_new;
      f = f_new;
      if (yk.dot(s) > 1e-12) {
        memory.emplace_back(std::move(s), std::move(yk));
        if (memory.size() > kHistory) memory.pop_front();
      }
      if (df < 1e-12 * std::max(1.0, std::abs(f))) break;
    }
    (void)c;
    return m;
  }

  Eigen::MatrixXd scores(const Eigen::MatrixXd& x) const {
    const auto d = w.rows() - 1;
    return (x * w.topRows(d)).rowwise() + w.row(d);
  }
  std::vector<int> predict(const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd s = scores(x);
    std::vector<int> out(static_cast<std::size_t>(s.rows()));
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      Eigen::Index arg = 0;
      s.row(i).maxCoeff(&arg);
      out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return out;
  }
  double log_loss(const Eigen::MatrixXd& x, const std::vector<int>& y) const {
    Eigen::MatrixXd xb(x.rows(), x.cols() + 1);
    xb << x, Eigen::VectorXd::Ones(x.rows());
    return objective(xb, y, w, 0.0, nullptr);
  }
};

double mse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double accuracy(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(a.size());
}

}  // namespace

ProbeResult linear_probe_cv(const Eigen::MatrixXd& x, std::span<const double> targets,
                            ProbeTask task, const ProbeOptions& options) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (targets.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "probe: " + std::to_string(n) + " embeddings vs " +
                                              std::to_string(targets.size()) + " targets");
  }
  if (options.folds < 2) throw Error(ErrorCode::InvalidArgument, "probe needs at least 2 folds");
  if (n < options.folds) {
    throw Error(ErrorCode::InsufficientData, "probe: " + std::to_string(n) +
                                                 " samples for " + std::to_string(options.folds) +
                                                 " folds");
  }
  if (options.l2_grid.empty()) throw Error(ErrorCode::InvalidArgument, "empty l2 grid");

  // class targets are remapped to 0..C-1 in sorted order
  std::vector<int> classes_of;
  std::size_t n_classes = 0;
  if (task == ProbeTask::Classification) {
    std::set<long long> distinct;
    for (double t : targets) {
      if (t != std::round(t)) throw Error(ErrorCode::InvalidArgument, "class targets must be integers");
      distinct.insert(std::llround(t));
    }
    if (distinct.size() < 2) throw Error(ErrorCode::SingleClass, "probe needs two classes");
    std::vector<long long> sorted(distinct.begin(), distinct.end());
    for (double t : targets) {
      classes_of.push_back(static_cast<int>(
          std::lower_bound(sorted.begin(), sorted.end(), std::llround(t)) - sorted.begin()));
    }
    n_classes = sorted.size();
  }
  const std::vector<double> y(targets.begin(), targets.end());

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(options.seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  ProbeResult result;
  result.report.task = task == ProbeTask::Regression ? "regression" : "classification";
  for (std::size_t f = 0; f < options.folds; ++f) {
    const std::size_t lo = f * n / options.folds, hi = (f + 1) * n / options.folds;
    std::vector<std::size_t> test(perm.begin() + long(lo), perm.begin() + long(hi));
    std::vector<std::size_t> train(perm.begin(), perm.begin() + long(lo));
    train.insert(train.end(), perm.begin() + long(hi), perm.end());

    // inner split for choosing the penalty
    std::vector<std::size_t> inner = train;
    std::mt19937_64 inner_rng(corpus::derive_seed(options.seed, f + 1));
    std::shuffle(inner.begin(), inner.end(), inner_rng);
    auto n_val = static_cast<std::size_t>(
        std::llround(options.inner_validation * static_cast<double>(inner.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, inner.size() - 1);
    std::vector<std::size_t> fit_idx(inner.begin() + long(n_val), inner.end());
    std::vector<std::size_t> val_idx(inner.begin(), inner.begin() + long(n_val));

    const Eigen::MatrixXd x_fit_raw = take_rows(x, fit_idx);
    const Standardizer inner_std(x_fit_raw);
    const Eigen::MatrixXd x_fit = inner_std.apply(x_fit_raw);
    const Eigen::MatrixXd x_val = inner_std.apply(take_rows(x, val_idx));

    double best_l2 = options.l2_grid.front();
    double best_score = std::numeric_limits<double>::infinity();
    double best_tie = std::numeric_limits<double>::infinity();
    for (double l2 : options.l2_grid) {
      double score = 0, tie = 0;
      if (task == ProbeTask::Regression) {
        score = mse(RidgeModel::fit(x_fit, take(y, fit_idx), l2).predict(x_val), take(y, val_idx));
      } else {
        const auto model = LogisticModel::fit(x_fit, take(classes_of, fit_idx), n_classes, l2);
        const auto yv = take(classes_of, val_idx);
        score = -accuracy(model.predict(x_val), yv);
        tie = model.log_loss(x_val, yv);
      }
      if (score < best_score || (score == best_score && tie < best_tie)) {
        best_score = score;
        best_tie = tie;
        best_l2 = l2;
      }
    }
    result.selected_l2.push_back(best_l2);

    const Eigen::MatrixXd x_train_raw = take_rows(x, train);
    const Standardizer outer_std(x_train_raw);
    const Eigen::MatrixXd x_train = outer_std.apply(x_train_raw);
    const Eigen::MatrixXd x_test = outer_std.apply(take_rows(x, test));
    if (task == ProbeTask::Regression) {
      const auto pred = RidgeModel::fit(x_train, take(y, train), best_l2).predict(x_test);
      const auto m = regression_metrics(take(y, test), pred);
      result.report.add("r2", m.r2);
      result.report.add("rmse", m.rmse);
    } else {
      const auto model = LogisticModel::fit(x_train, take(classes_of, train), n_classes, best_l2);
      const auto pred = model.predict(x_test);
      const auto truth = take(classes_of, test);
      result.report.add("accuracy", accuracy(pred, truth));
      result.report.add("mcc", multiclass_mcc(truth, pred));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

double knn_classify(const Eigen::MatrixXd& x, std::span<const int> labels, std::size_t k) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (labels.size() != n) throw Error(ErrorCode::ShapeMismatch, "knn: labels do not match rows");
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "knn: k must be positive");
  if (n < k + 1) throw Error(ErrorCode::InsufficientData, "knn: need more than k points");

  std::size_t correct = 0;
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      dist.emplace_back((x.row(long(i)) - x.row(long(j))).squaredNorm(), j);
    }
    std::partial_sort(dist.begin(), dist.begin() + long(k), dist.end());
    std::map<int, std::size_t> votes;
    for (std::size_t t = 0; t < k; ++t) ++votes[labels[dist[t].second]];
    std::size_t top = 0;
    for (const auto& [label, v] : votes) top = std::max(top, v);
    int predicted = labels[dist[0].second];
    for (std::size_t t = 0; t < k; ++t) {
      const int label = labels[dist[t].second];
      if (votes[label] == top) {
        predicted = label;
        break;
      }
    }
    if (predicted == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

ClusterIndices clustering_indices(const Eigen::MatrixXd& x, std::span<const int> labels) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (labels.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "clustering indices: labels do not match rows");
  }
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[labels[i]].push_back(i);
  if (members.size() < 2) {
    throw Error(ErrorCode::InsufficientData, "clustering indices need at least two labels");
  }
  const std::size_t k = members.size();
  std::vector<int> ids;
  for (const auto& [label, m] : members) ids.push_back(label);

  Eigen::MatrixXd dist(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    dist(long(i), long(i)) = 0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = (x.row(long(i)) - x.row(long(j))).norm();
      dist(long(i), long(j)) = d;
      dist(long(j), long(i)) = d;
    }
  }

  ClusterIndices out;
  double sil = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& own = members[labels[i]];
    if (own.size() == 1) continue;  // singleton: 0
    double a = 0;
    for (auto j : own) a += dist(long(i), long(j));
    a /= static_cast<double>(own.size() - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, m] : members) {
      if (label == labels[i]) continue;
      double s = 0;
      for (auto j : m) s += dist(long(i), long(j));
      b = std::min(b, s / static_cast<double>(m.size()));
    }
    const double denom = std::max(a, b);
    if (denom > 0) sil += (b - a) / denom;
  }
  out.silhouette = sil / static_cast<double>(n);

  const Eigen::RowVectorXd grand = x.colwise().mean();
  Eigen::MatrixXd centroids(long(k), x.cols());
  std::vector<double> spread(k, 0.0);
  double between = 0, within = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const auto& m = members[ids[c]];
    Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(x.cols());
    for (auto i : m) mu += x.row(long(i));
    mu /= static_cast<double>(m.size());
    centroids.row(long(c)) = mu;
    for (auto i : m) {
      const double d = (x.row(long(i)) - mu).norm();
      spread[c] += d;
      within += d * d;
    }
    spread[c] /= static_cast<double>(m.size());
    between += static_cast<double>(m.size()) * (mu - grand).squaredNorm();
  }

  double db = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double worst = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      const double num = spread[c] + spread[o];
      if (num == 0) continue;
      const double sep = (centroids.row(long(c)) - centroids.row(long(o))).norm();
      worst = std::max(worst, sep == 0 ? std::numeric_limits<double>::infinity() : num / sep);
    }
    db += worst;
  }
  out.davies_bouldin = db / static_cast<double>(k);

  if (between == 0) {
    out.calinski_harabasz = 0;
  } else if (within == 0 || n == k) {
    out.calinski_harabasz = std::numeric_limits<double>::infinity();
  } else {
    out.calinski_harabasz = (between / static_cast<double>(k - 1)) /
                            (within / static_cast<double>(n - k));
  }
  return out;
}

}  // namespace helmlm::evaluation
