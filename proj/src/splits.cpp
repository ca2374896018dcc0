// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include "helmlm/splits.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "helmlm/clustering.hpp"
#include "helmlm/corpus.hpp"
#include "helmlm/errors.hpp"
#include "helmlm/helm.hpp"
#include "helmlm/io.hpp"

namespace helmlm::splits {

std::string pair_id(std::string_view protein_id, std::string_view peptide_key) {
  std::string id(protein_id);
  id += "::";
  id += peptide_key;
  return id;
}

std::string PairRecord::id() const { return pair_id(protein_id, peptide_key); }

namespace {

bool parse_label(const nlohmann::json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number()) {
    const double d = v.get<double>();
    if (d == 1.0) return true;
    if (d == 0.0) return false;
  }
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (s == "1" || s == "positive" || s == "true") return true;
    if (s == "0" || s == "negative" || s == "false") return false;
  }
  throw Error(ErrorCode::InvalidArgument, "unrecognised pair label " + v.dump());
}

}  // namespace

std::vector<PairRecord> load_pairs(const std::filesystem::path& path) {
  std::vector<PairRecord> pairs;
  std::set<std::string> seen;
  const auto rows = io::read_records(path);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    const std::string where = path.string() + " row " + std::to_string(i + 1);
    if (!row.contains("protein_id") || !row.contains("label")) {
      throw Error(ErrorCode::InvalidArgument, where + ": needs protein_id and label");
    }
    PairRecord p;
    if (row.contains("peptide_helm")) {
      p.peptide_helm = row.at("peptide_helm").get<std::string>();
      p.peptide_key = helm::canonical_key(helm::parse_helm(p.peptide_helm));
    } else if (row.contains("peptide_key")) {
      p.peptide_key = row.at("peptide_key").get<std::string>();
    } else {
      throw Error(ErrorCode::InvalidArgument, where + ": needs peptide_helm");
    }
    p.protein_id = row.at("protein_id").get<std::string>();
    p.positive = parse_label(row.at("label"));
    if (row.contains("acsm") && !row.at("acsm").is_null()) {
      p.acsm = io::as_vector(row.at("acsm"), "acsm");
    }
    if (!seen.insert(p.id()).second) {
      throw Error(ErrorCode::DuplicatePair, where + ": " + p.id());
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_pairs_jsonl(const std::filesystem::path& path, std::span<const PairRecord> pairs) {
  std::ostringstream out;
  for (const auto& p : pairs) {
    nlohmann::json j = {{"protein_id", p.protein_id}, {"label", p.positive ? 1 : 0}};
    if (!p.peptide_helm.empty()) {
      j["peptide_helm"] = p.peptide_helm;
    } else {
      j["peptide_key"] = p.peptide_key;
    }
    if (!p.acsm.empty()) j["acsm"] = p.acsm;
    out << j.dump() << '\n';
  }
  io::write_file_atomic(path, out.str());
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Train: return "train";
    case Role::Val: return "val";
    case Role::Test: return "test";
  }
  return "train";
}

std::vector<std::string> DatasetSplit::dropped() const {
  std::set<std::string> all;
  for (const auto& f : folds) all.insert(f.dropped.begin(), f.dropped.end());
  return {all.begin(), all.end()};
}

std::optional<Role> DatasetSplit::role(std::size_t fold, std::string_view id) const {
  const auto& f = folds.at(fold);
  auto has = [&](const std::vector<std::string>& v) {
    return std::binary_search(v.begin(), v.end(), id);
  };
  if (has(f.test)) return Role::Test;
  if (has(f.val)) return Role::Val;
  if (has(f.train)) return Role::Train;
  return std::nullopt;
}

nlohmann::json to_json(const DatasetSplit& split) {
  nlohmann::json folds = nlohmann::json::object();
  for (std::size_t i = 0; i < split.folds.size(); ++i) {
    const auto& f = split.folds[i];
    folds[std::to_string(i)] = {
        {"train", f.train}, {"val", f.val}, {"test", f.test}, {"dropped", f.dropped}};
  }
  nlohmann::json j = {{"strategy", split.strategy},
                      {"fold_count", split.folds.size()},
                      {"folds", folds},
                      {"dropped", split.dropped()}};
  if (split.strategy == "cluster") {
    j["balance_fallback"] = split.balance_fallback;
    j["fold_weights"] = split.fold_weights;
  }
  return j;
}

DatasetSplit split_from_json(const nlohmann::json& j) {
  DatasetSplit s;
  try {
    s.strategy = j.value("strategy", "");
    const auto k = j.at("fold_count").get<std::size_t>();
    s.folds.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      const auto& f = j.at("folds").at(std::to_string(i));
      s.folds[i].train = f.at("train").get<std::vector<std::string>>();
      s.folds[i].val = f.at("val").get<std::vector<std::string>>();
      s.folds[i].test = f.at("test").get<std::vector<std::string>>();
      if (f.contains("dropped")) s.folds[i].dropped = f.at("dropped").get<std::vector<std::string>>();
      for (auto* v : {&s.folds[i].train, &s.folds[i].val, &s.folds[i].test, &s.folds[i].dropped}) {
        std::sort(v->begin(), v->end());
      }
    }
    s.balance_fallback = j.value("balance_fallback", false);
    if (j.contains("fold_weights")) s.fold_weights = j.at("fold_weights").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed split manifest: ") + e.what());
  }
  return s;
}

namespace {

void sort_fold(Fold& f) {
  for (auto* v : {&f.train, &f.val, &f.test, &f.dropped}) std::sort(v->begin(), v->end());
}

DatasetSplit chunked_split(std::vector<std::string> ids, std::size_t k, double val_fraction,
                           std::uint64_t seed, std::string strategy) {
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "fold count must be at least 2");
  if (k > ids.size()) {
    throw Error(ErrorCode::InvalidArgument, "fold count " + std::to_string(k) +
                                                " exceeds record count " +
                                                std::to_string(ids.size()));
  }
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw Error(ErrorCode::InvalidArgument, "val_fraction must be in [0, 1)");
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw Error(ErrorCode::InvalidArgument, "duplicate record id in split input");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  const std::size_t n = ids.size();
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  DatasetSplit split;
  split.strategy = std::move(strategy);
  split.folds.resize(k);
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t lo = f * n / k;
    const std::size_t hi = (f + 1) * n / k;
    Fold& fold = split.folds[f];
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= lo && i < hi) {
        fold.test.push_back(ids[i]);
      } else {
        rest.push_back(ids[i]);
      }
    }
    if (n_val > rest.size()) throw Error(ErrorCode::InvalidArgument, "val_fraction too large");
    std::mt19937_64 fold_rng(corpus::derive_seed(seed, f + 1));
    std::shuffle(rest.begin(), rest.end(), fold_rng);
    fold.val.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
    fold.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
    sort_fold(fold);
  }
  return split;
}

}  // namespace

DatasetSplit make_kfold_splits(std::vector<std::string> ids, std::size_t k, double val_fraction,
                               std::uint64_t seed) {
  return chunked_split(std::move(ids), k, val_fraction, seed, "kfold");
}

DatasetSplit make_random_pair_split(std::span<const PairRecord> pairs, std::size_t k,
                                    double val_fraction, std::uint64_t seed) {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& p : pairs) {
    if (!seen.insert(p.id()).second) throw Error(ErrorCode::DuplicatePair, p.id());
    ids.push_back(p.id());
  }
  return chunked_split(std::move(ids), k, val_fraction, seed, "random-pair");
}

NegativeSample sample_negatives(std::span<const PairRecord> positives, std::size_t ratio,
                                std::uint64_t seed) {
  std::map<std::string, std::string> peptide_helm;
  std::set<std::string> proteins_set;
  std::set<std::pair<std::string, std::string>> known;
  for (const auto& p : positives) {
    peptide_helm.emplace(p.peptide_key, p.peptide_helm);
    proteins_set.insert(p.protein_id);
    known.emplace(p.peptide_key, p.protein_id);
  }
  std::vector<std::string> peptides;
  for (const auto& [k, h] : peptide_helm) peptides.push_back(k);
  const std::vector<std::string> proteins(proteins_set.begin(), proteins_set.end());

  const std::size_t space = peptides.size() * proteins.size();
  const std::size_t available = space - known.size();
  const std::size_t target = ratio * known.size();

  NegativeSample out;
  out.saturated = target > available;
  std::mt19937_64 rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> chosen;
  if (target * 2 > available) {
    std::vector<std::pair<std::size_t, std::size_t>> all;
    all.reserve(available);
    for (std::size_t a = 0; a < peptides.size(); ++a) {
      for (std::size_t b = 0; b < proteins.size(); ++b) {
        if (!known.count({peptides[a], proteins[b]})) all.emplace_back(a, b);
      }
    }
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(std::min(target, all.size()));
    chosen = std::move(all);
  } else {
    std::set<std::pair<std::size_t, std::size_t>> taken;
    std::uniform_int_distribution<std::size_t> pick_pep(0, peptides.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_prot(0, proteins.size() - 1);
    while (chosen.size() < target) {
      const std::size_t a = pick_pep(rng);
      const std::size_t b = pick_prot(rng);
      if (known.count({peptides[a], proteins[b]})) continue;
      if (!taken.emplace(a, b).second) continue;
      chosen.emplace_back(a, b);
    }
  }
  out.pairs.reserve(chosen.size());
  for (const auto& [a, b] : chosen) {
    PairRecord p;
    p.peptide_key = peptides[a];
    p.peptide_helm = peptide_helm[peptides[a]];
    p.protein_id = proteins[b];
    p.positive = false;
    out.pairs.push_back(std::move(p));
  }
  return out;
}

PairClusters cluster_pairs(std::span<const PairRecord> pairs, std::size_t dims,
                           std::size_t clusters, std::uint64_t seed) {
  std::vector<std::size_t> rows;
  std::size_t width = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].acsm.empty()) continue;
    if (width == 0) width = pairs[i].acsm.size();
    if (pairs[i].acsm.size() != width) {
      throw Error(ErrorCode::ShapeMismatch, "acsm vectors differ in length at " + pairs[i].id());
    }
    rows.push_back(i);
  }
  if (rows.size() < clusters) {
    throw Error(ErrorCode::InsufficientData,
                std::to_string(rows.size()) + " pairs with vectors for " +
                    std::to_string(clusters) + " clusters");
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = pairs[rows[r]].acsm[c];
    }
  }
  const auto reduced = clustering::pca_reduce(x, std::min(dims, width));
  const auto km = clustering::kmeans_cluster(reduced.projected, clusters, seed);
  PairClusters out;
  out.labels.assign(pairs.size(), -1);
  for (std::size_t r = 0; r < rows.size(); ++r) out.labels[rows[r]] = km.labels[r];
  out.centroids = km.centroids;
  return out;
}

std::vector<int> inherit_cluster_labels(std::span<const PairRecord> pairs,
                                        std::vector<int> labels) {
  if (labels.size() != pairs.size()) {
    throw Error(ErrorCode::ShapeMismatch, "cluster labels do not match pairs");
  }
  std::map<std::string, std::map<int, std::size_t>> votes;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (labels[i] >= 0) ++votes[pairs[i].protein_id][labels[i]];
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (labels[i] >= 0) continue;
    auto it = votes.find(pairs[i].protein_id);
    if (it == votes.end()) {
      throw Error(ErrorCode::MissingClusterLabel,
                  "protein " + pairs[i].protein_id + " has no clustered pair");
    }
    int best = -1;
    std::size_t best_count = 0;
    for (const auto& [label, count] : it->second) {  // ascending label
      if (count > best_count) {
        best = label;
        best_count = count;
      }
    }
    labels[i] = best;
  }
  return labels;
}

DatasetSplit make_cluster_split(std::span<const PairRecord> pairs,
                                std::span<const int> cluster_labels,
                                const Eigen::MatrixXd& centroids, std::size_t k,
                                double max_dev, double val_fraction, std::uint64_t seed) {
  const auto labels = inherit_cluster_labels(
      pairs, std::vector<int>(cluster_labels.begin(), cluster_labels.end()));
  const auto n_clusters = static_cast<std::size_t>(centroids.rows());
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "fold count must be at least 2");
  if (k > n_clusters) throw Error(ErrorCode::InvalidArgument, "more folds than clusters");
  {
    std::set<std::string> seen;
    for (const auto& p : pairs) {
      if (!seen.insert(p.id()).second) throw Error(ErrorCode::DuplicatePair, p.id());
    }
  }
  std::vector<double> weight(n_clusters, 0.0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= n_clusters) {
      throw Error(ErrorCode::InvalidArgument, "cluster label out of range");
    }
    weight[static_cast<std::size_t>(l)] += 1.0;
  }
  const auto groups = clustering::constrained_kmeans(centroids, weight, k, max_dev, seed);
  const double total = static_cast<double>(pairs.size());

  DatasetSplit split;
  split.strategy = "cluster";
  split.balance_fallback = groups.fallback;
  split.fold_weights = groups.group_weight;
  split.folds.resize(k);

  for (std::size_t f = 0; f < k; ++f) {
    std::vector<Role> cluster_role(n_clusters, Role::Train);
    std::vector<std::size_t> others;
    for (std::size_t c = 0; c < n_clusters; ++c) {
      if (static_cast<std::size_t>(groups.group[c]) == f) {
        cluster_role[c] = Role::Test;
      } else {
        others.push_back(c);
      }
    }
    std::mt19937_64 rng(corpus::derive_seed(seed, f + 1));
    std::shuffle(others.begin(), others.end(), rng);
    const double val_target = val_fraction * total;
    double val_weight = 0.0;
    for (std::size_t c : others) {
      if (std::abs(val_weight + weight[c] - val_target) < std::abs(val_weight - val_target)) {
        cluster_role[c] = Role::Val;
        val_weight += weight[c];
      }
    }

    // per protein counts of train / val / test pairs
    std::map<std::string, std::array<std::size_t, 3>> counts;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto r = cluster_role[static_cast<std::size_t>(labels[i])];
      ++counts[pairs[i].protein_id][static_cast<std::size_t>(r)];
    }
    std::map<std::string, Role> protein_role;
    for (const auto& [protein, c] : counts) {
      Role best = Role::Test;
      for (Role r : {Role::Val, Role::Train}) {  // priority order after test
        if (c[static_cast<std::size_t>(r)] > c[static_cast<std::size_t>(best)]) best = r;
      }
      protein_role[protein] = best;
    }
    Fold& fold = split.folds[f];
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto r = cluster_role[static_cast<std::size_t>(labels[i])];
      const auto id = pairs[i].id();
      if (r != protein_role[pairs[i].protein_id]) {
        fold.dropped.push_back(id);
        continue;
      }
      switch (r) {
        case Role::Train: fold.train.push_back(id); break;
        case Role::Val: fold.val.push_back(id); break;
        case Role::Test: fold.test.push_back(id); break;
      }
    }
    sort_fold(fold);
  }
  return split;
}

}  // namespace helmlm::splits
