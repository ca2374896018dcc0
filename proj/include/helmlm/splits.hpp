// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace helmlm::splits {

struct PairRecord {
  std::string peptide_key;
  std::string peptide_helm;  // may be empty for synthetic pairs
  std::string protein_id;
  bool positive = true;
  std::vector<double> acsm;  // empty when absent

  std::string id() const;
};

/// "<protein>::<peptide key>", the id used in split manifests.
std::string pair_id(std::string_view protein_id, std::string_view peptide_key);

/// JSON-lines {peptide_helm, protein_id, label, acsm?}. Label accepts
/// 0/1, true/false or "positive"/"negative". DuplicatePair on repeats.
std::vector<PairRecord> load_pairs(const std::filesystem::path& path);
void write_pairs_jsonl(const std::filesystem::path& path, std::span<const PairRecord> pairs);

enum class Role : std::uint8_t { Train, Val, Test };
std::string_view to_string(Role r);

struct Fold {
  std::vector<std::string> train, val, test, dropped;
};

struct DatasetSplit {
  std::string strategy;
  std::vector<Fold> folds;
  bool balance_fallback = false;          // cluster split only
  std::vector<double> fold_weights;       // cluster split: pairs per test fold
  std::vector<std::string> dropped() const;  // union over folds, sorted

  std::size_t fold_count() const { return folds.size(); }
  /// Role of id in fold, or nullopt when absent or dropped.
  std::optional<Role> role(std::size_t fold, std::string_view id) const;
};

nlohmann::json to_json(const DatasetSplit& split);
DatasetSplit split_from_json(const nlohmann::json& j);

/// Records are sorted before shuffling, so input order is irrelevant.
/// Per fold: test is one of k near-equal chunks, val is round(val_fraction * N)
/// of the rest, train the remainder.
DatasetSplit make_kfold_splits(std::vector<std::string> ids, std::size_t k,
                               double val_fraction, std::uint64_t seed);

/// Same partitioning over pair ids; duplicate pairs raise DuplicatePair.
DatasetSplit make_random_pair_split(std::span<const PairRecord> pairs, std::size_t k,
                                    double val_fraction, std::uint64_t seed);

struct NegativeSample {
  std::vector<PairRecord> pairs;
  bool saturated = false;  // fewer than ratio * positives were available
};

/// Random (peptide, protein) pairings over the peptides and proteins seen in
/// positives, excluding known positives and repeats.
NegativeSample sample_negatives(std::span<const PairRecord> positives, std::size_t ratio,
                                std::uint64_t seed);

struct PairClusters {
  std::vector<int> labels;    // per pair, -1 when the pair had no vector
  Eigen::MatrixXd centroids;  // clusters x dims
};

/// PCA to `dims` then k-means on the pairs that carry acsm vectors.
PairClusters cluster_pairs(std::span<const PairRecord> pairs, std::size_t dims,
                           std::size_t clusters, std::uint64_t seed);

/// Fills -1 labels with the protein's most common cluster among labelled
/// pairs (ties: smallest label). MissingClusterLabel if a protein has none.
std::vector<int> inherit_cluster_labels(std::span<const PairRecord> pairs,
                                        std::vector<int> labels);

/// Cluster-based split: clusters, weighted by pair count, are balanced across
/// k test folds; the remaining clusters of each fold go to val (about
/// val_fraction of all pairs) or train; proteins present in several roles move
/// to their majority role (ties test > val > train) and their other pairs are
/// dropped.
DatasetSplit make_cluster_split(std::span<const PairRecord> pairs,
                                std::span<const int> cluster_labels,
                                const Eigen::MatrixXd& centroids, std::size_t k,
                                double max_dev, double val_fraction, std::uint64_t seed);

}  // namespace helmlm::splits
