// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "helmlm/batch.hpp"
#include "helmlm/tokenizer.hpp"

namespace helmlm::corpus {

// Declaration order is dedup priority, highest first.
enum class Source : std::uint8_t { CycPeptMPDB, Propedia, ChEMBL, Synthetic };

std::string_view to_string(Source s);
/// Case-insensitive; empty maps to Synthetic.
std::optional<Source> source_from_string(std::string_view name);

struct CorpusRecord {
  std::string key;
  std::string helm;
  Source source = Source::Synthetic;
  std::map<std::string, double> labels;

  std::optional<double> label(const std::string& name) const;
};

/// Parses the HELM text and fills the canonical key.
CorpusRecord make_record(std::string helm, Source source,
                         std::map<std::string, double> labels = {});

struct LoadReport {
  std::vector<CorpusRecord> records;
  // line index (0-based, data rows only) and message for rows that failed
  std::vector<std::pair<std::size_t, std::string>> rejected;
};

/// Reads CSV / JSON-lines / plain text with columns {helm, source, labels...}.
/// Every numeric column other than helm/source becomes a label. Rows that do
/// not parse are collected in `rejected` unless strict, in which case the
/// first failure is rethrown.
LoadReport load_corpus(const std::filesystem::path& path, bool strict = false);
void write_corpus_jsonl(const std::filesystem::path& path,
                        std::span<const CorpusRecord> records);

/// Keeps the first occurrence per (source, key), then the highest-priority
/// source per key. Output is ordered by key.
std::vector<CorpusRecord> deduplicate(std::span<const CorpusRecord> records);

/// Drops records whose label <= threshold. MissingLabel if any record lacks it.
std::vector<CorpusRecord> filter_outliers(std::span<const CorpusRecord> records,
                                          double threshold = -10.0,
                                          const std::string& label = "log_papp");

// ---------------------------------------------------------------------------
// Masking

struct MaskingOptions {
  double rate = 0.15;
  double geometric_p = 0.2;
  std::size_t max_span = 5;
  bool span_masking = true;  // false: single-token units
  double mask_prob = 0.8;
  double random_prob = 0.1;
};

/// Clipped geometric on {1, 2, ...}: P(L) = (1-p)^(L-1) p, tail mass at max_span.
std::size_t sample_span_length(std::mt19937_64& rng, double p, std::size_t max_span);
/// Exact probabilities of the clipped distribution, index 0 = length 1.
std::vector<double> span_length_pmf(double p, std::size_t max_span);

/// floor(rate * maskable) for the given count.
std::size_t mask_budget(std::size_t maskable, double rate);

MaskedRow apply_span_mask(std::span<const TokenId> tokens,
                          const tokenizer::Vocabulary& vocab, std::mt19937_64& rng,
                          const MaskingOptions& options = {});
MaskedRow apply_span_mask(std::span<const TokenId> tokens,
                          const tokenizer::Vocabulary& vocab, std::uint64_t seed,
                          const MaskingOptions& options = {});

/// Mixes a base seed with stream indices (epoch, row, ...) into a new seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace helmlm::corpus
