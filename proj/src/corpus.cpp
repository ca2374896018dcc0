// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include "helmlm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "helmlm/errors.hpp"
#include "helmlm/helm.hpp"
#include "helmlm/io.hpp"

namespace helmlm::corpus {

using tokenizer::Vocabulary;

std::string_view to_string(Source s) {
  switch (s) {
    case Source::CycPeptMPDB: return "CycPeptMPDB";
    case Source::Propedia: return "Propedia";
    case Source::ChEMBL: return "ChEMBL";
    case Source::Synthetic: return "Synthetic";
  }
  return "Synthetic";
}

std::optional<Source> source_from_string(std::string_view name) {
  std::string lower;
  for (char c : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower.empty() || lower == "synthetic") return Source::Synthetic;
  if (lower == "cycpeptmpdb") return Source::CycPeptMPDB;
  if (lower == "propedia") return Source::Propedia;
  if (lower == "chembl") return Source::ChEMBL;
  return std::nullopt;
}

std::optional<double> CorpusRecord::label(const std::string& name) const {
  auto it = labels.find(name);
  if (it == labels.end()) return std::nullopt;
  return it->second;
}

CorpusRecord make_record(std::string helm, Source source,
                         std::map<std::string, double> labels) {
  CorpusRecord r;
  r.key = helm::canonical_key(helm::parse_helm(helm));
  r.helm = std::move(helm);
  r.source = source;
  r.labels = std::move(labels);
  return r;
}

namespace {

CorpusRecord record_from_row(const nlohmann::json& row) {
  if (!row.is_object()) throw Error(ErrorCode::InvalidArgument, "row is not an object");
  std::string helm_text;
  if (row.contains("helm")) {
    helm_text = row.at("helm").get<std::string>();
  } else if (row.contains("peptide_helm")) {
    helm_text = row.at("peptide_helm").get<std::string>();
  } else {
    throw Error(ErrorCode::InvalidArgument, "row has no helm column");
  }
  Source source = Source::Synthetic;
  if (row.contains("source")) {
    const auto name = row.at("source").get<std::string>();
    auto s = source_from_string(name);
    if (!s) throw Error(ErrorCode::InvalidArgument, "unknown source '" + name + "'");
    source = *s;
  }
  std::map<std::string, double> labels;
  for (const auto& [name, value] : row.items()) {
    if (name == "helm" || name == "peptide_helm" || name == "source" || name == "key") continue;
    if (value.is_number()) {
      labels[name] = value.get<double>();
    } else if (value.is_string() && !value.get_ref<const std::string&>().empty()) {
      try {
        labels[name] = io::as_number(value, name);
      } catch (const Error&) {
        // non-numeric metadata column
      }
    }
  }
  return make_record(std::move(helm_text), source, std::move(labels));
}

}  // namespace

LoadReport load_corpus(const std::filesystem::path& path, bool strict) {
  LoadReport report;
  const auto rows = io::read_records(path);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    try {
      report.records.push_back(record_from_row(rows[i]));
    } catch (const Error& e) {
      if (strict) throw;
      report.rejected.emplace_back(i, e.what());
    } catch (const nlohmann::json::exception& e) {
      if (strict) throw Error(ErrorCode::InvalidArgument, e.what());
      report.rejected.emplace_back(i, e.what());
    }
  }
  return report;
}

void write_corpus_jsonl(const std::filesystem::path& path,
                        std::span<const CorpusRecord> records) {
  std::ostringstream out;
  for (const auto& r : records) {
    nlohmann::json j = {{"key", r.key}, {"helm", r.helm}, {"source", to_string(r.source)}};
    for (const auto& [name, value] : r.labels) j[name] = value;
    out << j.dump() << '\n';
  }
  io::write_file_atomic(path, out.str());
}

std::vector<CorpusRecord> deduplicate(std::span<const CorpusRecord> records) {
  // First occurrence wins within a source, so only a strictly better source
  // replaces an entry.
  std::map<std::string, const CorpusRecord*> best;
  for (const auto& r : records) {
    auto [it, inserted] = best.emplace(r.key, &r);
    if (!inserted && r.source < it->second->source) it->second = &r;
  }
  std::vector<CorpusRecord> out;
  out.reserve(best.size());
  for (const auto& [key, r] : best) out.push_back(*r);
  return out;
}

std::vector<CorpusRecord> filter_outliers(std::span<const CorpusRecord> records,
                                          double threshold, const std::string& label) {
  std::vector<CorpusRecord> out;
  for (const auto& r : records) {
    auto v = r.label(label);
    if (!v) throw Error(ErrorCode::MissingLabel, "record " + r.key + " has no " + label);
    if (*v <= threshold) continue;
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::size_t sample_span_length(std::mt19937_64& rng, double p, std::size_t max_span) {
  std::geometric_distribution<std::size_t> geo(p);  // failures before success
  return std::min(geo(rng) + 1, max_span);
}

std::vector<double> span_length_pmf(double p, std::size_t max_span) {
  std::vector<double> pmf(max_span);
  for (std::size_t l = 1; l < max_span; ++l) {
    pmf[l - 1] = std::pow(1.0 - p, static_cast<double>(l - 1)) * p;
  }
  pmf[max_span - 1] = std::pow(1.0 - p, static_cast<double>(max_span - 1));
  return pmf;
}

std::size_t mask_budget(std::size_t maskable, double rate) {
  // the epsilon absorbs 0.15 * n landing a hair under an integer
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(maskable) + 1e-9));
}

MaskedRow apply_span_mask(std::span<const TokenId> tokens, const Vocabulary& vocab,
                          std::mt19937_64& rng, const MaskingOptions& options) {
  MaskedRow row;
  row.input_ids.assign(tokens.begin(), tokens.end());
  row.target_ids.assign(tokens.begin(), tokens.end());
  row.loss_mask.assign(tokens.size(), 0);

  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!vocab.is_special(tokens[i])) maskable.push_back(i);
  }
  const std::size_t m = maskable.size();
  const std::size_t budget = mask_budget(m, options.rate);
  if (budget == 0) return row;

  const std::size_t max_span = options.span_masking ? options.max_span : 1;
  std::vector<std::uint8_t> taken(m, 0);
  struct Draw {
    std::size_t first, length, drawn;
  };
  std::vector<Draw> draws;
  std::size_t remaining = budget;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 10 * budget;

  while (remaining > 0 && attempts < max_attempts) {
    const std::size_t drawn =
        options.span_masking ? sample_span_length(rng, options.geometric_p, max_span) : 1;
    const std::size_t len = std::min(drawn, remaining);
    // the length stays fixed while we look for a free start, so accepted
    // lengths keep the sampling distribution
    bool placed = false;
    while (!placed && attempts < max_attempts) {
      ++attempts;
      std::uniform_int_distribution<std::size_t> start_dist(0, m - len);
      const std::size_t s = start_dist(rng);
      if (std::any_of(taken.begin() + static_cast<std::ptrdiff_t>(s),
                      taken.begin() + static_cast<std::ptrdiff_t>(s + len),
                      [](std::uint8_t t) { return t != 0; })) {
        continue;
      }
      std::fill_n(taken.begin() + static_cast<std::ptrdiff_t>(s), len, 1);
      draws.push_back({s, len, drawn});
      remaining -= len;
      placed = true;
    }
  }
  // deterministic fill; drawn length 0 marks these spans
  for (std::size_t i = 0; i < m && remaining > 0;) {
    if (taken[i]) {
      ++i;
      continue;
    }
    std::size_t len = 0;
    while (i + len < m && !taken[i + len] && len < remaining && len < max_span) ++len;
    std::fill_n(taken.begin() + static_cast<std::ptrdiff_t>(i), len, 1);
    draws.push_back({i, len, 0});
    remaining -= len;
    i += len;
  }

  const auto regular = vocab.regular_ids();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& d : draws) {
    MaskedSpan span;
    span.start = maskable[d.first];
    span.length = d.length;
    span.drawn_length = d.drawn;
    const double u = unit(rng);
    if (u < options.mask_prob) {
      span.replacement = MaskedSpan::Replacement::Mask;
    } else if (u < options.mask_prob + options.random_prob && !regular.empty()) {
      span.replacement = MaskedSpan::Replacement::Random;
    } else {
      span.replacement = MaskedSpan::Replacement::Keep;
    }
    for (std::size_t k = 0; k < d.length; ++k) {
      const std::size_t pos = maskable[d.first + k];
      row.loss_mask[pos] = 1;
      switch (span.replacement) {
        case MaskedSpan::Replacement::Mask:
          row.input_ids[pos] = vocab.mask();
          break;
        case MaskedSpan::Replacement::Random: {
          std::uniform_int_distribution<std::size_t> pick(0, regular.size() - 1);
          row.input_ids[pos] = regular[pick(rng)];
          break;
        }
        case MaskedSpan::Replacement::Keep:
          break;
      }
    }
    row.spans.push_back(span);
  }
  std::sort(row.spans.begin(), row.spans.end(),
            [](const MaskedSpan& a, const MaskedSpan& b) { return a.start < b.start; });
  return row;
}

MaskedRow apply_span_mask(std::span<const TokenId> tokens, const Vocabulary& vocab,
                          std::uint64_t seed, const MaskingOptions& options) {
  std::mt19937_64 rng(seed);
  return apply_span_mask(tokens, vocab, rng, options);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

}  // namespace helmlm::corpus
