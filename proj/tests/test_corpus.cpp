// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "helmlm/clustering.hpp"
#include "helmlm/corpus.hpp"
#include "helmlm/errors.hpp"
#include "helmlm/io.hpp"
#include "helmlm/splits.hpp"

namespace helmlm::corpus {
namespace {

namespace fs = std::filesystem;
using splits::PairRecord;

tokenizer::Vocabulary letters() {
  std::vector<char> chars;
  for (char c = 'A'; c <= 'T'; ++c) chars.push_back(c);
  return tokenizer::Vocabulary(chars);
}

std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> t(n);
  for (auto& v : t) v = static_cast<TokenId>(rng() % vocab);
  return t;
}

fs::path temp_file(const std::string& name, const std::string& content) {
  const auto p = fs::temp_directory_path() / name;
  std::ofstream(p) << content;
  return p;
}

TEST(Io, CsvQuotedFields) {
  auto f = io::split_csv_line(R"(a,"b,c","d ""e""",)");
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f[1], "b,c");
  EXPECT_EQ(f[2], "d \"e\"");
  EXPECT_EQ(f[3], "");
  EXPECT_EQ(io::split_csv_line(io::csv_escape("x,\"y\""))[0], "x,\"y\"");
}

TEST(Deduplicate, CrossSourcePriority) {
  std::vector<CorpusRecord> recs = {
      make_record("PEPTIDE1{A.G}$$$$", Source::ChEMBL),
      make_record("PEPTIDE2{A.G}$$$$V2.0", Source::CycPeptMPDB),
      make_record("PEPTIDE1{A.G}$$$$", Source::Propedia),
  };
  auto out = deduplicate(recs);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].source, Source::CycPeptMPDB);
}

TEST(Deduplicate, FirstOccurrenceWithinSource) {
  std::vector<CorpusRecord> recs = {
      make_record("PEPTIDE1{A.G}$$$$", Source::ChEMBL, {{"log_papp", -5.0}}),
      make_record("PEPTIDE1{A.G}$$$$", Source::ChEMBL, {{"log_papp", -6.0}}),
      make_record("PEPTIDE1{G.A}$$$$", Source::Synthetic),
  };
  auto out = deduplicate(recs);
  ASSERT_EQ(out.size(), 2u);
  for (const auto& r : out) {
    if (r.source == Source::ChEMBL) EXPECT_EQ(r.label("log_papp"), -5.0);
  }
}

TEST(Deduplicate, Idempotent) {
  std::mt19937_64 rng(1);
  std::vector<CorpusRecord> recs;
  const std::vector<std::string> seqs = {"PEPTIDE1{A.G}$$$$", "PEPTIDE1{A.C}$$$$",
                                         "PEPTIDE1{A.G.C}$PEPTIDE1,PEPTIDE1,3:R2-1:R1$$$",
                                         "PEPTIDE1{A.G.C}$PEPTIDE1,PEPTIDE1,1:R1-3:R2$$$"};
  for (int i = 0; i < 40; ++i) {
    recs.push_back(make_record(seqs[rng() % seqs.size()], static_cast<Source>(rng() % 4)));
  }
  auto once = deduplicate(recs);
  auto twice = deduplicate(once);
  ASSERT_EQ(once.size(), 3u);
  ASSERT_EQ(twice.size(), once.size());
  for (std::size_t i = 0; i < once.size(); ++i) {
    EXPECT_EQ(once[i].key, twice[i].key);
    EXPECT_EQ(once[i].source, twice[i].source);
  }
}

TEST(FilterOutliers, InclusiveThreshold) {
  std::vector<CorpusRecord> recs = {
      make_record("PEPTIDE1{A}$$$$", Source::CycPeptMPDB, {{"log_papp", -10.0}}),
      make_record("PEPTIDE1{G}$$$$", Source::CycPeptMPDB, {{"log_papp", -9.99}}),
      make_record("PEPTIDE1{C}$$$$", Source::CycPeptMPDB, {{"log_papp", -11.0}}),
  };
  auto out = filter_outliers(recs);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].label("log_papp"), -9.99);
}

TEST(FilterOutliers, MissingLabel) {
  std::vector<CorpusRecord> recs = {make_record("PEPTIDE1{A}$$$$", Source::ChEMBL)};
  try {
    filter_outliers(recs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingLabel);
  }
}

TEST(LoadCorpus, CsvJsonlAndText) {
  auto csv = temp_file("helmlm_corpus.csv",
                       "helm,source,log_papp,name\n"
                       "\"PEPTIDE1{A.G}$$$$\",CycPeptMPDB,-5.5,x1\n"
                       "PEPTIDE1{A.G,ChEMBL,-4,x2\n"
                       "PEPTIDE1{C}$$$$,chembl,,x3\n");
  auto rep = load_corpus(csv);
  ASSERT_EQ(rep.records.size(), 2u);
  EXPECT_EQ(rep.rejected.size(), 1u);
  EXPECT_EQ(rep.records[0].label("log_papp"), -5.5);
  EXPECT_FALSE(rep.records[1].label("log_papp").has_value());
  EXPECT_FALSE(rep.records[0].label("name").has_value());
  EXPECT_THROW(load_corpus(csv, true), Error);

  auto jsonl = fs::temp_directory_path() / "helmlm_corpus_out.jsonl";
  write_corpus_jsonl(jsonl, rep.records);
  auto back = load_corpus(jsonl, true);
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_EQ(back.records[0].key, rep.records[0].key);
  EXPECT_EQ(back.records[0].source, Source::CycPeptMPDB);
  EXPECT_EQ(back.records[0].labels, rep.records[0].labels);

  auto txt = temp_file("helmlm_corpus.txt", "PEPTIDE1{A}$$$$\n\nPEPTIDE1{G}$$$$\n");
  EXPECT_EQ(load_corpus(txt, true).records.size(), 2u);
  for (const auto& p : {csv, jsonl, txt}) fs::remove(p);
}

// ---------------------------------------------------------------------------

TEST(SpanMask, ExactBudget) {
  const auto vocab = letters();
  std::mt19937_64 rng(2);
  const auto tokens = random_tokens(rng, 100, 20);
  auto row = apply_span_mask(tokens, vocab, 7);
  EXPECT_EQ(std::count(row.loss_mask.begin(), row.loss_mask.end(), 1), 15);
  EXPECT_EQ(row.target_ids, tokens);
}

TEST(SpanMask, BudgetExamples) {
  EXPECT_EQ(mask_budget(100, 0.15), 15u);
  EXPECT_EQ(mask_budget(20, 0.15), 3u);
  EXPECT_EQ(mask_budget(6, 0.15), 0u);
  EXPECT_EQ(mask_budget(7, 0.15), 1u);
  EXPECT_EQ(mask_budget(60, 0.15), 9u);
}

TEST(SpanMask, ZeroBudgetLeavesSequence) {
  const auto vocab = letters();
  std::vector<TokenId> tokens = {1, 2, 3};
  auto row = apply_span_mask(tokens, vocab, 1);
  EXPECT_TRUE(row.spans.empty());
  EXPECT_EQ(row.input_ids, tokens);
  EXPECT_EQ(std::count(row.loss_mask.begin(), row.loss_mask.end(), 1), 0);
}

TEST(SpanMask, SpecialsNeverMasked) {
  const auto vocab = letters();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto tokens = random_tokens(rng, 40, 20);
    for (std::size_t i = 0; i < tokens.size(); i += 5) tokens[i] = vocab.unk();
    tokens.push_back(vocab.pad());
    tokens.push_back(vocab.pad());
    auto row = apply_span_mask(tokens, vocab, rng);
    std::size_t masked = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (row.loss_mask[i]) {
        ++masked;
        EXPECT_FALSE(vocab.is_special(tokens[i]));
      }
    }
    EXPECT_EQ(masked, mask_budget(32, 0.15));
  }
}

TEST(SpanMask, Deterministic) {
  const auto vocab = letters();
  std::mt19937_64 rng(4);
  const auto tokens = random_tokens(rng, 80, 20);
  auto a = apply_span_mask(tokens, vocab, 99);
  auto b = apply_span_mask(tokens, vocab, 99);
  EXPECT_EQ(a.input_ids, b.input_ids);
  EXPECT_EQ(a.loss_mask, b.loss_mask);
  auto c = apply_span_mask(tokens, vocab, 100);
  EXPECT_NE(a.loss_mask, c.loss_mask);
}

TEST(SpanMask, ReplacementsPerSpan) {
  const auto vocab = letters();
  std::mt19937_64 rng(5);
  std::map<MaskedSpan::Replacement, int> counts;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto tokens = random_tokens(rng, 100, 20);
    auto row = apply_span_mask(tokens, vocab, rng);
    for (const auto& s : row.spans) {
      ++counts[s.replacement];
      for (std::size_t k = 0; k < s.length; ++k) {
        const auto pos = s.start + k;
        ASSERT_TRUE(row.loss_mask[pos]);
        switch (s.replacement) {
          case MaskedSpan::Replacement::Mask: EXPECT_EQ(row.input_ids[pos], vocab.mask()); break;
          case MaskedSpan::Replacement::Keep: EXPECT_EQ(row.input_ids[pos], tokens[pos]); break;
          case MaskedSpan::Replacement::Random: EXPECT_FALSE(vocab.is_special(row.input_ids[pos])); break;
        }
      }
    }
  }
  const double total = counts[MaskedSpan::Replacement::Mask] + counts[MaskedSpan::Replacement::Random] +
                       counts[MaskedSpan::Replacement::Keep];
  EXPECT_NEAR(counts[MaskedSpan::Replacement::Mask] / total, 0.8, 0.01);
  EXPECT_NEAR(counts[MaskedSpan::Replacement::Random] / total, 0.1, 0.01);
  EXPECT_NEAR(counts[MaskedSpan::Replacement::Keep] / total, 0.1, 0.01);
}

TEST(SpanMask, ClippedGeometricPmf) {
  const auto pmf = span_length_pmf(0.2, 5);
  ASSERT_EQ(pmf.size(), 5u);
  EXPECT_NEAR(pmf[0], 0.2, 1e-15);
  EXPECT_NEAR(pmf[1], 0.16, 1e-15);
  EXPECT_NEAR(pmf[2], 0.128, 1e-15);
  EXPECT_NEAR(pmf[3], 0.1024, 1e-15);
  EXPECT_NEAR(pmf[4], 0.4096, 1e-15);
  double s = 0;
  for (double p : pmf) s += p;
  EXPECT_NEAR(s, 1.0, 1e-15);
}

TEST(SpanMask, StatisticsOverManySequences) {
  const auto vocab = letters();
  std::mt19937_64 rng(6);
  std::size_t masked = 0, total = 0;
  std::vector<double> hist(5, 0.0);
  for (int i = 0; i < 10000; ++i) {
    const auto tokens = random_tokens(rng, 100, 20);
    auto row = apply_span_mask(tokens, vocab, derive_seed(42, static_cast<std::uint64_t>(i)));
    masked += static_cast<std::size_t>(std::count(row.loss_mask.begin(), row.loss_mask.end(), 1));
    total += tokens.size();
    for (const auto& s : row.spans) {
      if (s.drawn_length > 0) hist[s.drawn_length - 1] += 1;
    }
  }
  const double frac = static_cast<double>(masked) / static_cast<double>(total);
  EXPECT_GE(frac, 0.145);
  EXPECT_LE(frac, 0.155);
  const auto pmf = span_length_pmf(0.2, 5);
  double n = 0;
  for (double h : hist) n += h;
  double chi2 = 0;
  for (std::size_t l = 0; l < 5; ++l) chi2 += std::pow(hist[l] - n * pmf[l], 2) / (n * pmf[l]);
  boost::math::chi_squared dist(4);
  EXPECT_LT(chi2, boost::math::quantile(dist, 0.99)) << "chi2 = " << chi2;
}

TEST(SpanMask, TokenLevelWhenSpansDisabled) {
  const auto vocab = letters();
  std::mt19937_64 rng(7);
  MaskingOptions opt;
  opt.span_masking = false;
  const auto tokens = random_tokens(rng, 100, 20);
  auto row = apply_span_mask(tokens, vocab, rng, opt);
  EXPECT_EQ(row.spans.size(), 15u);
  for (const auto& s : row.spans) EXPECT_EQ(s.length, 1u);
}

}  // namespace
}  // namespace helmlm::corpus

namespace helmlm::splits {
namespace {

namespace fs = std::filesystem;

std::vector<std::string> numbered(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("r" + std::to_string(1000 + i));
  return ids;
}

void expect_partition(const DatasetSplit& s, std::size_t n) {
  std::set<std::string> tests;
  for (const auto& f : s.folds) {
    for (const auto& id : f.test) EXPECT_TRUE(tests.insert(id).second) << "twice in test: " << id;
    std::set<std::string> roles;
    for (const auto* v : {&f.train, &f.val, &f.test}) {
      for (const auto& id : *v) EXPECT_TRUE(roles.insert(id).second) << id;
    }
    EXPECT_EQ(roles.size(), n);
  }
  EXPECT_EQ(tests.size(), n);
}

TEST(KFold, SizesAndPartition) {
  auto s = make_kfold_splits(numbered(100), 10, 0.1, 3);
  ASSERT_EQ(s.fold_count(), 10u);
  for (const auto& f : s.folds) {
    EXPECT_EQ(f.test.size(), 10u);
    EXPECT_EQ(f.val.size(), 10u);
    EXPECT_EQ(f.train.size(), 80u);
  }
  expect_partition(s, 100);
}

TEST(KFold, InputOrderIrrelevant) {
  auto ids = numbered(57);
  auto a = make_kfold_splits(ids, 10, 0.1, 5);
  std::reverse(ids.begin(), ids.end());
  auto b = make_kfold_splits(ids, 10, 0.1, 5);
  EXPECT_EQ(to_json(a), to_json(b));
  expect_partition(a, 57);
}

TEST(KFold, TooManyFolds) { EXPECT_THROW(make_kfold_splits(numbered(4), 5, 0.1, 1), Error); }

TEST(KFold, ManifestRoundTrip) {
  auto s = make_kfold_splits(numbered(30), 3, 0.1, 1);
  auto back = split_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
  EXPECT_EQ(back.role(0, s.folds[0].test[0]), Role::Test);
  EXPECT_EQ(back.role(0, "missing"), std::nullopt);
}

std::vector<PairRecord> grid_pairs(std::size_t peptides, std::size_t proteins, double density,
                                   std::mt19937_64& rng) {
  std::vector<PairRecord> out;
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t a = 0; a < peptides; ++a) {
    for (std::size_t b = 0; b < proteins; ++b) {
      if (u(rng) >= density) continue;
      PairRecord p;
      p.peptide_key = "PEPTIDE1{" + std::string(1, static_cast<char>('A' + a % 20)) + "." +
                      std::to_string(a) + "}";
      p.protein_id = "P" + std::to_string(b);
      out.push_back(p);
    }
  }
  return out;
}

TEST(RandomPairSplit, SizesAndNoOverlap) {
  std::mt19937_64 rng(1);
  std::vector<PairRecord> pairs;
  for (int i = 0; i < 100; ++i) {
    PairRecord p;
    p.peptide_key = "k" + std::to_string(i % 23);
    p.protein_id = "P" + std::to_string(i);
    pairs.push_back(p);
  }
  auto s = make_random_pair_split(pairs, 5, 0.1, 9);
  for (const auto& f : s.folds) {
    EXPECT_EQ(f.test.size(), 20u);
    EXPECT_EQ(f.val.size(), 10u);
    EXPECT_EQ(f.train.size(), 70u);
  }
  expect_partition(s, 100);
  pairs.push_back(pairs.front());
  EXPECT_THROW(make_random_pair_split(pairs, 5, 0.1, 9), Error);
}

TEST(Negatives, RatioAndExclusion) {
  std::vector<PairRecord> pos;
  // 10 positives over 5 peptides x 6 proteins
  for (int i = 0; i < 10; ++i) {
    PairRecord p;
    p.peptide_key = "pep" + std::to_string(i % 5);
    p.protein_id = "prot" + std::to_string((i * 7) % 6);
    pos.push_back(p);
  }
  std::set<std::string> pos_ids;
  for (const auto& p : pos) pos_ids.insert(p.id());
  ASSERT_EQ(pos_ids.size(), 10u);
  // ratio 4 asks for 40 but only 30 - 10 = 20 pairings exist
  auto neg = sample_negatives(pos, 4, 3);
  EXPECT_TRUE(neg.saturated);
  EXPECT_EQ(neg.pairs.size(), 20u);
  auto small = sample_negatives(pos, 1, 3);
  EXPECT_EQ(small.pairs.size(), 10u);
  std::set<std::string> seen;
  for (const auto& n : small.pairs) {
    EXPECT_FALSE(n.positive);
    EXPECT_EQ(pos_ids.count(n.id()), 0u);
    EXPECT_TRUE(seen.insert(n.id()).second);
  }
}

TEST(Negatives, FullRatioWhenRoomExists) {
  std::mt19937_64 rng(2);
  std::vector<PairRecord> pos;
  for (int i = 0; i < 10; ++i) {
    PairRecord p;
    p.peptide_key = "pep" + std::to_string(i);
    p.protein_id = "prot" + std::to_string(i % 6);
    pos.push_back(p);
  }
  auto neg = sample_negatives(pos, 4, 3);
  EXPECT_EQ(neg.pairs.size(), 40u);
  EXPECT_FALSE(neg.saturated);
  auto again = sample_negatives(pos, 4, 3);
  for (std::size_t i = 0; i < neg.pairs.size(); ++i) EXPECT_EQ(neg.pairs[i].id(), again.pairs[i].id());
}

TEST(Negatives, SaturatedCompleteBipartite) {
  std::vector<PairRecord> pos;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 4; ++b) {
      PairRecord p;
      p.peptide_key = "pep" + std::to_string(a);
      p.protein_id = "prot" + std::to_string(b);
      pos.push_back(p);
    }
  }
  auto neg = sample_negatives(pos, 4, 1);
  EXPECT_TRUE(neg.pairs.empty());
  EXPECT_TRUE(neg.saturated);
}

// ---------------------------------------------------------------------------

TEST(Pca, PlanarDataReconstructsExactly) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd basis(2, 6);
  for (int i = 0; i < basis.size(); ++i) basis(i) = n(rng);
  Eigen::MatrixXd coef(40, 2);
  for (int i = 0; i < coef.size(); ++i) coef(i) = n(rng);
  Eigen::VectorXd offset(6);
  for (int i = 0; i < 6; ++i) offset(i) = n(rng);
  Eigen::MatrixXd x = (coef * basis).rowwise() + offset.transpose();
  auto r = clustering::pca_reduce(x, 2);
  Eigen::MatrixXd recon = (r.projected * r.components).rowwise() + r.mean.transpose();
  EXPECT_LE((recon - x).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_EQ(r.available, 2u);
}

TEST(Pca, OrthonormalOrderedAndSigned) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  for (auto [rows, cols] : {std::pair{60, 10}, std::pair{8, 30}}) {
    Eigen::MatrixXd x(rows, cols);
    for (int i = 0; i < x.size(); ++i) x(i) = n(rng) * (1 + i % cols);
    const std::size_t dims = 5;
    auto r = clustering::pca_reduce(x, dims);
    Eigen::MatrixXd gram = r.components * r.components.transpose();
    EXPECT_LE((gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-10);
    for (std::size_t j = 1; j < dims; ++j) {
      EXPECT_LE(r.explained_variance(static_cast<Eigen::Index>(j)),
                r.explained_variance(static_cast<Eigen::Index>(j - 1)));
    }
    for (std::size_t j = 0; j < dims; ++j) {
      Eigen::Index arg = 0;
      r.components.row(static_cast<Eigen::Index>(j)).cwiseAbs().maxCoeff(&arg);
      EXPECT_GT(r.components(static_cast<Eigen::Index>(j), arg), 0.0);
    }
    // projected variance equals the eigenvalue
    for (std::size_t j = 0; j < dims; ++j) {
      const auto col = r.projected.col(static_cast<Eigen::Index>(j));
      EXPECT_NEAR(col.squaredNorm() / (rows - 1), r.explained_variance(static_cast<Eigen::Index>(j)),
                  1e-8 * (1 + r.explained_variance(0)));
    }
  }
}

TEST(Pca, RankDeficientPadsWithZeros) {
  Eigen::MatrixXd x(5, 4);
  x << 1, 2, 0, 0, 2, 4, 0, 0, 3, 6, 0, 0, 4, 8, 0, 0, 5, 10, 0, 0;
  auto r = clustering::pca_reduce(x, 3);
  EXPECT_EQ(r.available, 1u);
  EXPECT_EQ(r.projected.cols(), 3);
  EXPECT_EQ(r.projected.col(1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.components.row(2).cwiseAbs().maxCoeff(), 0.0);
}

Eigen::MatrixXd blobs(std::mt19937_64& rng, std::size_t per, std::vector<int>& truth) {
  std::normal_distribution<double> n(0, 0.3);
  const double centers[3][2] = {{0, 0}, {10, 0}, {0, 10}};
  Eigen::MatrixXd x(static_cast<Eigen::Index>(3 * per), 2);
  truth.clear();
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < per; ++i) {
      const auto r = static_cast<Eigen::Index>(b * per + i);
      x(r, 0) = centers[b][0] + n(rng);
      x(r, 1) = centers[b][1] + n(rng);
      truth.push_back(static_cast<int>(b));
    }
  }
  return x;
}

TEST(KMeans, SeparatedBlobsPurity) {
  std::mt19937_64 rng(5);
  std::vector<int> truth;
  auto x = blobs(rng, 30, truth);
  auto km = clustering::kmeans_cluster(x, 3, 11);
  std::map<int, std::set<int>> mapping;
  for (std::size_t i = 0; i < truth.size(); ++i) mapping[truth[i]].insert(km.labels[i]);
  std::set<int> used;
  for (const auto& [t, labels] : mapping) {
    EXPECT_EQ(labels.size(), 1u);
    used.insert(*labels.begin());
  }
  EXPECT_EQ(used.size(), 3u);
  auto again = clustering::kmeans_cluster(x, 3, 11);
  EXPECT_EQ(again.labels, km.labels);
}

TEST(KMeans, KEqualsN) {
  std::mt19937_64 rng(6);
  std::vector<int> truth;
  auto x = blobs(rng, 4, truth);
  auto km = clustering::kmeans_cluster(x, 12, 1);
  EXPECT_NEAR(km.inertia, 0.0, 1e-20);
  EXPECT_EQ(std::set<int>(km.labels.begin(), km.labels.end()).size(), 12u);
  EXPECT_THROW(clustering::kmeans_cluster(x, 13, 1), Error);
}

TEST(ConstrainedKMeans, BalancedWithinDeviation) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 1);
  std::uniform_int_distribution<int> w(5, 60);
  Eigen::MatrixXd pts(100, 4);
  std::vector<double> weights;
  for (int i = 0; i < pts.size(); ++i) pts(i) = n(rng);
  for (int i = 0; i < 100; ++i) weights.push_back(w(rng));
  auto a = clustering::constrained_kmeans(pts, weights, 5, 0.15, 3);
  EXPECT_FALSE(a.fallback);
  double total = 0;
  for (double x : weights) total += x;
  for (double g : a.group_weight) EXPECT_LE(std::abs(g - total / 5) / (total / 5), 0.15 + 1e-12);
}

TEST(ConstrainedKMeans, InfeasibleFallsBack) {
  Eigen::MatrixXd pts(3, 1);
  pts << 0, 1, 2;
  auto a = clustering::constrained_kmeans(pts, {100, 1, 1}, 2, 0.15, 1);
  EXPECT_TRUE(a.fallback);
  EXPECT_EQ(a.group[0] == a.group[1], false);
}

struct ClusterWorld {
  std::vector<PairRecord> pairs;
  std::vector<int> labels;
  Eigen::MatrixXd centroids;
};

// Proteins mostly live in one cluster; a few straddle two so reassignment
// has work to do. Negatives carry no cluster label.
ClusterWorld cluster_world(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  ClusterWorld w;
  const int clusters = 20;
  w.centroids.resize(clusters, 3);
  for (int i = 0; i < w.centroids.size(); ++i) w.centroids(i) = 5 * n(rng);
  int pep = 0;
  for (int prot = 0; prot < 60; ++prot) {
    const int home = prot % clusters;
    const int count = 3 + static_cast<int>(rng() % 8);
    for (int j = 0; j < count; ++j) {
      PairRecord p;
      p.peptide_key = "pep" + std::to_string(pep++);
      p.protein_id = "prot" + std::to_string(prot);
      const bool stray = prot % 7 == 0 && j == 0;
      w.pairs.push_back(p);
      w.labels.push_back(stray ? (home + 1) % clusters : home);
    }
    PairRecord neg;
    neg.peptide_key = "pep" + std::to_string(pep - 1);
    neg.protein_id = "prot" + std::to_string((prot + 1) % 60);
    neg.positive = false;
    w.pairs.push_back(neg);
    w.labels.push_back(-1);
  }
  return w;
}

TEST(ClusterSplit, NoProteinOverlapAndBalanced) {
  auto w = cluster_world(8);
  auto s = make_cluster_split(w.pairs, w.labels, w.centroids, 5, 0.15, 0.1, 4);
  ASSERT_EQ(s.fold_count(), 5u);
  EXPECT_FALSE(s.balance_fallback);
  double mean = 0;
  for (double fw : s.fold_weights) mean += fw / 5.0;
  for (double fw : s.fold_weights) EXPECT_LE(std::abs(fw - mean), 0.15 * mean + 1e-9);

  std::map<std::string, std::string> protein_of;
  for (const auto& p : w.pairs) protein_of[p.id()] = p.protein_id;
  std::set<std::string> tests;
  bool any_dropped = false;
  for (const auto& f : s.folds) {
    std::set<std::string> tr, va, te;
    for (const auto& id : f.train) tr.insert(protein_of.at(id));
    for (const auto& id : f.val) va.insert(protein_of.at(id));
    for (const auto& id : f.test) te.insert(protein_of.at(id));
    for (const auto& p : tr) {
      EXPECT_EQ(va.count(p), 0u);
      EXPECT_EQ(te.count(p), 0u);
    }
    for (const auto& p : va) EXPECT_EQ(te.count(p), 0u);
    EXPECT_EQ(f.train.size() + f.val.size() + f.test.size() + f.dropped.size(), w.pairs.size());
    any_dropped |= !f.dropped.empty();
    for (const auto& id : f.test) tests.insert(id);
  }
  EXPECT_TRUE(any_dropped);
  const auto j = to_json(s);
  EXPECT_EQ(j.at("dropped").size(), s.dropped().size());
  EXPECT_EQ(to_json(split_from_json(j)), j);
}

TEST(ClusterSplit, TiePrefersTest) {
  // one protein with one pair in each of two clusters
  std::vector<PairRecord> pairs(2);
  pairs[0].peptide_key = "a";
  pairs[1].peptide_key = "b";
  pairs[0].protein_id = pairs[1].protein_id = "X";
  Eigen::MatrixXd c(2, 1);
  c << 0, 1;
  auto s = make_cluster_split(pairs, std::vector<int>{0, 1}, c, 2, 0.15, 0.0, 1);
  for (const auto& f : s.folds) {
    EXPECT_EQ(f.test.size(), 1u);
    EXPECT_EQ(f.dropped.size(), 1u);
    EXPECT_TRUE(f.train.empty());
  }
}

TEST(ClusterSplit, MissingClusterLabel) {
  std::vector<PairRecord> pairs(2);
  pairs[0].peptide_key = "a";
  pairs[0].protein_id = "X";
  pairs[1].peptide_key = "b";
  pairs[1].protein_id = "Y";
  try {
    inherit_cluster_labels(pairs, {0, -1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingClusterLabel);
  }
  EXPECT_EQ(inherit_cluster_labels(pairs, {0, 3}), (std::vector<int>{0, 3}));
}

TEST(ClusterPairs, PcaThenKMeans) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 0.1);
  std::vector<PairRecord> pairs;
  for (int i = 0; i < 30; ++i) {
    PairRecord p;
    p.peptide_key = "k" + std::to_string(i);
    p.protein_id = "P" + std::to_string(i);
    p.acsm.assign(12, 0.0);
    for (auto& v : p.acsm) v = n(rng);
    p.acsm[static_cast<std::size_t>(i % 3)] += 5.0;
    pairs.push_back(p);
  }
  auto pc = cluster_pairs(pairs, 4, 3, 1);
  ASSERT_EQ(pc.labels.size(), 30u);
  for (int i = 3; i < 30; ++i) EXPECT_EQ(pc.labels[static_cast<std::size_t>(i)], pc.labels[static_cast<std::size_t>(i % 3)]);
  EXPECT_EQ(pc.centroids.rows(), 3);
  EXPECT_EQ(pc.centroids.cols(), 4);
}

TEST(Pairs, LoadJsonl) {
  const auto p = fs::temp_directory_path() / "helmlm_pairs.jsonl";
  std::ofstream(p) << R"({"peptide_helm":"PEPTIDE1{A.G}$$$$","protein_id":"P1","label":1,"acsm":[1,2,3]})" << "\n"
                   << R"({"peptide_helm":"PEPTIDE1{A.G}$$$$","protein_id":"P2","label":"negative"})" << "\n";
  auto pairs = load_pairs(p);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_TRUE(pairs[0].positive);
  EXPECT_FALSE(pairs[1].positive);
  EXPECT_EQ(pairs[0].acsm.size(), 3u);
  std::ofstream(p, std::ios::app) << R"({"peptide_helm":"PEPTIDE2{A.G}$$$$","protein_id":"P1","label":0})" << "\n";
  try {
    load_pairs(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicatePair);
  }
  fs::remove(p);
}

}  // namespace
}  // namespace helmlm::splits
