// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "helmlm/errors.hpp"
#include "helmlm/helm.hpp"
#include "helmlm/tokenizer.hpp"
#include "support/random_helm.hpp"

namespace helmlm::tokenizer {
namespace {

CompressionMap peptide_only() { return CompressionMap({{"PEPTIDE", '/'}}); }

TEST(BuildVocabulary, HandCountedExample) {
  const std::vector<std::string> corpus = {"PEPTIDE1{A}$$$$"};
  const auto vocab = build_vocabulary(corpus, peptide_only());
  // '/', '1', '{', 'A', '}', '$' plus three specials
  EXPECT_EQ(vocab.size(), 9u);
  for (char c : std::string("/1{A}$")) EXPECT_TRUE(vocab.id_of(c).has_value()) << c;
  EXPECT_FALSE(vocab.id_of('P').has_value());
}

TEST(BuildVocabulary, IdsSortedThenSpecials) {
  const std::vector<std::string> corpus = {"PEPTIDE1{A}$$$$"};
  const auto vocab = build_vocabulary(corpus, peptide_only());
  const auto& chars = vocab.characters();
  EXPECT_TRUE(std::is_sorted(chars.begin(), chars.end()));
  for (std::size_t i = 0; i < chars.size(); ++i) {
    EXPECT_EQ(vocab.id_of(chars[i]), static_cast<TokenId>(i));
  }
  EXPECT_EQ(vocab.unk(), 6);
  EXPECT_EQ(vocab.mask(), 7);
  EXPECT_EQ(vocab.pad(), 8);
}

TEST(BuildVocabulary, EmptyMapKeepsRawCharacters) {
  const std::vector<std::string> corpus = {"PEPTIDE1{A}$$$$"};
  const auto vocab = build_vocabulary(corpus, CompressionMap{});
  // P E T I D 1 { A } $
  EXPECT_EQ(vocab.size(), 10u + 3u);
}

TEST(BuildVocabulary, MarkerCollision) {
  const std::vector<std::string> corpus = {"PEPTIDE1{A}$$$$/"};
  try {
    build_vocabulary(corpus, peptide_only());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MarkerCollision);
  }
}

TEST(BuildVocabulary, EmptyCorpusRejected) {
  EXPECT_THROW(build_vocabulary(std::vector<std::string>{}, peptide_only()), Error);
}

TEST(CompressionMap, InvalidMarkers) {
  EXPECT_THROW(CompressionMap({{"PEPTIDE", '/'}, {"me", '/'}}), Error);
  EXPECT_THROW(CompressionMap({{"PEPTIDE", '{'}}), Error);
  EXPECT_THROW(CompressionMap({{"ab/", '/'}}), Error);
}

TEST(Encode, StandardMapExample) {
  const auto map = CompressionMap::standard();
  const std::vector<std::string> corpus = {"PEPTIDE1{A.G}$$$$", "[meA]"};
  const auto vocab = build_vocabulary(corpus, map);
  EXPECT_EQ(map.compress("PEPTIDE1{A.G}$$$$"), "/1{A.G}$$$$");
  EXPECT_EQ(encode("PEPTIDE1{A.G}$$$$", vocab, map).size(), 11u);
  EXPECT_EQ(map.compress("[meA]"), "[*A]");
  EXPECT_EQ(encode("[meA]", vocab, map).size(), 4u);
}

TEST(Encode, UnknownCharacterIsUnk) {
  const auto map = CompressionMap::standard();
  const std::vector<std::string> corpus = {"PEPTIDE1{A.G}$$$$"};
  const auto vocab = build_vocabulary(corpus, map);
  const auto ids = encode("PEPTIDE1{A.W}$$$$", vocab, map);
  EXPECT_EQ(ids[5], vocab.unk());
  EXPECT_EQ(ids[4], *vocab.id_of('.'));
}

TEST(Encode, RawMarkerCharacterIsUnk) {
  const auto map = CompressionMap::standard();
  const std::vector<std::string> corpus = {"PEPTIDE1{A.G}$$$$"};
  const auto vocab = build_vocabulary(corpus, map);
  const auto ids = encode("A/G", vocab, map);
  EXPECT_EQ(ids[1], vocab.unk());
}

TEST(Decode, RoundTripExample) {
  const auto map = CompressionMap::standard();
  const std::string text = "PEPTIDE1{A.G.C}$$$$V2.0";
  const std::vector<std::string> corpus = {text};
  const auto vocab = build_vocabulary(corpus, map);
  EXPECT_EQ(decode(encode(text, vocab, map), vocab, map), text);
}

TEST(Decode, SpecialIdRejected) {
  const auto map = CompressionMap::standard();
  const std::vector<std::string> corpus = {"PEPTIDE1{A}$$$$"};
  const auto vocab = build_vocabulary(corpus, map);
  for (TokenId special : {vocab.unk(), vocab.mask(), vocab.pad(), static_cast<TokenId>(vocab.size())}) {
    std::vector<TokenId> ids = {0, special};
    try {
      decode(ids, vocab, map);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::UndecodableToken);
    }
  }
}

TEST(Encode, RandomRoundTripAndLength) {
  const auto map = CompressionMap::standard();
  std::mt19937_64 rng(17);
  std::vector<std::string> corpus;
  for (int i = 0; i < 2000; ++i) corpus.push_back(helm::serialize_helm(testing::random_sequence(rng)));
  const auto vocab = build_vocabulary(corpus, map);
  for (const auto& s : corpus) {
    const auto ids = encode(s, vocab, map);
    ASSERT_LE(ids.size(), s.size());
    ASSERT_EQ(decode(ids, vocab, map), s);
    ASSERT_EQ(encode(s, vocab, map), ids);
  }
}

TEST(Encode, LongestMotifFirst) {
  const CompressionMap map({{"me", '*'}, {"meth", '~'}});
  EXPECT_EQ(map.compress("methme"), "~*");
  EXPECT_EQ(map.expand("~*"), "methme");
}

TEST(TokenizerFile, JsonRoundTrip) {
  Tokenizer tok;
  tok.compression = CompressionMap::standard();
  const std::vector<std::string> corpus = {"PEPTIDE1{[meA].G}$$$$V2.0"};
  tok.vocab = build_vocabulary(corpus, tok.compression);
  const auto path = std::filesystem::temp_directory_path() / "helmlm_tok_test.json";
  save_tokenizer(tok, path);
  const auto back = load_tokenizer(path);
  EXPECT_EQ(back.vocab, tok.vocab);
  EXPECT_EQ(back.compression.entries().size(), 2u);
  EXPECT_EQ(tokenizer_to_json(back), tokenizer_to_json(tok));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace helmlm::tokenizer
