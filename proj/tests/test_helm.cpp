// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <string>

#include <gtest/gtest.h>

#include "helmlm/errors.hpp"
#include "helmlm/helm.hpp"
#include "support/random_helm.hpp"

namespace helmlm::helm {
namespace {

ErrorCode code_of(const std::string& text) {
  try {
    parse_helm(text);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error for " << text;
  return ErrorCode::InvalidArgument;
}

TEST(ParseHelm, SimpleLinearPeptide) {
  auto seq = parse_helm("PEPTIDE1{A.G.C}$$$$V2.0");
  ASSERT_EQ(seq.polymers.size(), 1u);
  const auto& p = seq.polymers[0];
  EXPECT_EQ(p.id, "PEPTIDE1");
  EXPECT_EQ(p.kind, PolymerKind::Peptide);
  ASSERT_EQ(p.monomers.size(), 3u);
  EXPECT_EQ(p.monomers[0].symbol, "A");
  EXPECT_EQ(p.monomers[2].symbol, "C");
  EXPECT_TRUE(seq.connections.empty());
  ASSERT_TRUE(seq.version.has_value());
  EXPECT_EQ(*seq.version, "V2.0");
}

TEST(ParseHelm, BracketedMonomer) {
  auto seq = parse_helm("PEPTIDE1{[meA].G}$$$$V2.0");
  const auto& m = seq.polymers[0].monomers;
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].symbol, "meA");
  EXPECT_TRUE(m[0].bracketed);
  EXPECT_EQ(m[1].symbol, "G");
  EXPECT_FALSE(m[1].bracketed);
}

TEST(ParseHelm, IntramolecularConnection) {
  auto seq = parse_helm("PEPTIDE1{A.G.C}$PEPTIDE1,PEPTIDE1,3:R2-1:R1$$$V2.0");
  ASSERT_EQ(seq.connections.size(), 1u);
  const auto& c = seq.connections[0];
  EXPECT_EQ(c.source.polymer, "PEPTIDE1");
  EXPECT_EQ(c.source.index, 3);
  EXPECT_EQ(c.source.rgroup, RGroup::R2);
  EXPECT_EQ(c.target.index, 1);
  EXPECT_EQ(c.target.rgroup, RGroup::R1);
}

TEST(ParseHelm, VersionIsOptional) {
  auto seq = parse_helm("PEPTIDE1{A}$$$$");
  EXPECT_FALSE(seq.version.has_value());
}

TEST(ParseHelm, GroupsAndAnnotationsPreserved) {
  const std::string text = "PEPTIDE1{A.G}$$G1(PEPTIDE1)$note$V2.0";
  auto seq = parse_helm(text);
  EXPECT_EQ(seq.polymer_groups, "G1(PEPTIDE1)");
  EXPECT_EQ(seq.annotations, "note");
  EXPECT_EQ(serialize_helm(seq), text);
}

TEST(ParseHelm, Errors) {
  EXPECT_EQ(code_of("PEPTIDE1{A.G"), ErrorCode::SyntaxError);
  EXPECT_EQ(code_of("PEPTIDE1{A.G}$$$$V2.0 trailing"), ErrorCode::SyntaxError);
  EXPECT_EQ(code_of("PEPTIDE1{}$$$$"), ErrorCode::SyntaxError);
  EXPECT_EQ(code_of("PEPTIDE1{a}$$$$"), ErrorCode::SyntaxError);
  EXPECT_EQ(code_of("RNA1{A}$$$$"), ErrorCode::SyntaxError);
  EXPECT_EQ(code_of("PEPTIDE1{A.G}$PEPTIDE1,PEPTIDE1,2:R4-1:R1$$$"), ErrorCode::SyntaxError);
  EXPECT_EQ(code_of("CHEM1{[Ac].[Bn]}$$$$"), ErrorCode::SyntaxError);
  EXPECT_EQ(code_of("PEPTIDE1{A}|PEPTIDE1{G}$$$$"), ErrorCode::DuplicatePolymerId);
  EXPECT_EQ(code_of("PEPTIDE1{A.G}$PEPTIDE1,PEPTIDE2,2:R2-1:R1$$$"),
            ErrorCode::DanglingConnection);
  EXPECT_EQ(code_of("PEPTIDE1{A.G}$PEPTIDE1,PEPTIDE1,3:R2-1:R1$$$"),
            ErrorCode::DanglingConnection);
  EXPECT_EQ(code_of("PEPTIDE1{A.G.C}$PEPTIDE1,PEPTIDE1,3:R2-1:R1|"
                    "PEPTIDE1,PEPTIDE1,1:R1-3:R2$$$"),
            ErrorCode::DuplicateConnection);
}

TEST(ParseHelm, SyntaxErrorReportsPosition) {
  try {
    parse_helm("PEPTIDE1{A.G.}$$$$");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SyntaxError);
    EXPECT_NE(std::string(e.what()).find("13"), std::string::npos) << e.what();
  }
}

TEST(SerializeHelm, TwoPolymersJoinedByPipe) {
  auto seq = parse_helm("PEPTIDE1{A.G}|CHEM1{[Ac]}$CHEM1,PEPTIDE1,1:R1-1:R1$$$");
  const auto text = serialize_helm(seq);
  EXPECT_EQ(text.substr(0, text.find('$')), "PEPTIDE1{A.G}|CHEM1{[Ac]}");
}

TEST(SerializeHelm, ExamplesRoundTripByteIdentical) {
  for (const std::string text :
       {"PEPTIDE1{A.G.C}$$$$V2.0", "PEPTIDE1{[meA].G}$$$$V2.0",
        "PEPTIDE1{A.G.C}$PEPTIDE1,PEPTIDE1,1:R1-3:R2$$$V2.0"}) {
    EXPECT_EQ(serialize_helm(parse_helm(text)), text);
  }
}

TEST(SerializeHelm, ConnectionsSortedAndOriented) {
  auto seq = parse_helm(
      "PEPTIDE1{A.G.C.K.L}$PEPTIDE1,PEPTIDE1,5:R2-1:R1|PEPTIDE1,PEPTIDE1,4:R3-2:R3$$$");
  EXPECT_EQ(serialize_helm(seq),
            "PEPTIDE1{A.G.C.K.L}$PEPTIDE1,PEPTIDE1,1:R1-5:R2|"
            "PEPTIDE1,PEPTIDE1,2:R3-4:R3$$$");
}

TEST(SerializeHelm, RandomRoundTrip) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    const auto seq = testing::random_sequence(rng);
    const auto text = serialize_helm(seq);
    const auto back = parse_helm(text);
    ASSERT_EQ(back, seq) << text;
    EXPECT_EQ(serialize_helm(back), text);
  }
}

TEST(ClassifyStructure, Examples) {
  EXPECT_EQ(classify_structure(parse_helm("PEPTIDE1{A.G.C.K.L}$$$$")),
            (StructureSummary{StructureType::Linear, 0}));
  EXPECT_EQ(classify_structure(parse_helm("PEPTIDE1{A.G.C}$PEPTIDE1,PEPTIDE1,3:R2-1:R1$$$")),
            (StructureSummary{StructureType::Cyclic, 1}));
  EXPECT_EQ(classify_structure(parse_helm("PEPTIDE1{A.G.C.K.L}$PEPTIDE1,PEPTIDE1,2:R3-5:R1$$$")),
            (StructureSummary{StructureType::Lariat, 1}));
}

TEST(ClassifyStructure, InterPolymerLinksAreNotRings) {
  auto s = classify_structure(
      parse_helm("PEPTIDE1{A.G.C}|CHEM1{[Ac]}$CHEM1,PEPTIDE1,1:R1-2:R3$$$"));
  EXPECT_EQ(s.structure_type, StructureType::Linear);
  EXPECT_EQ(s.n_rings, 0);
}

TEST(ClassifyStructure, AgreesWithRegexOracle) {
  std::mt19937_64 rng(5);
  int seen[3] = {0, 0, 0};
  for (int i = 0; i < 600; ++i) {
    const auto text = serialize_helm(testing::random_sequence(rng));
    const auto got = classify_structure(parse_helm(text));
    const auto want = testing::oracle_classify(text);
    ASSERT_EQ(std::string(to_string(got.structure_type)), want.structure_type) << text;
    ASSERT_EQ(got.n_rings, want.n_rings) << text;
    ++seen[static_cast<int>(got.structure_type)];
  }
  EXPECT_GT(seen[0], 0);
  EXPECT_GT(seen[1], 0);
  EXPECT_GT(seen[2], 0);
}

TEST(CanonicalKey, ConnectionOrderIrrelevant) {
  const auto a = parse_helm(
      "PEPTIDE1{A.G.C.K.L}$PEPTIDE1,PEPTIDE1,5:R2-1:R1|PEPTIDE1,PEPTIDE1,2:R3-4:R3$$$");
  const auto b = parse_helm(
      "PEPTIDE1{A.G.C.K.L}$PEPTIDE1,PEPTIDE1,4:R3-2:R3|PEPTIDE1,PEPTIDE1,1:R1-5:R2$$$");
  EXPECT_EQ(canonical_key(a), canonical_key(b));
}

TEST(CanonicalKey, RenumberingIrrelevant) {
  EXPECT_EQ(canonical_key(parse_helm("PEPTIDE2{A.G}$$$$")),
            canonical_key(parse_helm("PEPTIDE1{A.G}$$$$")));
  EXPECT_EQ(canonical_key(parse_helm("PEPTIDE7{A.G}|CHEM3{[Ac]}$CHEM3,PEPTIDE7,1:R1-1:R1$$$V2.0")),
            canonical_key(parse_helm("PEPTIDE1{A.G}|CHEM1{[Ac]}$PEPTIDE1,CHEM1,1:R1-1:R1$$$")));
}

TEST(CanonicalKey, MonomerOrderMatters) {
  EXPECT_NE(canonical_key(parse_helm("PEPTIDE1{A.G}$$$$")),
            canonical_key(parse_helm("PEPTIDE1{G.A}$$$$")));
}

TEST(CanonicalKey, StableUnderRandomReordering) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    auto seq = testing::random_sequence(rng);
    const auto key = canonical_key(seq);
    std::shuffle(seq.connections.begin(), seq.connections.end(), rng);
    for (auto& c : seq.connections) std::swap(c.source, c.target);
    EXPECT_EQ(canonical_key(seq), key);
    EXPECT_EQ(canonical_key(parse_helm(key)), key);
  }
}

TEST(EndpointLess, NumericSuffixOrder) {
  EXPECT_TRUE(endpoint_less({"PEPTIDE2", 1, RGroup::R1}, {"PEPTIDE10", 1, RGroup::R1}));
  EXPECT_FALSE(endpoint_less({"PEPTIDE10", 1, RGroup::R1}, {"PEPTIDE2", 1, RGroup::R1}));
}

}  // namespace
}  // namespace helmlm::helm
