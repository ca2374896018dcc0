// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "helmlm/encoder.hpp"
#include "helmlm/errors.hpp"

namespace helmlm::model {
namespace {

using D = double;
namespace tn = helmlm::tensor;

ModelConfig tiny(std::size_t layers = 3) {
  ModelConfig c;
  c.layers = layers;
  c.hidden = 8;
  c.heads = 2;
  c.max_len = 8;
  c.max_relative = 4;
  c.vocab_size = 11;
  c.dropout = 0.0;
  return c;
}

// Larger weights so finite differences see real curvature.
void rescale(Encoder<D>& enc, double std_dev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, std_dev);
  for (auto* p : enc.parameters().all()) {
    for (auto& v : p->value().values()) v = n(rng);
  }
}

MaskedBatch small_batch() {
  // two sequences of five positions, the second padded by one; PAD id = 10
  MaskedBatch b;
  b.input.batch = 2;
  b.input.seq_len = 5;
  b.input.ids = {1, 9, 3, 4, 2, 7, 9, 6, 5, 10};
  b.input.attention_mask = {1, 1, 1, 1, 1, 1, 1, 1, 1, 0};
  b.target_ids = {1, 2, 3, 4, 2, 7, 8, 6, 5, 10};
  b.loss_mask = {0, 1, 0, 0, 0, 0, 1, 0, 1, 0};
  return b;
}

TEST(ModelConfig, Validation) {
  auto c = tiny();
  c.heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = tiny();
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), Error);
  c = tiny(1);  // the decoder needs a penultimate layer
  EXPECT_THROW(c.validate(), Error);
  c.use_emd = false;
  EXPECT_NO_THROW(c.validate());
}

TEST(ModelConfig, JsonRoundTrip) {
  auto c = apply_variant(tiny(), Variant::NoNgie);
  nlohmann::json j = c;
  c.ffn_dim = c.ffn();  // written out resolved
  EXPECT_EQ(j.get<ModelConfig>(), c);
}

TEST(Variants, FlagsAndNames) {
  const auto base = tiny();
  for (auto v : {Variant::HelmBert, Variant::NoDisentangled, Variant::NoNgie, Variant::NoEmd,
                 Variant::NoSpanMask, Variant::VanillaBert}) {
    EXPECT_EQ(variant_from_string(to_string(v)), v);
    EXPECT_NO_THROW(Encoder<float>(apply_variant(base, v), 1));
  }
  const auto vanilla = apply_variant(base, Variant::VanillaBert);
  EXPECT_FALSE(vanilla.use_disentangled || vanilla.use_ngie || vanilla.use_emd ||
               vanilla.use_span_mask);
  EXPECT_FALSE(apply_variant(base, Variant::NoEmd).use_emd);
  EXPECT_TRUE(apply_variant(base, Variant::NoEmd).use_ngie);
}

TEST(Manifest, VanillaHasNoRelativeTableAndUsesInputPositions) {
  const auto vanilla = apply_variant(tiny(), Variant::VanillaBert);
  for (const auto& [name, shape] : parameter_manifest(vanilla)) {
    EXPECT_EQ(name.find("relative"), std::string::npos) << name;
    EXPECT_EQ(name.find("pos_"), std::string::npos) << name;
    EXPECT_EQ(name.find("ngie"), std::string::npos) << name;
  }
  // P_abs perturbation moves the very first embedding output
  Encoder<D> enc(vanilla, 3);
  EncoderInput in;
  in.batch = 1;
  in.seq_len = 3;
  in.ids = {1, 2, 3};
  in.attention_mask = {1, 1, 1};
  ForwardState st;
  const auto before = enc.embed(in, st).value().storage();
  enc.parameters().get("embeddings.absolute_position").value()[0] += 0.5;
  EXPECT_NE(enc.embed(in, st).value().storage(), before);
}

TEST(Manifest, NoSeparateDecoderParameters) {
  const auto c = tiny();
  std::set<std::string> prefixes;
  for (const auto& [name, shape] : parameter_manifest(c)) {
    EXPECT_EQ(name.find("emd"), std::string::npos) << name;
    if (name.find("decoder") != std::string::npos) EXPECT_EQ(name.rfind("mlm.decoder.", 0), 0u);
    if (name.rfind("layer.", 0) == 0) prefixes.insert(name.substr(0, name.find('.', 6)));
  }
  EXPECT_EQ(prefixes.size(), c.layers);
}

TEST(Encoder, ManifestMatchesParameters) {
  Encoder<float> enc(tiny(), 1);
  const auto m = parameter_manifest(tiny());
  ASSERT_EQ(m.size(), enc.parameters().size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(enc.parameters()[i].name(), m[i].first);
    EXPECT_EQ(enc.parameters()[i].value().shape(), m[i].second);
  }
}

TEST(Encoder, InitialLossNearLogVocab) {
  ModelConfig c = tiny(2);
  c.hidden = 32;
  c.heads = 4;
  c.vocab_size = 40;
  Encoder<float> enc(c, 21);
  MaskedBatch b;
  b.input.batch = 4;
  b.input.seq_len = 8;
  std::mt19937_64 rng(1);
  for (std::size_t i = 0; i < 32; ++i) {
    const auto id = static_cast<TokenId>(rng() % 37);
    b.input.ids.push_back(id);
    b.target_ids.push_back(id);
    b.input.attention_mask.push_back(1);
    b.loss_mask.push_back(i % 3 == 0);
  }
  ForwardState st;
  const double loss = enc.forward_mlm(b, st).loss.value().item();
  EXPECT_NEAR(loss, std::log(40.0), 0.1 * std::log(40.0));
}

TEST(Encoder, EmptyLossMaskGivesZeroLossAndGradients) {
  Encoder<D> enc(tiny(), 2);
  auto b = small_batch();
  std::fill(b.loss_mask.begin(), b.loss_mask.end(), 0);
  ForwardState st;
  auto out = enc.forward_mlm(b, st);
  EXPECT_EQ(out.loss.value().item(), 0.0);
  out.loss.backward();
  for (auto* p : enc.parameters().all()) {
    if (!p->has_grad()) continue;
    for (double g : p->grad().values()) ASSERT_EQ(g, 0.0) << p->name();
  }
}

TEST(Encoder, FullGradientCheck) {
  Encoder<D> enc(tiny(3), 4);
  rescale(enc, 0.3, 5);
  const auto batch = small_batch();
  auto f = [&] {
    ForwardState st;
    return enc.forward_mlm(batch, st).loss;
  };
  auto params = enc.parameters().all();
  const double err = tn::grad_check<D>(f, params);
  EXPECT_LT(err, 1e-4);
}

TEST(Encoder, GradientCheckEachVariant) {
  for (auto v : {Variant::NoDisentangled, Variant::NoNgie, Variant::NoEmd, Variant::VanillaBert}) {
    Encoder<D> enc(apply_variant(tiny(2), v), 6);
    rescale(enc, 0.3, 7);
    const auto batch = small_batch();
    auto f = [&] {
      ForwardState st;
      return enc.forward_mlm(batch, st).loss;
    };
    auto params = enc.parameters().all();
    EXPECT_LT(tn::grad_check<D>(f, params), 1e-4) << to_string(v);
  }
}

TEST(Encoder, EmdTiedToLastLayer) {
  Encoder<D> enc(tiny(3), 8);
  const auto b = small_batch();
  ForwardState st;
  const auto base = enc.run(b.input, st);
  // the plain stack stops before the last layer
  ASSERT_EQ(base.layer_outputs.size(), 2u);
  auto& w = enc.parameters().get("layer.2.attention.query.weight").value();
  w[3] += 0.05;
  const auto moved = enc.run(b.input, st);
  EXPECT_EQ(moved.layer_outputs.back().value().storage(),
            base.layer_outputs.back().value().storage());
  EXPECT_NE(moved.final.value().storage(), base.final.value().storage());
}

TEST(Encoder, EmdFirstStepIsSelfAttentionWhenPositionsZero) {
  Encoder<D> enc(tiny(3), 9);
  rescale(enc, 0.2, 10);
  enc.parameters().get("embeddings.absolute_position").value().fill(0.0);
  const auto b = small_batch();
  ForwardState st;
  const auto trace = enc.run(b.input, st);
  const auto& h = trace.layer_outputs.back();
  const auto once = enc.block(2, h, h, b.input.attention_mask, 5, st);
  const auto twice = enc.block(2, once, h, b.input.attention_mask, 5, st);
  const auto got = trace.final.value().storage();
  const auto want = twice.value().storage();
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Encoder, PositionOverflow) {
  Encoder<D> enc(tiny(), 1);
  EncoderInput in;
  in.batch = 1;
  in.seq_len = 9;
  in.ids.assign(9, 1);
  in.attention_mask.assign(9, 1);
  ForwardState st;
  try {
    enc.run(in, st);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PositionOverflow);
  }
}

TEST(Encoder, ZeroConvBranchLeavesStandardBlock) {
  auto c = tiny(3);
  Encoder<D> with(c, 11);
  rescale(with, 0.2, 12);
  with.parameters().get("layer.0.ngie.kernel").value().fill(0.0);
  with.parameters().get("layer.0.ngie.bias").value().fill(0.0);
  c.use_ngie = false;
  Encoder<D> without(c, 11);
  for (auto* p : without.parameters().all()) p->value() = with.parameters().get(p->name()).value();
  const auto b = small_batch();
  ForwardState s1, s2;
  const auto a = with.hidden_states(b.input, s1).value().storage();
  const auto z = without.hidden_states(b.input, s2).value().storage();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], z[i], 1e-14);
}

TEST(Encoder, PadInvariance) {
  Encoder<D> enc(tiny(3), 13);
  rescale(enc, 0.2, 14);
  EncoderInput a;
  a.batch = 1;
  a.seq_len = 4;
  a.ids = {3, 1, 4, 1};
  a.attention_mask = {1, 1, 1, 1};
  EncoderInput b = a;
  b.seq_len = 7;
  b.ids = {3, 1, 4, 1, 10, 10, 10};
  b.attention_mask = {1, 1, 1, 1, 0, 0, 0};
  ForwardState st;
  const auto la = enc.mlm_logits(enc.hidden_states(a, st), st).value();
  const auto lb = enc.mlm_logits(enc.hidden_states(b, st), st).value();
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < la.cols(); ++c) EXPECT_NEAR(la.at(r, c), lb.at(r, c), 1e-12);
  }
  const auto pa = enc.pooled(a, st).value().storage();
  const auto pb = enc.pooled(b, st).value().storage();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(pa[i], pb[i], 1e-12);
}

TEST(Encoder, PermutationChangesOutput) {
  Encoder<D> enc(tiny(3), 15);
  rescale(enc, 0.2, 16);
  EncoderInput a;
  a.batch = 1;
  a.seq_len = 5;
  a.ids = {1, 2, 3, 4, 5};
  a.attention_mask.assign(5, 1);
  EncoderInput b = a;
  b.ids = {4, 1, 5, 3, 2};
  ForwardState st;
  const auto pa = enc.pooled(a, st).value().storage();
  const auto pb = enc.pooled(b, st).value().storage();
  double diff = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) diff = std::max(diff, std::abs(pa[i] - pb[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Encoder, MeanPoolOfConstantRows) {
  Encoder<D> enc(tiny(), 1);
  EncoderInput in;
  in.batch = 1;
  in.seq_len = 3;
  in.ids = {1, 2, 10};
  in.attention_mask = {1, 1, 0};
  tn::Tensor<D> h(tn::Shape{3, 8}, 0.25);
  for (std::size_t c = 0; c < 8; ++c) h.at(2, c) = 99.0;
  const auto p = enc.mean_pool(tn::Var<D>::constant(h), in).value();
  ASSERT_EQ(p.size(), 8u);
  for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 0.25);
  in.attention_mask = {0, 0, 0};
  try {
    enc.mean_pool(tn::Var<D>::constant(h), in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySequence);
  }
}

TEST(Encoder, SnapshotRestore) {
  Encoder<float> enc(tiny(), 1);
  const auto snap = enc.snapshot();
  enc.parameters()[0].value()[0] += 1.0f;
  enc.restore(snap);
  EXPECT_EQ(enc.parameters()[0].value().storage(), snap[0].storage());
}

TEST(Batch, MakeInputPadsRight) {
  std::vector<std::vector<TokenId>> seqs = {{1, 2, 3}, {4}};
  const auto in = make_input(seqs, 9);
  EXPECT_EQ(in.batch, 2u);
  EXPECT_EQ(in.seq_len, 3u);
  EXPECT_EQ(in.ids, (std::vector<TokenId>{1, 2, 3, 4, 9, 9}));
  EXPECT_EQ(in.attention_mask, (Mask{1, 1, 1, 1, 0, 0}));
}

}  // namespace
}  // namespace helmlm::model
