// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "helmlm/autograd.hpp"
#include "helmlm/batch.hpp"

namespace helmlm::model {

using tensor::Parameter;
using tensor::ParameterSet;
using tensor::Tensor;
using tensor::Var;

struct ModelConfig {
  std::size_t layers = 6;
  std::size_t hidden = 768;
  std::size_t heads = 12;
  std::size_t ffn_dim = 0;  // 0 selects 4 * hidden
  std::size_t max_len = 512;
  std::size_t max_relative = 128;
  std::size_t vocab_size = 0;
  double dropout = 0.1;
  bool use_disentangled = true;
  bool use_ngie = true;
  bool use_emd = true;
  bool use_span_mask = true;  // consumed by pre-training only

  std::size_t head_dim() const { return hidden / heads; }
  std::size_t ffn() const { return ffn_dim == 0 ? 4 * hidden : ffn_dim; }
  /// Throws ConfigError on inconsistent sizes.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Architecture variants compared in the ablation study.
enum class Variant {
  HelmBert,
  NoDisentangled,
  NoNgie,
  NoEmd,
  NoSpanMask,
  VanillaBert,
};

std::string_view to_string(Variant v);
std::optional<Variant> variant_from_string(std::string_view name);
ModelConfig apply_variant(ModelConfig config, Variant variant);

struct ForwardState {
  bool training = false;
  std::mt19937_64 rng{0};
};

template <typename T>
struct MlmOutput {
  Var<T> loss;
  Var<T> logits;  // (batch * seq_len) x vocab
};

/// Per-layer intermediate results, kept for inspection and tests.
template <typename T>
struct EncoderTrace {
  Var<T> embeddings;                // H0
  std::vector<Var<T>> layer_outputs;  // H1 .. H_{L-1} (or H_L without EMD)
  Var<T> final;                     // EMD output, or H_L
};

template <typename T>
class Encoder {
 public:
  /// Weights drawn from N(0, 0.02^2); biases zero; layer-norm gains one.
  Encoder(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  Var<T> embed(const EncoderInput& input, ForwardState& state) const;

  /// Multi-head attention of `layer` with queries from query_in and keys and
  /// values from kv_in, output-projected, without residual or norm.
  Var<T> attention(std::size_t layer, const Var<T>& query_in,
                   const Var<T>& kv_in, const Mask& mask, std::size_t seq_len,
                   ForwardState& state) const;

  /// tanh(dropout(conv1d(h0))) of the first layer.
  Var<T> ngie_branch(const Var<T>& h0, std::size_t seq_len,
                     ForwardState& state) const;

  /// Post-norm transformer block. When conv_branch is given it joins the
  /// attention residual before the block's attention layer norm.
  Var<T> block(std::size_t layer, const Var<T>& query_in, const Var<T>& kv_in,
               const Mask& mask, std::size_t seq_len, ForwardState& state,
               const Var<T>* conv_branch = nullptr) const;

  /// Two refinement passes of the last layer's block with queries seeded by
  /// h_penultimate + absolute positions and keys/values fixed to
  /// h_penultimate.
  Var<T> enhanced_mask_decoder(const Var<T>& h_penultimate, const Mask& mask,
                               std::size_t seq_len, ForwardState& state) const;

  EncoderTrace<T> run(const EncoderInput& input, ForwardState& state) const;
  Var<T> hidden_states(const EncoderInput& input, ForwardState& state) const {
    return run(input, state).final;
  }

  Var<T> mlm_logits(const Var<T>& hidden, ForwardState& state) const;
  MlmOutput<T> forward_mlm(const MaskedBatch& batch, ForwardState& state) const;

  /// Mean over non-PAD positions of each sequence: batch x hidden.
  Var<T> mean_pool(const Var<T>& hidden, const EncoderInput& input) const;
  Var<T> pooled(const EncoderInput& input, ForwardState& state) const {
    return mean_pool(hidden_states(input, state), input);
  }

  std::vector<Tensor<T>> snapshot() const;
  void restore(const std::vector<Tensor<T>>& values);

 private:
  std::string layer_name(std::size_t layer, std::string_view leaf) const;
  Var<T> param(const std::string& name) const;

  ModelConfig config_;
  ParameterSet<T> params_;
};

/// Expected parameter names and shapes for a configuration, in creation order.
std::vector<std::pair<std::string, tensor::Shape>> parameter_manifest(
    const ModelConfig& config);

extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace helmlm::model
