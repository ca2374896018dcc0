// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include "helmlm/encoder.hpp"

#include <array>

#include "helmlm/errors.hpp"

namespace helmlm {

EncoderInput make_input(std::span<const std::vector<TokenId>> sequences,
                        TokenId pad_id) {
  EncoderInput input;
  input.batch = sequences.size();
  for (const auto& s : sequences) input.seq_len = std::max(input.seq_len, s.size());
  input.ids.assign(input.batch * input.seq_len, pad_id);
  input.attention_mask.assign(input.batch * input.seq_len, 0);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    for (std::size_t t = 0; t < sequences[b].size(); ++t) {
      input.ids[b * input.seq_len + t] = sequences[b][t];
      input.attention_mask[b * input.seq_len + t] = 1;
    }
  }
  return input;
}

MaskedBatch collate(std::span<const MaskedRow> rows, TokenId pad_id) {
  std::vector<std::vector<TokenId>> inputs;
  inputs.reserve(rows.size());
  for (const auto& r : rows) inputs.push_back(r.input_ids);
  MaskedBatch batch;
  batch.input = make_input(inputs, pad_id);
  const std::size_t n = batch.input.seq_len;
  batch.target_ids.assign(batch.input.ids.size(), pad_id);
  batch.loss_mask.assign(batch.input.ids.size(), 0);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    for (std::size_t t = 0; t < rows[b].target_ids.size(); ++t) {
      batch.target_ids[b * n + t] = rows[b].target_ids[t];
      batch.loss_mask[b * n + t] = rows[b].loss_mask[t];
    }
  }
  return batch;
}

}  // namespace helmlm

namespace helmlm::model {

namespace tn = helmlm::tensor;

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); };
  if (layers == 0) fail("layers must be positive");
  if (hidden == 0 || heads == 0 || hidden % heads != 0) {
    fail("hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
         std::to_string(heads) + ")");
  }
  if (vocab_size == 0) fail("vocab_size must be positive");
  if (max_len == 0) fail("max_len must be positive");
  if (use_disentangled && max_relative == 0) fail("max_relative must be positive");
  if (use_emd && layers < 2) fail("the enhanced mask decoder needs at least 2 layers");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers},
                     {"hidden", c.hidden},
                     {"heads", c.heads},
                     {"ffn_dim", c.ffn()},
                     {"max_len", c.max_len},
                     {"max_relative", c.max_relative},
                     {"vocab_size", c.vocab_size},
                     {"dropout", c.dropout},
                     {"use_disentangled", c.use_disentangled},
                     {"use_ngie", c.use_ngie},
                     {"use_emd", c.use_emd},
                     {"use_span_mask", c.use_span_mask}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("layers").get_to(c.layers);
  j.at("hidden").get_to(c.hidden);
  j.at("heads").get_to(c.heads);
  j.at("ffn_dim").get_to(c.ffn_dim);
  j.at("max_len").get_to(c.max_len);
  j.at("max_relative").get_to(c.max_relative);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("dropout").get_to(c.dropout);
  j.at("use_disentangled").get_to(c.use_disentangled);
  j.at("use_ngie").get_to(c.use_ngie);
  j.at("use_emd").get_to(c.use_emd);
  j.at("use_span_mask").get_to(c.use_span_mask);
}

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 6> kVariantNames = {{
    {Variant::HelmBert, "helm-bert"},
    {Variant::NoDisentangled, "no-disentangled"},
    {Variant::NoNgie, "no-ngie"},
    {Variant::NoEmd, "no-emd"},
    {Variant::NoSpanMask, "no-span-mask"},
    {Variant::VanillaBert, "vanilla-bert"},
}};

constexpr std::size_t kNgieWidth = 3;

}  // namespace

std::string_view to_string(Variant v) {
  for (const auto& [variant, name] : kVariantNames) {
    if (variant == v) return name;
  }
  return "unknown";
}

std::optional<Variant> variant_from_string(std::string_view name) {
  for (const auto& [variant, n] : kVariantNames) {
    if (n == name) return variant;
  }
  return std::nullopt;
}

ModelConfig apply_variant(ModelConfig config, Variant variant) {
  switch (variant) {
    case Variant::HelmBert:
      config.use_disentangled = config.use_ngie = config.use_emd =
          config.use_span_mask = true;
      break;
    case Variant::NoDisentangled: config.use_disentangled = false; break;
    case Variant::NoNgie: config.use_ngie = false; break;
    case Variant::NoEmd: config.use_emd = false; break;
    case Variant::NoSpanMask: config.use_span_mask = false; break;
    case Variant::VanillaBert:
      config.use_disentangled = config.use_ngie = config.use_emd =
          config.use_span_mask = false;
      break;
  }
  return config;
}

std::vector<std::pair<std::string, tn::Shape>> parameter_manifest(
    const ModelConfig& c) {
  c.validate();
  const std::size_t h = c.hidden;
  std::vector<std::pair<std::string, tn::Shape>> m;
  m.emplace_back("embeddings.token", tn::Shape{c.vocab_size, h});
  m.emplace_back("embeddings.absolute_position", tn::Shape{c.max_len, h});
  m.emplace_back("embeddings.norm.gain", tn::Shape{h});
  m.emplace_back("embeddings.norm.bias", tn::Shape{h});
  if (c.use_disentangled) {
    m.emplace_back("encoder.relative_position", tn::Shape{2 * c.max_relative, h});
  }
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    for (const char* proj : {"query", "key", "value"}) {
      m.emplace_back(p + "attention." + proj + ".weight", tn::Shape{h, h});
      m.emplace_back(p + "attention." + proj + ".bias", tn::Shape{h});
    }
    if (c.use_disentangled) {
      m.emplace_back(p + "attention.pos_query.weight", tn::Shape{h, h});
      m.emplace_back(p + "attention.pos_key.weight", tn::Shape{h, h});
    }
    m.emplace_back(p + "attention.output.weight", tn::Shape{h, h});
    m.emplace_back(p + "attention.output.bias", tn::Shape{h});
    m.emplace_back(p + "attention.norm.gain", tn::Shape{h});
    m.emplace_back(p + "attention.norm.bias", tn::Shape{h});
    if (l == 0 && c.use_ngie) {
      m.emplace_back(p + "ngie.kernel", tn::Shape{kNgieWidth, h, h});
      m.emplace_back(p + "ngie.bias", tn::Shape{h});
    }
    m.emplace_back(p + "ffn.in.weight", tn::Shape{h, c.ffn()});
    m.emplace_back(p + "ffn.in.bias", tn::Shape{c.ffn()});
    m.emplace_back(p + "ffn.out.weight", tn::Shape{c.ffn(), h});
    m.emplace_back(p + "ffn.out.bias", tn::Shape{h});
    m.emplace_back(p + "ffn.norm.gain", tn::Shape{h});
    m.emplace_back(p + "ffn.norm.bias", tn::Shape{h});
  }
  m.emplace_back("mlm.dense.weight", tn::Shape{h, h});
  m.emplace_back("mlm.dense.bias", tn::Shape{h});
  m.emplace_back("mlm.norm.gain", tn::Shape{h});
  m.emplace_back("mlm.norm.bias", tn::Shape{h});
  m.emplace_back("mlm.decoder.weight", tn::Shape{h, c.vocab_size});
  m.emplace_back("mlm.decoder.bias", tn::Shape{c.vocab_size});
  return m;
}

template <typename T>
Encoder<T>::Encoder(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (auto& [name, shape] : parameter_manifest(config_)) {
    Tensor<T> value(shape);
    if (name.ends_with(".gain")) {
      value.fill(T(1));
    } else if (!name.ends_with(".bias")) {
      for (auto& v : value.values()) v = static_cast<T>(normal(rng));
    }
    params_.add(name, std::move(value));
  }
}

template <typename T>
std::string Encoder<T>::layer_name(std::size_t layer, std::string_view leaf) const {
  return "layer." + std::to_string(layer) + "." + std::string(leaf);
}

template <typename T>
Var<T> Encoder<T>::param(const std::string& name) const {
  return params_.get(name).var();
}

template <typename T>
Var<T> Encoder<T>::embed(const EncoderInput& input, ForwardState& state) const {
  if (input.seq_len == 0 || input.batch == 0) {
    throw Error(ErrorCode::EmptySequence, "empty batch");
  }
  if (input.seq_len > config_.max_len) {
    throw Error(ErrorCode::PositionOverflow,
                "sequence length " + std::to_string(input.seq_len) +
                    " exceeds max_len " + std::to_string(config_.max_len));
  }
  auto x = tn::embedding(param("embeddings.token"), std::span(input.ids));
  if (!config_.use_emd) {
    x = tn::add_positions(x, param("embeddings.absolute_position"), input.seq_len);
  }
  x = tn::layer_norm(x, param("embeddings.norm.gain"), param("embeddings.norm.bias"));
  x = tn::mask_rows(x, input.attention_mask);
  return tn::dropout(x, config_.dropout, state.rng, state.training);
}

template <typename T>
Var<T> Encoder<T>::attention(std::size_t layer, const Var<T>& query_in,
                             const Var<T>& kv_in, const Mask& mask,
                             std::size_t seq_len, ForwardState& state) const {
  auto proj = [&](const char* which, const Var<T>& x) {
    const std::string base = layer_name(layer, std::string("attention.") + which);
    return tn::linear(x, param(base + ".weight"), param(base + ".bias"));
  };
  auto q = proj("query", query_in);
  auto k = proj("key", kv_in);
  auto v = proj("value", kv_in);
  Var<T> qr;
  Var<T> kr;
  if (config_.use_disentangled) {
    auto rel = param("encoder.relative_position");
    qr = tn::matmul(rel, param(layer_name(layer, "attention.pos_query.weight")));
    kr = tn::matmul(rel, param(layer_name(layer, "attention.pos_key.weight")));
  }
  tn::AttentionSpec spec{seq_len, config_.heads, config_.max_relative,
                         config_.use_disentangled};
  auto context = tn::attention(q, k, v, qr, kr, mask, spec);
  auto out = proj("output", context);
  return tn::dropout(out, config_.dropout, state.rng, state.training);
}

template <typename T>
Var<T> Encoder<T>::ngie_branch(const Var<T>& h0, std::size_t seq_len,
                               ForwardState& state) const {
  auto c = tn::conv1d(h0, param(layer_name(0, "ngie.kernel")),
                      param(layer_name(0, "ngie.bias")), seq_len);
  return tn::tanh(tn::dropout(c, config_.dropout, state.rng, state.training));
}

template <typename T>
Var<T> Encoder<T>::block(std::size_t layer, const Var<T>& query_in,
                         const Var<T>& kv_in, const Mask& mask,
                         std::size_t seq_len, ForwardState& state,
                         const Var<T>* conv_branch) const {
  auto residual = tn::add(query_in, attention(layer, query_in, kv_in, mask, seq_len, state));
  if (conv_branch != nullptr) residual = tn::add(residual, *conv_branch);
  auto a = tn::layer_norm(residual, param(layer_name(layer, "attention.norm.gain")),
                          param(layer_name(layer, "attention.norm.bias")));
  auto f = tn::linear(a, param(layer_name(layer, "ffn.in.weight")),
                      param(layer_name(layer, "ffn.in.bias")));
  f = tn::linear(tn::gelu(f), param(layer_name(layer, "ffn.out.weight")),
                 param(layer_name(layer, "ffn.out.bias")));
  f = tn::dropout(f, config_.dropout, state.rng, state.training);
  return tn::layer_norm(tn::add(a, f), param(layer_name(layer, "ffn.norm.gain")),
                        param(layer_name(layer, "ffn.norm.bias")));
}

template <typename T>
Var<T> Encoder<T>::enhanced_mask_decoder(const Var<T>& h_penultimate,
                                         const Mask& mask, std::size_t seq_len,
                                         ForwardState& state) const {
  const std::size_t last = config_.layers - 1;
  auto query = tn::add_positions(h_penultimate, param("embeddings.absolute_position"),
                                 seq_len);
  for (int step = 0; step < 2; ++step) {
    query = block(last, query, h_penultimate, mask, seq_len, state);
  }
  return query;
}

template <typename T>
EncoderTrace<T> Encoder<T>::run(const EncoderInput& input, ForwardState& state) const {
  EncoderTrace<T> trace;
  const std::size_t n = input.seq_len;
  const Mask& mask = input.attention_mask;
  trace.embeddings = embed(input, state);
  Var<T> x = trace.embeddings;
  const std::size_t plain_layers = config_.use_emd ? config_.layers - 1 : config_.layers;
  for (std::size_t l = 0; l < plain_layers; ++l) {
    if (l == 0 && config_.use_ngie) {
      auto conv = ngie_branch(x, n, state);
      x = block(l, x, x, mask, n, state, &conv);
    } else {
      x = block(l, x, x, mask, n, state);
    }
    trace.layer_outputs.push_back(x);
  }
  trace.final = config_.use_emd ? enhanced_mask_decoder(x, mask, n, state) : x;
  return trace;
}

template <typename T>
Var<T> Encoder<T>::mlm_logits(const Var<T>& hidden, ForwardState&) const {
  auto h = tn::linear(hidden, param("mlm.dense.weight"), param("mlm.dense.bias"));
  h = tn::layer_norm(tn::gelu(h), param("mlm.norm.gain"), param("mlm.norm.bias"));
  return tn::linear(h, param("mlm.decoder.weight"), param("mlm.decoder.bias"));
}

template <typename T>
MlmOutput<T> Encoder<T>::forward_mlm(const MaskedBatch& batch, ForwardState& state) const {
  auto hidden = hidden_states(batch.input, state);
  MlmOutput<T> out;
  out.logits = mlm_logits(hidden, state);
  out.loss = tn::cross_entropy(out.logits, std::span(batch.target_ids), batch.loss_mask);
  return out;
}

template <typename T>
Var<T> Encoder<T>::mean_pool(const Var<T>& hidden, const EncoderInput& input) const {
  return tn::masked_mean_rows(hidden, input.attention_mask, input.seq_len);
}

template <typename T>
std::vector<Tensor<T>> Encoder<T>::snapshot() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) out.push_back(params_[i].value());
  return out;
}

template <typename T>
void Encoder<T>::restore(const std::vector<Tensor<T>>& values) {
  if (values.size() != params_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "snapshot size does not match model");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i].same_shape(params_[i].value())) {
      throw Error(ErrorCode::ShapeMismatch, "snapshot shape for " + params_[i].name());
    }
    params_[i].value() = values[i];
  }
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace helmlm::model
