// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include "helmlm/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "helmlm/corpus.hpp"
#include "helmlm/errors.hpp"
#include "helmlm/evaluation.hpp"

namespace helmlm::training {

namespace tn = helmlm::tensor;

// ---------------------------------------------------------------------------
// AdamW

template <typename T>
void AdamW<T>::add_group(ParamGroup<T> group) {
  for (auto* p : group.params) {
    state_.m.emplace_back(p->value().shape());
    state_.v.emplace_back(p->value().shape());
  }
  groups_.push_back(std::move(group));
}

template <typename T>
std::vector<Parameter<T>*> AdamW<T>::all_parameters() const {
  std::vector<Parameter<T>*> out;
  for (const auto& g : groups_) out.insert(out.end(), g.params.begin(), g.params.end());
  return out;
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& g : groups_) {
    for (auto* p : g.params) p->zero_grad();
  }
}

template <typename T>
void AdamW<T>::step(double lr_factor) {
  for (const auto& g : groups_) {
    for (auto* p : g.params) {
      if (!p->has_grad()) continue;
      for (T x : p->grad().values()) {
        if (!std::isfinite(static_cast<double>(x))) {
          throw Error(ErrorCode::NonFiniteGradient, "gradient of " + p->name() + " is not finite");
        }
      }
    }
  }
  ++state_.step;
  const auto& h = state_.hyper;
  const double t = static_cast<double>(state_.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  std::size_t slot = 0;
  for (auto& g : groups_) {
    const double lr = g.lr * lr_factor;
    const T decay = static_cast<T>(1.0 - lr * g.weight_decay);
    for (auto* p : g.params) {
      auto& m = state_.m[slot].storage();
      auto& v = state_.v[slot].storage();
      ++slot;
      auto& w = p->value().storage();
      const bool has = p->has_grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double grad = has ? static_cast<double>(p->grad()[i]) : 0.0;
        m[i] = static_cast<T>(h.beta1 * m[i] + (1.0 - h.beta1) * grad);
        v[i] = static_cast<T>(h.beta2 * v[i] + (1.0 - h.beta2) * grad * grad);
        const double m_hat = m[i] / bc1, v_hat = v[i] / bc2;
        w[i] = static_cast<T>(w[i] * decay - lr * m_hat / (std::sqrt(v_hat) + h.eps));
      }
    }
  }
}

template <typename T>
void AdamW<T>::set_state(OptimizerState<T> state) {
  std::size_t slot = 0;
  for (const auto& g : groups_) {
    for (auto* p : g.params) {
      if (slot >= state.m.size() || slot >= state.v.size() ||
          state.m[slot].shape() != p->value().shape() ||
          state.v[slot].shape() != p->value().shape()) {
        throw Error(ErrorCode::ShapeMismatch, "optimizer moments for " + p->name());
      }
      ++slot;
    }
  }
  if (slot != state.m.size()) throw Error(ErrorCode::ShapeMismatch, "optimizer state size");
  state_ = std::move(state);
}

double cosine_lr(std::size_t step, const CosineSchedule& s) {
  if (s.total_steps == 0 || step >= s.total_steps) return s.min_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(s.total_steps);
  return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename T>
double gradient_norm(std::span<Parameter<T>* const> params) {
  double sq = 0;
  for (auto* p : params) {
    if (!p->has_grad()) continue;
    for (T g : p->grad().values()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_gradients(std::span<Parameter<T>* const> params, double max_norm) {
  if (!(max_norm > 0)) throw Error(ErrorCode::InvalidArgument, "max_norm must be positive");
  const double norm = gradient_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double scale = max_norm / norm;
  for (auto* p : params) {
    if (!p->has_grad()) continue;
    for (T& g : p->grad().values()) g = static_cast<T>(g * scale);
  }
  return scale;
}

template <typename T>
void attach_optimizer(checkpoint::Checkpoint& ckpt, const AdamW<T>& opt) {
  const auto& st = opt.state();
  nlohmann::json groups = nlohmann::json::array();
  std::size_t slot = 0;
  for (const auto& g : opt.groups()) {
    nlohmann::json names = nlohmann::json::array();
    for (auto* p : g.params) {
      names.push_back(p->name());
      checkpoint::NamedTensor m{"optimizer.m." + p->name(), st.m[slot].shape(),
                                {st.m[slot].storage().begin(), st.m[slot].storage().end()}};
      checkpoint::NamedTensor v{"optimizer.v." + p->name(), st.v[slot].shape(),
                                {st.v[slot].storage().begin(), st.v[slot].storage().end()}};
      ckpt.tensors.push_back(std::move(m));
      ckpt.tensors.push_back(std::move(v));
      ++slot;
    }
    groups.push_back({{"name", g.name}, {"lr", g.lr}, {"weight_decay", g.weight_decay},
                      {"params", names}});
  }
  ckpt.metadata["optimizer"] = {{"step", st.step},
                                {"beta1", st.hyper.beta1},
                                {"beta2", st.hyper.beta2},
                                {"eps", st.hyper.eps},
                                {"groups", groups}};
}

template <typename T>
void restore_optimizer(const checkpoint::Checkpoint& ckpt, AdamW<T>& opt) {
  if (!ckpt.metadata.contains("optimizer")) {
    throw Error(ErrorCode::CheckpointError, "checkpoint carries no optimizer state");
  }
  const auto& meta = ckpt.metadata.at("optimizer");
  OptimizerState<T> st;
  st.step = meta.at("step").get<std::size_t>();
  st.hyper = {meta.at("beta1").get<double>(), meta.at("beta2").get<double>(),
              meta.at("eps").get<double>()};
  std::string missing;
  for (auto* p : opt.all_parameters()) {
    for (const char* which : {"optimizer.m.", "optimizer.v."}) {
      const auto* t = ckpt.find(which + p->name());
      Tensor<T> value(p->value().shape());
      if (t == nullptr) {
        missing += (missing.empty() ? "" : ", ") + (which + p->name());
      } else if (t->shape != value.shape()) {
        throw Error(ErrorCode::CheckpointError, "tensor " + t->name + " has the wrong shape");
      } else {
        std::copy(t->data.begin(), t->data.end(), value.storage().begin());
      }
      (which[10] == 'm' ? st.m : st.v).push_back(std::move(value));
    }
  }
  if (!missing.empty()) throw Error(ErrorCode::CheckpointError, "missing tensor(s): " + missing);
  opt.set_state(std::move(st));
}

// ---------------------------------------------------------------------------
// Configuration

std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::Pretrain: return "pretrain";
    case Protocol::FullFinetune: return "full_ft";
    case Protocol::HeadFinetune: return "head_ft";
    case Protocol::LinearProbe: return "linear_probe";
  }
  return "pretrain";
}

std::optional<Protocol> protocol_from_string(std::string_view name) {
  for (auto p : {Protocol::Pretrain, Protocol::FullFinetune, Protocol::HeadFinetune,
                 Protocol::LinearProbe}) {
    if (name == to_string(p)) return p;
  }
  if (name == "full") return Protocol::FullFinetune;
  if (name == "head") return Protocol::HeadFinetune;
  if (name == "linear") return Protocol::LinearProbe;
  return std::nullopt;
}

std::string_view to_string(Task t) { return t == Task::Regression ? "regression" : "binary"; }

std::optional<Task> task_from_string(std::string_view name) {
  if (name == "regression") return Task::Regression;
  if (name == "binary" || name == "classification") return Task::Binary;
  return std::nullopt;
}

void TrainRunConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigError, m); };
  if (patience < 1) fail("patience must be at least 1");
  if (max_epochs < 1) fail("max_epochs must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(grad_clip > 0)) fail("grad_clip must be positive");
  if (base_lr < 0 || encoder_lr < 0 || head_lr < 0 || min_lr < 0) fail("learning rates must be >= 0");
  if (weight_decay < 0) fail("weight_decay must be >= 0");
  if (val_fraction < 0 || val_fraction >= 1) fail("val_fraction must lie in [0, 1)");
  if (!(positive_weight > 0)) fail("positive_weight must be positive");
}

TrainRunConfig default_run_config(Protocol protocol) {
  TrainRunConfig c;
  c.protocol = protocol;
  if (protocol == Protocol::LinearProbe) c.head_lr = 1e-3;
  return c;
}

void apply_setting(TrainRunConfig& c, const std::string& key, const std::string& value) {
  auto number = [&]() {
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, key + ": not a number: " + value);
    }
  };
  auto count = [&]() {
    const double v = number();
    if (v < 0 || v != std::floor(v)) throw Error(ErrorCode::ConfigError, key + ": expected a count");
    return static_cast<std::size_t>(v);
  };
  if (key == "protocol") {
    auto p = protocol_from_string(value);
    if (!p) throw Error(ErrorCode::ConfigError, "unknown protocol " + value);
    c.protocol = *p;
  } else if (key == "base_lr" || key == "lr") {
    c.base_lr = number();
  } else if (key == "min_lr") {
    c.min_lr = number();
  } else if (key == "encoder_lr") {
    c.encoder_lr = number();
  } else if (key == "head_lr") {
    c.head_lr = number();
  } else if (key == "weight_decay") {
    c.weight_decay = number();
  } else if (key == "grad_clip" || key == "grad_clip_max_norm") {
    c.grad_clip = number();
  } else if (key == "patience") {
    c.patience = count();
  } else if (key == "max_epochs") {
    c.max_epochs = count();
  } else if (key == "batch_size") {
    c.batch_size = count();
  } else if (key == "seed") {
    c.seed = static_cast<std::uint64_t>(count());
  } else if (key == "val_fraction") {
    c.val_fraction = number();
  } else if (key == "positive_weight") {
    c.positive_weight = number();
  } else if (key == "fold") {
    c.fold = count();
  } else {
    throw Error(ErrorCode::ConfigError, "unknown training setting " + key);
  }
}

nlohmann::json to_json(const TrainRunConfig& c) {
  nlohmann::json j = {{"protocol", to_string(c.protocol)}, {"base_lr", c.base_lr},
                      {"min_lr", c.min_lr},                {"encoder_lr", c.encoder_lr},
                      {"head_lr", c.head_lr},              {"weight_decay", c.weight_decay},
                      {"grad_clip", c.grad_clip},          {"patience", c.patience},
                      {"max_epochs", c.max_epochs},        {"batch_size", c.batch_size},
                      {"seed", c.seed},                    {"val_fraction", c.val_fraction},
                      {"positive_weight", c.positive_weight}};
  if (c.fold) j["fold"] = *c.fold;
  return j;
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"fold", r.fold}, {"epoch", r.epoch}, {"train_loss", r.train_loss},
          {"val_loss", r.val_loss}, {"lr", r.lr}};
}

// ---------------------------------------------------------------------------
// Heads

std::string_view to_string(HeadKind k) {
  switch (k) {
    case HeadKind::ResidualMlp3: return "residual_mlp_3layer";
    case HeadKind::OfficialMlp3: return "official_mlp_3layer";
    case HeadKind::Mlp2Tanh: return "mlp_2layer_tanh";
    case HeadKind::SingleLinear: return "single_linear";
    case HeadKind::UnifiedPpiResidualMlp: return "unified_ppi_residual_mlp";
  }
  return "single_linear";
}

std::optional<HeadKind> head_kind_from_string(std::string_view name) {
  for (auto k : {HeadKind::ResidualMlp3, HeadKind::OfficialMlp3, HeadKind::Mlp2Tanh,
                 HeadKind::SingleLinear, HeadKind::UnifiedPpiResidualMlp}) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

namespace {

std::size_t hidden_layer_count(HeadKind k) {
  switch (k) {
    case HeadKind::Mlp2Tanh: return 1;
    case HeadKind::SingleLinear: return 0;
    default: return 2;
  }
}

bool uses_norm(HeadKind k) {
  return k == HeadKind::ResidualMlp3 || k == HeadKind::UnifiedPpiResidualMlp;
}

}  // namespace

std::vector<std::size_t> resolved_hidden(const HeadSpec& spec, std::size_t input_dim) {
  const std::size_t n = hidden_layer_count(spec.kind);
  if (spec.hidden.empty()) return std::vector<std::size_t>(n, input_dim);
  if (spec.hidden.size() != n) {
    throw Error(ErrorCode::ConfigError, std::string(to_string(spec.kind)) + " takes " +
                                            std::to_string(n) + " hidden sizes, got " +
                                            std::to_string(spec.hidden.size()));
  }
  for (auto h : spec.hidden) {
    if (h == 0) throw Error(ErrorCode::ConfigError, "hidden sizes must be positive");
  }
  return spec.hidden;
}

template <typename T>
Head<T>::Head(HeadSpec spec, std::size_t input_dim, std::uint64_t seed)
    : spec_(std::move(spec)), input_dim_(input_dim) {
  if (input_dim == 0) throw Error(ErrorCode::ConfigError, "head input dimension is zero");
  if (spec_.dropout < 0 || spec_.dropout >= 1) {
    throw Error(ErrorCode::ConfigError, "head dropout must lie in [0, 1)");
  }
  const auto widths = resolved_hidden(spec_, input_dim);
  hidden_layers_ = widths.size();
  std::mt19937_64 rng(seed);
  auto add_linear = [&](const std::string& base, std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T> w({in, out});
    for (auto& x : w.values()) x = static_cast<T>(u(rng));
    params_.add(base + ".weight", std::move(w));
    params_.add(base + ".bias", Tensor<T>({out}));
  };
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string base = "head." + std::to_string(i);
    add_linear(base, in, widths[i]);
    if (uses_norm(spec_.kind)) {
      params_.add(base + ".norm.gain", Tensor<T>({widths[i]}, T(1)));
      params_.add(base + ".norm.bias", Tensor<T>({widths[i]}));
    }
    in = widths[i];
  }
  add_linear("head.out", in, 1);
}

template <typename T>
Var<T> Head<T>::hidden_layer(std::size_t i, const Var<T>& x, model::ForwardState& state) const {
  const std::string base = "head." + std::to_string(i);
  auto h = tn::linear(x, params_.get(base + ".weight").var(), params_.get(base + ".bias").var());
  switch (spec_.kind) {
    case HeadKind::ResidualMlp3:
    case HeadKind::UnifiedPpiResidualMlp: {
      h = tn::layer_norm(tn::gelu(h), params_.get(base + ".norm.gain").var(),
                         params_.get(base + ".norm.bias").var());
      h = tn::dropout(h, spec_.dropout, state.rng, state.training);
      if (h.shape() == x.shape()) h = tn::add(h, x);
      return h;
    }
    case HeadKind::OfficialMlp3:
      return tn::dropout(tn::gelu(h), spec_.dropout, state.rng, state.training);
    case HeadKind::Mlp2Tanh:
      return tn::dropout(tn::tanh(h), spec_.dropout, state.rng, state.training);
    case HeadKind::SingleLinear:
      break;
  }
  return h;
}

template <typename T>
Var<T> Head<T>::forward(const Var<T>& x, model::ForwardState& state) const {
  if (x.shape().size() != 2 || x.shape()[1] != input_dim_) {
    throw Error(ErrorCode::ShapeMismatch, "head expects " + std::to_string(input_dim_) +
                                              " features, got " + tn::shape_string(x.shape()));
  }
  Var<T> h = x;
  for (std::size_t i = 0; i < hidden_layers_; ++i) h = hidden_layer(i, h, state);
  return tn::linear(h, params_.get("head.out.weight").var(), params_.get("head.out.bias").var());
}

// ---------------------------------------------------------------------------
// Pre-training

namespace {

constexpr std::uint64_t kValidationStream = 0x76616c6964ULL;

std::size_t count_set(const Mask& m) {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
}

template <typename T>
double mlm_eval_loss(const model::Encoder<T>& encoder, const std::vector<MaskedBatch>& batches) {
  double total = 0;
  std::size_t tokens = 0;
  model::ForwardState state;
  state.training = false;
  for (const auto& b : batches) {
    const std::size_t c = count_set(b.loss_mask);
    if (c == 0) continue;
    total += static_cast<double>(encoder.forward_mlm(b, state).loss.value().item()) *
             static_cast<double>(c);
    tokens += c;
  }
  return tokens == 0 ? 0.0 : total / static_cast<double>(tokens);
}

}  // namespace

template <typename T>
PretrainResult pretrain(model::Encoder<T>& encoder,
                        std::span<const std::vector<tokenizer::TokenId>> sequences,
                        const tokenizer::Vocabulary& vocab, const TrainRunConfig& config,
                        const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (encoder.config().vocab_size != vocab.size()) {
    throw Error(ErrorCode::ConfigError,
                "model vocab_size " + std::to_string(encoder.config().vocab_size) +
                    " does not match the tokenizer (" + std::to_string(vocab.size()) + ")");
  }
  const std::size_t n = sequences.size();
  if (n < 2) throw Error(ErrorCode::InsufficientData, "pre-training needs at least 2 sequences");
  for (const auto& s : sequences) {
    if (s.empty()) throw Error(ErrorCode::EmptySequence, "empty sequence in the corpus");
    if (s.size() > encoder.config().max_len) {
      throw Error(ErrorCode::SequenceTooLong,
                  "sequence of " + std::to_string(s.size()) + " tokens exceeds max_len " +
                      std::to_string(encoder.config().max_len));
    }
  }

  PretrainResult result;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  {
    std::mt19937_64 rng(corpus::derive_seed(config.seed, kValidationStream));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(config.val_fraction * static_cast<double>(n)));
  if (config.val_fraction > 0) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  result.validation_rows.assign(order.begin(), order.begin() + long(n_val));
  std::sort(result.validation_rows.begin(), result.validation_rows.end());
  std::vector<std::size_t> train_rows(order.begin() + long(n_val), order.end());
  std::sort(train_rows.begin(), train_rows.end());

  corpus::MaskingOptions mopts;
  mopts.span_masking = encoder.config().use_span_mask;
  const auto pad = vocab.pad();

  std::vector<MaskedBatch> val_batches;
  for (std::size_t b = 0; b < n_val; b += config.batch_size) {
    std::vector<MaskedRow> rows;
    for (std::size_t i = b; i < std::min(n_val, b + config.batch_size); ++i) {
      const auto row = result.validation_rows[i];
      rows.push_back(corpus::apply_span_mask(
          sequences[row], vocab, corpus::derive_seed(config.seed, kValidationStream, row), mopts));
    }
    val_batches.push_back(collate(rows, pad));
  }

  const std::size_t steps_per_epoch =
      (train_rows.size() + config.batch_size - 1) / config.batch_size;
  const CosineSchedule schedule{1.0, config.base_lr > 0 ? config.min_lr / config.base_lr : 0.0,
                                config.max_epochs * steps_per_epoch};
  AdamW<T> opt;
  opt.add_group({"encoder", encoder.parameters().all(), config.base_lr, config.weight_decay});
  const auto params = opt.all_parameters();

  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor<T>> best_weights = encoder.snapshot();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<std::size_t> perm = train_rows;
    std::mt19937_64 shuffle_rng(corpus::derive_seed(config.seed, epoch, 0));
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    double loss_sum = 0, last_lr = 0;
    std::size_t loss_tokens = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<MaskedRow> rows;
      for (std::size_t i = s * config.batch_size;
           i < std::min(perm.size(), (s + 1) * config.batch_size); ++i) {
        rows.push_back(corpus::apply_span_mask(
            sequences[perm[i]], vocab, corpus::derive_seed(config.seed, epoch, perm[i] + 1), mopts));
      }
      const MaskedBatch batch = collate(rows, pad);
      const std::size_t c = count_set(batch.loss_mask);
      last_lr = config.base_lr * cosine_lr(result.steps, schedule);
      if (c == 0) continue;
      model::ForwardState state;
      state.training = true;
      state.rng.seed(corpus::derive_seed(config.seed, epoch, (std::uint64_t{1} << 32) | s));
      opt.zero_grad();
      auto out = encoder.forward_mlm(batch, state);
      const double loss = static_cast<double>(out.loss.value().item());
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::NumericOverflow, "non-finite MLM loss at epoch " + std::to_string(epoch));
      }
      out.loss.backward();
      clip_gradients<T>(params, config.grad_clip);
      opt.step(cosine_lr(result.steps, schedule));
      ++result.steps;
      loss_sum += loss * static_cast<double>(c);
      loss_tokens += c;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_tokens == 0 ? 0.0 : loss_sum / static_cast<double>(loss_tokens);
    rec.val_loss = n_val > 0 ? mlm_eval_loss(encoder, val_batches) : rec.train_loss;
    rec.lr = last_lr;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_loss < best) {
      best = rec.val_loss;
      result.best_epoch = epoch;
      best_weights = encoder.snapshot();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  encoder.restore(best_weights);
  result.best_val_loss = best;
  return result;
}

// ---------------------------------------------------------------------------
// Fine-tuning

std::vector<Example> pair_examples(
    std::span<const splits::PairRecord> pairs,
    const std::map<std::string, std::vector<double>>& protein_vectors,
    const tokenizer::Tokenizer* tok,
    const std::map<std::string, std::vector<double>>* peptide_vectors) {
  std::vector<Example> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    auto prot = protein_vectors.find(p.protein_id);
    if (prot == protein_vectors.end()) {
      throw Error(ErrorCode::MissingProteinVector, "no embedding for protein " + p.protein_id);
    }
    Example e;
    e.id = p.id();
    e.target = p.positive ? 1.0 : 0.0;
    if (peptide_vectors != nullptr) {
      auto pep = peptide_vectors->find(p.peptide_key);
      if (pep == peptide_vectors->end()) {
        throw Error(ErrorCode::MissingLabel, "no embedding for peptide " + p.peptide_key);
      }
      e.extra = pep->second;
    } else {
      if (tok == nullptr) throw Error(ErrorCode::InvalidArgument, "pair examples need a tokenizer");
      if (p.peptide_helm.empty()) {
        throw Error(ErrorCode::MissingLabel, "pair " + e.id + " has no peptide_helm");
      }
      e.tokens = tokenizer::encode(p.peptide_helm, tok->vocab, tok->compression);
    }
    e.extra.insert(e.extra.end(), prot->second.begin(), prot->second.end());
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> rows_of(const Tensor<T>& m, std::span<const std::size_t> idx) {
  const std::size_t cols = m.shape()[1];
  Tensor<T> out({idx.size(), cols});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(m.data() + idx[i] * cols, cols, out.data() + i * cols);
  }
  return out;
}

template <typename T>
Tensor<T> extras_of(std::span<const Example> ex, std::span<const std::size_t> idx, std::size_t dim) {
  Tensor<T> out({idx.size(), dim});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& e = ex[idx[i]].extra;
    for (std::size_t j = 0; j < dim; ++j) out.at(i, j) = static_cast<T>(e[j]);
  }
  return out;
}

template <typename T>
EncoderInput input_of(std::span<const Example> ex, std::span<const std::size_t> idx,
                      tokenizer::TokenId pad) {
  std::vector<std::vector<tokenizer::TokenId>> seqs;
  seqs.reserve(idx.size());
  for (auto i : idx) seqs.push_back(ex[i].tokens);
  return make_input(seqs, pad);
}

std::vector<std::size_t> resolve_ids(const std::vector<std::string>& ids,
                                     const std::map<std::string, std::size_t>& index) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) {
      throw Error(ErrorCode::InvalidArgument, "split id " + id + " has no example");
    }
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

template <typename T>
std::vector<FoldResult> finetune(const checkpoint::Checkpoint* ckpt,
                                 std::span<const Example> examples,
                                 const splits::DatasetSplit& split, Task task,
                                 const HeadSpec& head_spec, const TrainRunConfig& config,
                                 const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  const Protocol protocol = config.protocol;
  if (protocol == Protocol::Pretrain) {
    throw Error(ErrorCode::ConfigError, "fine-tuning needs full_ft, head_ft or linear_probe");
  }
  if (examples.empty()) throw Error(ErrorCode::InsufficientData, "no examples");
  if (protocol == Protocol::FullFinetune && ckpt == nullptr) {
    throw Error(ErrorCode::ConfigError, "full fine-tuning needs an encoder checkpoint");
  }
  const std::size_t extra_dim = examples.front().extra.size();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    if (e.extra.size() != extra_dim) {
      throw Error(ErrorCode::ShapeMismatch, "example " + e.id + " has " +
                                                std::to_string(e.extra.size()) +
                                                " extra features, expected " +
                                                std::to_string(extra_dim));
    }
    if (ckpt != nullptr && e.tokens.empty()) {
      throw Error(ErrorCode::EmptySequence, "example " + e.id + " has no tokens");
    }
    if (task == Task::Binary && e.target != 0.0 && e.target != 1.0) {
      throw Error(ErrorCode::InvalidArgument, "binary target of " + e.id + " is not 0/1");
    }
    if (!index.emplace(e.id, i).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate example id " + e.id);
    }
  }

  HeadSpec spec = head_spec;
  if (protocol == Protocol::LinearProbe) {
    spec.kind = HeadKind::SingleLinear;
    spec.hidden.clear();
  }
  const tokenizer::TokenId pad =
      ckpt != nullptr ? static_cast<tokenizer::TokenId>(ckpt->config.vocab_size - 1) : 0;
  const std::size_t enc_dim = ckpt != nullptr ? ckpt->config.hidden : 0;
  const std::size_t feature_dim = enc_dim + extra_dim;
  if (feature_dim == 0) throw Error(ErrorCode::InvalidArgument, "examples carry no features");
  const bool frozen = protocol != Protocol::FullFinetune;

  // Frozen encoders embed every example once, in evaluation mode.
  std::optional<model::Encoder<T>> base;
  Tensor<T> features;
  if (ckpt != nullptr) base.emplace(checkpoint::to_encoder<T>(*ckpt));
  if (frozen) {
    std::vector<std::size_t> all(examples.size());
    std::iota(all.begin(), all.end(), 0);
    features = extras_of<T>(examples, all, extra_dim);
    if (base) {
      for (auto* p : base->parameters().all()) p->set_trainable(false);
      Tensor<T> pooled({examples.size(), enc_dim});
      model::ForwardState state;
      for (std::size_t b = 0; b < all.size(); b += config.batch_size) {
        std::span<const std::size_t> idx(all.data() + b, std::min(config.batch_size, all.size() - b));
        const auto v = base->pooled(input_of<T>(examples, idx, pad), state).value();
        std::copy_n(v.data(), v.size(), pooled.data() + b * enc_dim);
      }
      features = extra_dim == 0 ? pooled
                                : tn::concat_cols<T>({Var<T>::constant(pooled),
                                                      Var<T>::constant(features)})
                                      .value();
    }
  }

  std::vector<std::size_t> folds;
  if (config.fold) {
    if (*config.fold >= split.fold_count()) {
      throw Error(ErrorCode::InvalidArgument, "fold " + std::to_string(*config.fold) +
                                                  " out of range (" +
                                                  std::to_string(split.fold_count()) + " folds)");
    }
    folds.push_back(*config.fold);
  } else {
    for (std::size_t f = 0; f < split.fold_count(); ++f) folds.push_back(f);
  }

  std::vector<FoldResult> results;
  for (const std::size_t f : folds) {
    const auto& fold = split.folds[f];
    const auto train = resolve_ids(fold.train, index);
    const auto val = resolve_ids(fold.val, index);
    const auto test = resolve_ids(fold.test, index);
    if (train.empty()) throw Error(ErrorCode::InsufficientData, "fold " + std::to_string(f) + " has no training rows");

    FoldResult result;
    result.fold = f;
    std::optional<model::Encoder<T>> enc;
    if (!frozen) enc.emplace(checkpoint::to_encoder<T>(*ckpt));
    model::Encoder<T>* encoder = enc ? &*enc : (base ? &*base : nullptr);
    if (encoder != nullptr) {
      result.encoder_hash_before = checkpoint::weights_hash(checkpoint::from_encoder(*encoder));
    }

    Head<T> head(spec, feature_dim, corpus::derive_seed(config.seed, f + 1, 7));
    AdamW<T> opt;
    if (!frozen) {
      opt.add_group({"encoder", encoder->parameters().all(), config.encoder_lr, config.weight_decay});
    }
    opt.add_group({"head", head.parameters().all(), config.head_lr, config.weight_decay});
    const auto params = opt.all_parameters();

    auto predict = [&](std::span<const std::size_t> idx, model::ForwardState& state) {
      Var<T> x;
      if (frozen) {
        x = Var<T>::constant(rows_of(features, idx));
      } else {
        x = encoder->pooled(input_of<T>(examples, idx, pad), state);
        if (extra_dim > 0) x = tn::concat_cols<T>({x, Var<T>::constant(extras_of<T>(examples, idx, extra_dim))});
      }
      return head.forward(x, state);
    };
    auto loss_of = [&](const Var<T>& out, std::span<const std::size_t> idx) {
      std::vector<T> y;
      y.reserve(idx.size());
      for (auto i : idx) y.push_back(static_cast<T>(examples[i].target));
      if (task == Task::Regression) return tn::mse_loss(out, std::span<const T>(y));
      return tn::bce_with_logits(out, std::span<const T>(y), static_cast<T>(config.positive_weight));
    };
    auto eval_loss = [&](const std::vector<std::size_t>& rows) {
      double total = 0;
      model::ForwardState state;
      for (std::size_t b = 0; b < rows.size(); b += config.batch_size) {
        std::span<const std::size_t> idx(rows.data() + b, std::min(config.batch_size, rows.size() - b));
        total += static_cast<double>(loss_of(predict(idx, state), idx).value().item()) *
                 static_cast<double>(idx.size());
      }
      return total / static_cast<double>(rows.size());
    };

    const std::size_t steps_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
    const CosineSchedule schedule{1.0, config.min_lr, config.max_epochs * steps_per_epoch};
    std::size_t step = 0, since_best = 0;
    double best = std::numeric_limits<double>::infinity();
    std::vector<Tensor<T>> best_head, best_enc;
    auto keep = [&]() {
      best_head.clear();
      for (std::size_t i = 0; i < head.parameters().size(); ++i) {
        best_head.push_back(head.parameters()[i].value());
      }
      if (!frozen) best_enc = encoder->snapshot();
    };
    keep();
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
      std::vector<std::size_t> perm = train;
      std::mt19937_64 shuffle_rng(corpus::derive_seed(config.seed, f + 1, epoch));
      std::shuffle(perm.begin(), perm.end(), shuffle_rng);
      double loss_sum = 0, last_lr = 0;
      for (std::size_t s = 0; s < steps_per_epoch; ++s) {
        std::span<const std::size_t> idx(perm.data() + s * config.batch_size,
                                         std::min(config.batch_size, perm.size() - s * config.batch_size));
        model::ForwardState state;
        state.training = true;
        state.rng.seed(corpus::derive_seed(config.seed, (f + 1) << 20 | epoch, s));
        opt.zero_grad();
        auto loss = loss_of(predict(idx, state), idx);
        const double lv = static_cast<double>(loss.value().item());
        if (!std::isfinite(lv)) {
          throw Error(ErrorCode::NumericOverflow, "non-finite loss in fold " + std::to_string(f));
        }
        loss.backward();
        clip_gradients<T>(params, config.grad_clip);
        const double factor = cosine_lr(step, schedule);
        last_lr = config.head_lr * factor;
        opt.step(factor);
        ++step;
        loss_sum += lv * static_cast<double>(idx.size());
      }
      EpochRecord rec;
      rec.fold = f;
      rec.epoch = epoch;
      rec.train_loss = loss_sum / static_cast<double>(train.size());
      rec.val_loss = val.empty() ? rec.train_loss : eval_loss(val);
      rec.lr = last_lr;
      result.history.push_back(rec);
      if (on_epoch) on_epoch(rec);
      if (rec.val_loss < best) {
        best = rec.val_loss;
        result.best_epoch = epoch;
        keep();
        since_best = 0;
      } else if (++since_best >= config.patience) {
        break;
      }
    }
    for (std::size_t i = 0; i < best_head.size(); ++i) head.parameters()[i].value() = best_head[i];
    if (!frozen) encoder->restore(best_enc);
    if (encoder != nullptr) {
      result.encoder_hash_after = checkpoint::weights_hash(checkpoint::from_encoder(*encoder));
    }

    std::vector<double> y_true, y_pred;
    model::ForwardState state;
    for (std::size_t b = 0; b < test.size(); b += config.batch_size) {
      std::span<const std::size_t> idx(test.data() + b, std::min(config.batch_size, test.size() - b));
      const auto out = predict(idx, state).value();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double v = static_cast<double>(out[i]);
        if (task == Task::Binary) v = 1.0 / (1.0 + std::exp(-v));
        result.predictions.push_back({examples[idx[i]].id, examples[idx[i]].target, v});
        y_true.push_back(examples[idx[i]].target);
        y_pred.push_back(v);
      }
    }
    try {
      if (task == Task::Regression) {
        const auto m = evaluation::regression_metrics(y_true, y_pred);
        result.metrics = {{"r2", m.r2}, {"pearson", m.pearson}, {"rmse", m.rmse}, {"mae", m.mae}};
      } else {
        std::vector<int> labels(y_true.begin(), y_true.end());
        const auto m = evaluation::classification_metrics(labels, y_pred);
        result.metrics = {{"roc_auc", m.roc_auc}, {"pr_auc", m.pr_auc}, {"mcc", m.mcc},
                          {"balanced_accuracy", m.balanced_accuracy}};
      }
    } catch (const Error& e) {
      // metrics stay empty for degenerate or empty test folds
      if (e.code() != ErrorCode::ZeroVariance && e.code() != ErrorCode::SingleClass &&
          e.code() != ErrorCode::InsufficientData) {
        throw;
      }
    }
    results.push_back(std::move(result));
  }
  return results;
}

// ---------------------------------------------------------------------------

template class AdamW<float>;
template class AdamW<double>;
template class Head<float>;
template class Head<double>;

#define HELMLM_INSTANTIATE(T)                                                              \
  template double gradient_norm(std::span<Parameter<T>* const>);                           \
  template double clip_gradients(std::span<Parameter<T>* const>, double);                  \
  template void attach_optimizer(checkpoint::Checkpoint&, const AdamW<T>&);                \
  template void restore_optimizer(const checkpoint::Checkpoint&, AdamW<T>&);               \
  template PretrainResult pretrain(model::Encoder<T>&,                                     \
                                   std::span<const std::vector<tokenizer::TokenId>>,       \
                                   const tokenizer::Vocabulary&, const TrainRunConfig&,    \
                                   const std::function<void(const EpochRecord&)>&);        \
  template std::vector<FoldResult> finetune<T>(                                            \
      const checkpoint::Checkpoint*, std::span<const Example>, const splits::DatasetSplit&, \
      Task, const HeadSpec&, const TrainRunConfig&,                                        \
      const std::function<void(const EpochRecord&)>&);

HELMLM_INSTANTIATE(float)
HELMLM_INSTANTIATE(double)

#undef HELMLM_INSTANTIATE

}  // namespace helmlm::training
