// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "helmlm/checkpoint.hpp"
#include "helmlm/encoder.hpp"
#include "helmlm/splits.hpp"
#include "helmlm/tokenizer.hpp"

namespace helmlm::training {

using tensor::Parameter;
using tensor::ParameterSet;
using tensor::Tensor;
using tensor::Var;

// ---------------------------------------------------------------------------
// Optimization

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct ParamGroup {
  std::string name;
  std::vector<Parameter<T>*> params;
  double lr = 1e-4;
  double weight_decay = 0.01;
};

/// First and second moments per parameter, in group order.
template <typename T>
struct OptimizerState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::size_t step = 0;
  AdamWConfig hyper;
};

/// Adam with decoupled weight decay:
///   p <- p - lr wd p - lr m_hat / (sqrt(v_hat) + eps).
/// Parameters without a gradient are treated as having a zero gradient.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) { state_.hyper = config; }

  void add_group(ParamGroup<T> group);
  const std::vector<ParamGroup<T>>& groups() const { return groups_; }
  std::vector<Parameter<T>*> all_parameters() const;

  /// Every group's lr is multiplied by lr_factor for this step. Throws
  /// NonFiniteGradient, naming the parameter, before touching any weight.
  void step(double lr_factor = 1.0);
  void zero_grad();

  const OptimizerState<T>& state() const { return state_; }
  void set_state(OptimizerState<T> state);

 private:
  std::vector<ParamGroup<T>> groups_;
  OptimizerState<T> state_;
};

struct CosineSchedule {
  double base_lr = 1e-4;
  double min_lr = 0.0;
  std::size_t total_steps = 1;
};

/// min + (base - min)(1 + cos(pi step / total)) / 2, held at min past total.
double cosine_lr(std::size_t step, const CosineSchedule& schedule);

/// Scales every gradient by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the scale applied (1 when untouched).
template <typename T>
double clip_gradients(std::span<Parameter<T>* const> params, double max_norm = 1.0);

/// Global L2 norm over the gradients present.
template <typename T>
double gradient_norm(std::span<Parameter<T>* const> params);

/// Optimizer moments stored as extra tensors "optimizer.m.<name>" and
/// "optimizer.v.<name>" plus step and hyperparameters in the metadata.
template <typename T>
void attach_optimizer(checkpoint::Checkpoint& ckpt, const AdamW<T>& opt);
template <typename T>
void restore_optimizer(const checkpoint::Checkpoint& ckpt, AdamW<T>& opt);

// ---------------------------------------------------------------------------
// Run configuration

enum class Protocol { Pretrain, FullFinetune, HeadFinetune, LinearProbe };
enum class Task { Regression, Binary };

std::string_view to_string(Protocol p);
std::optional<Protocol> protocol_from_string(std::string_view name);
std::string_view to_string(Task t);
std::optional<Task> task_from_string(std::string_view name);

struct TrainRunConfig {
  Protocol protocol = Protocol::Pretrain;
  double base_lr = 1e-4;     // pre-training
  double min_lr = 0.0;       // as a fraction of each group's lr when fine-tuning
  double encoder_lr = 3e-5;  // full fine-tuning
  double head_lr = 1e-4;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  std::size_t patience = 20;
  std::size_t max_epochs = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double val_fraction = 0.05;  // pre-training hold-out
  double positive_weight = 4.0;
  std::optional<std::size_t> fold;  // fine-tune a single fold

  /// Throws ConfigError.
  void validate() const;
};

/// Defaults per protocol; linear probing trains its layer at 1e-3.
TrainRunConfig default_run_config(Protocol protocol);

/// Flat key = value pairs; unknown keys raise ConfigError.
void apply_setting(TrainRunConfig& config, const std::string& key, const std::string& value);
nlohmann::json to_json(const TrainRunConfig& config);

// ---------------------------------------------------------------------------
// Prediction heads

enum class HeadKind {
  ResidualMlp3,
  OfficialMlp3,
  Mlp2Tanh,
  SingleLinear,
  UnifiedPpiResidualMlp,
};

std::string_view to_string(HeadKind k);
std::optional<HeadKind> head_kind_from_string(std::string_view name);

struct HeadSpec {
  HeadKind kind = HeadKind::ResidualMlp3;
  std::vector<std::size_t> hidden;  // empty: every hidden layer = input dim
  double dropout = 0.1;
};

/// Hidden widths the head will use for a given input dimension.
std::vector<std::size_t> resolved_hidden(const HeadSpec& spec, std::size_t input_dim);

/// Scalar-output MLP. Parameters are named "head.<i>.{weight,bias,...}".
template <typename T>
class Head {
 public:
  Head(HeadSpec spec, std::size_t input_dim, std::uint64_t seed);

  const HeadSpec& spec() const { return spec_; }
  std::size_t input_dim() const { return input_dim_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  /// rows x input_dim -> rows x 1.
  Var<T> forward(const Var<T>& x, model::ForwardState& state) const;

 private:
  Var<T> hidden_layer(std::size_t i, const Var<T>& x, model::ForwardState& state) const;

  HeadSpec spec_;
  std::size_t input_dim_;
  std::size_t hidden_layers_;
  ParameterSet<T> params_;
};

// ---------------------------------------------------------------------------
// Pre-training

struct EpochRecord {
  std::size_t fold = 0;
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;  // rate at the last step of the epoch
};

nlohmann::json to_json(const EpochRecord& r);

struct PretrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t steps = 0;
  std::vector<std::size_t> validation_rows;  // indices into the corpus
};

/// Epoch loop with fresh masks per epoch, a fixed seeded validation subset
/// with fixed masks, cosine decay over max_epochs * steps_per_epoch, early
/// stopping on validation loss. The encoder is left at its best epoch.
template <typename T>
PretrainResult pretrain(model::Encoder<T>& encoder,
                        std::span<const std::vector<tokenizer::TokenId>> sequences,
                        const tokenizer::Vocabulary& vocab, const TrainRunConfig& config,
                        const std::function<void(const EpochRecord&)>& on_epoch = {});

// ---------------------------------------------------------------------------
// Fine-tuning

struct Example {
  std::string id;
  std::vector<tokenizer::TokenId> tokens;  // empty when no encoder is used
  std::vector<double> extra;               // appended after the pooled vector
  double target = 0.0;
};

/// Peptide tokens plus the protein vector for each pair. Precomputed
/// peptide vectors, when given, replace the tokens. MissingProteinVector
/// when a protein has no embedding.
std::vector<Example> pair_examples(
    std::span<const splits::PairRecord> pairs,
    const std::map<std::string, std::vector<double>>& protein_vectors,
    const tokenizer::Tokenizer* tok,
    const std::map<std::string, std::vector<double>>* peptide_vectors = nullptr);

struct Prediction {
  std::string id;
  double y_true = 0.0;
  double y_pred = 0.0;  // regression value or positive-class probability
};

struct FoldResult {
  std::size_t fold = 0;
  std::vector<Prediction> predictions;  // test role
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::map<std::string, double> metrics;
  std::string encoder_hash_before;
  std::string encoder_hash_after;
};

/// Trains one head per fold. encoder may be null when every example carries
/// its features in `extra`. Frozen-encoder protocols embed each example once.
template <typename T>
std::vector<FoldResult> finetune(const checkpoint::Checkpoint* encoder,
                                 std::span<const Example> examples,
                                 const splits::DatasetSplit& split, Task task,
                                 const HeadSpec& head, const TrainRunConfig& config,
                                 const std::function<void(const EpochRecord&)>& on_epoch = {});

extern template class AdamW<float>;
extern template class AdamW<double>;
extern template class Head<float>;
extern template class Head<double>;

}  // namespace helmlm::training
