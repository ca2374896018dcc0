// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "helmlm/tensor.hpp"

namespace helmlm::tensor {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (!has_grad) {
      grad = Tensor<T>(value.shape());
      has_grad = true;
    }
    return grad;
  }
};

/// Handle to a value in the computation graph. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return Var(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }
  /// Zero tensor when no gradient has reached this node.
  Tensor<T> grad() const {
    return node_->has_grad ? node_->grad : Tensor<T>(node_->value.shape());
  }

  /// Reverse-mode sweep seeded with ones; gradients accumulate into every
  /// reachable node that requires them.
  void backward() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Named trainable leaf. The gradient persists across backward passes until
/// zero_grad().
template <typename T>
class Parameter {
 public:
  Parameter(std::string name, Tensor<T> value)
      : name_(std::move(name)), node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = true;
  }

  const std::string& name() const { return name_; }
  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->has_grad; }
  void zero_grad() {
    if (node_->has_grad) node_->grad.fill(T(0));
  }
  Var<T> var() const { return Var<T>(node_); }
  bool trainable() const { return node_->requires_grad; }
  void set_trainable(bool on) { node_->requires_grad = on; }

 private:
  std::string name_;
  std::shared_ptr<Node<T>> node_;
};

/// Ordered, name-unique collection of parameters with stable addresses.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value);
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return items_.size(); }
  std::size_t element_count() const;
  Parameter<T>& operator[](std::size_t i) { return *items_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *items_[i]; }
  std::vector<Parameter<T>*> all();
  std::vector<Parameter<T>*> with_prefix(const std::string& prefix);
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter<T>>> items_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

using Mask = std::vector<std::uint8_t>;

// ---------------------------------------------------------------------------
// Primitive operations. All matrices are row-major rank-2 tensors; batched
// sequences are stacked as (batch * seq_len) x features.
// ---------------------------------------------------------------------------

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
/// Adds a length-cols vector to every row.
template <typename T> Var<T> add_row(const Var<T>& a, const Var<T>& row);
template <typename T> Var<T> scale(const Var<T>& a, T s);
/// x * weight + bias with weight stored in x out.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> softmax(const Var<T>& a);
template <typename T> Var<T> tanh(const Var<T>& a);
/// Exact form 0.5 x (1 + erf(x / sqrt 2)).
template <typename T> Var<T> gelu(const Var<T>& a);
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  T epsilon = T(1e-5));
/// Same-length 1-D convolution applied to each seq_len-row segment of x.
/// kernel has shape (width, in, out) with odd width; bias has length out.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias,
              std::size_t seq_len);
template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids);
/// Identity when !training; otherwise inverted dropout with a mask drawn
/// from rng.
template <typename T>
Var<T> dropout(const Var<T>& x, double rate, std::mt19937_64& rng,
               bool training);
/// Multiplies row r by mask[r] (0 or 1).
template <typename T> Var<T> mask_rows(const Var<T>& x, const Mask& mask);
/// Adds table rows 0..seq_len-1 to every seq_len-row segment of x. Throws
/// PositionOverflow when seq_len exceeds the table.
template <typename T>
Var<T> add_positions(const Var<T>& x, const Var<T>& table, std::size_t seq_len);
template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t count);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
/// Mean over rows with mask set within each seq_len segment; returns
/// batch x features. Throws EmptySequence for a segment with no set rows.
template <typename T>
Var<T> masked_mean_rows(const Var<T>& x, const Mask& mask, std::size_t seq_len);
/// Mean token cross-entropy over rows with mask set; a constant zero when no
/// row is selected.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> targets,
                     const Mask& mask);
template <typename T>
Var<T> mse_loss(const Var<T>& prediction, std::span<const T> target);
/// Mean of -[w y log s(z) + (1 - y) log(1 - s(z))] over rows.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, std::span<const T> target,
                       T positive_weight);

struct AttentionSpec {
  std::size_t seq_len = 0;
  std::size_t heads = 1;
  std::size_t max_relative = 1;  // kappa
  bool disentangled = true;
};

/// Relative bucket: 0 for i-j <= -kappa, 2 kappa - 1 for i-j >= kappa,
/// i - j + kappa otherwise.
std::size_t relative_bucket(std::ptrdiff_t i, std::ptrdiff_t j,
                            std::size_t kappa);

/// Multi-head attention core over projected inputs. Each head's score is
/// q_i.k_j + q_i.kr[d(i,j)] + k_j.qr[d(j,i)] scaled by 1/sqrt(3 d_h) when
/// disentangled, or q_i.k_j / sqrt(d_h) otherwise. Masked keys receive zero
/// weight. Returns the concatenated head outputs before output projection.
/// qr and kr are (2 kappa) x hidden and ignored when !spec.disentangled.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const Var<T>& qr, const Var<T>& kr, const Mask& key_mask,
                 const AttentionSpec& spec);

/// Throws NumericOverflow naming the op if any element is not finite.
template <typename T>
void check_finite(const Tensor<T>& t, const char* op);

/// Max over parameter entries of |analytic - central difference| /
/// max(1, |central difference|). f must return a scalar and be deterministic.
template <typename T>
double grad_check(const std::function<Var<T>()>& f,
                  std::span<Parameter<T>* const> params, double epsilon = 1e-5);

}  // namespace helmlm::tensor
