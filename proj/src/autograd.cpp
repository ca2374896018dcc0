// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include "helmlm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include <Eigen/Dense>

namespace helmlm::tensor {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;
template <typename T>
using Strided = Eigen::Map<MatRM<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStrided = Eigen::Map<const MatRM<T>, 0, Eigen::OuterStride<>>;

template <typename T>
MapRM<T> as_matrix(Tensor<T>& t) {
  return MapRM<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
CMapRM<T> as_matrix(const Tensor<T>& t) {
  return CMapRM<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<NodePtr<T>> parents,
                   std::function<void(Node<T>&)> backward_fn, const char* op) {
  check_finite(value, op);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr<T>& p) {
                                   return p && p->requires_grad;
                                 });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(node));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " +
                                            shape_string(a) + " vs " +
                                            shape_string(b));
}

void require_rank2(const char* op, const Shape& s) {
  if (s.size() != 2) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": expected a matrix, got " + shape_string(s));
  }
}

template <typename T>
bool wants(const Node<T>& self, std::size_t i) {
  return self.parents[i] && self.parents[i]->requires_grad;
}

template <typename T>
Tensor<T>& grad_of(Node<T>& self, std::size_t i) {
  return self.parents[i]->ensure_grad();
}

}  // namespace

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.values()) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::NumericOverflow,
                  std::string("non-finite value produced by ") + op);
    }
  }
}

template <typename T>
void Var<T>::backward() const {
  if (!node_ || !node_->requires_grad) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back().first;
    const std::size_t idx = stack.back().second;
    if (idx < n->parents.size()) {
      ++stack.back().second;
      Node<T>* p = n->parents[idx].get();
      if (p && p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (auto& g : node_->ensure_grad().values()) g += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->has_grad) n->backward_fn(*n);
  }
}

// --- ParameterSet -----------------------------------------------------------

template <typename T>
Parameter<T>& ParameterSet<T>::add(std::string name, Tensor<T> value) {
  if (index_.count(name) > 0) {
    throw Error(ErrorCode::InvalidArgument, "duplicate parameter " + name);
  }
  index_.emplace(name, items_.size());
  items_.push_back(std::make_unique<Parameter<T>>(std::move(name), std::move(value)));
  return *items_.back();
}

template <typename T>
Parameter<T>* ParameterSet<T>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : items_[it->second].get();
}

template <typename T>
const Parameter<T>* ParameterSet<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : items_[it->second].get();
}

template <typename T>
Parameter<T>& ParameterSet<T>::get(const std::string& name) {
  auto* p = find(name);
  if (p == nullptr) throw Error(ErrorCode::InvalidArgument, "no parameter " + name);
  return *p;
}

template <typename T>
const Parameter<T>& ParameterSet<T>::get(const std::string& name) const {
  const auto* p = find(name);
  if (p == nullptr) throw Error(ErrorCode::InvalidArgument, "no parameter " + name);
  return *p;
}

template <typename T>
std::size_t ParameterSet<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p->value().size();
  return n;
}

template <typename T>
std::vector<Parameter<T>*> ParameterSet<T>::all() {
  std::vector<Parameter<T>*> out;
  out.reserve(items_.size());
  for (auto& p : items_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<Parameter<T>*> ParameterSet<T>::with_prefix(const std::string& prefix) {
  std::vector<Parameter<T>*> out;
  for (auto& p : items_) {
    if (p->name().starts_with(prefix)) out.push_back(p.get());
  }
  return out;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : items_) p->zero_grad();
}

// --- elementwise and linear algebra ----------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank2("matmul", a.shape());
  require_rank2("matmul", b.shape());
  if (a.shape()[1] != b.shape()[0]) shape_error("matmul", a.shape(), b.shape());
  Tensor<T> out({a.shape()[0], b.shape()[1]});
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto dc = as_matrix(std::as_const(self.grad));
    if (wants(self, 0)) {
      as_matrix(grad_of(self, 0)).noalias() +=
          dc * as_matrix(std::as_const(self.parents[1]->value)).transpose();
    }
    if (wants(self, 1)) {
      as_matrix(grad_of(self, 1)).noalias() +=
          as_matrix(std::as_const(self.parents[0]->value)).transpose() * dc;
    }
  }, "matmul");
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  require_rank2("transpose", a.shape());
  Tensor<T> out({a.shape()[1], a.shape()[0]});
  as_matrix(out) = as_matrix(a.value()).transpose();
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    as_matrix(grad_of(self, 0)) += as_matrix(std::as_const(self.grad)).transpose();
  }, "transpose");
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(self, p)) continue;
      auto& g = grad_of(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  }, "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  }, "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(self, p)) continue;
      const auto& other = self.parents[1 - p]->value;
      auto& g = grad_of(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
  }, "mul");
}

template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  require_rank2("add_row", a.shape());
  const std::size_t n = a.shape()[1];
  if (row.value().size() != n) shape_error("add_row", a.shape(), row.shape());
  Tensor<T> out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += row.value()[c];
  }
  return make_result<T>(std::move(out), {a.node(), row.node()}, [n](Node<T>& self) {
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t r = 0; r < self.grad.rows(); ++r) {
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
      }
    }
  }, "add_row");
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return make_result<T>(std::move(out), {a.node()}, [s](Node<T>& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  }, "scale");
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank2("linear", x.shape());
  require_rank2("linear", weight.shape());
  if (x.shape()[1] != weight.shape()[0]) {
    shape_error("linear", x.shape(), weight.shape());
  }
  const std::size_t out_dim = weight.shape()[1];
  if (bias.defined() && bias.value().size() != out_dim) {
    shape_error("linear bias", weight.shape(), bias.shape());
  }
  Tensor<T> out({x.shape()[0], out_dim});
  auto y = as_matrix(out);
  y.noalias() = as_matrix(x.value()) * as_matrix(weight.value());
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(
        bias.value().data(), static_cast<Eigen::Index>(out_dim));
    y.rowwise() += b;
  }
  std::vector<NodePtr<T>> parents{x.node(), weight.node(),
                                  bias.defined() ? bias.node() : nullptr};
  return make_result<T>(std::move(out), std::move(parents), [](Node<T>& self) {
    auto dy = as_matrix(std::as_const(self.grad));
    if (wants(self, 0)) {
      as_matrix(grad_of(self, 0)).noalias() +=
          dy * as_matrix(std::as_const(self.parents[1]->value)).transpose();
    }
    if (wants(self, 1)) {
      as_matrix(grad_of(self, 1)).noalias() +=
          as_matrix(std::as_const(self.parents[0]->value)).transpose() * dy;
    }
    if (wants(self, 2)) {
      auto& g = grad_of(self, 2);
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(
          g.data(), static_cast<Eigen::Index>(g.size()));
      gb += dy.colwise().sum();
    }
  }, "linear");
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().values()) total += v;
  return make_result<T>(Tensor<T>::scalar(total), {a.node()}, [](Node<T>& self) {
    auto& g = grad_of(self, 0);
    const T s = self.grad[0];
    for (auto& v : g.values()) v += s;
  }, "sum");
}

template <typename T>
Var<T> softmax(const Var<T>& a) {
  const std::size_t rows = a.value().rows();
  const std::size_t cols = a.value().size() / std::max<std::size_t>(rows, 1);
  Tensor<T> out = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * cols;
    T mx = *std::max_element(row, row + cols);
    T z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += (row[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) row[c] /= z;
  }
  return make_result<T>(std::move(out), {a.node()}, [rows, cols](Node<T>& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * cols;
      const T* dy = self.grad.data() + r * cols;
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (dy[c] - dot);
    }
  }, "softmax");
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * (T(1) - y * y);
    }
  }, "tanh");
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2));
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
    const auto& x = self.parents[0]->value;
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T xi = x[i];
      const T cdf = T(0.5) * (T(1) + std::erf(xi * kInvSqrt2));
      const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * xi * xi);
      g[i] += self.grad[i] * (cdf + xi * pdf);
    }
  }, "gelu");
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  T epsilon) {
  const std::size_t rows = x.value().rows();
  const std::size_t n = x.value().size() / std::max<std::size_t>(rows, 1);
  if (gain.value().size() != n || bias.value().size() != n) {
    shape_error("layer_norm", x.shape(), gain.shape());
  }
  Tensor<T> out(x.shape());
  auto normalized = std::make_shared<std::vector<T>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data() + r * n;
    T mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += in[c];
    mean /= T(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= T(n);
    const T inv = T(1) / std::sqrt(var + epsilon);
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < n; ++c) {
      const T xh = (in[c] - mean) * inv;
      (*normalized)[r * n + c] = xh;
      out[r * n + c] = xh * gain.value()[c] + bias.value()[c];
    }
  }
  return make_result<T>(
      std::move(out), {x.node(), gain.node(), bias.node()},
      [rows, n, normalized, inv_std](Node<T>& self) {
        const auto& gamma = self.parents[1]->value;
        const auto& xh = *normalized;
        if (wants(self, 0)) {
          auto& g = grad_of(self, 0);
          std::vector<T> dxh(n);
          for (std::size_t r = 0; r < rows; ++r) {
            T sum_d = 0;
            T sum_dx = 0;
            for (std::size_t c = 0; c < n; ++c) {
              dxh[c] = self.grad[r * n + c] * gamma[c];
              sum_d += dxh[c];
              sum_dx += dxh[c] * xh[r * n + c];
            }
            const T k = (*inv_std)[r] / T(n);
            for (std::size_t c = 0; c < n; ++c) {
              g[r * n + c] +=
                  k * (T(n) * dxh[c] - sum_d - xh[r * n + c] * sum_dx);
            }
          }
        }
        if (wants(self, 1)) {
          auto& g = grad_of(self, 1);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
              g[c] += self.grad[r * n + c] * xh[r * n + c];
            }
          }
        }
        if (wants(self, 2)) {
          auto& g = grad_of(self, 2);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
          }
        }
      },
      "layer_norm");
}

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias,
              std::size_t seq_len) {
  require_rank2("conv1d", x.shape());
  const auto& ks = kernel.shape();
  if (ks.size() != 3 || ks[1] != x.shape()[1] || ks[0] % 2 == 0) {
    shape_error("conv1d", x.shape(), ks);
  }
  const std::size_t width = ks[0];
  const std::size_t cin = ks[1];
  const std::size_t cout = ks[2];
  const std::size_t total = x.shape()[0];
  if (seq_len == 0 || total % seq_len != 0) {
    throw Error(ErrorCode::ShapeMismatch, "conv1d: rows not a multiple of seq_len");
  }
  if (bias.defined() && bias.value().size() != cout) {
    shape_error("conv1d bias", ks, bias.shape());
  }
  const auto pad = static_cast<std::ptrdiff_t>(width / 2);
  const auto n = static_cast<std::ptrdiff_t>(seq_len);
  const std::size_t segments = total / seq_len;

  // Visits every (offset, segment) block of rows that overlap.
  auto for_blocks = [=](auto&& fn) {
    for (std::size_t o = 0; o < width; ++o) {
      const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(o) - pad;
      const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -d);
      const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(n, n - d);
      if (t1 <= t0) continue;
      for (std::size_t s = 0; s < segments; ++s) {
        const auto base = static_cast<Eigen::Index>(s * seq_len);
        fn(o, base + t0, base + t0 + d, static_cast<Eigen::Index>(t1 - t0));
      }
    }
  };

  Tensor<T> out({total, cout});
  auto y = as_matrix(out);
  auto xin = as_matrix(x.value());
  for_blocks([&](std::size_t o, Eigen::Index out_row, Eigen::Index in_row,
                 Eigen::Index len) {
    CMapRM<T> k(kernel.value().data() + o * cin * cout,
                static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(cout));
    y.middleRows(out_row, len).noalias() += xin.middleRows(in_row, len) * k;
  });
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(
        bias.value().data(), static_cast<Eigen::Index>(cout));
    y.rowwise() += b;
  }
  std::vector<NodePtr<T>> parents{x.node(), kernel.node(),
                                  bias.defined() ? bias.node() : nullptr};
  return make_result<T>(
      std::move(out), std::move(parents),
      [for_blocks, cin, cout](Node<T>& self) {
        auto dy = as_matrix(std::as_const(self.grad));
        const auto& xv = self.parents[0]->value;
        const auto& kv = self.parents[1]->value;
        const bool want_x = wants(self, 0);
        const bool want_k = wants(self, 1);
        for_blocks([&](std::size_t o, Eigen::Index out_row, Eigen::Index in_row,
                       Eigen::Index len) {
          if (want_x) {
            CMapRM<T> k(kv.data() + o * cin * cout, static_cast<Eigen::Index>(cin),
                        static_cast<Eigen::Index>(cout));
            as_matrix(grad_of(self, 0)).middleRows(in_row, len).noalias() +=
                dy.middleRows(out_row, len) * k.transpose();
          }
          if (want_k) {
            auto& gk = grad_of(self, 1);
            MapRM<T> dk(gk.data() + o * cin * cout, static_cast<Eigen::Index>(cin),
                        static_cast<Eigen::Index>(cout));
            dk.noalias() += as_matrix(xv).middleRows(in_row, len).transpose() *
                            dy.middleRows(out_row, len);
          }
        });
        if (wants(self, 2)) {
          auto& g = grad_of(self, 2);
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(
              g.data(), static_cast<Eigen::Index>(g.size()));
          gb += dy.colwise().sum();
        }
      },
      "conv1d");
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids) {
  require_rank2("embedding", table.shape());
  const std::size_t vocab = table.shape()[0];
  const std::size_t h = table.shape()[1];
  Tensor<T> out({ids.size(), h});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw Error(ErrorCode::InvalidArgument,
                  "token id " + std::to_string(ids[r]) + " outside embedding table");
    }
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[r]) * h, h,
                out.data() + r * h);
  }
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  return make_result<T>(std::move(out), {table.node()}, [kept, h](Node<T>& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t r = 0; r < kept.size(); ++r) {
      T* dst = g.data() + static_cast<std::size_t>(kept[r]) * h;
      const T* src = self.grad.data() + r * h;
      for (std::size_t c = 0; c < h; ++c) dst[c] += src[c];
    }
  }, "embedding");
}

template <typename T>
Var<T> dropout(const Var<T>& x, double rate, std::mt19937_64& rng, bool training) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) {
    throw Error(ErrorCode::InvalidArgument, "dropout rate must be below 1");
  }
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto mask = std::make_shared<std::vector<T>>(x.value().size());
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = uniform(rng) < rate ? T(0) : keep_scale;
    out[i] *= (*mask)[i];
  }
  return make_result<T>(std::move(out), {x.node()}, [mask](Node<T>& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  }, "dropout");
}

template <typename T>
Var<T> mask_rows(const Var<T>& x, const Mask& mask) {
  require_rank2("mask_rows", x.shape());
  if (mask.size() != x.shape()[0]) {
    throw Error(ErrorCode::ShapeMismatch, "mask_rows: mask length");
  }
  const std::size_t cols = x.shape()[1];
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (!mask[r]) std::fill_n(out.data() + r * cols, cols, T(0));
  }
  return make_result<T>(std::move(out), {x.node()}, [mask, cols](Node<T>& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t r = 0; r < mask.size(); ++r) {
      if (!mask[r]) continue;
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[r * cols + c];
    }
  }, "mask_rows");
}

template <typename T>
Var<T> add_positions(const Var<T>& x, const Var<T>& table, std::size_t seq_len) {
  require_rank2("add_positions", x.shape());
  require_rank2("add_positions", table.shape());
  if (table.shape()[1] != x.shape()[1]) {
    shape_error("add_positions", x.shape(), table.shape());
  }
  if (seq_len > table.shape()[0]) {
    throw Error(ErrorCode::PositionOverflow,
                "sequence length " + std::to_string(seq_len) +
                    " exceeds position table of " +
                    std::to_string(table.shape()[0]));
  }
  const std::size_t h = x.shape()[1];
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const T* p = table.value().data() + (r % seq_len) * h;
    for (std::size_t c = 0; c < h; ++c) out[r * h + c] += p[c];
  }
  return make_result<T>(std::move(out), {x.node(), table.node()},
                        [seq_len, h](Node<T>& self) {
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t r = 0; r < self.grad.rows(); ++r) {
        T* dst = g.data() + (r % seq_len) * h;
        for (std::size_t c = 0; c < h; ++c) dst[c] += self.grad[r * h + c];
      }
    }
  }, "add_positions");
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t count) {
  require_rank2("slice_cols", x.shape());
  const std::size_t cols = x.shape()[1];
  if (begin + count > cols) {
    throw Error(ErrorCode::ShapeMismatch, "slice_cols out of range");
  }
  const std::size_t rows = x.shape()[0];
  Tensor<T> out({rows, count});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.value().data() + r * cols + begin, count, out.data() + r * count);
  }
  return make_result<T>(std::move(out), {x.node()},
                        [rows, cols, begin, count](Node<T>& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < count; ++c) {
        g[r * cols + begin + c] += self.grad[r * count + c];
      }
    }
  }, "slice_cols");
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_cols of nothing");
  const std::size_t rows = parts.front().shape().at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) {
    require_rank2("concat_cols", p.shape());
    if (p.shape()[0] != rows) shape_error("concat_cols", parts.front().shape(), p.shape());
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
    parents.push_back(p.node());
  }
  Tensor<T> out({rows, total});
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(parts[i].value().data() + r * widths[i], widths[i],
                  out.data() + r * total + offset);
    }
    offset += widths[i];
  }
  return make_result<T>(std::move(out), std::move(parents),
                        [rows, total, widths](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (wants(self, i)) {
        auto& g = grad_of(self, i);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[i]; ++c) {
            g[r * widths[i] + c] += self.grad[r * total + off + c];
          }
        }
      }
      off += widths[i];
    }
  }, "concat_cols");
}

template <typename T>
Var<T> masked_mean_rows(const Var<T>& x, const Mask& mask, std::size_t seq_len) {
  require_rank2("masked_mean_rows", x.shape());
  const std::size_t total = x.shape()[0];
  const std::size_t h = x.shape()[1];
  if (seq_len == 0 || total % seq_len != 0 || mask.size() != total) {
    throw Error(ErrorCode::ShapeMismatch, "masked_mean_rows: bad segment layout");
  }
  const std::size_t batch = total / seq_len;
  std::vector<T> counts(batch, T(0));
  Tensor<T> out({batch, h});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < seq_len; ++t) {
      const std::size_t r = b * seq_len + t;
      if (!mask[r]) continue;
      counts[b] += T(1);
      for (std::size_t c = 0; c < h; ++c) out[b * h + c] += x.value()[r * h + c];
    }
    if (counts[b] == T(0)) {
      throw Error(ErrorCode::EmptySequence,
                  "sequence " + std::to_string(b) + " has no unmasked positions");
    }
    for (std::size_t c = 0; c < h; ++c) out[b * h + c] /= counts[b];
  }
  return make_result<T>(std::move(out), {x.node()},
                        [mask, seq_len, h, counts](Node<T>& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t r = 0; r < mask.size(); ++r) {
      if (!mask[r]) continue;
      const std::size_t b = r / seq_len;
      for (std::size_t c = 0; c < h; ++c) g[r * h + c] += self.grad[b * h + c] / counts[b];
    }
  }, "masked_mean_rows");
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> targets,
                     const Mask& mask) {
  require_rank2("cross_entropy", logits.shape());
  const std::size_t rows = logits.shape()[0];
  const std::size_t v = logits.shape()[1];
  if (targets.size() != rows || mask.size() != rows) {
    throw Error(ErrorCode::ShapeMismatch, "cross_entropy: targets/mask length");
  }
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) {
    return make_result<T>(Tensor<T>::scalar(T(0)), {logits.node()},
                          [](Node<T>&) {}, "cross_entropy");
  }
  auto probs = std::make_shared<std::vector<T>>(rows * v, T(0));
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw Error(ErrorCode::InvalidArgument, "cross_entropy target out of range");
    }
    const T* z = logits.value().data() + r * v;
    const T mx = *std::max_element(z, z + v);
    T norm = 0;
    for (std::size_t c = 0; c < v; ++c) norm += std::exp(z[c] - mx);
    const T log_norm = mx + std::log(norm);
    loss += log_norm - z[targets[r]];
    for (std::size_t c = 0; c < v; ++c) (*probs)[r * v + c] = std::exp(z[c] - log_norm);
  }
  const T inv_count = T(1) / T(count);
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  return make_result<T>(
      Tensor<T>::scalar(loss * inv_count), {logits.node()},
      [probs, tgt, mask, v, inv_count](Node<T>& self) {
        auto& g = grad_of(self, 0);
        const T s = self.grad[0] * inv_count;
        for (std::size_t r = 0; r < mask.size(); ++r) {
          if (!mask[r]) continue;
          for (std::size_t c = 0; c < v; ++c) g[r * v + c] += s * (*probs)[r * v + c];
          g[r * v + static_cast<std::size_t>(tgt[r])] -= s;
        }
      },
      "cross_entropy");
}

template <typename T>
Var<T> mse_loss(const Var<T>& prediction, std::span<const T> target) {
  const std::size_t m = prediction.value().size();
  if (target.size() != m || m == 0) {
    throw Error(ErrorCode::ShapeMismatch, "mse_loss: target length");
  }
  std::vector<T> diff(m);
  T loss = 0;
  for (std::size_t i = 0; i < m; ++i) {
    diff[i] = prediction.value()[i] - target[i];
    loss += diff[i] * diff[i];
  }
  return make_result<T>(Tensor<T>::scalar(loss / T(m)), {prediction.node()},
                        [diff, m](Node<T>& self) {
    auto& g = grad_of(self, 0);
    const T s = T(2) * self.grad[0] / T(m);
    for (std::size_t i = 0; i < m; ++i) g[i] += s * diff[i];
  }, "mse_loss");
}

template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, std::span<const T> target,
                       T positive_weight) {
  const std::size_t m = logits.value().size();
  if (target.size() != m || m == 0) {
    throw Error(ErrorCode::ShapeMismatch, "bce_with_logits: target length");
  }
  auto softplus = [](T z) {
    return z > T(0) ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  };
  std::vector<T> dz(m);
  T loss = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const T z = logits.value()[i];
    const T y = target[i];
    loss += positive_weight * y * softplus(-z) + (T(1) - y) * softplus(z);
    const T sig = T(1) / (T(1) + std::exp(-z));
    dz[i] = positive_weight * y * (sig - T(1)) + (T(1) - y) * sig;
  }
  return make_result<T>(Tensor<T>::scalar(loss / T(m)), {logits.node()},
                        [dz, m](Node<T>& self) {
    auto& g = grad_of(self, 0);
    const T s = self.grad[0] / T(m);
    for (std::size_t i = 0; i < m; ++i) g[i] += s * dz[i];
  }, "bce_with_logits");
}

// --- attention --------------------------------------------------------------

std::size_t relative_bucket(std::ptrdiff_t i, std::ptrdiff_t j, std::size_t kappa) {
  const auto k = static_cast<std::ptrdiff_t>(kappa);
  const std::ptrdiff_t d = i - j;
  if (d <= -k) return 0;
  if (d >= k) return static_cast<std::size_t>(2 * k - 1);
  return static_cast<std::size_t>(d + k);
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const Var<T>& qr, const Var<T>& kr, const Mask& key_mask,
                 const AttentionSpec& spec) {
  require_rank2("attention", q.shape());
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    shape_error("attention", q.shape(), k.shape());
  }
  const std::size_t total = q.shape()[0];
  const std::size_t hidden = q.shape()[1];
  const std::size_t n = spec.seq_len;
  if (n == 0 || total % n != 0 || key_mask.size() != total) {
    throw Error(ErrorCode::ShapeMismatch, "attention: bad segment layout");
  }
  if (spec.heads == 0 || hidden % spec.heads != 0) {
    throw Error(ErrorCode::ShapeMismatch, "attention: hidden not divisible by heads");
  }
  const std::size_t buckets = 2 * spec.max_relative;
  if (spec.disentangled) {
    if (!qr.defined() || !kr.defined() || qr.shape() != Shape{buckets, hidden} ||
        kr.shape() != Shape{buckets, hidden}) {
      throw Error(ErrorCode::ShapeMismatch,
                  "attention: relative tables must be (2 kappa) x hidden");
    }
  }
  const std::size_t batch = total / n;
  const std::size_t heads = spec.heads;
  const std::size_t dh = hidden / heads;
  const T scale_factor =
      T(1) / std::sqrt(T(spec.disentangled ? 3 * dh : dh));
  const auto N = static_cast<Eigen::Index>(n);
  const auto D = static_cast<Eigen::Index>(dh);
  const auto Hs = Eigen::OuterStride<>(static_cast<Eigen::Index>(hidden));
  const auto Bk = static_cast<Eigen::Index>(buckets);

  std::vector<std::size_t> bucket_ij(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      bucket_ij[i * n + j] = relative_bucket(static_cast<std::ptrdiff_t>(i),
                                             static_cast<std::ptrdiff_t>(j),
                                             spec.max_relative);
    }
  }

  auto probs = std::make_shared<std::vector<T>>(batch * heads * n * n);
  Tensor<T> out({total, hidden});
  MatRM<T> scores(N, N);
  MatRM<T> c2p;
  MatRM<T> p2c;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t row0 = b * n;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t col0 = h * dh;
      CStrided<T> Q(q.value().data() + row0 * hidden + col0, N, D, Hs);
      CStrided<T> K(k.value().data() + row0 * hidden + col0, N, D, Hs);
      CStrided<T> V(v.value().data() + row0 * hidden + col0, N, D, Hs);
      scores.noalias() = Q * K.transpose();
      if (spec.disentangled) {
        CStrided<T> KR(kr.value().data() + col0, Bk, D, Hs);
        CStrided<T> QR(qr.value().data() + col0, Bk, D, Hs);
        c2p.noalias() = Q * KR.transpose();
        p2c.noalias() = K * QR.transpose();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            scores(i, j) += c2p(i, bucket_ij[i * n + j]) +
                            p2c(j, bucket_ij[j * n + i]);
          }
        }
      }
      T* P = probs->data() + (b * heads + h) * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (key_mask[row0 + j]) mx = std::max(mx, scores(i, j) * scale_factor);
        }
        T z = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const T e = key_mask[row0 + j] ? std::exp(scores(i, j) * scale_factor - mx)
                                         : T(0);
          P[i * n + j] = e;
          z += e;
        }
        if (z == T(0)) {
          throw Error(ErrorCode::EmptySequence, "attention over zero valid keys");
        }
        for (std::size_t j = 0; j < n; ++j) P[i * n + j] /= z;
      }
      CMapRM<T> Pm(P, N, N);
      Strided<T> O(out.data() + row0 * hidden + col0, N, D, Hs);
      O.noalias() = Pm * V;
    }
  }

  std::vector<NodePtr<T>> parents{q.node(), k.node(), v.node(),
                                  spec.disentangled ? qr.node() : nullptr,
                                  spec.disentangled ? kr.node() : nullptr};
  return make_result<T>(
      std::move(out), std::move(parents),
      [=](Node<T>& self) {
        const bool want_q = wants(self, 0);
        const bool want_k = wants(self, 1);
        const bool want_v = wants(self, 2);
        const bool want_qr = spec.disentangled && wants(self, 3);
        const bool want_kr = spec.disentangled && wants(self, 4);
        const auto& qv = self.parents[0]->value;
        const auto& kv = self.parents[1]->value;
        const auto& vv = self.parents[2]->value;
        T* gq = want_q ? grad_of(self, 0).data() : nullptr;
        T* gk = want_k ? grad_of(self, 1).data() : nullptr;
        T* gv = want_v ? grad_of(self, 2).data() : nullptr;
        T* gqr = want_qr ? grad_of(self, 3).data() : nullptr;
        T* gkr = want_kr ? grad_of(self, 4).data() : nullptr;
        MatRM<T> dP(N, N);
        MatRM<T> dS(N, N);
        MatRM<T> dc2p(N, Bk);
        MatRM<T> dp2c(N, Bk);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t row0 = b * n;
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t col0 = h * dh;
            const std::size_t off = row0 * hidden + col0;
            CStrided<T> Q(qv.data() + off, N, D, Hs);
            CStrided<T> K(kv.data() + off, N, D, Hs);
            CStrided<T> V(vv.data() + off, N, D, Hs);
            CStrided<T> dO(self.grad.data() + off, N, D, Hs);
            CMapRM<T> P(probs->data() + (b * heads + h) * n * n, N, N);
            if (want_v) {
              Strided<T>(gv + off, N, D, Hs).noalias() += P.transpose() * dO;
            }
            dP.noalias() = dO * V.transpose();
            for (Eigen::Index i = 0; i < N; ++i) {
              const T dot = dP.row(i).dot(P.row(i));
              for (Eigen::Index j = 0; j < N; ++j) {
                dS(i, j) = P(i, j) * (dP(i, j) - dot) * scale_factor;
              }
            }
            if (want_q) Strided<T>(gq + off, N, D, Hs).noalias() += dS * K;
            if (want_k) Strided<T>(gk + off, N, D, Hs).noalias() += dS.transpose() * Q;
            if (!spec.disentangled) continue;
            dc2p.setZero();
            dp2c.setZero();
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t j = 0; j < n; ++j) {
                const T g = dS(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                dc2p(static_cast<Eigen::Index>(i),
                     static_cast<Eigen::Index>(bucket_ij[i * n + j])) += g;
                dp2c(static_cast<Eigen::Index>(j),
                     static_cast<Eigen::Index>(bucket_ij[j * n + i])) += g;
              }
            }
            CStrided<T> KR(self.parents[4]->value.data() + col0, Bk, D, Hs);
            CStrided<T> QR(self.parents[3]->value.data() + col0, Bk, D, Hs);
            if (want_q) Strided<T>(gq + off, N, D, Hs).noalias() += dc2p * KR;
            if (want_k) Strided<T>(gk + off, N, D, Hs).noalias() += dp2c * QR;
            if (want_kr) {
              Strided<T>(gkr + col0, Bk, D, Hs).noalias() += dc2p.transpose() * Q;
            }
            if (want_qr) {
              Strided<T>(gqr + col0, Bk, D, Hs).noalias() += dp2c.transpose() * K;
            }
          }
        }
      },
      "attention");
}

// --- finite-difference verification ----------------------------------------

template <typename T>
double grad_check(const std::function<Var<T>()>& f,
                  std::span<Parameter<T>* const> params, double epsilon) {
  for (auto* p : params) p->zero_grad();
  f().backward();
  double worst = 0.0;
  for (auto* p : params) {
    const Tensor<T> analytic = p->has_grad() ? p->grad() : Tensor<T>(p->value().shape());
    auto& value = p->value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T saved = value[i];
      value[i] = saved + T(epsilon);
      const double up = static_cast<double>(f().value().item());
      value[i] = saved - T(epsilon);
      const double down = static_cast<double>(f().value().item());
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = std::abs(static_cast<double>(analytic[i]) - numeric) /
                         std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  for (auto* p : params) p->zero_grad();
  return worst;
}

// --- explicit instantiation -------------------------------------------------

#define HELMLM_INSTANTIATE_AUTOGRAD(T)                                          \
  template class Var<T>;                                                        \
  template class ParameterSet<T>;                                               \
  template void check_finite<T>(const Tensor<T>&, const char*);                \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                     \
  template Var<T> transpose<T>(const Var<T>&);                                 \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                        \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                        \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                        \
  template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                    \
  template Var<T> scale<T>(const Var<T>&, T);                                  \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);      \
  template Var<T> sum<T>(const Var<T>&);                                       \
  template Var<T> softmax<T>(const Var<T>&);                                   \
  template Var<T> tanh<T>(const Var<T>&);                                      \
  template Var<T> gelu<T>(const Var<T>&);                                      \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T); \
  template Var<T> conv1d<T>(const Var<T>&, const Var<T>&, const Var<T>&,       \
                            std::size_t);                                       \
  template Var<T> embedding<T>(const Var<T>&, std::span<const std::int32_t>);  \
  template Var<T> dropout<T>(const Var<T>&, double, std::mt19937_64&, bool);   \
  template Var<T> mask_rows<T>(const Var<T>&, const Mask&);                    \
  template Var<T> add_positions<T>(const Var<T>&, const Var<T>&, std::size_t); \
  template Var<T> slice_cols<T>(const Var<T>&, std::size_t, std::size_t);      \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                  \
  template Var<T> masked_mean_rows<T>(const Var<T>&, const Mask&, std::size_t); \
  template Var<T> cross_entropy<T>(const Var<T>&, std::span<const std::int32_t>, \
                                   const Mask&);                               \
  template Var<T> mse_loss<T>(const Var<T>&, std::span<const T>);              \
  template Var<T> bce_with_logits<T>(const Var<T>&, std::span<const T>, T);    \
  template Var<T> attention<T>(const Var<T>&, const Var<T>&, const Var<T>&,    \
                               const Var<T>&, const Var<T>&, const Mask&,      \
                               const AttentionSpec&);                          \
  template double grad_check<T>(const std::function<Var<T>()>&,                \
                                std::span<Parameter<T>* const>, double);

HELMLM_INSTANTIATE_AUTOGRAD(float)
HELMLM_INSTANTIATE_AUTOGRAD(double)

#undef HELMLM_INSTANTIATE_AUTOGRAD

}  // namespace helmlm::tensor
