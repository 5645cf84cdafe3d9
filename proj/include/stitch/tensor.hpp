/*
 * Copyright 2026 The stitchkit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every op returns a new tensor whose node keeps shared pointers to its
// parents plus a closure that pushes the output gradient into them. The
// graph therefore lives exactly as long as the tensors referencing it.
// Only the ops the stitching pipeline needs exist, and broadcasting is
// limited to "one operand is a single element".

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stitch/errors.hpp"

namespace stitch {

#ifdef STITCH_FLOAT32
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;
  using NodePtr = std::shared_ptr<NodeType>;

  BasicTensor() = default;

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<NodeType>()) {
    for (auto e : shape)
      if (e == 0) throw DimensionError("tensor extents must be positive");
    if (shape_numel(shape) != data.size())
      throw DimensionError("shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) +
                           " elements, got " + std::to_string(data.size()));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, T(0)),
                       requires_grad);
  }
  static BasicTensor filled(Shape shape, T value) {
    auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value));
  }
  static BasicTensor scalar(T value) { return BasicTensor({1}, {value}); }
  static BasicTensor eye(std::size_t n) {
    auto t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.node_->data[i * n + i] = T(1);
    return t;
  }

  /// Internal constructor for op results; drops the graph when no parent
  /// requires a gradient.
  static BasicTensor from_op(Shape shape, std::vector<T> data, const char* op,
                             std::vector<NodePtr> parents,
                             std::function<void(NodeType&)> backward_fn) {
    BasicTensor out(std::move(shape), std::move(data));
    bool rg = std::any_of(parents.begin(), parents.end(),
                          [](const NodePtr& p) { return p->requires_grad; });
    out.node_->op = op;
    out.node_->leaf = false;
    if (rg) {
      out.node_->requires_grad = true;
      out.node_->parents = std::move(parents);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const {
    return ndim() < 2 ? 1 : numel() / node_->shape[0];
  }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  const char* op() const { return node_->op; }

  std::span<const T> data() const { return node_->data; }
  /// Writable storage. Only leaves (parameters) may be mutated, and only
  /// outside of graph construction.
  std::span<T> mutable_data() {
    if (!node_->leaf) throw ArgumentError("only leaf tensors are mutable");
    return node_->data;
  }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on non-scalar tensor");
    return node_->data[0];
  }
  T operator()(std::size_t i, std::size_t j) const {
    return node_->data[i * cols() + j];
  }

  /// Copy of the values with no graph attached.
  BasicTensor detach() const { return BasicTensor(shape(), node_->data); }

  /// Seeds d(this)/d(this) = 1 and propagates through the graph. Leaf
  /// gradients accumulate across calls; interior gradients are reset.
  void backward() const {
    if (numel() != 1) throw DimensionError("backward() needs a scalar root");
    if (!node_->requires_grad) return;
    std::vector<NodeType*> order;
    topo_order(order);
    for (auto* n : order)
      if (!n->leaf) n->grad.clear();
    node_->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      NodeType* n = *it;
      if (n->backward_fn && n->grad.size() == n->data.size()) n->backward_fn(*n);
    }
  }

  const NodePtr& node() const { return node_; }

 private:
  // Iterative post-order DFS so deep graphs cannot overflow the stack.
  void topo_order(std::vector<NodeType*>& order) const {
    std::unordered_set<NodeType*> seen;
    std::vector<std::pair<NodeType*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        NodeType* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  NodePtr node_;
};

using Tensor = BasicTensor<real>;

template <class T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

namespace kernels {

// C[m x n] += A[m x k] * B[k x n]
template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      if (aip == T(0)) continue;
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T s = T(0);
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T api = ap[i];
      if (api == T(0)) continue;
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw DimensionError("matmul needs 2-D operands");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul inner dims disagree: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  std::vector<T> out(m * n, T(0));
  kernels::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  auto an = a.node(), bn = b.node();
  return BasicTensor<T>::from_op(
      {m, n}, std::move(out), "matmul", {an, bn},
      [an, bn, m, k, n](detail::Node<T>& self) {
        if (an->requires_grad)
          kernels::gemm_nt(m, n, k, self.grad.data(), bn->data.data(),
                           an->ensure_grad().data());
        if (bn->requires_grad)
          kernels::gemm_tn(k, m, n, an->data.data(), self.grad.data(),
                           bn->ensure_grad().data());
      });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  if (a.ndim() != 2) throw DimensionError("transpose needs a 2-D operand");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(r * c);
  auto src = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  auto an = a.node();
  return BasicTensor<T>::from_op(
      {c, r}, std::move(out), "transpose", {an},
      [an, r, c](detail::Node<T>& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
      });
}

namespace detail {

// Shape agreement for binary elementwise ops: equal shapes, or one side a
// single element.
template <class T>
Shape binary_shape(const BasicTensor<T>& a, const BasicTensor<T>& b,
                   const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.numel() == 1) return a.shape();
  if (a.numel() == 1) return b.shape();
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

template <class T>
void accumulate_into(Node<T>& dst, const std::vector<T>& g, T factor) {
  auto& dg = dst.ensure_grad();
  if (dg.size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) dg[i] += factor * g[i];
  } else {
    T s = T(0);
    for (T v : g) s += v;
    dg[0] += factor * s;
  }
}

}  // namespace detail

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  Shape s = detail::binary_shape(a, b, "add");
  const std::size_t n = shape_numel(s);
  auto ad = a.data(), bd = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = ad[ad.size() == 1 ? 0 : i] + bd[bd.size() == 1 ? 0 : i];
  auto an = a.node(), bn = b.node();
  return BasicTensor<T>::from_op(
      std::move(s), std::move(out), "add", {an, bn},
      [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) detail::accumulate_into(*an, self.grad, T(1));
        if (bn->requires_grad) detail::accumulate_into(*bn, self.grad, T(1));
      });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  Shape s = detail::binary_shape(a, b, "sub");
  const std::size_t n = shape_numel(s);
  auto ad = a.data(), bd = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = ad[ad.size() == 1 ? 0 : i] - bd[bd.size() == 1 ? 0 : i];
  auto an = a.node(), bn = b.node();
  return BasicTensor<T>::from_op(
      std::move(s), std::move(out), "sub", {an, bn},
      [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) detail::accumulate_into(*an, self.grad, T(1));
        if (bn->requires_grad) detail::accumulate_into(*bn, self.grad, T(-1));
      });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  Shape s = detail::binary_shape(a, b, "mul");
  const std::size_t n = shape_numel(s);
  auto ad = a.data(), bd = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = ad[ad.size() == 1 ? 0 : i] * bd[bd.size() == 1 ? 0 : i];
  auto an = a.node(), bn = b.node();
  return BasicTensor<T>::from_op(
      std::move(s), std::move(out), "mul", {an, bn},
      [an, bn, n](detail::Node<T>& self) {
        auto push = [n, &self](detail::Node<T>& dst, const detail::Node<T>& other) {
          std::vector<T> g(n);
          const bool bcast = other.data.size() == 1;
          for (std::size_t i = 0; i < n; ++i)
            g[i] = self.grad[i] * other.data[bcast ? 0 : i];
          detail::accumulate_into(dst, g, T(1));
        };
        if (an->requires_grad) push(*an, *bn);
        if (bn->requires_grad) push(*bn, *an);
      });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  auto an = a.node();
  return BasicTensor<T>::from_op(
      a.shape(), std::move(out), "scale", {an},
      [an, factor](detail::Node<T>& self) {
        detail::accumulate_into(*an, self.grad, factor);
      });
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  auto an = a.node();
  return BasicTensor<T>::from_op(
      a.shape(), std::move(out), "relu", {an}, [an](detail::Node<T>& self) {
        auto& g = an->ensure_grad();
        // Subgradient at exactly zero is zero.
        for (std::size_t i = 0; i < g.size(); ++i)
          if (an->data[i] > T(0)) g[i] += self.grad[i];
      });
}

/// Exact (erf-based) GELU.
template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
  const T inv_sqrt2 = T(0.70710678118654752440);
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  auto an = a.node();
  return BasicTensor<T>::from_op(
      a.shape(), std::move(out), "gelu", {an},
      [an, inv_sqrt2](detail::Node<T>& self) {
        const T inv_sqrt_2pi = T(0.39894228040143267794);
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T x = an->data[i];
          const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
          const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
          g[i] += self.grad[i] * (cdf + x * pdf);
        }
      });
}

/// Divides every row by its Euclidean norm.
template <class T>
BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& a) {
  if (a.ndim() != 2) throw DimensionError("l2_normalize_rows needs 2-D input");
  const std::size_t r = a.rows(), c = a.cols();
  auto src = a.data();
  std::vector<T> out(r * c), norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    T s = T(0);
    for (std::size_t j = 0; j < c; ++j) s += src[i * c + j] * src[i * c + j];
    if (s == T(0))
      throw DegenerateInputError("row " + std::to_string(i) +
                                 " has zero norm and cannot be normalized");
    norms[i] = std::sqrt(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = src[i * c + j] / norms[i];
  }
  auto an = a.node();
  auto y = std::make_shared<std::vector<T>>(out);
  return BasicTensor<T>::from_op(
      {r, c}, std::move(out), "l2_normalize_rows", {an},
      [an, y, norms = std::move(norms), r, c](detail::Node<T>& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
          const T* yi = y->data() + i * c;
          const T* gi = self.grad.data() + i * c;
          T dot = T(0);
          for (std::size_t j = 0; j < c; ++j) dot += yi[j] * gi[j];
          for (std::size_t j = 0; j < c; ++j)
            g[i * c + j] += (gi[j] - yi[j] * dot) / norms[i];
        }
      });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("cannot reshape " + shape_str(a.shape()) + " to " +
                         shape_str(shape));
  auto an = a.node();
  return BasicTensor<T>::from_op(
      std::move(shape), std::vector<T>(a.data().begin(), a.data().end()),
      "reshape", {an},
      [an](detail::Node<T>& self) { detail::accumulate_into(*an, self.grad, T(1)); });
}

/// Contiguous flat range [offset, offset + length) as a 1-D tensor.
template <class T>
BasicTensor<T> slice(const BasicTensor<T>& a, std::size_t offset,
                     std::size_t length) {
  if (length == 0 || offset + length > a.numel())
    throw RangeError("slice [" + std::to_string(offset) + ", " +
                     std::to_string(offset + length) + ") outside tensor of " +
                     std::to_string(a.numel()) + " elements");
  auto src = a.data();
  std::vector<T> out(src.begin() + offset, src.begin() + offset + length);
  auto an = a.node();
  return BasicTensor<T>::from_op(
      {length}, std::move(out), "slice", {an},
      [an, offset, length](detail::Node<T>& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < length; ++i) g[offset + i] += self.grad[i];
      });
}

/// Rows [begin, end) of a 2-D tensor.
template <class T>
BasicTensor<T> slice_rows(const BasicTensor<T>& a, std::size_t begin,
                          std::size_t end) {
  if (a.ndim() != 2) throw DimensionError("slice_rows needs a 2-D operand");
  if (begin >= end || end > a.rows())
    throw RangeError("row slice out of range");
  const std::size_t c = a.cols();
  return reshape(slice(a, begin * c, (end - begin) * c), {end - begin, c});
}

/// Concatenation along the leading axis.
template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat of nothing");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t lead = 0;
  std::vector<T> out;
  std::vector<typename BasicTensor<T>::NodePtr> nodes;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != tail)
      throw DimensionError("concat: trailing shapes differ");
    lead += p.shape()[0];
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
  }
  Shape s{lead};
  s.insert(s.end(), tail.begin(), tail.end());
  auto parents = nodes;
  return BasicTensor<T>::from_op(
      std::move(s), std::move(out), "concat", std::move(parents),
      [nodes](detail::Node<T>& self) {
        std::size_t off = 0;
        for (const auto& n : nodes) {
          if (n->requires_grad) {
            auto& g = n->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
          }
          off += n->data.size();
        }
      });
}

/// Row-wise log(sum(exp(x))) with max subtraction; returns shape {rows}.
template <class T>
BasicTensor<T> log_sum_exp_rows(const BasicTensor<T>& a) {
  if (a.ndim() != 2) throw DimensionError("log_sum_exp_rows needs 2-D input");
  const std::size_t r = a.rows(), c = a.cols();
  auto src = a.data();
  std::vector<T> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* xi = src.data() + i * c;
    T mx = *std::max_element(xi, xi + c);
    T s = T(0);
    for (std::size_t j = 0; j < c; ++j) s += std::exp(xi[j] - mx);
    out[i] = mx + std::log(s);
  }
  auto an = a.node();
  auto lse = std::make_shared<std::vector<T>>(out);
  return BasicTensor<T>::from_op(
      {r}, std::move(out), "log_sum_exp_rows", {an},
      [an, lse, r, c](detail::Node<T>& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            g[i * c + j] +=
                self.grad[i] * std::exp(an->data[i * c + j] - (*lse)[i]);
      });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T s = T(0);
  for (T v : a.data()) s += v;
  auto an = a.node();
  return BasicTensor<T>::from_op({1}, {s}, "sum", {an},
                                 [an](detail::Node<T>& self) {
                                   auto& g = an->ensure_grad();
                                   for (auto& v : g) v += self.grad[0];
                                 });
}

}  // namespace stitch
