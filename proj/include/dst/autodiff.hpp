// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation over dense rank-1/rank-2 tensors.
//
// A Tape records every primitive in execution order, so node ids are already a
// topological order and backward() is a single reverse sweep. Parameters are
// bound by reference; their gradients accumulate into Parameter::grad.
//
// Broadcasting is limited to scalar operands of add/sub/mul. Every other shape
// alignment (bias rows, attention tiling) has its own explicit primitive.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <deque>
#include <vector>

#include "dst/error.hpp"
#include "dst/tensor.hpp"

namespace dst::ad {

enum class Op : std::uint8_t {
  Leaf,
  Param,
  MatMul,
  MatMulNT,
  Transpose,
  Reshape,
  Add,
  Sub,
  Mul,
  Scale,
  Sigmoid,
  Tanh,
  OneMinus,
  AddTiled,
  Concat,
  GatherRows,
  SoftmaxRows,
  CrossEntropy,
  Sum,
  Attend,
};

inline constexpr double kProbabilityFloor = 1e-12;

template <class T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  const BasicTensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape; }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <class T>
class Tape {
 public:
  struct Node {
    Op op = Op::Leaf;
    std::vector<int> inputs;
    BasicTensor<T> value;
    std::vector<T> grad;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
    // Backward context: class ids / row ids / mask bits, a real, a shape.
    std::vector<int> ints;
    std::vector<T> reals;
    T scalar = T(0);
    std::size_t extent = 0;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Constant input: never receives a gradient.
  Var<T> constant(BasicTensor<T> t) { return leaf(std::move(t), false); }

  /// Differentiable input whose gradient is readable through grad().
  Var<T> variable(BasicTensor<T> t) { return leaf(std::move(t), true); }

  /// Binds a parameter by reference. When `trainable` is false the node is a
  /// constant view (evaluation tapes).
  Var<T> param(Parameter<T>& p, bool trainable = true) {
    Node n;
    n.op = Op::Param;
    n.param = &p;
    n.needs_grad = trainable;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  /// Value copy with the gradient path cut.
  Var<T> detach(Var<T> v) { return constant(v.value()); }

  const BasicTensor<T>& value(Var<T> v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id()));
    return n.param ? n.param->value : n.value;
  }

  /// Gradient accumulated by the last backward(); empty when none reached it.
  const std::vector<T>& grad(Var<T> v) const {
    return nodes_.at(static_cast<std::size_t>(v.id())).grad;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Enables per-primitive NaN/Inf detection (off by default).
  void set_check_finite(bool on) { check_finite_ = on; }

  Var<T> push(Node n) {
    if (check_finite_ && !n.value.all_finite()) {
      throw NumericError("non-finite value produced by primitive #" +
                         std::to_string(static_cast<int>(n.op)));
    }
    for (int in : n.inputs) n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  void backward(Var<T> loss);

 private:
  Var<T> leaf(BasicTensor<T> t, bool needs_grad) {
    Node n;
    n.value = std::move(t);
    n.needs_grad = needs_grad;
    return push(std::move(n));
  }

  std::vector<T>& grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(value_of(id).size(), T(0));
    return n.grad;
  }

  const BasicTensor<T>& value_of(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.param ? n.param->value : n.value;
  }

  bool wants(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  void backprop_node(int id);

  std::deque<Node> nodes_;  // deque: references from value() survive later pushes
  bool check_finite_ = false;
};

namespace detail {

template <class T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw Error("operands belong to different tapes");
  }
  return a.tape();
}

inline void require_matrix(const Shape& s, const char* op) {
  if (s.size() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(s));
  }
}

// c[m×n] += a[m×k] · b[k×n]
template <class T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m×n] += a[m×k] · b[n×k]ᵀ
template <class T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b.data() + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// c[k×n] += a[m×k]ᵀ · b[m×n]
template <class T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      T* crow = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
typename Tape<T>::Node make_node(Op op, std::vector<int> inputs, BasicTensor<T> value) {
  typename Tape<T>::Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  return n;
}

template <class T>
Var<T> elementwise_binary(Op op, Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool a_scalar = av.size() == 1;
  const bool b_scalar = bv.size() == 1;
  if (av.shape != bv.shape && !a_scalar && !b_scalar) {
    throw DimensionError("elementwise shape mismatch: " + shape_string(av.shape) +
                         " vs " + shape_string(bv.shape));
  }
  const auto& out_shape = (a_scalar && !b_scalar) ? bv.shape : av.shape;
  BasicTensor<T> out(out_shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av[a_scalar ? 0 : i];
    const T y = bv[b_scalar ? 0 : i];
    switch (op) {
      case Op::Add: out[i] = x + y; break;
      case Op::Sub: out[i] = x - y; break;
      case Op::Mul: out[i] = x * y; break;
      default: throw Error("not a binary elementwise op");
    }
  }
  return tape.push(make_node<T>(op, {a.id(), b.id()}, std::move(out)));
}

template <class T>
Var<T> elementwise_unary(Op op, Var<T> a, T c = T(0)) {
  const auto& av = a.value();
  BasicTensor<T> out(av.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av[i];
    switch (op) {
      case Op::Sigmoid: out[i] = T(1) / (T(1) + std::exp(-x)); break;
      case Op::Tanh: out[i] = std::tanh(x); break;
      case Op::OneMinus: out[i] = T(1) - x; break;
      case Op::Scale: out[i] = c * x; break;
      default: throw Error("not a unary elementwise op");
    }
  }
  auto node = make_node<T>(op, {a.id()}, std::move(out));
  node.scalar = c;
  return a.tape().push(std::move(node));
}

}  // namespace detail

/// a[m×k] · b[k×n]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_matrix(av.shape, "matmul");
  detail::require_matrix(bv.shape, "matmul");
  if (av.shape[1] != bv.shape[0]) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_string(av.shape) +
                         " · " + shape_string(bv.shape));
  }
  const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  BasicTensor<T> out({m, n});
  detail::gemm_nn<T>(av.data, bv.data, out.data, m, k, n);
  return tape.push(detail::make_node<T>(Op::MatMul, {a.id(), b.id()}, std::move(out)));
}

/// a[m×k] · b[n×k]ᵀ, the layout used for weight matrices stored out×in.
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_matrix(av.shape, "matmul_nt");
  detail::require_matrix(bv.shape, "matmul_nt");
  if (av.shape[1] != bv.shape[1]) {
    throw DimensionError("matmul_nt inner dimensions disagree: " + shape_string(av.shape) +
                         " · " + shape_string(bv.shape) + "ᵀ");
  }
  const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[0];
  BasicTensor<T> out({m, n});
  detail::gemm_nt<T>(av.data, bv.data, out.data, m, k, n);
  return tape.push(detail::make_node<T>(Op::MatMulNT, {a.id(), b.id()}, std::move(out)));
}

template <class T>
Var<T> transpose(Var<T> a) {
  const auto& av = a.value();
  detail::require_matrix(av.shape, "transpose");
  const std::size_t r = av.shape[0], c = av.shape[1];
  BasicTensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return a.tape().push(detail::make_node<T>(Op::Transpose, {a.id()}, std::move(out)));
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  const auto& av = a.value();
  if (numel(shape) != av.size()) {
    throw DimensionError("cannot reshape " + shape_string(av.shape) + " to " +
                         shape_string(shape));
  }
  return a.tape().push(detail::make_node<T>(
      Op::Reshape, {a.id()}, BasicTensor<T>(std::move(shape), av.data)));
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) { return detail::elementwise_binary(Op::Add, a, b); }
template <class T>
Var<T> sub(Var<T> a, Var<T> b) { return detail::elementwise_binary(Op::Sub, a, b); }
template <class T>
Var<T> mul(Var<T> a, Var<T> b) { return detail::elementwise_binary(Op::Mul, a, b); }
template <class T>
Var<T> scale(Var<T> a, T c) { return detail::elementwise_unary(Op::Scale, a, c); }
template <class T>
Var<T> sigmoid(Var<T> a) { return detail::elementwise_unary(Op::Sigmoid, a); }
template <class T>
Var<T> tanh(Var<T> a) { return detail::elementwise_unary(Op::Tanh, a); }
template <class T>
Var<T> one_minus(Var<T> a) { return detail::elementwise_unary(Op::OneMinus, a); }

template <class T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <class T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <class T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

/// Adds q[B×n] to every block of B consecutive rows of m[(R·B)×n]. With B = 1
/// this is a bias-row add.
template <class T>
Var<T> add_tiled(Var<T> m, Var<T> q) {
  Tape<T>& tape = detail::same_tape(m, q);
  const auto& mv = m.value();
  const auto& qv = q.value();
  const std::size_t cols = mv.cols();
  const std::size_t q_rows = qv.size() / std::max<std::size_t>(qv.cols(), 1);
  if (qv.cols() != cols || mv.rows() % q_rows != 0) {
    throw DimensionError("add_tiled cannot tile " + shape_string(qv.shape) + " over " +
                         shape_string(mv.shape));
  }
  BasicTensor<T> out = mv;
  for (std::size_t r = 0; r < mv.rows(); ++r) {
    const std::size_t src = (r % q_rows) * cols;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += qv[src + c];
  }
  auto node = detail::make_node<T>(Op::AddTiled, {m.id(), q.id()}, std::move(out));
  node.extent = q_rows;
  return tape.push(std::move(node));
}

/// Concatenates rank-1 or rank-2 tensors along `axis`.
template <class T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis = 0) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Tape<T>& tape = parts.front().tape();
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw DimensionError("concat axis " + std::to_string(axis) + " out of range for " +
                         shape_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<int> ids;
  std::vector<int> extents;
  for (const Var<T>& p : parts) {
    if (&p.tape() != &tape) throw Error("operands belong to different tapes");
    const Shape& s = p.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t d = 0; compatible && d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) compatible = false;
    }
    if (!compatible) {
      throw DimensionError("concat incompatible shapes " + shape_string(first) + " and " +
                           shape_string(s) + " on axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
    ids.push_back(p.id());
    extents.push_back(static_cast<int>(s[axis]));
  }
  const std::size_t outer = axis == 0 ? 1 : out_shape[0];
  const std::size_t inner = (first.size() == 2 && axis == 0) ? out_shape[1] : 1;
  const std::size_t out_axis = out_shape[axis];
  BasicTensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value();
    const std::size_t len = static_cast<std::size_t>(extents[k]);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data.begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                  out.data.begin() + static_cast<std::ptrdiff_t>((o * out_axis + offset) * inner));
    }
    offset += len;
  }
  auto node = detail::make_node<T>(Op::Concat, std::move(ids), std::move(out));
  node.ints = std::move(extents);
  node.extent = axis;
  return tape.push(std::move(node));
}

template <class T>
Var<T> concat(std::initializer_list<Var<T>> parts, std::size_t axis = 0) {
  std::vector<Var<T>> v(parts);
  return concat<T>(std::span<const Var<T>>(v), axis);
}

/// Selects rows of a [V×d] table; gradient scatters back into those rows.
template <class T>
Var<T> gather_rows(Var<T> table, std::span<const int> ids) {
  const auto& tv = table.value();
  detail::require_matrix(tv.shape, "gather_rows");
  if (ids.empty()) throw DimensionError("gather_rows with no ids");
  const std::size_t d = tv.shape[1];
  BasicTensor<T> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.shape[0]) {
      throw IndexError("row id " + std::to_string(ids[i]) + " out of range for table of " +
                       std::to_string(tv.shape[0]) + " rows");
    }
    std::copy_n(tv.data.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto node = detail::make_node<T>(Op::GatherRows, {table.id()}, std::move(out));
  node.ints.assign(ids.begin(), ids.end());
  return table.tape().push(std::move(node));
}

/// Row-wise softmax with max subtraction. `mask` (optional, same size, 1 =
/// keep) forces masked entries to probability zero.
template <class T>
Var<T> softmax_rows(Var<T> a, std::span<const int> mask = {}) {
  const auto& av = a.value();
  const std::size_t cols = av.cols();
  const std::size_t rows = av.size() / cols;
  if (!mask.empty() && mask.size() != av.size()) {
    throw DimensionError("softmax mask size does not match " + shape_string(av.shape));
  }
  BasicTensor<T> out(av.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto keep = [&](std::size_t c) { return mask.empty() || mask[r * cols + c] != 0; };
    T mx = T(0);
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!keep(c)) continue;
      mx = any ? std::max(mx, av[r * cols + c]) : av[r * cols + c];
      any = true;
    }
    if (!any) throw DimensionError("softmax row " + std::to_string(r) + " is fully masked");
    T total = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      const T e = keep(c) ? std::exp(av[r * cols + c] - mx) : T(0);
      out[r * cols + c] = e;
      total += e;
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
  }
  auto node = detail::make_node<T>(Op::SoftmaxRows, {a.id()}, std::move(out));
  return a.tape().push(std::move(node));
}

/// Σ_b weight_b · −log max(p[b, gold_b], 1e-12) over rows of a probability
/// matrix. A zero weight removes a row (padding, unused batch slots).
template <class T>
Var<T> cross_entropy_rows(Var<T> probs, std::span<const int> gold,
                          std::span<const T> weights = {}) {
  const auto& pv = probs.value();
  const std::size_t cols = pv.cols();
  const std::size_t rows = pv.size() / cols;
  if (gold.size() != rows || (!weights.empty() && weights.size() != rows)) {
    throw DimensionError("cross_entropy expects one gold id per row of " +
                         shape_string(pv.shape));
  }
  T loss = T(0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (gold[r] < 0 || static_cast<std::size_t>(gold[r]) >= cols) {
      throw IndexError("gold class " + std::to_string(gold[r]) + " out of range for " +
                       std::to_string(cols) + " classes");
    }
    const T w = weights.empty() ? T(1) : weights[r];
    if (w == T(0)) continue;
    const T p = std::max(pv[r * cols + static_cast<std::size_t>(gold[r])],
                         static_cast<T>(kProbabilityFloor));
    loss -= w * std::log(p);
  }
  auto node = detail::make_node<T>(Op::CrossEntropy, {probs.id()}, BasicTensor<T>::scalar(loss));
  node.ints.assign(gold.begin(), gold.end());
  if (weights.empty()) {
    node.reals.assign(rows, T(1));
  } else {
    node.reals.assign(weights.begin(), weights.end());
  }
  return probs.tape().push(std::move(node));
}

template <class T>
Var<T> sum(Var<T> a) {
  T total = T(0);
  for (T v : a.value().data) total += v;
  return a.tape().push(detail::make_node<T>(Op::Sum, {a.id()}, BasicTensor<T>::scalar(total)));
}

/// Attention read-out: out[b] = Σ_t w[b,t] · states[t·B + b], where `states`
/// stacks T blocks of B rows (one block per encoder step).
template <class T>
Var<T> attend(Var<T> weights, Var<T> states) {
  Tape<T>& tape = detail::same_tape(weights, states);
  const auto& wv = weights.value();
  const auto& sv = states.value();
  detail::require_matrix(wv.shape, "attend");
  detail::require_matrix(sv.shape, "attend");
  const std::size_t batch = wv.shape[0], steps = wv.shape[1], dim = sv.shape[1];
  if (sv.shape[0] != batch * steps) {
    throw DimensionError("attend weights " + shape_string(wv.shape) +
                         " do not match stacked states " + shape_string(sv.shape));
  }
  BasicTensor<T> out({batch, dim});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const T w = wv[b * steps + t];
      if (w == T(0)) continue;
      const T* row = sv.data.data() + (t * batch + b) * dim;
      for (std::size_t c = 0; c < dim; ++c) out[b * dim + c] += w * row[c];
    }
  }
  return tape.push(detail::make_node<T>(Op::Attend, {weights.id(), states.id()}, std::move(out)));
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  if (&loss.tape() != this) throw Error("loss belongs to a different tape");
  if (value(loss).size() != 1) {
    throw DimensionError("backward requires a scalar loss, got " +
                         shape_string(value(loss).shape));
  }
  for (Node& n : nodes_) n.grad.clear();
  if (!nodes_[static_cast<std::size_t>(loss.id())].needs_grad) return;
  grad_buffer(loss.id())[0] = T(1);
  for (int id = loss.id(); id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.needs_grad && !n.grad.empty()) backprop_node(id);
  }
}

template <class T>
void Tape<T>::backprop_node(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const std::vector<T>& g = n.grad;
  const BasicTensor<T>& y = n.value;

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Param: {
      auto& pg = n.param->grad;
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
      break;
    }
    case Op::MatMul: {
      const int a = n.inputs[0], b = n.inputs[1];
      const auto& av = value_of(a);
      const auto& bv = value_of(b);
      const std::size_t m = av.shape[0], k = av.shape[1], nn = bv.shape[1];
      if (wants(a)) detail::gemm_nt<T>(g, bv.data, grad_buffer(a), m, nn, k);
      if (wants(b)) detail::gemm_tn<T>(av.data, g, grad_buffer(b), m, k, nn);
      break;
    }
    case Op::MatMulNT: {
      const int a = n.inputs[0], b = n.inputs[1];
      const auto& av = value_of(a);
      const auto& bv = value_of(b);
      const std::size_t m = av.shape[0], k = av.shape[1], nn = bv.shape[0];
      if (wants(a)) detail::gemm_nn<T>(g, bv.data, grad_buffer(a), m, nn, k);
      if (wants(b)) detail::gemm_tn<T>(g, av.data, grad_buffer(b), m, nn, k);
      break;
    }
    case Op::Transpose: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      const std::size_t r = y.shape[0], c = y.shape[1];
      auto& ga = grad_buffer(a);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[j * r + i] += g[i * c + j];
      break;
    }
    case Op::Reshape: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      auto& ga = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      break;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const int a = n.inputs[0], b = n.inputs[1];
      const auto& av = value_of(a);
      const auto& bv = value_of(b);
      const bool a_scalar = av.size() == 1 && y.size() != 1;
      const bool b_scalar = bv.size() == 1 && y.size() != 1;
      if (wants(a)) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T d = n.op == Op::Mul ? g[i] * bv[b_scalar ? 0 : i] : g[i];
          ga[a_scalar ? 0 : i] += d;
        }
      }
      if (wants(b)) {
        auto& gb = grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          T d = g[i];
          if (n.op == Op::Sub) d = -d;
          if (n.op == Op::Mul) d *= av[a_scalar ? 0 : i];
          gb[b_scalar ? 0 : i] += d;
        }
      }
      break;
    }
    case Op::Scale:
    case Op::Sigmoid:
    case Op::Tanh:
    case Op::OneMinus: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      auto& ga = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        switch (n.op) {
          case Op::Scale: ga[i] += n.scalar * g[i]; break;
          case Op::Sigmoid: ga[i] += g[i] * y[i] * (T(1) - y[i]); break;
          case Op::Tanh: ga[i] += g[i] * (T(1) - y[i] * y[i]); break;
          default: ga[i] -= g[i]; break;
        }
      }
      break;
    }
    case Op::AddTiled: {
      const int m = n.inputs[0], q = n.inputs[1];
      if (wants(m)) {
        auto& gm = grad_buffer(m);
        for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
      }
      if (wants(q)) {
        auto& gq = grad_buffer(q);
        const std::size_t cols = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const std::size_t dst = (r % n.extent) * cols;
          for (std::size_t c = 0; c < cols; ++c) gq[dst + c] += g[r * cols + c];
        }
      }
      break;
    }
    case Op::Concat: {
      const std::size_t axis = n.extent;
      const std::size_t outer = axis == 0 ? 1 : y.shape[0];
      const std::size_t inner = (y.rank() == 2 && axis == 0) ? y.shape[1] : 1;
      const std::size_t out_axis = y.shape[axis];
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t len = static_cast<std::size_t>(n.ints[k]);
        const int in = n.inputs[k];
        if (wants(in)) {
          auto& gi = grad_buffer(in);
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < len * inner; ++i)
              gi[o * len * inner + i] += g[(o * out_axis + offset) * inner + i];
        }
        offset += len;
      }
      break;
    }
    case Op::GatherRows: {
      const int table = n.inputs[0];
      if (!wants(table)) break;
      auto& gt = grad_buffer(table);
      const std::size_t d = y.cols();
      for (std::size_t i = 0; i < n.ints.size(); ++i) {
        const std::size_t row = static_cast<std::size_t>(n.ints[i]);
        for (std::size_t c = 0; c < d; ++c) gt[row * d + c] += g[i * d + c];
      }
      break;
    }
    case Op::SoftmaxRows: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      auto& ga = grad_buffer(a);
      const std::size_t cols = y.cols();
      const std::size_t rows = y.size() / cols;
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c)
          ga[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
      }
      break;
    }
    case Op::CrossEntropy: {
      const int p = n.inputs[0];
      if (!wants(p)) break;
      const auto& pv = value_of(p);
      auto& gp = grad_buffer(p);
      const std::size_t cols = pv.cols();
      for (std::size_t r = 0; r < n.ints.size(); ++r) {
        const std::size_t idx = r * cols + static_cast<std::size_t>(n.ints[r]);
        if (n.reals[r] == T(0) || pv[idx] <= static_cast<T>(kProbabilityFloor)) continue;
        gp[idx] -= g[0] * n.reals[r] / pv[idx];
      }
      break;
    }
    case Op::Sum: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      auto& ga = grad_buffer(a);
      for (T& v : ga) v += g[0];
      break;
    }
    case Op::Attend: {
      const int w = n.inputs[0], s = n.inputs[1];
      const auto& wv = value_of(w);
      const auto& sv = value_of(s);
      const std::size_t batch = wv.shape[0], steps = wv.shape[1], dim = sv.shape[1];
      if (wants(w)) {
        auto& gw = grad_buffer(w);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < steps; ++t) {
            const T* row = sv.data.data() + (t * batch + b) * dim;
            T acc = T(0);
            for (std::size_t c = 0; c < dim; ++c) acc += g[b * dim + c] * row[c];
            gw[b * steps + t] += acc;
          }
      }
      if (wants(s)) {
        auto& gs = grad_buffer(s);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < steps; ++t) {
            const T wt = wv[b * steps + t];
            T* row = gs.data() + (t * batch + b) * dim;
            for (std::size_t c = 0; c < dim; ++c) row[c] += wt * g[b * dim + c];
          }
      }
      break;
    }
  }
}

}  // namespace dst::ad
