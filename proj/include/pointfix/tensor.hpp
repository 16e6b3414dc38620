// Dense immutable arrays with a dynamic reverse-mode graph.
//
// A Tensor is a shared handle to an immutable Node. Nodes created while grad
// mode is on and with at least one input requiring grad record their inputs
// and a backward closure. Backward closures are written in terms of other
// Tensor ops, so running them with grad mode on yields a differentiable
// gradient (used for meta-gradients through an inner update).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pointfix {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
inline thread_local bool grad_mode_enabled = true;
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_enabled; }

/// Scoped switch for graph recording on the current thread.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : prev_(detail::grad_mode_enabled) {
    detail::grad_mode_enabled = enabled;
  }
  ~GradModeGuard() { detail::grad_mode_enabled = prev_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Tensor;

template <typename T>
using BackwardFn = std::function<std::vector<Tensor<T>>(const Tensor<T>&)>;

template <typename T>
struct Node {
  Shape shape;
  std::shared_ptr<const std::vector<T>> data;
  bool requires_grad = false;
  std::vector<Tensor<T>> inputs;
  BackwardFn<T> backward;
  std::string_view op = "leaf";
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != values.size())
      throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->data = std::make_shared<const std::vector<T>>(std::move(values));
    return Tensor(std::move(n));
  }
  static Tensor full(Shape shape, T v) {
    const auto n = shape_numel(shape);
    return constant(std::move(shape), std::vector<T>(n, v));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static Tensor scalar(T v) { return constant({}, {v}); }
  /// Leaf tensor that gradients are taken with respect to.
  static Tensor parameter(Shape shape, std::vector<T> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  /// Result of an op. Records the graph only when grad mode is on and some
  /// input requires grad.
  static Tensor from_op(Shape shape, std::vector<T> values, std::vector<Tensor> inputs,
                        BackwardFn<T> backward, std::string_view op) {
    Tensor t = constant(std::move(shape), std::move(values));
    if (!grad_enabled()) return t;
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& x) { return x.requires_grad(); });
    if (!any) return t;
    t.node_->requires_grad = true;
    t.node_->inputs = std::move(inputs);
    t.node_->backward = std::move(backward);
    t.node_->op = op;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data->size(); }
  std::span<const T> values() const { return {node_->data->data(), node_->data->size()}; }
  const std::vector<T>& vec() const { return *node_->data; }
  T operator[](std::size_t i) const { return (*node_->data)[i]; }
  T item() const {
    if (numel() != 1) throw std::invalid_argument("Tensor::item on " + shape_str(shape()));
    return (*node_->data)[0];
  }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_ && !node_->backward; }

  /// Same values, no graph history.
  Tensor detach() const {
    auto n = std::make_shared<Node<T>>();
    n->shape = node_->shape;
    n->data = node_->data;
    return Tensor(std::move(n));
  }
  /// Detached leaf requiring grad.
  Tensor as_parameter() const {
    Tensor t = detach();
    t.node_->requires_grad = true;
    return t;
  }

  Node<T>* node() const { return node_.get(); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(values().begin(), values().end());
    return Tensor<U>::constant(shape(), std::move(v));
  }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}
  std::shared_ptr<Node<T>> node_;
};

// ---------------------------------------------------------------------------
// Broadcasting helpers (numpy rules, right aligned).

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const std::size_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " and " +
                                  shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

namespace detail {

// Strides of `in` laid over the (longer) `out` shape; 0 on broadcast axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = out.size() - 1 - k;
    st[o] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return st;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const std::size_t n = shape_numel(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t na = shape_numel(a), nb = shape_numel(b);
  if (a == out && nb == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, 0);
    return;
  }
  if (b == out && na == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i, 0, i);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t nd = out.size();
  std::vector<std::size_t> idx(nd, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shape-changing ops used by the elementwise backward passes.

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& target);

template <typename T>
Tensor<T> sum_to(const Tensor<T>& x, const Shape& target) {
  if (x.shape() == target) return x;
  std::vector<T> out(shape_numel(target), T(0));
  const auto& xv = x.vec();
  detail::for_each_broadcast(x.shape(), x.shape(), target,
                             [&](std::size_t i, std::size_t, std::size_t o) { out[o] += xv[i]; });
  const Shape src = x.shape();
  return Tensor<T>::from_op(
      target, std::move(out), {x},
      [src](const Tensor<T>& g) { return std::vector<Tensor<T>>{broadcast_to(g, src)}; },
      "sum_to");
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& target) {
  if (x.shape() == target) return x;
  if (broadcast_shape(x.shape(), target) != target)
    throw std::invalid_argument("broadcast_to: cannot broadcast " + shape_str(x.shape()) +
                                " to " + shape_str(target));
  std::vector<T> out(shape_numel(target));
  const auto& xv = x.vec();
  detail::for_each_broadcast(target, target, x.shape(),
                             [&](std::size_t o, std::size_t, std::size_t i) { out[o] = xv[i]; });
  const Shape src = x.shape();
  return Tensor<T>::from_op(
      target, std::move(out), {x},
      [src](const Tensor<T>& g) { return std::vector<Tensor<T>>{sum_to(g, src)}; },
      "broadcast_to");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  const Shape src = x.shape();
  return Tensor<T>::from_op(
      std::move(shape), x.vec(), {x},
      [src](const Tensor<T>& g) { return std::vector<Tensor<T>>{reshape(g, src)}; }, "reshape");
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic.

namespace detail {
template <typename T, typename F>
std::pair<Shape, std::vector<T>> binary_values(const Tensor<T>& a, const Tensor<T>& b, F f) {
  Shape out = broadcast_shape(a.shape(), b.shape());
  std::vector<T> v(shape_numel(out));
  const auto& av = a.vec();
  const auto& bv = b.vec();
  for_each_broadcast(out, a.shape(), b.shape(),
                     [&](std::size_t o, std::size_t i, std::size_t j) { v[o] = f(av[i], bv[j]); });
  return {std::move(out), std::move(v)};
}

template <typename T, typename F>
std::vector<T> unary_values(const Tensor<T>& x, F f) {
  std::vector<T> v(x.numel());
  const auto& xv = x.vec();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(xv[i]);
  return v;
}
}  // namespace detail

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> neg(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  auto [shape, v] = detail::binary_values(a, b, [](T x, T y) { return x + y; });
  return Tensor<T>::from_op(
      std::move(shape), std::move(v), {a, b},
      [a, b](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{a.requires_grad() ? sum_to(g, a.shape()) : Tensor<T>{},
                                      b.requires_grad() ? sum_to(g, b.shape()) : Tensor<T>{}};
      },
      "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  auto [shape, v] = detail::binary_values(a, b, [](T x, T y) { return x - y; });
  return Tensor<T>::from_op(
      std::move(shape), std::move(v), {a, b},
      [a, b](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{a.requires_grad() ? sum_to(g, a.shape()) : Tensor<T>{},
                                      b.requires_grad() ? neg(sum_to(g, b.shape())) : Tensor<T>{}};
      },
      "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  auto [shape, v] = detail::binary_values(a, b, [](T x, T y) { return x * y; });
  return Tensor<T>::from_op(
      std::move(shape), std::move(v), {a, b},
      [a, b](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{
            a.requires_grad() ? sum_to(mul(g, b), a.shape()) : Tensor<T>{},
            b.requires_grad() ? sum_to(mul(g, a), b.shape()) : Tensor<T>{}};
      },
      "mul");
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  auto [shape, v] = detail::binary_values(a, b, [](T x, T y) { return x / y; });
  return Tensor<T>::from_op(
      std::move(shape), std::move(v), {a, b},
      [a, b](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{
            a.requires_grad() ? sum_to(div(g, b), a.shape()) : Tensor<T>{},
            b.requires_grad() ? sum_to(neg(div(mul(g, a), mul(b, b))), b.shape()) : Tensor<T>{}};
      },
      "div");
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return Tensor<T>::from_op(
      x.shape(), detail::unary_values(x, [](T v) { return -v; }), {x},
      [](const Tensor<T>& g) { return std::vector<Tensor<T>>{neg(g)}; }, "neg");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return Tensor<T>::from_op(
      x.shape(), detail::unary_values(x, [c](T v) { return v * c; }), {x},
      [c](const Tensor<T>& g) { return std::vector<Tensor<T>>{scale(g, c)}; }, "scale");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return Tensor<T>::from_op(
      x.shape(), detail::unary_values(x, [c](T v) { return v + c; }), {x},
      [](const Tensor<T>& g) { return std::vector<Tensor<T>>{g}; }, "add_scalar");
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return mul(x, x);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto v = detail::unary_values(x, [](T z) {
    if (z >= 0) return T(1) / (T(1) + std::exp(-z));
    const T e = std::exp(z);
    return e / (T(1) + e);
  });
  return Tensor<T>::from_op(
      x.shape(), std::move(v), {x},
      [x](const Tensor<T>& g) {
        const Tensor<T> s = sigmoid(x);
        return std::vector<Tensor<T>>{mul(g, mul(s, add_scalar(neg(s), T(1))))};
      },
      "sigmoid");
}

/// log(1 + exp(x)), computed stably.
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  auto v = detail::unary_values(
      x, [](T z) { return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z))); });
  return Tensor<T>::from_op(
      x.shape(), std::move(v), {x},
      [x](const Tensor<T>& g) { return std::vector<Tensor<T>>{mul(g, sigmoid(x))}; },
      "softplus");
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  auto v = detail::unary_values(x, [slope](T z) { return z > 0 ? z : slope * z; });
  return Tensor<T>::from_op(
      x.shape(), std::move(v), {x},
      [x, slope](const Tensor<T>& g) {
        auto m = detail::unary_values(x, [slope](T z) { return z > 0 ? T(1) : slope; });
        return std::vector<Tensor<T>>{mul(g, Tensor<T>::constant(x.shape(), std::move(m)))};
      },
      "leaky_relu");
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  auto v = detail::unary_values(x, [](T z) { return std::abs(z); });
  return Tensor<T>::from_op(
      x.shape(), std::move(v), {x},
      [x](const Tensor<T>& g) {
        auto s = detail::unary_values(x, [](T z) { return z > 0 ? T(1) : (z < 0 ? T(-1) : T(0)); });
        return std::vector<Tensor<T>>{mul(g, Tensor<T>::constant(x.shape(), std::move(s)))};
      },
      "abs");
}

// ---------------------------------------------------------------------------
// Reductions.

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.values()) acc += v;
  const Shape src = x.shape();
  return Tensor<T>::from_op(
      {}, {acc}, {x},
      [src](const Tensor<T>& g) { return std::vector<Tensor<T>>{broadcast_to(g, src)}; }, "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Channel (last-axis) concatenation and slicing.

template <typename T>
Tensor<T> pad_last(const Tensor<T>& x, std::size_t offset, std::size_t total);

template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  const std::size_t c = x.shape().back();
  if (begin > end || end > c) throw std::invalid_argument("slice_last: bad range");
  const std::size_t rows = x.numel() / c, w = end - begin;
  std::vector<T> v(rows * w);
  const auto& xv = x.vec();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.begin() + r * c + begin, w, v.begin() + r * w);
  Shape s = x.shape();
  s.back() = w;
  return Tensor<T>::from_op(
      std::move(s), std::move(v), {x},
      [begin, c](const Tensor<T>& g) { return std::vector<Tensor<T>>{pad_last(g, begin, c)}; },
      "slice_last");
}

/// Zero-pads the last axis so that x occupies [offset, offset + width).
template <typename T>
Tensor<T> pad_last(const Tensor<T>& x, std::size_t offset, std::size_t total) {
  const std::size_t w = x.shape().back();
  if (offset + w > total) throw std::invalid_argument("pad_last: bad range");
  const std::size_t rows = x.numel() / w;
  std::vector<T> v(rows * total, T(0));
  const auto& xv = x.vec();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.begin() + r * w, w, v.begin() + r * total + offset);
  Shape s = x.shape();
  s.back() = total;
  return Tensor<T>::from_op(
      std::move(s), std::move(v), {x},
      [offset, w](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{slice_last(g, offset, offset + w)};
      },
      "pad_last");
}

template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    l.pop_back();
    if (l != lead) throw std::invalid_argument("concat_last: leading shapes differ");
    total += p.shape().back();
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<T> v(rows * total);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape().back();
    const auto& pv = p.vec();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.begin() + r * w, w, v.begin() + r * total + off);
    offsets.push_back(off);
    off += w;
  }
  Shape s = lead;
  s.push_back(total);
  return Tensor<T>::from_op(
      std::move(s), std::move(v), parts,
      [parts, offsets](const Tensor<T>& g) {
        std::vector<Tensor<T>> out;
        for (std::size_t i = 0; i < parts.size(); ++i)
          out.push_back(parts[i].requires_grad()
                            ? slice_last(g, offsets[i], offsets[i] + parts[i].shape().back())
                            : Tensor<T>{});
        return out;
      },
      "concat_last");
}

// ---------------------------------------------------------------------------
// Operator sugar.

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

}  // namespace pointfix
