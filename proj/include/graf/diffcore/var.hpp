#pragma once

// Reverse-mode differentiation over a dynamically recorded tape.
//
// Every operation allocates a node holding its value, its parents and a
// vector-Jacobian rule. Node ids increase monotonically, so sorting the
// reachable set by descending id is a reverse topological order. The VJP
// rules are themselves written in terms of recorded operations; running
// backward with `create_graph` therefore extends the tape and the resulting
// gradients can be differentiated again.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "graf/diffcore/kernels.hpp"
#include "graf/diffcore/tensor.hpp"

namespace graf::ad {

enum class OpKind : std::uint8_t {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kMatMul,
  kTranspose,
  kIm2Col,
  kCol2Im,
  kRelu,
  kLeakyRelu,
  kSigmoid,
  kSoftplus,
  kExp,
  kLog,
  kSin,
  kCos,
  kSquare,
  kSqrt,
  kSum,
  kMean,
  kSumTo,
  kBroadcast,
  kConcat,
  kSlice,
  kPad,
  kReshape,
  kCumSum,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kNeg: return "neg";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kIm2Col: return "im2col";
    case OpKind::kCol2Im: return "col2im";
    case OpKind::kRelu: return "relu";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSin: return "sin";
    case OpKind::kCos: return "cos";
    case OpKind::kSquare: return "square";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSumTo: return "sum_to";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kPad: return "pad";
    case OpKind::kReshape: return "reshape";
    case OpKind::kCumSum: return "cumsum";
  }
  return "?";
}

namespace detail {
inline std::atomic<std::uint64_t> g_next_node_id{1};
inline thread_local bool g_grad_enabled = true;
}  // namespace detail

inline bool grad_enabled() { return detail::g_grad_enabled; }

// Disables recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
  ~NoGradGuard() { detail::g_grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class EnableGradGuard {
 public:
  EnableGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = true; }
  ~EnableGradGuard() { detail::g_grad_enabled = prev_; }
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Var;

template <typename T>
using BackwardFn = std::function<std::vector<Var<T>>(const Var<T>& out, const Var<T>& grad_out)>;

template <typename T>
struct Node {
  std::uint64_t id = 0;
  OpKind kind = OpKind::kConstant;
  Tensor<T> value;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn<T> backward;
  bool requires_grad = false;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  // Leaf holding `value`; trainable leaves set requires_grad.
  explicit Var(Tensor<T> value, bool requires_grad = false) {
    node_ = std::make_shared<Node<T>>();
    node_->id = detail::g_next_node_id.fetch_add(1);
    node_->kind = requires_grad ? OpKind::kLeaf : OpKind::kConstant;
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  // Mutable access for optimizers; only valid on leaves.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  OpKind kind() const { return node_->kind; }
  std::uint64_t id() const { return node_->id; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }
  T item() const { return node_->value.item(); }

  // Same value, no tape history.
  Var detach() const { return Var(node_->value, false); }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> scalar(T v) {
  return Var<T>(Tensor<T>::scalar(v), false);
}

namespace detail {

template <typename T>
Var<T> record(OpKind kind, Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn<T> backward) {
  auto node = std::make_shared<Node<T>>();
  node->id = g_next_node_id.fetch_add(1);
  node->kind = kind;
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  const T* src = x.data();
  T* dst = out.data();
  for (std::size_t i = 0, n = x.size(); i < n; ++i) dst[i] = f(src[i]);
  return out;
}

template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F f) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* dst = out.data();
  for (std::size_t i = 0, n = a.size(); i < n; ++i) dst[i] = f(pa[i], pb[i]);
  return out;
}

template <typename T>
void require_finite(const char* op, const Tensor<T>& x) {
  if (!x.all_finite()) throw std::domain_error(std::string(op) + ": non-finite input");
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace detail

// ---- shape plumbing -------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  const Shape in_shape = x.shape();
  return detail::record<T>(OpKind::kReshape, x.value().reshaped(std::move(shape)), {x},
                           [in_shape](const Var<T>&, const Var<T>& g) { return std::vector<Var<T>>{reshape(g, in_shape)}; });
}

template <typename T>
Var<T> sum_to(const Var<T>& x, const Shape& shape);

template <typename T>
Var<T> broadcast_to(const Var<T>& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const Shape in_shape = x.shape();
  return detail::record<T>(OpKind::kBroadcast, kernels::broadcast_to(x.value(), shape), {x},
                           [in_shape](const Var<T>&, const Var<T>& g) { return std::vector<Var<T>>{sum_to(g, in_shape)}; });
}

template <typename T>
Var<T> sum_to(const Var<T>& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const Shape in_shape = x.shape();
  return detail::record<T>(OpKind::kSumTo, kernels::sum_to(x.value(), shape), {x},
                           [in_shape](const Var<T>&, const Var<T>& g) { return std::vector<Var<T>>{broadcast_to(g, in_shape)}; });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  if (x.value().rank() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(x.shape()));
  return detail::record<T>(OpKind::kTranspose, kernels::transpose2d(x.value()), {x},
                           [](const Var<T>&, const Var<T>& g) { return std::vector<Var<T>>{transpose(g)}; });
}

template <typename T>
Var<T> pad(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t extent);

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const std::size_t extent = x.shape().at(axis);
  if (begin == 0 && end == extent) return x;
  return detail::record<T>(OpKind::kSlice, kernels::slice_axis(x.value(), axis, begin, end), {x},
                           [axis, begin, extent](const Var<T>&, const Var<T>& g) {
                             return std::vector<Var<T>>{pad(g, axis, begin, extent)};
                           });
}

template <typename T>
Var<T> pad(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t extent) {
  const std::size_t len = x.shape().at(axis);
  return detail::record<T>(OpKind::kPad, kernels::pad_axis(x.value(), axis, begin, extent), {x},
                           [axis, begin, len](const Var<T>&, const Var<T>& g) {
                             return std::vector<Var<T>>{slice(g, axis, begin, begin + len)};
                           });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range for " + to_string(shape));
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw ShapeError("concat: rank mismatch " + to_string(s) + " vs " + to_string(shape));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != shape[d]) {
        throw ShapeError("concat: shape mismatch " + to_string(s) + " vs " + to_string(shape));
      }
    }
    offsets.push_back(total);
    total += s[axis];
  }
  shape[axis] = total;
  Tensor<T> out(shape);
  const AxisSplit sp = split_at(shape, axis);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor<T>& v = parts[i].value();
    const std::size_t run = v.shape()[axis] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(v.data() + o * run, v.data() + (o + 1) * run, out.data() + (o * total + offsets[i]) * sp.inner);
    }
  }
  std::vector<std::size_t> lens;
  for (const auto& p : parts) lens.push_back(p.shape()[axis]);
  return detail::record<T>(OpKind::kConcat, std::move(out), parts,
                           [axis, offsets, lens](const Var<T>&, const Var<T>& g) {
                             std::vector<Var<T>> grads;
                             for (std::size_t i = 0; i < offsets.size(); ++i) {
                               grads.push_back(slice(g, axis, offsets[i], offsets[i] + lens[i]));
                             }
                             return grads;
                           });
}

// ---- arithmetic -----------------------------------------------------------

template <typename T>
Var<T> neg(const Var<T>& x) {
  return detail::record<T>(OpKind::kNeg, detail::map(x.value(), [](T v) { return -v; }), {x},
                           [](const Var<T>&, const Var<T>& g) { return std::vector<Var<T>>{neg(g)}; });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> matmul_tn(const Var<T>& a, const Var<T>& b);

namespace detail {
template <typename T>
std::pair<Var<T>, Var<T>> align(const Var<T>& a, const Var<T>& b) {
  if (a.shape() == b.shape()) return {a, b};
  const Shape s = broadcast_shape(a.shape(), b.shape());
  return {broadcast_to(a, s), broadcast_to(b, s)};
}
}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a0, const Var<T>& b0) {
  auto [a, b] = detail::align(a0, b0);
  return detail::record<T>(OpKind::kAdd, detail::zip(a.value(), b.value(), [](T x, T y) { return x + y; }), {a, b},
                           [](const Var<T>&, const Var<T>& g) { return std::vector<Var<T>>{g, g}; });
}

template <typename T>
Var<T> sub(const Var<T>& a0, const Var<T>& b0) {
  auto [a, b] = detail::align(a0, b0);
  return detail::record<T>(OpKind::kSub, detail::zip(a.value(), b.value(), [](T x, T y) { return x - y; }), {a, b},
                           [](const Var<T>&, const Var<T>& g) { return std::vector<Var<T>>{g, neg(g)}; });
}

template <typename T>
Var<T> mul(const Var<T>& a0, const Var<T>& b0) {
  auto [a, b] = detail::align(a0, b0);
  return detail::record<T>(OpKind::kMul, detail::zip(a.value(), b.value(), [](T x, T y) { return x * y; }), {a, b},
                           [a, b](const Var<T>&, const Var<T>& g) {
                             return std::vector<Var<T>>{a.requires_grad() ? mul(g, b) : Var<T>{},
                                                        b.requires_grad() ? mul(g, a) : Var<T>{}};
                           });
}

template <typename T>
Var<T> div(const Var<T>& a0, const Var<T>& b0) {
  auto [a, b] = detail::align(a0, b0);
  detail::require_finite("div", a.value());
  detail::require_finite("div", b.value());
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b.value()[i] == T(0)) throw std::domain_error("div: zero divisor at flat index " + std::to_string(i));
  }
  return detail::record<T>(OpKind::kDiv, detail::zip(a.value(), b.value(), [](T x, T y) { return x / y; }), {a, b},
                           [a, b](const Var<T>& out, const Var<T>& g) {
                             return std::vector<Var<T>>{a.requires_grad() ? div(g, b) : Var<T>{},
                                                        b.requires_grad() ? neg(div(mul(g, out), b)) : Var<T>{}};
                           });
}

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <typename T>
Var<T> operator/(const Var<T>& a, const Var<T>& b) { return div(a, b); }
template <typename T>
Var<T> operator-(const Var<T>& a) { return neg(a); }
template <typename T>
Var<T> operator+(const Var<T>& a, T s) { return add(a, scalar<T>(s)); }
template <typename T>
Var<T> operator+(T s, const Var<T>& a) { return add(scalar<T>(s), a); }
template <typename T>
Var<T> operator-(const Var<T>& a, T s) { return sub(a, scalar<T>(s)); }
template <typename T>
Var<T> operator-(T s, const Var<T>& a) { return sub(scalar<T>(s), a); }
template <typename T>
Var<T> operator*(const Var<T>& a, T s) { return mul(a, scalar<T>(s)); }
template <typename T>
Var<T> operator*(T s, const Var<T>& a) { return mul(scalar<T>(s), a); }
template <typename T>
Var<T> operator/(const Var<T>& a, T s) { return div(a, scalar<T>(s)); }

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<T> out(Shape{m, n});
  kernels::matmul(a.value().data(), b.value().data(), out.data(), m, k, n);
  return detail::record<T>(OpKind::kMatMul, std::move(out), {a, b}, [a, b](const Var<T>&, const Var<T>& g) {
    return std::vector<Var<T>>{a.requires_grad() ? matmul(g, transpose(b)) : Var<T>{},
                               b.requires_grad() ? matmul_tn(a, g) : Var<T>{}};
  });
}

template <typename T>
Var<T> matmul_tn(const Var<T>& a, const Var<T>& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[0] != b.shape()[0]) {
    throw ShapeError("matmul_tn: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t k = a.shape()[0], m = a.shape()[1], n = b.shape()[1];
  Tensor<T> out(Shape{m, n});
  kernels::matmul_tn(a.value().data(), b.value().data(), out.data(), m, k, n);
  return detail::record<T>(OpKind::kMatMul, std::move(out), {a, b}, [a, b](const Var<T>&, const Var<T>& g) {
    return std::vector<Var<T>>{a.requires_grad() ? matmul(b, transpose(g)) : Var<T>{},
                               b.requires_grad() ? matmul(a, g) : Var<T>{}};
  });
}

// ---- elementwise nonlinearities ------------------------------------------

namespace detail {
template <typename T>
Var<T> mask(const Var<T>& x, T slope) {
  return constant(map(x.value(), [slope](T v) { return v > T(0) ? T(1) : slope; }));
}
}  // namespace detail

template <typename T>
Var<T> relu(const Var<T>& x) {
  return detail::record<T>(OpKind::kRelu, detail::map(x.value(), [](T v) { return v > T(0) ? v : T(0); }), {x},
                           [x](const Var<T>&, const Var<T>& g) {
                             return std::vector<Var<T>>{mul(g, detail::mask(x, T(0)))};
                           });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return detail::record<T>(OpKind::kLeakyRelu, detail::map(x.value(), [slope](T v) { return v > T(0) ? v : slope * v; }),
                           {x}, [x, slope](const Var<T>&, const Var<T>& g) {
                             return std::vector<Var<T>>{mul(g, detail::mask(x, slope))};
                           });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::record<T>(OpKind::kSigmoid, detail::map(x.value(), detail::stable_sigmoid<T>), {x},
                           [](const Var<T>& out, const Var<T>& g) {
                             return std::vector<Var<T>>{mul(g, mul(out, sub(scalar<T>(1), out)))};
                           });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  return detail::record<T>(OpKind::kSoftplus, detail::map(x.value(), detail::stable_softplus<T>), {x},
                           [x](const Var<T>&, const Var<T>& g) { return std::vector<Var<T>>{mul(g, sigmoid(x))}; });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return detail::record<T>(OpKind::kExp, detail::map(x.value(), [](T v) { return std::exp(v); }), {x},
                           [](const Var<T>& out, const Var<T>& g) { return std::vector<Var<T>>{mul(g, out)}; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  detail::require_finite("log", x.value());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x.value()[i] > T(0))) throw std::domain_error("log: non-positive input at flat index " + std::to_string(i));
  }
  return detail::record<T>(OpKind::kLog, detail::map(x.value(), [](T v) { return std::log(v); }), {x},
                           [x](const Var<T>&, const Var<T>& g) { return std::vector<Var<T>>{div(g, x)}; });
}

template <typename T>
Var<T> sin(const Var<T>& x);
template <typename T>
Var<T> cos(const Var<T>& x);

template <typename T>
Var<T> sin(const Var<T>& x) {
  return detail::record<T>(OpKind::kSin, detail::map(x.value(), [](T v) { return std::sin(v); }), {x},
                           [x](const Var<T>&, const Var<T>& g) { return std::vector<Var<T>>{mul(g, cos(x))}; });
}

template <typename T>
Var<T> cos(const Var<T>& x) {
  return detail::record<T>(OpKind::kCos, detail::map(x.value(), [](T v) { return std::cos(v); }), {x},
                           [x](const Var<T>&, const Var<T>& g) { return std::vector<Var<T>>{neg(mul(g, sin(x)))}; });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return detail::record<T>(OpKind::kSquare, detail::map(x.value(), [](T v) { return v * v; }), {x},
                           [x](const Var<T>&, const Var<T>& g) {
                             return std::vector<Var<T>>{mul(g, mul(x, scalar<T>(2)))};
                           });
}

template <typename T>
Var<T> sqrt(const Var<T>& x) {
  detail::require_finite("sqrt", x.value());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x.value()[i] < T(0)) throw std::domain_error("sqrt: negative input at flat index " + std::to_string(i));
  }
  return detail::record<T>(OpKind::kSqrt, detail::map(x.value(), [](T v) { return std::sqrt(v); }), {x},
                           [](const Var<T>& out, const Var<T>& g) {
                             return std::vector<Var<T>>{div(g, mul(out, scalar<T>(2)))};
                           });
}

// ---- reductions -----------------------------------------------------------

namespace detail {
inline Shape keepdim_shape(Shape s, std::size_t axis) {
  s.at(axis) = 1;
  return s;
}
}  // namespace detail

template <typename T>
Var<T> sum(const Var<T>& x, std::size_t axis, bool keepdim = false) {
  const Shape in_shape = x.shape();
  return detail::record<T>(OpKind::kSum, kernels::sum_axis(x.value(), axis, keepdim), {x},
                           [in_shape, axis](const Var<T>&, const Var<T>& g) {
                             return std::vector<Var<T>>{broadcast_to(reshape(g, detail::keepdim_shape(in_shape, axis)), in_shape)};
                           });
}

template <typename T>
Var<T> mean(const Var<T>& x, std::size_t axis, bool keepdim = false) {
  const Shape in_shape = x.shape();
  const T inv = T(1) / static_cast<T>(in_shape.at(axis));
  Tensor<T> v = kernels::sum_axis(x.value(), axis, keepdim);
  for (auto& e : v.values()) e *= inv;
  return detail::record<T>(OpKind::kMean, std::move(v), {x}, [in_shape, axis, inv](const Var<T>&, const Var<T>& g) {
    return std::vector<Var<T>>{
        mul(broadcast_to(reshape(g, detail::keepdim_shape(in_shape, axis)), in_shape), scalar<T>(inv))};
  });
}

// Sum of every element; result has rank 0.
template <typename T>
Var<T> sum_all(const Var<T>& x) {
  return sum(reshape(x, Shape{x.size()}), 0);
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  return mean(reshape(x, Shape{x.size()}), 0);
}

template <typename T>
Var<T> cumsum(const Var<T>& x, std::size_t axis, bool exclusive = false, bool reverse = false) {
  return detail::record<T>(OpKind::kCumSum, kernels::cumsum_axis(x.value(), axis, exclusive, reverse), {x},
                           [axis, exclusive, reverse](const Var<T>&, const Var<T>& g) {
                             return std::vector<Var<T>>{cumsum(g, axis, exclusive, !reverse)};
                           });
}

// ---- convolution ----------------------------------------------------------

template <typename T>
Var<T> col2im(const Var<T>& cols, const kernels::ConvGeometry& geom);

template <typename T>
Var<T> im2col(const Var<T>& x, const kernels::ConvGeometry& geom) {
  return detail::record<T>(OpKind::kIm2Col, kernels::im2col(x.value(), geom), {x},
                           [geom](const Var<T>&, const Var<T>& g) { return std::vector<Var<T>>{col2im(g, geom)}; });
}

template <typename T>
Var<T> col2im(const Var<T>& cols, const kernels::ConvGeometry& geom) {
  return detail::record<T>(OpKind::kCol2Im, kernels::col2im(cols.value(), geom), {cols},
                           [geom](const Var<T>&, const Var<T>& g) { return std::vector<Var<T>>{im2col(g, geom)}; });
}

// x: NHWC, weight: (out_channels, k*k*in_channels) with (ky, kx, c) column order.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (x.value().rank() != 4) throw ShapeError("conv2d: expected NHWC input, got " + to_string(x.shape()));
  kernels::ConvGeometry geom;
  geom.batch = x.shape()[0];
  geom.height = x.shape()[1];
  geom.width = x.shape()[2];
  geom.channels = x.shape()[3];
  geom.kernel = kernel;
  geom.stride = stride;
  geom.pad = padding;
  if (weight.value().rank() != 2 || weight.shape()[1] != geom.cols()) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " incompatible with input " + to_string(x.shape()) +
                     " and kernel " + std::to_string(kernel));
  }
  if (geom.height + 2 * padding < kernel || geom.width + 2 * padding < kernel) {
    throw ShapeError("conv2d: kernel larger than padded input " + to_string(x.shape()));
  }
  const Var<T> cols = im2col(x, geom);
  const Var<T> y = matmul(cols, transpose(weight));
  return reshape(y, Shape{geom.batch, geom.out_h(), geom.out_w(), weight.shape()[0]});
}

// True when `leaf` lies on a recorded path into `root`.
template <typename T>
bool depends_on(const Var<T>& root, const Var<T>& leaf) {
  if (!root.defined() || !leaf.defined()) return false;
  std::vector<const Node<T>*> stack{root.node().get()};
  std::unordered_map<const Node<T>*, bool> seen;
  while (!stack.empty()) {
    const Node<T>* n = stack.back();
    stack.pop_back();
    if (n == leaf.node().get()) return true;
    for (const auto& in : n->inputs) {
      if (!seen[in.get()]) {
        seen[in.get()] = true;
        stack.push_back(in.get());
      }
    }
  }
  return false;
}

// ---- reverse sweep --------------------------------------------------------

class GradError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Gradients of scalar `root` with respect to each entry of `wrt`. Entries not
// reachable from root receive zeros. With `create_graph` the returned
// gradients are themselves recorded and differentiable.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& root, const std::vector<Var<T>>& wrt, bool create_graph = false) {
  if (!root.defined() || root.size() != 1) {
    throw GradError("backward root must be scalar, got shape " + (root.defined() ? to_string(root.shape()) : "<undefined>"));
  }
  using NodePtr = std::shared_ptr<Node<T>>;
  std::vector<NodePtr> order;
  if (root.requires_grad()) {
    std::unordered_map<const Node<T>*, bool> seen;
    std::vector<NodePtr> stack{root.node()};
    seen[root.node().get()] = true;
    while (!stack.empty()) {
      NodePtr n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (const auto& in : n->inputs) {
        if (in->requires_grad && !seen[in.get()]) {
          seen[in.get()] = true;
          stack.push_back(in);
        }
      }
    }
    std::sort(order.begin(), order.end(), [](const NodePtr& a, const NodePtr& b) { return a->id > b->id; });
  }

  std::unordered_map<const Node<T>*, bool> wanted;
  for (const auto& w : wrt) {
    if (w.defined()) wanted[w.node().get()] = true;
  }
  std::unordered_map<const Node<T>*, Var<T>> grads;
  std::unordered_map<const Node<T>*, Var<T>> results;

  {
    std::unique_ptr<NoGradGuard> no_grad;
    std::unique_ptr<EnableGradGuard> with_grad;
    if (create_graph) {
      with_grad = std::make_unique<EnableGradGuard>();
    } else {
      no_grad = std::make_unique<NoGradGuard>();
    }
    if (!order.empty()) grads[root.node().get()] = constant(Tensor<T>::ones(root.shape()));
    for (const NodePtr& n : order) {
      auto it = grads.find(n.get());
      if (it == grads.end()) continue;
      Var<T> g = it->second;
      grads.erase(it);
      if (wanted.count(n.get())) results[n.get()] = g;
      if (!n->backward) continue;
      const std::vector<Var<T>> in_grads = n->backward(Var<T>(n), g);
      for (std::size_t i = 0; i < n->inputs.size(); ++i) {
        const NodePtr& in = n->inputs[i];
        if (!in->requires_grad || i >= in_grads.size() || !in_grads[i].defined()) continue;
        auto slot = grads.find(in.get());
        if (slot == grads.end()) {
          grads.emplace(in.get(), in_grads[i]);
        } else {
          slot->second = add(slot->second, in_grads[i]);
        }
      }
    }
  }

  std::vector<Var<T>> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = w.defined() ? results.find(w.node().get()) : results.end();
    if (it != results.end()) {
      out.push_back(it->second);
    } else {
      out.push_back(constant(Tensor<T>::zeros(w.defined() ? w.shape() : Shape{})));
    }
  }
  return out;
}

}  // namespace graf::ad
