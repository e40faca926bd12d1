#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation applied to its variables in creation order,
// which is already a topological order of the expression DAG. backward()
// walks that order in reverse and accumulates adjoints into parents.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "eikf/numeric/tensor.hpp"

namespace eikf {

using ParamId = std::size_t;
using Gradients = std::map<ParamId, Tensor>;

enum class OpKind {
  leaf,
  matmul,
  add,
  sub,
  mul,
  div,
  concat,
  transpose,
  sigmoid,
  tanh,
  relu,
  softmax,
  masked_softmax,
  layer_norm,
  sum,
  mean,
  abs,
  log,
  square,
  sqrt,
  broadcast,
  slice,
  softplus,
  scale,
  shift,
  straight_through,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::concat: return "concat";
    case OpKind::transpose: return "transpose";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::softmax: return "softmax";
    case OpKind::masked_softmax: return "masked_softmax";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::abs: return "abs";
    case OpKind::log: return "log";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::broadcast: return "broadcast";
    case OpKind::slice: return "slice";
    case OpKind::softplus: return "softplus";
    case OpKind::scale: return "scale";
    case OpKind::shift: return "shift";
    case OpKind::straight_through: return "straight_through";
  }
  return "?";
}

inline constexpr double kLayerNormEps = 1e-5;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
public:
  using BackwardFn = std::function<void(Tape&, std::size_t self, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Untracked leaf (data, masks, noise).
  Var constant(Tensor value) { return push(std::move(value), OpKind::leaf, false, {}); }

  /// Tracked leaf without a parameter id; its gradient is read with grad().
  Var variable(Tensor value) { return push(std::move(value), OpKind::leaf, true, {}); }

  /// Tracked trainable parameter. Repeated calls with the same id reuse the
  /// node, so every use contributes to one accumulated gradient.
  Var param(ParamId id, const Tensor& value) {
    if (auto it = param_nodes_.find(id); it != param_nodes_.end()) return Var(this, it->second);
    Var v = push(value, OpKind::leaf, true, {});
    nodes_[v.id()].param = id;
    param_nodes_.emplace(id, v.id());
    return v;
  }

  /// Records a derived node. `fn` receives the adjoint of this node and must
  /// accumulate into parents via accumulate().
  Var record(Tensor value, OpKind op, std::initializer_list<Var> parents, BackwardFn fn) {
    if (!value.all_finite())
      throw DomainError(std::string(op_name(op)) + ": non-finite value in forward pass");
    bool tracked = false;
    for (const auto& p : parents) tracked = tracked || p.requires_grad();
    return push(std::move(value), op, tracked, tracked ? std::move(fn) : BackwardFn{});
  }

  Var record(Tensor value, OpKind op, const std::vector<Var>& parents, BackwardFn fn) {
    if (!value.all_finite())
      throw DomainError(std::string(op_name(op)) + ": non-finite value in forward pass");
    bool tracked = false;
    for (const auto& p : parents) tracked = tracked || p.requires_grad();
    return push(std::move(value), op, tracked, tracked ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  OpKind op(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void accumulate(std::size_t id, const Tensor& g) {
    auto& node = nodes_[id];
    if (!node.requires_grad) return;
    if (!node.grad) {
      node.grad = g;
      return;
    }
    if (node.grad->shape() != g.shape())
      throw ShapeError("accumulate: gradient " + shape_str(g.shape()) + " for node " + shape_str(node.grad->shape()));
    auto dst = node.grad->values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  /// Runs reverse-mode differentiation from a scalar node and returns the
  /// gradient of every parameter reached.
  Gradients backward(Var output) {
    if (output.tape() != this) throw std::invalid_argument("backward: variable belongs to another tape");
    if (nodes_.empty()) throw std::logic_error("backward: empty tape");
    if (output.value().size() != 1)
      throw ShapeError("backward: output must be scalar, got shape " + shape_str(output.shape()));
    for (auto& n : nodes_) n.grad.reset();
    nodes_[output.id()].grad = Tensor(output.shape(), 1.0);
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.grad || !node.backward) continue;
      node.backward(*this, i, *node.grad);
    }
    Gradients out;
    for (const auto& [pid, nid] : param_nodes_) {
      const auto& node = nodes_[nid];
      out.emplace(pid, node.grad ? *node.grad : Tensor(node.value.shape(), 0.0));
    }
    return out;
  }

  /// Gradient of any tracked node after backward(); zeros if unreached.
  Tensor grad(Var v) const {
    const auto& node = nodes_.at(v.id());
    return node.grad ? *node.grad : Tensor(node.value.shape(), 0.0);
  }

private:
  struct Node {
    Tensor value;
    OpKind op = OpKind::leaf;
    bool requires_grad = false;
    std::optional<ParamId> param;
    std::optional<Tensor> grad;
    BackwardFn backward;
  };

  Var push(Tensor value, OpKind op, bool tracked, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), op, tracked, std::nullopt, std::nullopt, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<ParamId, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline void same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape() != b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

inline void same_shape(const Var& a, const Var& b, const char* op) {
  same_tape(a, b, op);
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 operand, got " + shape_str(a.shape()));
}

template <class F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto o = out.values();
  auto in = a.values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

// Elementwise unary op whose derivative is expressed through input x and output y.
template <class F, class D>
Var unary(const Var& a, OpKind op, F f, D dfdx) {
  const std::size_t aid = a.id();
  return a.tape()->record(map_values(a.value(), f), op, {a}, [aid, dfdx](Tape& t, std::size_t self, const Tensor& g) {
    const auto& x = t.value(aid);
    const auto& y = t.value(self);
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * dfdx(x[i], y[i]);
    t.accumulate(aid, gx);
  });
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  detail::same_tape(a, b, "matmul");
  Tensor y = matmul_values(a.value(), b.value());
  const auto aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(y), OpKind::matmul, {a, b}, [aid, bid](Tape& t, std::size_t, const Tensor& g) {
    const auto& av = t.value(aid);
    const auto& bv = t.value(bid);
    if (t.requires_grad(aid)) t.accumulate(aid, matmul_values(g, bv.transposed()));
    if (t.requires_grad(bid)) t.accumulate(bid, matmul_values(av.transposed(), g));
  });
}

/// matmul whose forward sums are order-free over the shared dimension; used
/// where that dimension indexes nodes.
inline Var matmul_order_free(const Var& a, const Var& b) {
  detail::same_tape(a, b, "matmul");
  Tensor y = matmul_values_order_free(a.value(), b.value());
  const auto aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(y), OpKind::matmul, {a, b}, [aid, bid](Tape& t, std::size_t, const Tensor& g) {
    const Tensor& av = t.value(aid);
    const Tensor& bv = t.value(bid);
    if (t.requires_grad(aid)) t.accumulate(aid, matmul_values(g, bv.transposed()));
    if (t.requires_grad(bid)) t.accumulate(bid, matmul_values(av.transposed(), g));
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::same_shape(a, b, "add");
  Tensor y = a.value();
  auto yv = y.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] += bv[i];
  const auto aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(y), OpKind::add, {a, b}, [aid, bid](Tape& t, std::size_t, const Tensor& g) {
    t.accumulate(aid, g);
    t.accumulate(bid, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_shape(a, b, "sub");
  Tensor y = a.value();
  auto yv = y.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] -= bv[i];
  const auto aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(y), OpKind::sub, {a, b}, [aid, bid](Tape& t, std::size_t, const Tensor& g) {
    t.accumulate(aid, g);
    if (t.requires_grad(bid)) t.accumulate(bid, detail::map_values(g, [](double v) { return -v; }));
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::same_shape(a, b, "mul");
  Tensor y = a.value();
  auto yv = y.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] *= bv[i];
  const auto aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(y), OpKind::mul, {a, b}, [aid, bid](Tape& t, std::size_t, const Tensor& g) {
    const auto& av = t.value(aid);
    const auto& bv2 = t.value(bid);
    if (t.requires_grad(aid)) {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * bv2[i];
      t.accumulate(aid, ga);
    }
    if (t.requires_grad(bid)) {
      Tensor gb(g.shape());
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = g[i] * av[i];
      t.accumulate(bid, gb);
    }
  });
}

inline Var div(const Var& a, const Var& b) {
  detail::same_shape(a, b, "div");
  Tensor y = a.value();
  auto yv = y.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < yv.size(); ++i) {
    if (bv[i] == 0.0) throw DomainError("div: zero denominator at flat index " + std::to_string(i));
    yv[i] /= bv[i];
  }
  const auto aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(y), OpKind::div, {a, b}, [aid, bid](Tape& t, std::size_t, const Tensor& g) {
    const auto& av = t.value(aid);
    const auto& bv2 = t.value(bid);
    if (t.requires_grad(aid)) {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] / bv2[i];
      t.accumulate(aid, ga);
    }
    if (t.requires_grad(bid)) {
      Tensor gb(g.shape());
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = -g[i] * av[i] / (bv2[i] * bv2[i]);
      t.accumulate(bid, gb);
    }
  });
}

/// Multiplies by a constant.
inline Var scale(const Var& a, double c) {
  const auto aid = a.id();
  return a.tape()->record(detail::map_values(a.value(), [c](double v) { return v * c; }), OpKind::scale, {a},
                          [aid, c](Tape& t, std::size_t, const Tensor& g) {
                            t.accumulate(aid, detail::map_values(g, [c](double v) { return v * c; }));
                          });
}

/// Adds a constant.
inline Var shift(const Var& a, double c) {
  const auto aid = a.id();
  return a.tape()->record(detail::map_values(a.value(), [c](double v) { return v + c; }), OpKind::shift, {a},
                          [aid](Tape& t, std::size_t, const Tensor& g) { t.accumulate(aid, g); });
}

/// 1 - a
inline Var one_minus(const Var& a) { return shift(scale(a, -1.0), 1.0); }

inline Var transpose(const Var& a) {
  detail::require_matrix(a, "transpose");
  const auto aid = a.id();
  return a.tape()->record(a.value().transposed(), OpKind::transpose, {a},
                          [aid](Tape& t, std::size_t, const Tensor& g) { t.accumulate(aid, g.transposed()); });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(a, OpKind::sigmoid, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary(a, OpKind::tanh, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& a) {
  return detail::unary(a, OpKind::relu, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var softplus(const Var& a) {
  return detail::unary(a, OpKind::softplus, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

inline Var abs(const Var& a) {
  return detail::unary(a, OpKind::abs, [](double x) { return std::abs(x); },
                       [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var square(const Var& a) {
  return detail::unary(a, OpKind::square, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var log(const Var& a) {
  for (double v : a.value().values())
    if (!(v > 0.0)) throw DomainError("log: non-positive operand " + std::to_string(v));
  return detail::unary(a, OpKind::log, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// Elementwise square root, recorded on the tape.
inline Var sqrt(const Var& a) {
  for (double v : a.value().values())
    if (v < 0.0) throw DomainError("sqrt: negative operand " + std::to_string(v));
  Tape& t = *a.tape();
  const auto aid = a.id();
  return t.record(detail::map_values(a.value(), [](double x) { return std::sqrt(x); }), OpKind::sqrt, {a},
                  [aid](Tape& tp, std::size_t self, const Tensor& g) {
                    const auto& y = tp.value(self);
                    Tensor gx(y.shape());
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = y[i] > 0.0 ? g[i] / (2.0 * y[i]) : 0.0;
                    tp.accumulate(aid, gx);
                  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto aid = a.id();
  return a.tape()->record(Tensor::scalar(s), OpKind::sum, {a}, [aid](Tape& t, std::size_t, const Tensor& g) {
    t.accumulate(aid, Tensor(t.value(aid).shape(), g[0]));
  });
}

inline Var mean(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const double n = static_cast<double>(a.value().size());
  const auto aid = a.id();
  return a.tape()->record(Tensor::scalar(s / n), OpKind::mean, {a}, [aid, n](Tape& t, std::size_t, const Tensor& g) {
    t.accumulate(aid, Tensor(t.value(aid).shape(), g[0] / n));
  });
}

/// Softmax along axis 1 (each row) or axis 0 (each column) of a matrix.
inline Var softmax(const Var& a, int axis = 1) {
  detail::require_matrix(a, "softmax");
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  const Tensor& x = a.value();
  const std::size_t R = x.rows(), C = x.cols();
  const std::size_t outer = axis == 1 ? R : C, inner = axis == 1 ? C : R;
  auto at = [axis, C](std::size_t o, std::size_t k) { return axis == 1 ? o * C + k : k * C + o; };
  Tensor y(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < inner; ++k) mx = std::max(mx, x[at(o, k)]);
    std::vector<double> terms(inner);
    for (std::size_t k = 0; k < inner; ++k) terms[k] = y[at(o, k)] = std::exp(x[at(o, k)] - mx);
    const double z = order_free_sum(terms);
    for (std::size_t k = 0; k < inner; ++k) y[at(o, k)] /= z;
  }
  const auto aid = a.id();
  return a.tape()->record(std::move(y), OpKind::softmax, {a},
                          [aid, outer, inner, at](Tape& t, std::size_t self, const Tensor& g) {
                            const auto& yv = t.value(self);
                            Tensor gx(yv.shape());
                            for (std::size_t o = 0; o < outer; ++o) {
                              double dot = 0.0;
                              for (std::size_t k = 0; k < inner; ++k) dot += g[at(o, k)] * yv[at(o, k)];
                              for (std::size_t k = 0; k < inner; ++k)
                                gx[at(o, k)] = yv[at(o, k)] * (g[at(o, k)] - dot);
                            }
                            t.accumulate(aid, gx);
                          });
}

/// Row-wise softmax restricted to entries where `support` is nonzero.
/// Entries outside the support are exactly zero; a row with empty support is
/// all zeros.
inline Var masked_softmax(const Var& a, const Tensor& support) {
  detail::require_matrix(a, "masked_softmax");
  if (support.shape() != a.shape())
    throw ShapeError("masked_softmax: support " + shape_str(support.shape()) + " vs logits " + shape_str(a.shape()));
  const Tensor& x = a.value();
  const std::size_t R = x.rows(), C = x.cols();
  Tensor y(x.shape(), 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c)
      if (support(r, c) != 0.0) mx = std::max(mx, x(r, c));
    if (!std::isfinite(mx)) continue;
    std::vector<double> terms;
    for (std::size_t c = 0; c < C; ++c)
      if (support(r, c) != 0.0) terms.push_back(y(r, c) = std::exp(x(r, c) - mx));
    const double z = order_free_sum(terms);
    for (std::size_t c = 0; c < C; ++c) y(r, c) /= z;
  }
  const auto aid = a.id();
  return a.tape()->record(std::move(y), OpKind::masked_softmax, {a}, [aid, R, C](Tape& t, std::size_t self, const Tensor& g) {
    const auto& yv = t.value(self);
    Tensor gx(yv.shape(), 0.0);
    for (std::size_t r = 0; r < R; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += g(r, c) * yv(r, c);
      for (std::size_t c = 0; c < C; ++c) gx(r, c) = yv(r, c) * (g(r, c) - dot);
    }
    t.accumulate(aid, gx);
  });
}

/// Row-wise normalization to zero mean and unit (population) variance.
/// Affine scaling is left to the caller.
inline Var layer_norm(const Var& a, double eps = kLayerNormEps) {
  detail::require_matrix(a, "layer_norm");
  const Tensor& x = a.value();
  const std::size_t R = x.rows(), C = x.cols();
  Tensor y(x.shape());
  std::vector<double> inv_std(R);
  for (std::size_t r = 0; r < R; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += x(r, c);
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<double>(C);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < C; ++c) y(r, c) = (x(r, c) - mu) * inv_std[r];
  }
  const auto aid = a.id();
  return a.tape()->record(std::move(y), OpKind::layer_norm, {a},
                          [aid, R, C, inv_std](Tape& t, std::size_t self, const Tensor& g) {
                            const auto& yv = t.value(self);
                            Tensor gx(yv.shape());
                            const double n = static_cast<double>(C);
                            for (std::size_t r = 0; r < R; ++r) {
                              double gsum = 0.0, gysum = 0.0;
                              for (std::size_t c = 0; c < C; ++c) {
                                gsum += g(r, c);
                                gysum += g(r, c) * yv(r, c);
                              }
                              for (std::size_t c = 0; c < C; ++c)
                                gx(r, c) = inv_std[r] * (g(r, c) - gsum / n - yv(r, c) * gysum / n);
                            }
                            t.accumulate(aid, gx);
                          });
}

/// Expands size-1 dimensions of a matrix to rows x cols.
inline Var broadcast_to(const Var& a, std::size_t rows, std::size_t cols) {
  detail::require_matrix(a, "broadcast");
  const std::size_t R = a.rows(), C = a.cols();
  if ((R != rows && R != 1) || (C != cols && C != 1))
    throw ShapeError("broadcast: cannot expand " + shape_str(a.shape()) + " to " + shape_str({rows, cols}));
  Tensor y({rows, cols});
  const Tensor& x = a.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y(r, c) = x(R == 1 ? 0 : r, C == 1 ? 0 : c);
  const auto aid = a.id();
  return a.tape()->record(std::move(y), OpKind::broadcast, {a}, [aid, R, C, rows, cols](Tape& t, std::size_t, const Tensor& g) {
    Tensor gx({R, C}, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx(R == 1 ? 0 : r, C == 1 ? 0 : c) += g(r, c);
    t.accumulate(aid, gx);
  });
}

/// Adds a [1 x c] row vector to every row of an [n x c] matrix.
inline Var add_row(const Var& a, const Var& bias) { return add(a, broadcast_to(bias, a.rows(), a.cols())); }

/// Columns [begin, end) of a matrix.
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  detail::require_matrix(a, "slice");
  if (begin >= end || end > a.cols())
    throw ShapeError("slice: columns [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_str(a.shape()));
  const std::size_t R = a.rows(), C = a.cols(), W = end - begin;
  Tensor y({R, W});
  const Tensor& x = a.value();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < W; ++c) y(r, c) = x(r, begin + c);
  const auto aid = a.id();
  return a.tape()->record(std::move(y), OpKind::slice, {a}, [aid, R, C, W, begin](Tape& t, std::size_t, const Tensor& g) {
    Tensor gx({R, C}, 0.0);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < W; ++c) gx(r, begin + c) = g(r, c);
    t.accumulate(aid, gx);
  });
}

/// Rows [begin, end) of a matrix.
inline Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  detail::require_matrix(a, "slice");
  if (begin >= end || end > a.rows())
    throw ShapeError("slice: rows [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_str(a.shape()));
  const std::size_t C = a.cols(), R = a.rows(), H = end - begin;
  const auto src = a.value().values();
  Tensor y({H, C}, std::vector<double>(src.begin() + static_cast<std::ptrdiff_t>(begin * C),
                                       src.begin() + static_cast<std::ptrdiff_t>(end * C)));
  const auto aid = a.id();
  return a.tape()->record(std::move(y), OpKind::slice, {a}, [aid, R, C, H, begin](Tape& t, std::size_t, const Tensor& g) {
    Tensor gx({R, C}, 0.0);
    std::copy(g.values().begin(), g.values().end(), gx.values().begin() + static_cast<std::ptrdiff_t>(begin * C));
    (void)H;
    t.accumulate(aid, gx);
  });
}

/// Concatenation of matrices along axis 1 (columns) or axis 0 (rows).
inline Var concat(const std::vector<Var>& parts, int axis = 1) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat");
    detail::same_tape(parts.front(), p, "concat");
  }
  const std::size_t fixed = axis == 1 ? parts.front().rows() : parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    const std::size_t f = axis == 1 ? p.rows() : p.cols();
    if (f != fixed)
      throw ShapeError("concat: shape mismatch " + shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
    total += axis == 1 ? p.cols() : p.rows();
  }
  Tensor y = axis == 1 ? Tensor({fixed, total}) : Tensor({total, fixed});
  std::vector<std::size_t> ids, widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& x = p.value();
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) {
        if (axis == 1)
          y(r, off + c) = x(r, c);
        else
          y(off + r, c) = x(r, c);
      }
    const std::size_t w = axis == 1 ? x.cols() : x.rows();
    ids.push_back(p.id());
    widths.push_back(w);
    off += w;
  }
  return parts.front().tape()->record(std::move(y), OpKind::concat, parts, [ids, widths, axis, fixed](Tape& t, std::size_t, const Tensor& g) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      if (t.requires_grad(ids[k])) {
        Tensor gx = axis == 1 ? Tensor({fixed, w}) : Tensor({w, fixed});
        for (std::size_t r = 0; r < gx.rows(); ++r)
          for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) = axis == 1 ? g(r, o + c) : g(o + r, c);
        t.accumulate(ids[k], gx);
      }
      o += w;
    }
  });
}

/// Forward value is `hard`; the adjoint passes unchanged to `soft`.
inline Var straight_through(const Var& soft, const Tensor& hard) {
  if (soft.shape() != hard.shape())
    throw ShapeError("straight_through: shape mismatch " + shape_str(soft.shape()) + " vs " + shape_str(hard.shape()));
  const auto sid = soft.id();
  return soft.tape()->record(hard, OpKind::straight_through, {soft},
                             [sid](Tape& t, std::size_t, const Tensor& g) { t.accumulate(sid, g); });
}

/// Generic entry point by op kind for elementwise and reduction primitives.
inline Var apply(OpKind op, const std::vector<Var>& in) {
  auto need = [&](std::size_t k) {
    if (in.size() != k)
      throw std::invalid_argument(std::string("apply(") + op_name(op) + "): expected " + std::to_string(k) + " inputs");
  };
  switch (op) {
    case OpKind::matmul: need(2); return matmul(in[0], in[1]);
    case OpKind::add: need(2); return add(in[0], in[1]);
    case OpKind::sub: need(2); return sub(in[0], in[1]);
    case OpKind::mul: need(2); return mul(in[0], in[1]);
    case OpKind::div: need(2); return div(in[0], in[1]);
    case OpKind::concat: return concat(in, 1);
    case OpKind::transpose: need(1); return transpose(in[0]);
    case OpKind::sigmoid: need(1); return sigmoid(in[0]);
    case OpKind::tanh: need(1); return tanh(in[0]);
    case OpKind::relu: need(1); return relu(in[0]);
    case OpKind::softmax: need(1); return softmax(in[0], 1);
    case OpKind::layer_norm: need(1); return layer_norm(in[0]);
    case OpKind::sum: need(1); return sum(in[0]);
    case OpKind::mean: need(1); return mean(in[0]);
    case OpKind::abs: need(1); return abs(in[0]);
    case OpKind::log: need(1); return log(in[0]);
    case OpKind::square: need(1); return square(in[0]);
    case OpKind::softplus: need(1); return softplus(in[0]);
    default: throw std::invalid_argument(std::string("apply: op ") + op_name(op) + " needs explicit arguments");
  }
}

}  // namespace eikf
