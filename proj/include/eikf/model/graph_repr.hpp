#pragma once

// T-GCN over the explicit sensor graph: a GRU whose input transform is a
// graph convolution, unrolled over the look-back window.

#include <cmath>
#include <optional>
#include <string>

#include "eikf/data/graph.hpp"
#include "eikf/model/params.hpp"

namespace eikf {

struct TGCNParams {
  ParamId w_gcn = 0;                 // channels x d
  ParamId w_u = 0, w_r = 0, w_c = 0;  // 2d x d
  ParamId b_u = 0, b_r = 0, b_c = 0;  // 1 x d
  std::size_t channels = 1;
  std::size_t d = 0;

  static TGCNParams create(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t d,
                           Rng& rng) {
    TGCNParams p;
    p.channels = channels;
    p.d = d;
    p.w_gcn = store.add(prefix + ".w_gcn", glorot(channels, d, rng));
    p.w_u = store.add(prefix + ".w_u", glorot(2 * d, d, rng));
    p.w_r = store.add(prefix + ".w_r", glorot(2 * d, d, rng));
    p.w_c = store.add(prefix + ".w_c", glorot(2 * d, d, rng));
    p.b_u = store.add(prefix + ".b_u", Tensor({1, d}, 0.0));
    p.b_r = store.add(prefix + ".b_r", Tensor({1, d}, 0.0));
    p.b_c = store.add(prefix + ".b_c", Tensor({1, d}, 0.0));
    return p;
  }
};

/// Single-layer graph convolution A_hat X W, no activation.
inline Var gcn_apply(const Var& x, const Tensor& adjacency_norm, const Var& weight) {
  if (adjacency_norm.rank() != 2 || adjacency_norm.cols() != x.rows() || adjacency_norm.rows() != x.rows())
    throw ShapeError("gcn_apply: adjacency " + shape_str(adjacency_norm.shape()) + " vs input " +
                     shape_str(x.shape()));
  Tape& t = *x.tape();
  return matmul(matmul_order_free(t.constant(adjacency_norm), x), weight);
}

/// One GRU step with graph-convolved input:
///   u = sigmoid([gcn(x) | H] W_u + b_u)
///   r = sigmoid([gcn(x) | H] W_r + b_r)
///   c = tanh([gcn(x) | r*H] W_c + b_c)
///   H' = u*H + (1-u)*c
inline Var tgcn_step(const Var& x, const Var& hidden, const Tensor& adjacency_norm, const ParamStore& store,
                     const TGCNParams& p) {
  if (x.cols() != p.channels || hidden.cols() != p.d || hidden.rows() != x.rows())
    throw ShapeError("tgcn_step: input " + shape_str(x.shape()) + ", hidden " + shape_str(hidden.shape()));
  Tape& t = *x.tape();
  const Var conv = gcn_apply(x, adjacency_norm, store.on(t, p.w_gcn));
  const Var joined = concat({conv, hidden}, 1);
  const Var u = sigmoid(add_row(matmul(joined, store.on(t, p.w_u)), store.on(t, p.b_u)));
  const Var r = sigmoid(add_row(matmul(joined, store.on(t, p.w_r)), store.on(t, p.b_r)));
  const Var cand_in = concat({conv, mul(r, hidden)}, 1);
  const Var c = tanh(add_row(matmul(cand_in, store.on(t, p.w_c)), store.on(t, p.b_c)));
  return add(mul(u, hidden), mul(one_minus(u), c));
}

/// Runs tgcn_step over the history columns in time order from a zero state.
/// With a mask, step s sees [x_s | mask_s] as a two-channel input.
inline Var tgcn_unroll(const Var& history, const std::optional<Tensor>& mask, const Tensor& adjacency_norm,
                       const ParamStore& store, const TGCNParams& p) {
  Tape& t = *history.tape();
  const std::size_t n = history.rows(), steps = history.cols();
  if (mask && mask->shape() != history.shape())
    throw ShapeError("tgcn_unroll: mask " + shape_str(mask->shape()) + " vs history " + shape_str(history.shape()));
  const std::size_t expected_channels = mask ? 2 : 1;
  if (p.channels != expected_channels)
    throw ShapeError("tgcn_unroll: parameters expect " + std::to_string(p.channels) + " input channels, got " +
                     std::to_string(expected_channels));
  const Var mask_var = mask ? t.constant(*mask) : Var{};
  Var h = t.constant(Tensor({n, p.d}, 0.0));
  for (std::size_t s = 0; s < steps; ++s) {
    Var x = slice_cols(history, s, s + 1);
    if (mask) x = concat({x, slice_cols(mask_var, s, s + 1)}, 1);
    h = tgcn_step(x, h, adjacency_norm, store, p);
  }
  return h;
}

}  // namespace eikf
