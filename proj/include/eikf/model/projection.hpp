#pragma once

#include <string>

#include "eikf/model/params.hpp"

namespace eikf {

/// Gated linear projection of per-node histories into d features.
struct ProjectionParams {
  ParamId w_gate = 0;    // in_dim x d, through the sigmoid
  ParamId w_linear = 0;  // in_dim x d
  ParamId w_out = 0;     // d x d
  std::size_t in_dim = 0;
  std::size_t d = 0;

  static ProjectionParams create(ParamStore& store, const std::string& prefix, std::size_t in_dim, std::size_t d,
                                 Rng& rng) {
    ProjectionParams p;
    p.in_dim = in_dim;
    p.d = d;
    p.w_gate = store.add(prefix + ".w_gate", glorot(in_dim, d, rng));
    p.w_linear = store.add(prefix + ".w_linear", glorot(in_dim, d, rng));
    p.w_out = store.add(prefix + ".w_out", glorot(d, d, rng));
    return p;
  }
};

/// (sigmoid(X W_gate) * (X W_linear)) W_out for history X of shape n x in_dim.
inline Var gln_forward(const Var& history, const ParamStore& store, const ProjectionParams& p) {
  if (history.value().rank() != 2 || history.cols() != p.in_dim)
    throw ShapeError("gln_forward: history " + shape_str(history.shape()) + " but projection expects " +
                     std::to_string(p.in_dim) + " columns");
  Tape& t = *history.tape();
  const Var gate = sigmoid(matmul(history, store.on(t, p.w_gate)));
  const Var lin = matmul(history, store.on(t, p.w_linear));
  return matmul(mul(gate, lin), store.on(t, p.w_out));
}

}  // namespace eikf
