#pragma once

#include <string>

#include "eikf/model/params.hpp"

namespace eikf {

/// Linear projections f_s, f_g of a two-input gate.
struct GateParams {
  ParamId w_first = 0;   // d x d, applied to the first input
  ParamId w_second = 0;  // d x d, applied to the second input

  static GateParams create(ParamStore& store, const std::string& prefix, std::size_t d, Rng& rng) {
    GateParams g;
    g.w_first = store.add(prefix + ".f_s", glorot(d, d, rng));
    g.w_second = store.add(prefix + ".f_g", glorot(d, d, rng));
    return g;
  }
};

/// g = sigmoid(a W_s + b W_g); returns sigmoid(g * a + (1 - g) * b).
///
/// Used for the HgAT input gate, the HgAT/HgT fusion and the
/// mixture-of-experts fusion; the outer sigmoid bounds the output to (0, 1).
inline Var gated_fusion(const Var& a, const Var& b, const ParamStore& store, const GateParams& p) {
  if (a.shape() != b.shape())
    throw ShapeError("gated_fusion: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tape& t = *a.tape();
  const Var g = sigmoid(add(matmul(a, store.on(t, p.w_first)), matmul(b, store.on(t, p.w_second))));
  return sigmoid(add(mul(g, a), mul(one_minus(g), b)));
}

}  // namespace eikf
