#pragma once

// Temporal inference: mixture-of-experts fusion of the hypergraph and graph
// experts, the per-node forecast head and the Gaussian uncertainty head.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eikf/model/gating.hpp"
#include "eikf/model/params.hpp"

namespace eikf {

inline constexpr double kVarianceFloor = 1e-6;

class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// h'''' = sigmoid(g * h'' + (1 - g) * h'''), g = sigmoid(h'' f_s + h''' f_g).
/// A single enabled expert short-circuits to sigmoid(expert).
inline Var moe_fuse(const std::optional<Var>& hypergraph, const std::optional<Var>& graph, const ParamStore& store,
                    const std::optional<GateParams>& gate) {
  if (hypergraph && graph) {
    if (!gate) throw ConfigError("moe_fuse: two experts need gate parameters");
    return gated_fusion(*hypergraph, *graph, store, *gate);
  }
  if (hypergraph) return sigmoid(*hypergraph);
  if (graph) return sigmoid(*graph);
  throw ConfigError("moe_fuse: both experts disabled");
}

/// Stack of per-node shared linear layers ("1x1 convolutions"): ReLU between
/// layers, none after the last.
struct HeadParams {
  std::vector<ParamId> weights;
  std::vector<ParamId> biases;
  std::size_t out_dim = 0;

  static HeadParams create(ParamStore& store, const std::string& prefix, std::size_t d, std::size_t out_dim,
                           std::size_t depth, Rng& rng) {
    if (depth == 0) throw ConfigError("head depth must be at least 1");
    HeadParams h;
    h.out_dim = out_dim;
    for (std::size_t l = 0; l < depth; ++l) {
      const std::size_t out = l + 1 == depth ? out_dim : d;
      h.weights.push_back(store.add(prefix + ".w" + std::to_string(l), glorot(d, out, rng)));
      h.biases.push_back(store.add(prefix + ".b" + std::to_string(l), Tensor({1, out}, 0.0)));
    }
    return h;
  }
};

inline Var head_stack(const Var& x, const ParamStore& store, const HeadParams& h) {
  Tape& t = *x.tape();
  Var out = x;
  for (std::size_t l = 0; l < h.weights.size(); ++l) {
    out = add_row(matmul(out, store.on(t, h.weights[l])), store.on(t, h.biases[l]));
    if (l + 1 < h.weights.size()) out = relu(out);
  }
  return out;
}

/// Point forecast in the scaled domain, n x upsilon. Inverse scaling happens
/// outside the tape (see invert_scaler_nodes).
inline Var forecast_head(const Var& fused, const ParamStore& store, const HeadParams& h) {
  return head_stack(fused, store, h);
}

struct GaussianForecast {
  Var mean;      // n x upsilon
  Var variance;  // n x upsilon, >= kVarianceFloor
};

/// Head with 2*upsilon outputs split into mean and softplus(raw) + floor.
inline GaussianForecast uncertainty_head(const Var& fused, const ParamStore& store, const HeadParams& h) {
  if (h.out_dim % 2 != 0) throw ConfigError("uncertainty head needs an even output width");
  const std::size_t ups = h.out_dim / 2;
  const Var raw = head_stack(fused, store, h);
  return {slice_cols(raw, 0, ups), shift(softplus(slice_cols(raw, ups, 2 * ups)), kVarianceFloor)};
}

}  // namespace eikf
