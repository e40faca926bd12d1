#pragma once

// Hypergraph structure inference: learned hypernode / hyperedge embeddings,
// their pairwise compatibility, and a Gumbel-softmax sample of the incidence
// matrix.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "eikf/model/params.hpp"

namespace eikf {

inline constexpr double kSimilarityEps = 1e-8;
inline constexpr double kDefaultTemperature = 0.05;

struct HgEmbeddings {
  ParamId node_emb = 0;  // n x d
  ParamId edge_emb = 0;  // m x d
  std::size_t n = 0, m = 0, d = 0;

  static HgEmbeddings create(ParamStore& store, const std::string& prefix, std::size_t n, std::size_t m,
                             std::size_t d, Rng& rng) {
    HgEmbeddings e{0, 0, n, m, d};
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    e.node_emb = store.add(prefix + ".node_emb", Tensor::normal({n, d}, s, rng));
    e.edge_emb = store.add(prefix + ".edge_emb", Tensor::normal({m, d}, s, rng));
    return e;
  }
};

/// Row norms of a matrix as an [rows x 1] column.
inline Var row_norms(const Var& z) {
  Tape& t = *z.tape();
  const Var ones = t.constant(Tensor({z.cols(), 1}, 1.0));
  return sqrt(matmul(square(z), ones));
}

/// S_ij = (cos(z_i, z_j) + 1) / 2, a cosine similarity mapped onto [0, 1].
/// Norm products below eps are raised to eps to guard zero-norm rows.
inline Var pairwise_similarity(const Var& node_emb, const Var& edge_emb, double eps = kSimilarityEps) {
  if (node_emb.value().rank() != 2 || edge_emb.value().rank() != 2 || node_emb.cols() != edge_emb.cols())
    throw ShapeError("pairwise_similarity: embedding dims differ, " + shape_str(node_emb.shape()) + " vs " +
                     shape_str(edge_emb.shape()));
  Tape& t = *node_emb.tape();
  const Var dots = matmul(node_emb, transpose(edge_emb));
  const Var norms = matmul(row_norms(node_emb), transpose(row_norms(edge_emb)));
  Tensor guard(norms.shape(), 0.0);
  for (std::size_t i = 0; i < guard.size(); ++i)
    if (norms.value()[i] < eps) guard[i] = eps - norms.value()[i];
  const Var cosine = div(dots, add(norms, t.constant(std::move(guard))));
  return scale(shift(cosine, 1.0), 0.5);
}

/// Two-channel edge probabilities: connected = sigmoid(S), not connected =
/// sigmoid(1 - S).
struct EdgeProbabilities {
  Var connected;
  Var disconnected;
};

inline EdgeProbabilities edge_probabilities(const Var& similarity) {
  return {sigmoid(similarity), sigmoid(one_minus(similarity))};
}

/// Independent standard Gumbel draws for the two channels of every cell.
struct GumbelNoise {
  Tensor connected;
  Tensor disconnected;

  static GumbelNoise draw(std::size_t n, std::size_t m, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto gumbel = [&] {
      double u = unif(rng);
      if (u <= 0.0) u = std::numeric_limits<double>::min();
      return -std::log(-std::log(u));
    };
    GumbelNoise g{Tensor({n, m}), Tensor({n, m})};
    for (std::size_t i = 0; i < n * m; ++i) {
      g.connected[i] = gumbel();
      g.disconnected[i] = gumbel();
    }
    return g;
  }
};

enum class SampleMode { train_soft, eval_hard };

struct IncidenceSample {
  Var soft;     // relaxed incidence in (0, 1); equals `hard` in eval mode
  Tensor hard;  // {0, 1}
  Var incidence;  // value used downstream: hard forward, soft adjoint in train mode
  double temperature = kDefaultTemperature;
  SampleMode mode = SampleMode::eval_hard;
};

/// Connected channel of softmax_k((g_k + P_k) / temperature).
inline Var gumbel_soft(const EdgeProbabilities& p, const GumbelNoise& noise, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("gumbel_sample: temperature must be positive");
  Tape& t = *p.connected.tape();
  Tensor noise_gap = noise.connected;
  for (std::size_t i = 0; i < noise_gap.size(); ++i) noise_gap[i] -= noise.disconnected[i];
  const Var gap = add(sub(p.connected, p.disconnected), t.constant(std::move(noise_gap)));
  const Var soft = sigmoid(scale(gap, 1.0 / temperature));
  // Saturated cells round to exactly 0 or 1; keep them inside the open
  // interval without touching the gradient.
  Tensor inside = soft.value();
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  bool clamped = false;
  for (auto& v : inside.values()) {
    if (v < lo || v > hi) clamped = true;
    v = std::clamp(v, lo, hi);
  }
  return clamped ? straight_through(soft, inside) : soft;
}

/// Deterministic argmax of the probability channels; ties count as connected.
inline Tensor hard_incidence(const Tensor& connected, const Tensor& disconnected) {
  Tensor hard(connected.shape());
  for (std::size_t i = 0; i < hard.size(); ++i) hard[i] = connected[i] >= disconnected[i] ? 1.0 : 0.0;
  return hard;
}

inline IncidenceSample gumbel_sample(const EdgeProbabilities& p, double temperature, SampleMode mode,
                                     const GumbelNoise* noise) {
  if (!(temperature > 0.0)) throw std::invalid_argument("gumbel_sample: temperature must be positive");
  Tape& t = *p.connected.tape();
  IncidenceSample s;
  s.temperature = temperature;
  s.mode = mode;
  if (mode == SampleMode::eval_hard) {
    s.hard = hard_incidence(p.connected.value(), p.disconnected.value());
    s.soft = t.constant(s.hard);
    s.incidence = s.soft;
    return s;
  }
  if (noise == nullptr) throw std::invalid_argument("gumbel_sample: train mode needs Gumbel noise");
  s.soft = gumbel_soft(p, *noise, temperature);
  s.hard = Tensor(s.soft.shape());
  for (std::size_t i = 0; i < s.hard.size(); ++i) s.hard[i] = s.soft.value()[i] >= 0.5 ? 1.0 : 0.0;
  s.incidence = straight_through(s.soft, s.hard);
  return s;
}

inline IncidenceSample gumbel_sample(const EdgeProbabilities& p, double temperature, SampleMode mode, Rng& rng) {
  if (mode == SampleMode::eval_hard) return gumbel_sample(p, temperature, mode, nullptr);
  const GumbelNoise noise = GumbelNoise::draw(p.connected.rows(), p.connected.cols(), rng);
  return gumbel_sample(p, temperature, mode, &noise);
}

/// lambda * mean(P_connected)
inline Var sparsity_penalty(const EdgeProbabilities& p, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("sparsity_penalty: lambda must be non-negative");
  return scale(mean(p.connected), lambda);
}

/// Full structure-inference pass from parameters to probabilities.
inline EdgeProbabilities infer_edge_probabilities(Tape& tape, const ParamStore& store, const HgEmbeddings& e) {
  return edge_probabilities(pairwise_similarity(store.on(tape, e.node_emb), store.on(tape, e.edge_emb)));
}

}  // namespace eikf
