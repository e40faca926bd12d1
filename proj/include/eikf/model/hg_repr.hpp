#pragma once

// Hypergraph representation learning: HgAT (node -> hyperedge -> node
// attention over the sampled incidence), HgT (full self-attention over
// hypernodes) and the gates that fuse them.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "eikf/model/gating.hpp"
#include "eikf/model/params.hpp"

namespace eikf {

struct HgATHead {
  ParamId w0 = 0;      // d x d, shared value / score map
  ParamId w1 = 0;      // d x d, hyperedge message map
  ParamId w2 = 0;      // d x d, inter-edge score map
  ParamId reducer = 0; // d x 1, reduces ReLU(W0 h) to a scalar score
  ParamId w3 = 0;      // 2d x 1, scores [W2 h_i ; W2 h_j]
};

struct HgATParams {
  std::vector<HgATHead> heads;
  GateParams input_gate;
  std::size_t d = 0;

  static HgATParams create(ParamStore& store, const std::string& prefix, std::size_t d, std::size_t num_heads,
                           Rng& rng) {
    if (num_heads == 0) throw std::invalid_argument("HgAT: head count must be at least 1");
    HgATParams p;
    p.d = d;
    for (std::size_t z = 0; z < num_heads; ++z) {
      const std::string h = prefix + ".head" + std::to_string(z);
      HgATHead head;
      head.w0 = store.add(h + ".w0", glorot(d, d, rng));
      head.w1 = store.add(h + ".w1", glorot(d, d, rng));
      head.w2 = store.add(h + ".w2", glorot(d, d, rng));
      head.reducer = store.add(h + ".a", glorot(d, 1, rng));
      head.w3 = store.add(h + ".w3", glorot(2 * d, 1, rng));
      p.heads.push_back(head);
    }
    p.input_gate = GateParams::create(store, prefix + ".input_gate", d, rng);
    return p;
  }
};

/// Attention dropout; disabled when rng is null or rate is zero.
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;

  bool active() const { return rng != nullptr && rate > 0.0; }
};

/// Optional capture of attention matrices for inspection and tests.
struct AttentionTrace {
  std::vector<Tensor> edge_attention;  // per head, m x n (alpha)
  std::vector<Tensor> node_attention;  // per head, n x m (beta)
  std::vector<Tensor> self_attention;  // per HgT head, n x n
};

inline constexpr double kSupportThreshold = 1e-6;

/// Cells of the incidence that take part in attention.
inline Tensor incidence_support(const Tensor& incidence) {
  Tensor s(incidence.shape());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = incidence[i] > kSupportThreshold ? 1.0 : 0.0;
  return s;
}

namespace detail {

inline Var apply_dropout(const Var& weights, const Dropout& dropout) {
  if (!dropout.active()) return weights;
  std::bernoulli_distribution keep(1.0 - dropout.rate);
  Tensor mask(weights.shape());
  const double inv = 1.0 / (1.0 - dropout.rate);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(*dropout.rng) ? inv : 0.0;
  return mul(weights, weights.tape()->constant(std::move(mask)));
}

}  // namespace detail

/// Intra-edge aggregation: hyperedge representations (m x d) from hypernode
/// features (n x d) and incidence (n x m). Empty hyperedges yield zero rows.
inline Var hgat_edge_agg(const Var& features, const Var& incidence, const ParamStore& store, const HgATParams& p,
                         const Dropout& dropout = {}, AttentionTrace* trace = nullptr) {
  if (features.cols() != p.d || incidence.rows() != features.rows())
    throw ShapeError("hgat_edge_agg: features " + shape_str(features.shape()) + ", incidence " +
                     shape_str(incidence.shape()));
  Tape& t = *features.tape();
  const std::size_t n = features.rows(), m = incidence.cols();
  const Tensor support_t = incidence_support(incidence.value()).transposed();  // m x n
  Tensor nonempty({m, p.d}, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) any = any || support_t(j, i) != 0.0;
    if (any)
      for (std::size_t c = 0; c < p.d; ++c) nonempty(j, c) = 1.0;
  }
  const Var nonempty_mask = t.constant(std::move(nonempty));
  const Var incidence_t = transpose(incidence);
  Var total;
  for (std::size_t z = 0; z < p.heads.size(); ++z) {
    const auto& head = p.heads[z];
    const Var values = matmul(features, store.on(t, head.w0));                       // n x d
    const Var scores = matmul(relu(values), store.on(t, head.reducer));              // n x 1
    const Var logits = mul(broadcast_to(transpose(scores), m, n), incidence_t);      // m x n
    const Var alpha = masked_softmax(logits, support_t);
    if (trace) trace->edge_attention.push_back(alpha.value());
    const Var out = mul(sigmoid(matmul_order_free(detail::apply_dropout(alpha, dropout), values)), nonempty_mask);
    total = z == 0 ? out : add(total, out);
  }
  return total;
}

/// Inter-edge aggregation: hypernode representations (n x d) from hypernode
/// features and hyperedge representations.
inline Var hgat_node_agg(const Var& features, const Var& edge_reps, const Var& incidence, const ParamStore& store,
                         const HgATParams& p, const Dropout& dropout = {}, AttentionTrace* trace = nullptr) {
  const std::size_t n = features.rows(), m = edge_reps.rows();
  if (incidence.rows() != n || incidence.cols() != m || edge_reps.cols() != p.d || features.cols() != p.d)
    throw ShapeError("hgat_node_agg: features " + shape_str(features.shape()) + ", edges " +
                     shape_str(edge_reps.shape()) + ", incidence " + shape_str(incidence.shape()));
  Tape& t = *features.tape();
  const Tensor support = incidence_support(incidence.value());
  Var total;
  for (std::size_t z = 0; z < p.heads.size(); ++z) {
    const auto& head = p.heads[z];
    const Var w2 = store.on(t, head.w2);
    const Var w3 = store.on(t, head.w3);
    const Var node_score = matmul(matmul(features, w2), slice_rows(w3, 0, p.d));         // n x 1
    const Var edge_score = matmul(matmul(edge_reps, w2), slice_rows(w3, p.d, 2 * p.d));  // m x 1
    const Var phi = relu(add(broadcast_to(node_score, n, m), broadcast_to(transpose(edge_score), n, m)));
    const Var beta = masked_softmax(mul(phi, incidence), support);
    if (trace) trace->node_attention.push_back(beta.value());
    const Var message = matmul(detail::apply_dropout(beta, dropout), matmul(edge_reps, store.on(t, head.w1)));
    const Var out = relu(add(matmul(features, store.on(t, head.w0)), message));
    total = z == 0 ? out : add(total, out);
  }
  return total;
}

/// sigmoid(g * h + (1 - g) * x) with g = sigmoid(h f_s + x f_g).
inline Var hgat_input_gate(const Var& node_reps, const Var& features, const ParamStore& store, const GateParams& g) {
  return gated_fusion(node_reps, features, store, g);
}

/// Full single-layer HgAT: edge aggregation, node aggregation, input gate.
inline Var hgat_forward(const Var& features, const Var& incidence, const ParamStore& store, const HgATParams& p,
                        const Dropout& dropout = {}, AttentionTrace* trace = nullptr) {
  const Var edges = hgat_edge_agg(features, incidence, store, p, dropout, trace);
  const Var nodes = hgat_node_agg(features, edges, incidence, store, p, dropout, trace);
  return hgat_input_gate(nodes, features, store, p.input_gate);
}

struct HgTParams {
  ParamId wq = 0, wk = 0, wv = 0, wo = 0;  // d x d
  ParamId mlp_w1 = 0, mlp_b1 = 0;          // d x 4d, 1 x 4d
  ParamId mlp_w2 = 0, mlp_b2 = 0;          // 4d x d, 1 x d
  ParamId ln1_gain = 0, ln1_bias = 0;      // 1 x d
  ParamId ln2_gain = 0, ln2_bias = 0;      // 1 x d
  std::size_t d = 0;
  std::size_t heads = 1;

  static HgTParams create(ParamStore& store, const std::string& prefix, std::size_t d, std::size_t heads, Rng& rng) {
    if (heads == 0 || d % heads != 0)
      throw std::invalid_argument("HgT: model dim " + std::to_string(d) + " not divisible by " +
                                  std::to_string(heads) + " heads");
    HgTParams p;
    p.d = d;
    p.heads = heads;
    p.wq = store.add(prefix + ".wq", glorot(d, d, rng));
    p.wk = store.add(prefix + ".wk", glorot(d, d, rng));
    p.wv = store.add(prefix + ".wv", glorot(d, d, rng));
    p.wo = store.add(prefix + ".wo", glorot(d, d, rng));
    p.mlp_w1 = store.add(prefix + ".mlp_w1", glorot(d, 4 * d, rng));
    p.mlp_b1 = store.add(prefix + ".mlp_b1", Tensor({1, 4 * d}, 0.0));
    p.mlp_w2 = store.add(prefix + ".mlp_w2", glorot(4 * d, d, rng));
    p.mlp_b2 = store.add(prefix + ".mlp_b2", Tensor({1, d}, 0.0));
    p.ln1_gain = store.add(prefix + ".ln1_gain", Tensor({1, d}, 1.0));
    p.ln1_bias = store.add(prefix + ".ln1_bias", Tensor({1, d}, 0.0));
    p.ln2_gain = store.add(prefix + ".ln2_gain", Tensor({1, d}, 1.0));
    p.ln2_bias = store.add(prefix + ".ln2_bias", Tensor({1, d}, 0.0));
    return p;
  }
};

namespace detail {

inline Var affine_layer_norm(const Var& x, const Var& gain, const Var& bias) {
  const std::size_t n = x.rows(), d = x.cols();
  return add(mul(layer_norm(x), broadcast_to(gain, n, d)), broadcast_to(bias, n, d));
}

}  // namespace detail

/// Multi-head scaled dot-product self-attention over the rows of x.
inline Var multi_head_self_attention(const Var& x, const ParamStore& store, const HgTParams& p,
                                     AttentionTrace* trace = nullptr) {
  Tape& t = *x.tape();
  const Var q = matmul(x, store.on(t, p.wq));
  const Var k = matmul(x, store.on(t, p.wk));
  const Var v = matmul(x, store.on(t, p.wv));
  const std::size_t dh = p.d / p.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Var qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Var kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Var vh = slice_cols(v, h * dh, (h + 1) * dh);
    const Var attn = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    if (trace) trace->self_attention.push_back(attn.value());
    outs.push_back(matmul_order_free(attn, vh));
  }
  const Var merged = outs.size() == 1 ? outs.front() : concat(outs, 1);
  return matmul(merged, store.on(t, p.wo));
}

/// u = MSA(LN(x)) + x;  h' = MLP(LN(u)) + x.
/// The second residual returns to the input features.
inline Var hgt_forward(const Var& features, const ParamStore& store, const HgTParams& p,
                       AttentionTrace* trace = nullptr) {
  if (features.cols() != p.d) throw ShapeError("hgt_forward: features " + shape_str(features.shape()));
  Tape& t = *features.tape();
  const Var ln1 = detail::affine_layer_norm(features, store.on(t, p.ln1_gain), store.on(t, p.ln1_bias));
  const Var u = add(multi_head_self_attention(ln1, store, p, trace), features);
  const Var ln2 = detail::affine_layer_norm(u, store.on(t, p.ln2_gain), store.on(t, p.ln2_bias));
  const Var hidden = relu(add_row(matmul(ln2, store.on(t, p.mlp_w1)), store.on(t, p.mlp_b1)));
  const Var mlp = add_row(matmul(hidden, store.on(t, p.mlp_w2)), store.on(t, p.mlp_b2));
  return add(mlp, features);
}

/// h'' = sigmoid(g' * h' + (1 - g') * h), g' = sigmoid(h' f'_s + h f'_g).
inline Var fuse_hgat_hgt(const Var& hgt_out, const Var& hgat_out, const ParamStore& store, const GateParams& g) {
  return gated_fusion(hgt_out, hgat_out, store, g);
}

}  // namespace eikf
