#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace eikf;
using namespace eikf::testing;

namespace {

double sigma(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct HgFixture {
  ParamStore store;
  HgATParams hgat;
  HgTParams hgt;
  GateParams fusion;
  std::size_t d;

  HgFixture(std::size_t d_, std::size_t heads, std::size_t hgt_heads, std::uint64_t seed) : d(d_) {
    Rng rng(seed);
    hgat = HgATParams::create(store, "hgat", d, heads, rng);
    hgt = HgTParams::create(store, "hgt", d, hgt_heads, rng);
    fusion = GateParams::create(store, "fusion", d, rng);
  }
  const Tensor& w(ParamId id) const { return store.value(id); }
};

Tensor row_times(const Tensor& x, std::size_t i, const Tensor& w) {
  Tensor out({1, w.cols()}, 0.0);
  for (std::size_t k = 0; k < w.cols(); ++k)
    for (std::size_t c = 0; c < w.rows(); ++c) out[k] += x(i, c) * w(c, k);
  return out;
}

/// Explicit-loop HgAT intra-edge aggregation.
Tensor brute_edge_agg(const HgFixture& f, const Tensor& x, const Tensor& inc) {
  const std::size_t n = x.rows(), m = inc.cols(), d = f.d;
  Tensor out({m, d}, 0.0);
  for (const auto& head : f.hgat.heads) {
    for (std::size_t j = 0; j < m; ++j) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < n; ++i)
        if (inc(i, j) > 1e-6) members.push_back(i);
      if (members.empty()) continue;
      std::vector<double> logits;
      std::vector<Tensor> values;
      for (std::size_t i : members) {
        const Tensor v = row_times(x, i, f.w(head.w0));
        double e = 0.0;
        for (std::size_t c = 0; c < d; ++c) e += std::max(0.0, v[c]) * f.w(head.reducer)(c, 0);
        logits.push_back(e * inc(i, j));
        values.push_back(v);
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double l : logits) z += std::exp(l - mx);
      for (std::size_t c = 0; c < d; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < members.size(); ++k) acc += std::exp(logits[k] - mx) / z * values[k][c];
        out(j, c) += sigma(acc);
      }
    }
  }
  return out;
}

/// Explicit-loop HgAT inter-edge aggregation.
Tensor brute_node_agg(const HgFixture& f, const Tensor& x, const Tensor& edges, const Tensor& inc) {
  const std::size_t n = x.rows(), m = edges.rows(), d = f.d;
  Tensor out({n, d}, 0.0);
  for (const auto& head : f.hgat.heads) {
    const Tensor& w3 = f.w(head.w3);
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor hi = row_times(x, i, f.w(head.w2));
      double node_score = 0.0;
      for (std::size_t c = 0; c < d; ++c) node_score += hi[c] * w3(c, 0);
      std::vector<std::size_t> edges_of;
      std::vector<double> logits;
      for (std::size_t j = 0; j < m; ++j) {
        if (!(inc(i, j) > 1e-6)) continue;
        const Tensor hj = row_times(edges, j, f.w(head.w2));
        double edge_score = 0.0;
        for (std::size_t c = 0; c < d; ++c) edge_score += hj[c] * w3(d + c, 0);
        edges_of.push_back(j);
        logits.push_back(std::max(0.0, node_score + edge_score) * inc(i, j));
      }
      const Tensor self = row_times(x, i, f.w(head.w0));
      Tensor msg({1, d}, 0.0);
      if (!edges_of.empty()) {
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double l : logits) z += std::exp(l - mx);
        for (std::size_t k = 0; k < edges_of.size(); ++k) {
          const Tensor ej = row_times(edges, edges_of[k], f.w(head.w1));
          for (std::size_t c = 0; c < d; ++c) msg[c] += std::exp(logits[k] - mx) / z * ej[c];
        }
      }
      for (std::size_t c = 0; c < d; ++c) out(i, c) += std::max(0.0, self[c] + msg[c]);
    }
  }
  return out;
}

Tensor edge_agg(const HgFixture& f, const Tensor& x, const Tensor& inc, AttentionTrace* trace = nullptr) {
  Tape t;
  return hgat_edge_agg(t.constant(x), t.constant(inc), f.store, f.hgat, {}, trace).value();
}

}  // namespace

TEST(HgATEdge, MatchesBruteForce) {
  for (std::uint64_t seed : {1, 2, 3}) {
    HgFixture f(4, 2, 2, seed);
    Rng rng(seed + 100);
    const Tensor x = rand_tensor({5, 4}, rng);
    Tensor inc = random_incidence(5, 3, rng);
    for (std::size_t i = 0; i < 5; ++i) inc(i, 2) = 0.0;  // one empty hyperedge
    const Tensor ours = edge_agg(f, x, inc);
    EXPECT_LT(max_abs_diff(ours, brute_edge_agg(f, x, inc)), 1e-12);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(ours(2, c), 0.0);
  }
}

TEST(HgATEdge, SoftIncidenceMatchesBruteForce) {
  HgFixture f(4, 1, 2, 4);
  Rng rng(5);
  const Tensor x = rand_tensor({6, 4}, rng);
  Tensor inc = rand_tensor({6, 4}, rng, 0.0, 1.0);
  inc(0, 1) = 1e-9;  // below the support threshold
  EXPECT_LT(max_abs_diff(edge_agg(f, x, inc), brute_edge_agg(f, x, inc)), 1e-12);
}

TEST(HgATEdge, IdenticalMembersShareAttention) {
  HgFixture f(3, 1, 1, 6);
  Rng rng(7);
  const Tensor row = rand_tensor({1, 3}, rng);
  Tensor x({2, 3});
  for (std::size_t c = 0; c < 3; ++c) x(0, c) = x(1, c) = row[c];
  AttentionTrace trace;
  edge_agg(f, x, Tensor({2, 1}, 1.0), &trace);
  EXPECT_DOUBLE_EQ(trace.edge_attention[0](0, 0), 0.5);
  EXPECT_DOUBLE_EQ(trace.edge_attention[0](0, 1), 0.5);
}

TEST(HgATEdge, HandSoftmaxOneToTwo) {
  HgFixture f(1, 1, 1, 8);
  f.store.value(f.hgat.heads[0].w0) = Tensor({1, 1}, 1.0);
  f.store.value(f.hgat.heads[0].reducer) = Tensor({1, 1}, 1.0);
  AttentionTrace trace;
  edge_agg(f, Tensor::matrix(2, 1, {0.0, std::log(2.0)}), Tensor({2, 1}, 1.0), &trace);
  EXPECT_NEAR(trace.edge_attention[0](0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(trace.edge_attention[0](0, 1), 2.0 / 3.0, 1e-15);
}

TEST(HgATEdge, AllOnesIncidenceEqualsDenseAttention) {
  HgFixture f(4, 1, 2, 9);
  Rng rng(10);
  const Tensor x = rand_tensor({5, 4}, rng);
  const Tensor out = edge_agg(f, x, Tensor({5, 2}, 1.0));
  // dense oracle: softmax over every node of a . relu(x W0)
  const Tensor v = matmul_values(x, f.w(f.hgat.heads[0].w0));
  std::vector<double> s(5);
  double z = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    s[i] = 0.0;
    for (std::size_t c = 0; c < 4; ++c) s[i] += std::max(0.0, v(i, c)) * f.w(f.hgat.heads[0].reducer)(c, 0);
  }
  const double mx = *std::max_element(s.begin(), s.end());
  for (double& e : s) z += (e = std::exp(e - mx));
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t c = 0; c < 4; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < 5; ++i) acc += s[i] / z * v(i, c);
      EXPECT_NEAR(out(j, c), sigma(acc), 1e-12);
    }
}

TEST(HgATNode, MatchesBruteForceSixByFour) {
  for (std::uint64_t seed : {11, 12, 13}) {
    HgFixture f(4, 2, 2, seed);
    Rng rng(seed + 7);
    const Tensor x = rand_tensor({6, 4}, rng);
    Tensor inc = random_incidence(6, 4, rng);
    for (std::size_t j = 0; j < 4; ++j) inc(5, j) = 0.0;  // isolated hypernode
    Tape t;
    const Var xv = t.constant(x), iv = t.constant(inc);
    const Var edges = hgat_edge_agg(xv, iv, f.store, f.hgat);
    const Tensor ours = hgat_node_agg(xv, edges, iv, f.store, f.hgat).value();
    EXPECT_LT(max_abs_diff(ours, brute_node_agg(f, x, edges.value(), inc)), 1e-12);
    EXPECT_LT(max_abs_diff(edges.value(), brute_edge_agg(f, x, inc)), 1e-12);
  }
}

TEST(HgATNode, IsolatedNodeKeepsSelfTerm) {
  HgFixture f(3, 1, 1, 14);
  Rng rng(15);
  const Tensor x = rand_tensor({2, 3}, rng), e = rand_tensor({2, 3}, rng);
  Tape t;
  const Tensor out =
      hgat_node_agg(t.constant(x), t.constant(e), t.constant(Tensor({2, 2}, 0.0)), f.store, f.hgat).value();
  const Tensor self = matmul_values(x, f.w(f.hgat.heads[0].w0));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], std::max(0.0, self[i]));
}

TEST(HgATNode, SingletonAndSymmetricBeta) {
  HgFixture f(3, 1, 1, 16);
  Rng rng(17);
  const Tensor x = rand_tensor({2, 3}, rng);
  const Tensor row = rand_tensor({1, 3}, rng);
  Tensor e({2, 3});
  for (std::size_t c = 0; c < 3; ++c) e(0, c) = e(1, c) = row[c];
  AttentionTrace trace;
  Tape t;
  hgat_node_agg(t.constant(x), t.constant(e), t.constant(Tensor::matrix(2, 2, {1, 0, 1, 1})), f.store, f.hgat, {},
                &trace);
  const Tensor& beta = trace.node_attention[0];
  EXPECT_EQ(beta(0, 0), 1.0);
  EXPECT_EQ(beta(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(beta(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(beta(1, 1), 0.5);
}

TEST(HgATGate, Examples) {
  HgFixture f(3, 1, 1, 18);
  Rng rng(19);
  const Tensor h = rand_tensor({4, 3}, rng), xb = rand_tensor({4, 3}, rng);
  Tape t;
  const Tensor same = hgat_input_gate(t.constant(h), t.constant(h), f.store, f.hgat.input_gate).value();
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(same[i], sigma(h[i]), 1e-15);
  f.store.value(f.hgat.input_gate.w_first) = Tensor({3, 3}, 0.0);
  f.store.value(f.hgat.input_gate.w_second) = Tensor({3, 3}, 0.0);
  Tape t2;
  const Tensor zero = hgat_input_gate(t2.constant(h), t2.constant(xb), f.store, f.hgat.input_gate).value();
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(zero[i], sigma(0.5 * h[i] + 0.5 * xb[i]), 1e-15);

  HgFixture s(1, 1, 1, 20);
  s.store.value(s.hgat.input_gate.w_first) = Tensor({1, 1}, 0.0);
  s.store.value(s.hgat.input_gate.w_second) = Tensor({1, 1}, 0.0);
  Tape t3;
  const Tensor v =
      hgat_input_gate(t3.constant(Tensor({1, 1}, 1.0)), t3.constant(Tensor({1, 1}, 0.0)), s.store, s.hgat.input_gate)
          .value();
  EXPECT_NEAR(v.item(), 0.6225, 1e-4);
}

TEST(HgATForward, GradientsMatchFiniteDifferences) {
  HgFixture f(4, 2, 2, 21);
  Rng rng(22);
  const Tensor x = rand_tensor({6, 4}, rng);
  const Tensor inc = rand_tensor({6, 3}, rng, 0.2, 1.0);
  const Tensor r = rand_tensor({6, 4}, rng);
  const auto loss = [&](Tape& t) {
    return random_projection(hgat_forward(t.constant(x), t.constant(inc), f.store, f.hgat), r);
  };
  EXPECT_LT(param_grad_error(f.store, loss), 1e-4);
  EXPECT_LT(input_grad_error(x,
                             [&](Tape& t, const Var& v) {
                               return random_projection(hgat_forward(v, t.constant(inc), f.store, f.hgat), r);
                             }),
            1e-4);
  EXPECT_LT(input_grad_error(inc,
                             [&](Tape& t, const Var& v) {
                               return random_projection(hgat_forward(t.constant(x), v, f.store, f.hgat), r);
                             }),
            1e-4);
}

TEST(HgATForward, AttentionRowsSumToOne) {
  HgFixture f(4, 2, 2, 23);
  Rng rng(24);
  const Tensor x = rand_tensor({6, 4}, rng);
  Tensor inc = random_incidence(6, 4, rng);
  for (std::size_t i = 0; i < 6; ++i) inc(i, 3) = 0.0;
  AttentionTrace trace;
  Tape t;
  hgat_forward(t.constant(x), t.constant(inc), f.store, f.hgat, {}, &trace);
  for (const auto& a : trace.edge_attention)
    for (std::size_t j = 0; j < a.rows(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < a.cols(); ++i) s += a(j, i);
      EXPECT_NEAR(s, j == 3 ? 0.0 : 1.0, 1e-12);
    }
  for (const auto& b : trace.node_attention)
    for (std::size_t i = 0; i < b.rows(); ++i) {
      double s = 0.0, deg = 0.0;
      for (std::size_t j = 0; j < b.cols(); ++j) {
        s += b(i, j);
        deg += inc(i, j);
      }
      EXPECT_NEAR(s, deg > 0 ? 1.0 : 0.0, 1e-12);
    }
}

TEST(HgATForward, PermutationEquivariant) {
  HgFixture f(4, 2, 2, 25);
  Rng rng(26);
  const Tensor x = rand_tensor({6, 4}, rng);
  const Tensor inc = random_incidence(6, 3, rng);
  const auto perm = random_permutation(6, rng);
  Tape t;
  const Tensor base = hgat_forward(t.constant(x), t.constant(inc), f.store, f.hgat).value();
  const Tensor moved =
      hgat_forward(t.constant(permute_rows(x, perm)), t.constant(permute_rows(inc, perm)), f.store, f.hgat).value();
  EXPECT_EQ(moved, permute_rows(base, perm));
}

TEST(HgATForward, DropoutOnlyInTraining) {
  HgFixture f(4, 1, 2, 27);
  Rng rng(28);
  const Tensor x = rand_tensor({6, 4}, rng);
  const Tensor inc = Tensor({6, 2}, 1.0);
  Tape t;
  const Tensor plain = hgat_forward(t.constant(x), t.constant(inc), f.store, f.hgat).value();
  Rng drop(3);
  const Tensor noisy = hgat_forward(t.constant(x), t.constant(inc), f.store, f.hgat, Dropout{0.5, &drop}).value();
  EXPECT_GT(max_abs_diff(plain, noisy), 0.0);
  const Tensor off = hgat_forward(t.constant(x), t.constant(inc), f.store, f.hgat, Dropout{0.5, nullptr}).value();
  EXPECT_EQ(plain, off);
}

TEST(HgT, ZeroWeightsAreIdentity) {
  HgFixture f(4, 1, 2, 29);
  for (ParamId id : {f.hgt.wq, f.hgt.wk, f.hgt.wv, f.hgt.wo, f.hgt.mlp_w1, f.hgt.mlp_b1, f.hgt.mlp_w2, f.hgt.mlp_b2})
    f.store.value(id) = Tensor(f.store.value(id).shape(), 0.0);
  Rng rng(30);
  const Tensor x = rand_tensor({5, 4}, rng);
  Tape t;
  EXPECT_EQ(hgt_forward(t.constant(x), f.store, f.hgt).value(), x);
}

TEST(HgT, SingleTokenAttendsToItself) {
  HgFixture f(4, 1, 2, 31);
  Rng rng(32);
  AttentionTrace trace;
  Tape t;
  hgt_forward(t.constant(rand_tensor({1, 4}, rng)), f.store, f.hgt, &trace);
  ASSERT_EQ(trace.self_attention.size(), 2u);
  for (const auto& a : trace.self_attention) EXPECT_EQ(a.item(), 1.0);
}

TEST(HgT, RowsSumToOneAndPermutationEquivariant) {
  HgFixture f(6, 1, 3, 33);
  Rng rng(34);
  const Tensor x = rand_tensor({5, 6}, rng);
  AttentionTrace trace;
  Tape t;
  const Tensor base = hgt_forward(t.constant(x), f.store, f.hgt, &trace).value();
  for (const auto& a : trace.self_attention)
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  const auto perm = random_permutation(5, rng);
  EXPECT_EQ(hgt_forward(t.constant(permute_rows(x, perm)), f.store, f.hgt).value(), permute_rows(base, perm));
}

TEST(HgT, GradientsMatchFiniteDifferences) {
  HgFixture f(4, 1, 2, 35);
  Rng rng(36);
  // move the layer-norm affine pairs away from their (1, 0) init
  for (ParamId id : {f.hgt.ln1_gain, f.hgt.ln1_bias, f.hgt.ln2_gain, f.hgt.ln2_bias, f.hgt.mlp_b1, f.hgt.mlp_b2})
    f.store.value(id) = rand_tensor(f.store.value(id).shape(), rng);
  const Tensor x = rand_tensor({5, 4}, rng), r = rand_tensor({5, 4}, rng);
  EXPECT_LT(param_grad_error(f.store,
                             [&](Tape& t) { return random_projection(hgt_forward(t.constant(x), f.store, f.hgt), r); }),
            1e-4);
  EXPECT_LT(input_grad_error(x, [&](Tape&, const Var& v) { return random_projection(hgt_forward(v, f.store, f.hgt), r); }),
            1e-4);
}

TEST(Fusion, FixedPointsAndRange) {
  HgFixture f(3, 1, 1, 37);
  Rng rng(38);
  const Tensor a = rand_tensor({4, 3}, rng, -4, 4), b = rand_tensor({4, 3}, rng, -4, 4);
  Tape t;
  const Tensor same = fuse_hgat_hgt(t.constant(a), t.constant(a), f.store, f.fusion).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(same[i], sigma(a[i]), 1e-15);
  const Tensor mixed = fuse_hgat_hgt(t.constant(a), t.constant(b), f.store, f.fusion).value();
  for (double v : mixed.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  f.store.value(f.fusion.w_first) = Tensor({3, 3}, 0.0);
  f.store.value(f.fusion.w_second) = Tensor({3, 3}, 0.0);
  Tape t2;  // parameters are cached per tape
  const Tensor neutral = fuse_hgat_hgt(t2.constant(a), t2.constant(b), f.store, f.fusion).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(neutral[i], sigma(0.5 * (a[i] + b[i])), 1e-15);
}

TEST(Fusion, GradientThroughBothBranches) {
  HgFixture f(3, 1, 1, 39);
  Rng rng(40);
  const Tensor a = rand_tensor({4, 3}, rng), b = rand_tensor({4, 3}, rng), r = rand_tensor({4, 3}, rng);
  EXPECT_LT(param_grad_error(f.store,
                             [&](Tape& t) {
                               return random_projection(fuse_hgat_hgt(t.constant(a), t.constant(b), f.store, f.fusion), r);
                             }),
            1e-4);
  EXPECT_LT(input_grad_error(a,
                             [&](Tape& t, const Var& v) {
                               return random_projection(fuse_hgat_hgt(v, t.constant(b), f.store, f.fusion), r);
                             }),
            1e-4);
  EXPECT_LT(input_grad_error(b,
                             [&](Tape& t, const Var& v) {
                               return random_projection(fuse_hgat_hgt(t.constant(a), v, f.store, f.fusion), r);
                             }),
            1e-4);
}
