#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace eikf;
using namespace eikf::testing;

namespace {

double sigma(double x) { return 1.0 / (1.0 + std::exp(-x)); }

ModelConfig small_config(std::size_t n = 5) {
  ModelConfig c;
  c.sensors = n;
  c.tau = 4;
  c.upsilon = 3;
  c.d = 6;
  c.num_hyperedges = 3;
  c.hgt_heads = 2;
  return c;
}

Tensor chain_adjacency(std::size_t n) {
  Tensor a({n, n}, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) a(i, i + 1) = a(i + 1, i) = 1.0;
  return a;
}

void zero_all(ParamStore& store) {
  for (ParamId id = 0; id < store.size(); ++id) store.value(id) = Tensor(store.value(id).shape(), 0.0);
}

}  // namespace

TEST(MoeFuse, Examples) {
  ParamStore store;
  Rng rng(1);
  const GateParams gate = GateParams::create(store, "moe", 3, rng);
  const Tensor a = rand_tensor({4, 3}, rng, -3, 3), b = rand_tensor({4, 3}, rng, -3, 3);
  Tape t;
  const Tensor same = moe_fuse(t.constant(a), t.constant(a), store, gate).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(same[i], sigma(a[i]), 1e-15);
  const Tensor mixed = moe_fuse(t.constant(a), t.constant(b), store, gate).value();
  for (double v : mixed.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  const Tensor only_hyper = moe_fuse(t.constant(a), std::nullopt, store, std::nullopt).value();
  const Tensor only_graph = moe_fuse(std::nullopt, t.constant(b), store, std::nullopt).value();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(only_hyper[i], sigma(a[i]), 1e-15);
    EXPECT_NEAR(only_graph[i], sigma(b[i]), 1e-15);
  }
  zero_all(store);
  Tape t2;
  const Tensor neutral = moe_fuse(t2.constant(a), t2.constant(b), store, gate).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(neutral[i], sigma(0.5 * (a[i] + b[i])), 1e-15);
}

TEST(MoeFuse, BothDisabledIsConfigError) {
  ParamStore store;
  EXPECT_THROW(moe_fuse(std::nullopt, std::nullopt, store, std::nullopt), ConfigError);
  Tape t;
  const Var a = t.constant(Tensor({2, 2}, 0.1));
  EXPECT_THROW(moe_fuse(a, a, store, std::nullopt), ConfigError);
}

TEST(ForecastHead, ZeroWeightsGiveTrainingMean) {
  ParamStore store;
  Rng rng(2);
  const HeadParams head = HeadParams::create(store, "head", 4, 3, 2, rng);
  zero_all(store);
  Tape t;
  const Tensor scaled = forecast_head(t.constant(rand_tensor({5, 4}, rng)), store, head).value();
  const ScalerStats s{{1, 2, 3, 4, 5}, {0.5, 1, 2, 3, 4}};
  const Tensor orig = invert_scaler_nodes(scaled, s);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t h = 0; h < 3; ++h) EXPECT_EQ(orig(i, h), s.mean[i]);
}

TEST(ForecastHead, RowLocality) {
  ParamStore store;
  Rng rng(3);
  const HeadParams head = HeadParams::create(store, "head", 4, 3, 2, rng);
  for (ParamId id : head.biases) store.value(id) = rand_tensor(store.value(id).shape(), rng);
  Tensor x = rand_tensor({6, 4}, rng);
  Tape t;
  const Tensor base = forecast_head(t.constant(x), store, head).value();
  for (std::size_t c = 0; c < 4; ++c) x(2, c) = 0.0;
  const Tensor changed = forecast_head(t.constant(x), store, head).value();
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t h = 0; h < 3; ++h) {
      if (i != 2) {
        EXPECT_EQ(changed(i, h), base(i, h));
      }
    }
  EXPECT_GT(max_abs_diff(changed, base), 0.0);
}

TEST(ForecastHead, GradientsMatchFiniteDifferences) {
  ParamStore store;
  Rng rng(4);
  const HeadParams head = HeadParams::create(store, "head", 4, 3, 2, rng);
  for (ParamId id : head.biases) store.value(id) = rand_tensor(store.value(id).shape(), rng);
  const Tensor x = rand_tensor({5, 4}, rng), r = rand_tensor({5, 3}, rng);
  EXPECT_LT(param_grad_error(store,
                             [&](Tape& t) { return random_projection(forecast_head(t.constant(x), store, head), r); }),
            1e-4);
  EXPECT_LT(input_grad_error(x, [&](Tape&, const Var& v) { return random_projection(forecast_head(v, store, head), r); }),
            1e-4);
}

TEST(UncertaintyHead, FloorAndZeroWeights) {
  ParamStore store;
  Rng rng(5);
  const HeadParams head = HeadParams::create(store, "uh", 4, 6, 2, rng);
  // push the variance logits far negative
  store.value(head.biases.back()) = Tensor::matrix(1, 6, {0, 0, 0, -900, -900, -900});
  Tape t;
  const auto g = uncertainty_head(t.constant(rand_tensor({5, 4}, rng)), store, head);
  EXPECT_EQ(g.mean.shape(), (Shape{5, 3}));
  for (double v : g.variance.value().values()) EXPECT_GE(v, kVarianceFloor);
  zero_all(store);
  Tape t2;
  const auto z = uncertainty_head(t2.constant(rand_tensor({5, 4}, rng)), store, head);
  for (double v : z.variance.value().values()) EXPECT_NEAR(v, std::log(2.0) + 1e-6, 1e-15);
  for (double v : z.mean.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(UncertaintyHead, GradientsMatchFiniteDifferences) {
  ParamStore store;
  Rng rng(6);
  const HeadParams head = HeadParams::create(store, "uh", 4, 6, 2, rng);
  const Tensor x = rand_tensor({5, 4}, rng), r1 = rand_tensor({5, 3}, rng), r2 = rand_tensor({5, 3}, rng);
  EXPECT_LT(param_grad_error(store,
                             [&](Tape& t) {
                               const auto g = uncertainty_head(t.constant(x), store, head);
                               return add(random_projection(g.mean, r1), random_projection(g.variance, r2));
                             }),
            1e-4);
}

TEST(EIKFNet, ForwardShapesAndRange) {
  Rng rng(7);
  for (bool unc : {false, true}) {
    ModelConfig c = small_config();
    c.uncertainty = unc;
    const EIKFNet net(c, chain_adjacency(5), 11);
    Tape t;
    const auto res = net.forward(t, rand_tensor({5, 4}, rng), nullptr);
    EXPECT_EQ(res.mean.shape(), (Shape{5, 3}));
    EXPECT_EQ(res.variance.has_value(), unc);
    ASSERT_TRUE(res.incidence.has_value());
    EXPECT_EQ(res.incidence->shape(), (Shape{5, 3}));
    EXPECT_TRUE(res.mean.value().all_finite());
  }
}

TEST(EIKFNet, AblationParameterCounts) {
  ModelConfig full = small_config();
  const std::size_t total = EIKFNet(full, chain_adjacency(5), 1).parameter_count();
  const auto count = [&](auto tweak) {
    ModelConfig c = small_config();
    tweak(c);
    return EIKFNet(c, chain_adjacency(5), 1).parameter_count();
  };
  EXPECT_LT(count([](ModelConfig& c) { c.enable_explicit_graph = false; }), total);
  EXPECT_LT(count([](ModelConfig& c) { c.enable_implicit_hypergraph = false; }), total);
  EXPECT_LT(count([](ModelConfig& c) { c.enable_spatial = false; }), total);
  EXPECT_LT(count([](ModelConfig& c) { c.enable_temporal = false; }), total);
  ModelConfig bad = small_config();
  bad.enable_explicit_graph = bad.enable_implicit_hypergraph = false;
  EXPECT_THROW(EIKFNet(bad, chain_adjacency(5), 1), ConfigError);
}

TEST(EIKFNet, HypergraphAblationIgnoresHypergraphParameters) {
  ModelConfig c = small_config();
  c.enable_implicit_hypergraph = false;
  EIKFNet graph_only(c, chain_adjacency(5), 21);
  for (ParamId id = 0; id < graph_only.params().size(); ++id) {
    const std::string& name = graph_only.params().name(id);
    EXPECT_NE(name.rfind("hg", 0), 0u) << name;
  }
  EIKFNet full(small_config(), chain_adjacency(5), 22);
  Rng rng(9);
  const Tensor hist = rand_tensor({5, 4}, rng);
  const auto run_from = [&](const EIKFNet& src) {
    for (ParamId id = 0; id < graph_only.params().size(); ++id)
      graph_only.params().value(id) = src.params().value(src.params().id(graph_only.params().name(id)));
    Tape t;
    return graph_only.forward(t, hist, nullptr).mean.value();
  };
  const Tensor base = run_from(full);
  ParamStore& fp = full.params();
  for (ParamId id = 0; id < fp.size(); ++id)
    if (fp.name(id).rfind("hg", 0) == 0) fp.value(id) = rand_tensor(fp.value(id).shape(), rng, -5, 5);
  EXPECT_EQ(run_from(full), base);
}

TEST(EIKFNet, SpatialAblationSkipsBothExperts) {
  ModelConfig c = small_config();
  c.enable_spatial = false;
  const EIKFNet net(c, chain_adjacency(5), 31);
  for (ParamId id = 0; id < net.params().size(); ++id) {
    const std::string& name = net.params().name(id);
    EXPECT_TRUE(name.rfind("projection", 0) == 0 || name.rfind("forecast_head", 0) == 0) << name;
  }
  Rng rng(10);
  Tape t;
  const auto res = net.forward(t, rand_tensor({5, 4}, rng), nullptr);
  EXPECT_FALSE(res.incidence.has_value());
  EXPECT_FALSE(net.learned_structure().has_value());
}

TEST(EIKFNet, TemporalAblationUsesSingleLayerHead) {
  ModelConfig c = small_config();
  c.enable_temporal = false;
  const EIKFNet net(c, chain_adjacency(5), 32);
  std::size_t head_layers = 0;
  for (ParamId id = 0; id < net.params().size(); ++id)
    if (net.params().name(id).rfind("forecast_head.w", 0) == 0) ++head_layers;
  EXPECT_EQ(head_layers, 1u);
}

TEST(EIKFNet, MaskChannelRequiresMask) {
  ModelConfig c = small_config();
  c.mask_channel = true;
  const EIKFNet net(c, chain_adjacency(5), 33);
  Rng rng(11);
  Tape t;
  EXPECT_THROW(net.forward(t, rand_tensor({5, 4}, rng), nullptr), ConfigError);
  const Tensor mask({5, 4}, 1.0);
  EXPECT_EQ(net.forward(t, rand_tensor({5, 4}, rng), &mask).mean.shape(), (Shape{5, 3}));
  EXPECT_THROW(net.forward(t, rand_tensor({5, 5}, rng), &mask), ShapeError);
}

TEST(EIKFNet, EndToEndGradientWithFrozenNoise) {
  ModelConfig c = small_config(4);
  c.d = 4;
  c.num_hyperedges = 2;
  c.gamma = 1.0;  // soft enough that finite differences see a smooth function
  c.attention_dropout = 0.0;
  EIKFNet net(c, chain_adjacency(4), 41);
  Rng rng(12);
  const GumbelNoise noise = GumbelNoise::draw(4, 2, rng);
  const Tensor hist = rand_tensor({4, 4}, rng), r = rand_tensor({4, 3}, rng);
  // straight-through makes the forward piecewise constant in the structure;
  // only check parameters that do not feed the hypergraph sampler
  ParamStore& store = net.params();
  Tape tape;
  ForwardOptions opt;
  opt.training = true;
  opt.noise = &noise;
  const Gradients grads = tape.backward(random_projection(net.forward(tape, hist, nullptr, opt).mean, r));
  double worst = 0.0;
  for (ParamId id = 0; id < store.size(); ++id) {
    if (store.name(id).rfind("hg_infer", 0) == 0) continue;
    const Tensor saved = store.value(id);
    const Tensor fd = finite_diff_grad(
        [&](const Tensor& x) {
          store.value(id) = x;
          Tape t;
          return random_projection(net.forward(t, hist, nullptr, opt).mean, r).value();
        },
        saved, 1e-5);
    store.value(id) = saved;
    auto it = grads.find(id);
    const Tensor an = it == grads.end() ? Tensor(saved.shape(), 0.0) : it->second;
    // entries below 1e-6 are dominated by difference roundoff
    worst = std::max(worst, max_relative_error(an, fd, 1e-6));
  }
  EXPECT_LT(worst, 1e-4);
}
