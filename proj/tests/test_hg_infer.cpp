#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace eikf;
using namespace eikf::testing;

namespace {

double sigma(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor similarity(const Tensor& zi, const Tensor& zj) {
  Tape t;
  return pairwise_similarity(t.constant(zi), t.constant(zj)).value();
}

/// Probabilities with arbitrary (not similarity-derived) channel values.
EdgeProbabilities raw_probs(Tape& t, const Tensor& p0, const Tensor& p1) { return {t.constant(p0), t.constant(p1)}; }

}  // namespace

TEST(Similarity, CosineMapExamples) {
  const Tensor e = Tensor::matrix(1, 2, {1, 0});
  EXPECT_NEAR(similarity(e, e).item(), 1.0, 1e-7);
  EXPECT_NEAR(similarity(e, Tensor::matrix(1, 2, {0, 1})).item(), 0.5, 1e-12);
  EXPECT_NEAR(similarity(e, Tensor::matrix(1, 2, {-1, 0})).item(), 0.0, 1e-7);
}

TEST(Similarity, DimMismatch) { EXPECT_THROW(similarity(Tensor({2, 3}), Tensor({2, 4})), ShapeError); }

TEST(Similarity, RangeAndScaleInvariance) {
  Rng rng(1);
  Tensor zi = rand_tensor({5, 4}, rng), zj = rand_tensor({3, 4}, rng);
  const Tensor base = similarity(zi, zj);
  for (double v : base.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (std::size_t c = 0; c < 4; ++c) zi(2, c) *= 3.7;
  for (std::size_t c = 0; c < 4; ++c) zj(1, c) *= 0.2;
  EXPECT_LT(max_abs_diff(similarity(zi, zj), base), 1e-9);
}

TEST(Similarity, ZeroNormRowIsGuarded) {
  const Tensor s = similarity(Tensor({1, 3}, 0.0), Tensor::matrix(1, 3, {1, 2, 3}));
  EXPECT_TRUE(s.all_finite());
  EXPECT_NEAR(s.item(), 0.5, 1e-12);
}

TEST(EdgeProbabilities, PaperChannelExamples) {
  Tape t;
  const auto p = edge_probabilities(t.constant(Tensor::matrix(1, 3, {1.0, 0.5, 0.0})));
  EXPECT_NEAR(p.connected.value()[0], sigma(1.0), 1e-15);
  EXPECT_NEAR(p.connected.value()[0], 0.7311, 1e-4);
  EXPECT_NEAR(p.disconnected.value()[0], 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(p.connected.value()[1], p.disconnected.value()[1]);
  EXPECT_NEAR(p.connected.value()[2], 0.5, 1e-15);
  EXPECT_NEAR(p.disconnected.value()[2], sigma(1.0), 1e-15);
}

TEST(Gumbel, NonPositiveTemperatureRejected) {
  Tape t;
  const auto p = raw_probs(t, Tensor({2, 2}, 0.6), Tensor({2, 2}, 0.5));
  Rng rng(1);
  EXPECT_THROW(gumbel_sample(p, 0.0, SampleMode::train_soft, rng), std::invalid_argument);
  EXPECT_THROW(gumbel_sample(p, -1.0, SampleMode::eval_hard, rng), std::invalid_argument);
}

TEST(Gumbel, EvalModeIsDeterministicArgmax) {
  Tape t;
  const auto p = raw_probs(t, Tensor::matrix(2, 2, {0.7, 0.5, 0.6, 0.55}), Tensor::matrix(2, 2, {0.5, 0.7, 0.6, 0.6}));
  Rng a(1), b(2);
  const auto s1 = gumbel_sample(p, 0.05, SampleMode::eval_hard, a);
  const auto s2 = gumbel_sample(p, 0.05, SampleMode::eval_hard, b);
  EXPECT_EQ(s1.hard, s2.hard);
  EXPECT_EQ(s1.hard, Tensor::matrix(2, 2, {1, 0, 1, 0}));
  EXPECT_EQ(s1.incidence.value(), s1.hard);
}

TEST(Gumbel, SymmetricChannelsGiveHalf) {
  Tape t;
  const auto p = raw_probs(t, Tensor({1, 1}, 0.6), Tensor({1, 1}, 0.6));
  Rng rng(3);
  double hits = 0.0;
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) hits += gumbel_sample(p, 1.0, SampleMode::train_soft, rng).hard.item();
  EXPECT_NEAR(hits / draws, 0.5, 0.01);
}

TEST(Gumbel, HardFrequenciesMatchGumbelMaxOracle) {
  Rng init(5);
  const Tensor p0 = rand_tensor({2, 3}, init, -1.5, 1.5), p1 = rand_tensor({2, 3}, init, -1.5, 1.5);
  Tape t;
  const auto p = raw_probs(t, p0, p1);
  Rng rng(6);
  Tensor hits({2, 3}, 0.0);
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) {
    const Tensor h = gumbel_sample(p, kDefaultTemperature, SampleMode::train_soft, rng).hard;
    for (std::size_t i = 0; i < h.size(); ++i) hits[i] += h[i];
  }
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const double oracle = std::exp(p0[i]) / (std::exp(p0[i]) + std::exp(p1[i]));
    EXPECT_NEAR(hits[i] / draws, oracle, 0.01) << i;
  }
}

TEST(Gumbel, LowTemperatureSoftSamplesConcentrate) {
  // sigma((delta + L) / gamma) lies within 1e-3 of {0, 1} unless
  // |delta + L| < gamma * ln(999), L ~ Logistic(0, 1). The expected violating
  // fraction is the logistic mass of that band, about 0.35% at gamma = 1e-3.
  const double gamma = 1e-3, band = gamma * std::log(999.0);
  Tape t;
  const Tensor p0 = Tensor::matrix(1, 2, {0.7311, 0.6}), p1 = Tensor::matrix(1, 2, {0.5, 0.65});
  const auto p = raw_probs(t, p0, p1);
  Rng rng(7);
  double outside = 0.0, total = 0.0, expected = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const double delta = p0[i] - p1[i];
    expected += sigma(-delta + band) - sigma(-delta - band);
  }
  expected /= 2.0;
  for (int k = 0; k < 50000; ++k) {
    const Tensor s = gumbel_sample(p, gamma, SampleMode::train_soft, rng).soft.value();
    for (double v : s.values()) {
      outside += (v > 1e-3 && v < 1.0 - 1e-3) ? 1.0 : 0.0;
      total += 1.0;
    }
  }
  EXPECT_NEAR(outside / total, expected, 0.0015);
  EXPECT_LT(outside / total, 0.005);
}

TEST(Gumbel, SoftEntriesStrictlyInsideUnitInterval) {
  Tape t;
  const auto p = raw_probs(t, Tensor({6, 4}, 0.7311), Tensor({6, 4}, 0.5));
  Rng rng(9);
  for (double gamma : {0.001, 0.05, 1.0})
    for (int k = 0; k < 200; ++k)
      for (double v : gumbel_sample(p, gamma, SampleMode::train_soft, rng).soft.value().values()) {
        ASSERT_GT(v, 0.0);
        ASSERT_LT(v, 1.0);
      }
}

TEST(Gumbel, TrainModeIsStraightThrough) {
  Rng rng(10);
  ParamStore store;
  const auto emb = HgEmbeddings::create(store, "hg", 4, 3, 5, rng);
  const GumbelNoise noise = GumbelNoise::draw(4, 3, rng);
  Tape t;
  const auto probs = infer_edge_probabilities(t, store, emb);
  const auto s = gumbel_sample(probs, 0.5, SampleMode::train_soft, &noise);
  EXPECT_EQ(s.incidence.value(), s.hard);
  for (std::size_t i = 0; i < s.hard.size(); ++i) EXPECT_EQ(s.hard[i], s.soft.value()[i] >= 0.5 ? 1.0 : 0.0);
  const Tensor r = rand_tensor({4, 3}, rng);
  const Gradients via_hard = t.backward(random_projection(s.incidence, r));
  Tape t2;
  const auto probs2 = infer_edge_probabilities(t2, store, emb);
  const Gradients via_soft =
      t2.backward(random_projection(gumbel_sample(probs2, 0.5, SampleMode::train_soft, &noise).soft, r));
  for (const auto& [id, g] : via_soft) EXPECT_EQ(via_hard.at(id), g);
}

TEST(Gumbel, SoftGradientMatchesFiniteDifferencesWithFrozenNoise) {
  Rng rng(12);
  ParamStore store;
  const auto emb = HgEmbeddings::create(store, "hg", 5, 3, 4, rng);
  const GumbelNoise noise = GumbelNoise::draw(5, 3, rng);
  const Tensor r = rand_tensor({5, 3}, rng);
  for (double gamma : {1.0, 0.3}) {
    const double err = param_grad_error(store, [&](Tape& t) {
      return random_projection(gumbel_soft(infer_edge_probabilities(t, store, emb), noise, gamma), r);
    });
    EXPECT_LT(err, 1e-4) << gamma;
  }
}

TEST(Gumbel, HyperedgePermutationPermutesColumns) {
  Rng rng(13);
  ParamStore store;
  const auto emb = HgEmbeddings::create(store, "hg", 6, 4, 5, rng);
  const auto structure = [&] {
    Tape t;
    const auto probs = infer_edge_probabilities(t, store, emb);
    return gumbel_sample(probs, 0.05, SampleMode::eval_hard, nullptr).hard;
  };
  const Tensor before = structure();
  const auto perm = random_permutation(4, rng);
  store.value(emb.edge_emb) = permute_rows(store.value(emb.edge_emb), perm);
  const Tensor after = structure();
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(after(i, k), before(i, perm[k]));
}

TEST(Sparsity, PenaltyValues) {
  Tape t;
  const auto p = raw_probs(t, Tensor({3, 2}, 0.5), Tensor({3, 2}, 0.5));
  EXPECT_EQ(sparsity_penalty(p, 0.0).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(sparsity_penalty(p, 1.0).value().item(), 0.5);
  EXPECT_THROW(sparsity_penalty(p, -1.0), std::invalid_argument);
}

TEST(Sparsity, GradientStepLowersConnectionProbability) {
  Rng rng(14);
  ParamStore store;
  const auto emb = HgEmbeddings::create(store, "hg", 6, 3, 4, rng);
  const auto mean_p0 = [&] {
    Tape t;
    return mean(infer_edge_probabilities(t, store, emb).connected).value().item();
  };
  const double before = mean_p0();
  Tape t;
  const Gradients g = t.backward(sparsity_penalty(infer_edge_probabilities(t, store, emb), 1.0));
  for (auto& [id, grad] : g)
    for (std::size_t i = 0; i < grad.size(); ++i) store.value(id)[i] -= 0.1 * grad[i];
  EXPECT_LT(mean_p0(), before);
}
