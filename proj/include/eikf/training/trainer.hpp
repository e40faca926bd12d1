#pragma once

// Training loop, batched gradient evaluation, evaluation on the original
// scale and the historical-average baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "eikf/data/series.hpp"
#include "eikf/model/eikf_net.hpp"
#include "eikf/training/losses.hpp"
#include "eikf/training/metrics.hpp"
#include "eikf/training/optim.hpp"

namespace eikf {

class NonFiniteLoss : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 18;
  std::size_t max_epochs = 30;
  std::size_t lr_patience = 5;
  double lr_factor = 0.5;
  std::size_t early_patience = 10;
  std::uint64_t seed = 0;
  std::optional<double> grad_clip = 5.0;
  double lambda_sparsity = 0.0;
  std::size_t threads = 1;

  void validate() const {
    if (!(lr > 0.0) || batch_size == 0 || max_epochs == 0 || lr_patience == 0 || early_patience == 0 ||
        !(lr_factor > 0.0 && lr_factor < 1.0) || (grad_clip && !(*grad_clip > 0.0)) || lambda_sparsity < 0.0)
      throw ConfigError("train: invalid training configuration");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double best_val_mae = 0.0;
  std::size_t best_epoch = 0;
  AdamState optimizer;
};

/// Thread cap from EIKF_THREADS (default 1).
inline std::size_t threads_from_env() {
  if (const char* s = std::getenv("EIKF_THREADS")) {
    const long v = std::strtol(s, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

/// Historical average: per-node mean of observed history repeated over the
/// horizon; rows with no observation fall back to `fallback[i]`.
inline Tensor ha_baseline(const Tensor& history, std::size_t upsilon, const Tensor* mask = nullptr,
                          const std::vector<double>* fallback = nullptr) {
  const std::size_t n = history.rows(), tau = history.cols();
  Tensor out({n, upsilon});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0, c = 0.0;
    for (std::size_t k = 0; k < tau; ++k)
      if (!mask || (*mask)(i, k) != 0.0) {
        s += history(i, k);
        c += 1.0;
      }
    const double v = c > 0.0 ? s / c : (fallback ? (*fallback)[i] : 0.0);
    for (std::size_t h = 0; h < upsilon; ++h) out(i, h) = v;
  }
  return out;
}

struct Prediction {
  Tensor mean;                     // n x upsilon, scaled
  std::optional<Tensor> variance;  // scaled domain
};

inline Prediction predict(const EIKFNet& model, const Window& w) {
  Tape tape;
  const Tensor* mask = model.config().mask_channel ? &w.history_mask : nullptr;
  const ForwardResult r = model.forward(tape, w.history, mask);
  Prediction p{r.mean.value(), std::nullopt};
  if (r.variance) p.variance = r.variance->value();
  return p;
}

/// Standard deviation on the original scale from a scaled-domain variance.
inline Tensor sigma_original(const Tensor& variance, const ScalerStats& s) {
  Tensor out = variance;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t h = 0; h < out.cols(); ++h) out(i, h) = std::sqrt(variance(i, h)) * s.std[i];
  return out;
}

inline MetricReport evaluate(const EIKFNet& model, const WindowedDataset& data, const ScalerStats& scaler) {
  MetricAccumulator acc(data.upsilon);
  for (const auto& w : data.windows) {
    const Prediction p = predict(model, w);
    const Tensor truth = invert_scaler_nodes(w.target, scaler);
    const Tensor pred = invert_scaler_nodes(p.mean, scaler);
    if (p.variance) {
      const Tensor sigma = sigma_original(*p.variance, scaler);
      acc.add(truth, pred, &w.target_mask, &sigma);
    } else {
      acc.add(truth, pred, &w.target_mask);
    }
  }
  return acc.report();
}

/// HA baseline scored with the same protocol as evaluate(). Windows hold
/// scaled values, so the training mean fallback is zero before inversion.
inline MetricReport evaluate_ha(const WindowedDataset& data, const ScalerStats& scaler) {
  MetricAccumulator acc(data.upsilon);
  const std::vector<double> zero(scaler.sensors(), 0.0);
  for (const auto& w : data.windows) {
    const Tensor pred = invert_scaler_nodes(ha_baseline(w.history, data.upsilon, &w.history_mask, &zero), scaler);
    acc.add(invert_scaler_nodes(w.target, scaler), pred, &w.target_mask);
  }
  return acc.report();
}

/// Loss and gradients of one batch, averaged over the observed target cells
/// of the whole batch. Samples run on independent tapes and are reduced in
/// index order, so results do not depend on the thread count.
struct BatchResult {
  double loss = 0.0;
  Gradients grads;
};

inline BatchResult batch_gradients(const EIKFNet& model, const std::vector<const Window*>& batch,
                                   const GumbelNoise* noise, std::uint64_t dropout_seed, double lambda_sparsity,
                                   std::size_t threads = 1) {
  const auto& cfg = model.config();
  double cells = 0.0;
  for (const auto* w : batch)
    for (double v : w->target_mask.values()) cells += v != 0.0 ? 1.0 : 0.0;
  const double inv = cells > 0.0 ? 1.0 / cells : 0.0;

  std::vector<BatchResult> per(batch.size());
  std::vector<std::string> errors(batch.size());
  auto run = [&](std::size_t k) {
    try {
      Tape tape;
      Rng rng(dropout_seed + 0x9e3779b97f4a7c15ULL * (k + 1));
      ForwardOptions opt;
      opt.training = true;
      opt.noise = noise;
      opt.dropout_rng = &rng;
      const Window& w = *batch[k];
      const ForwardResult r = model.forward(tape, w.history, cfg.mask_channel ? &w.history_mask : nullptr, opt);
      Var loss = r.variance ? gaussian_nll_sum(w.target, r.mean, *r.variance, &w.target_mask)
                            : absolute_error_sum(r.mean, w.target, &w.target_mask);
      loss = scale(loss, inv);
      if (k == 0 && lambda_sparsity > 0.0 && r.probs) loss = add(loss, sparsity_penalty(*r.probs, lambda_sparsity));
      per[k].loss = loss.value().item();
      per[k].grads = tape.backward(loss);
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, batch.size()));
  if (workers == 1) {
    for (std::size_t k = 0; k < batch.size(); ++k) run(k);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < batch.size(); k += workers) run(k);
      });
    for (auto& th : pool) th.join();
  }
  BatchResult out;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    if (!errors[k].empty()) throw NonFiniteLoss("sample " + std::to_string(k) + ": " + errors[k]);
    out.loss += per[k].loss;
    for (auto& [id, g] : per[k].grads) {
      auto it = out.grads.find(id);
      if (it == out.grads.end()) {
        out.grads.emplace(id, std::move(g));
      } else {
        auto dst = it->second.values();
        auto src = g.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
  }
  if (!std::isfinite(out.loss)) throw NonFiniteLoss("non-finite batch loss");
  return out;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam + plateau LR halving + early stopping on validation MAE (original
/// scale). The best-validation parameters are restored before returning.
inline TrainResult train_loop(EIKFNet& model, const WindowedDataset& train, const WindowedDataset& val,
                              const ScalerStats& scaler, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.size() == 0 || val.size() == 0) throw DataError("train_loop: empty train or validation set");
  TrainResult result;
  result.optimizer = AdamState::zeros_like(model.params());
  Rng rng(cfg.seed);
  PlateauScheduler scheduler(cfg.lr, cfg.lr_patience, cfg.lr_factor);
  EarlyStopper stopper(cfg.early_patience);
  std::vector<Tensor> best_params = model.params().values();
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& mcfg = model.config();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = scheduler.lr();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Window*> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(&train.windows[order[k]]);
      std::optional<GumbelNoise> noise;
      if (mcfg.uses_hypergraph()) noise = GumbelNoise::draw(mcfg.sensors, mcfg.num_hyperedges, rng);
      const std::uint64_t dropout_seed = rng();
      BatchResult br;
      try {
        br = batch_gradients(model, batch, noise ? &*noise : nullptr, dropout_seed, cfg.lambda_sparsity, cfg.threads);
      } catch (const std::exception& e) {
        throw NonFiniteLoss("epoch " + std::to_string(epoch) + " batch " + std::to_string(batches + 1) + ": " +
                            e.what());
      }
      if (cfg.grad_clip) clip_global_norm(br.grads, *cfg.grad_clip);
      adam_step(model.params(), br.grads, result.optimizer, lr);
      loss_sum += br.loss;
      ++batches;
    }
    const MetricReport vr = evaluate(model, val, scaler);
    const double val_mae = vr.aggregate.mae.value_or(std::numeric_limits<double>::infinity());
    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches), val_mae, lr};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (val_mae < best) {
      best = val_mae;
      best_params = model.params().values();
      result.best_epoch = epoch;
    }
    scheduler.step(val_mae);
    if (stopper.step(val_mae)) break;
  }
  for (ParamId id = 0; id < model.params().size(); ++id) model.params().value(id) = best_params[id];
  result.best_val_mae = best;
  return result;
}

}  // namespace eikf
