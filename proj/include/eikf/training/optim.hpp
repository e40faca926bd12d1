#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "eikf/model/params.hpp"

namespace eikf {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments per parameter and the step counter.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t t = 0;

  static AdamState zeros_like(const ParamStore& store) {
    AdamState s;
    for (const auto& p : store.values()) {
      s.m.emplace_back(p.shape(), 0.0);
      s.v.emplace_back(p.shape(), 0.0);
    }
    return s;
  }
};

inline double global_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& [id, g] : grads)
    for (double v : g.values()) sq += v * v;
  return std::sqrt(sq);
}

/// Rescales gradients so their global norm is at most max_norm; returns the
/// norm before clipping.
inline double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [id, g] : grads)
      for (auto& v : g.values()) v *= s;
  }
  return norm;
}

/// Bias-corrected Adam update. Parameters missing from `grads` see a zero
/// gradient.
inline void adam_step(ParamStore& store, const Gradients& grads, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  if (state.m.size() != store.size()) state = AdamState::zeros_like(store);
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (ParamId id = 0; id < store.size(); ++id) {
    auto it = grads.find(id);
    auto& w = store.value(id);
    auto& m = state.m[id];
    auto& v = state.v[id];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = it == grads.end() ? 0.0 : it->second[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs fail to improve on the best validation score.
class PlateauScheduler {
public:
  PlateauScheduler(double lr, std::size_t patience, double factor) : lr_(lr), patience_(patience), factor_(factor) {}

  /// Returns true when this epoch triggered a reduction.
  bool step(double val) {
    if (val < best_) {
      best_ = val;
      bad_ = 0;
      return false;
    }
    if (++bad_ >= patience_) {
      lr_ *= factor_;
      bad_ = 0;
      return true;
    }
    return false;
  }

  double lr() const { return lr_; }

private:
  double lr_;
  std::size_t patience_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

class EarlyStopper {
public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Returns true when training should stop after this epoch.
  bool step(double val) {
    if (val < best_) {
      best_ = val;
      bad_ = 0;
      return false;
    }
    return ++bad_ >= patience_;
  }

  bool improved_last() const { return bad_ == 0; }
  double best() const { return best_; }

private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

}  // namespace eikf
