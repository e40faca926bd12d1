#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "eikf/numeric/tensor.hpp"

namespace eikf {

inline constexpr double kMapeEps = 1e-4;

/// Metrics for one horizon step (or the aggregate). Undefined when no cell
/// was observed.
struct HorizonMetrics {
  std::optional<double> mae;
  std::optional<double> rmse;
  std::optional<double> mape;  // percent
  std::optional<double> mean_sigma;
  std::size_t count = 0;
};

struct MetricReport {
  std::vector<HorizonMetrics> per_horizon;
  HorizonMetrics aggregate;
  std::size_t masked_excluded = 0;
};

/// Streaming accumulator over node-major (n x upsilon) forecasts on the
/// original scale.
class MetricAccumulator {
public:
  explicit MetricAccumulator(std::size_t horizon, double mape_eps = kMapeEps)
      : mape_eps_(mape_eps), cells_(horizon + 1) {}

  void add(const Tensor& truth, const Tensor& pred, const Tensor* mask = nullptr, const Tensor* sigma = nullptr) {
    if (truth.shape() != pred.shape() || (mask && mask->shape() != truth.shape()) ||
        (sigma && sigma->shape() != truth.shape()))
      throw ShapeError("metrics: shape mismatch " + shape_str(truth.shape()) + " vs " + shape_str(pred.shape()));
    if (truth.cols() + 1 != cells_.size()) throw ShapeError("metrics: horizon mismatch");
    for (std::size_t i = 0; i < truth.rows(); ++i)
      for (std::size_t h = 0; h < truth.cols(); ++h) {
        if (mask && (*mask)(i, h) == 0.0) {
          ++excluded_;
          continue;
        }
        const double y = truth(i, h), e = pred(i, h) - y;
        for (auto* c : {&cells_[h], &cells_.back()}) {
          c->abs += std::abs(e);
          c->sq += e * e;
          c->n += 1;
          if (std::abs(y) > mape_eps_) {
            c->ape += std::abs(e) / std::abs(y);
            c->n_ape += 1;
          }
          if (sigma) {
            c->sigma += (*sigma)(i, h);
            c->has_sigma = true;
          }
        }
      }
  }

  MetricReport report() const {
    MetricReport r;
    for (std::size_t h = 0; h + 1 < cells_.size(); ++h) r.per_horizon.push_back(finish(cells_[h]));
    r.aggregate = finish(cells_.back());
    r.masked_excluded = excluded_;
    return r;
  }

private:
  struct Cell {
    double abs = 0, sq = 0, ape = 0, sigma = 0;
    std::size_t n = 0, n_ape = 0;
    bool has_sigma = false;
  };

  static HorizonMetrics finish(const Cell& c) {
    HorizonMetrics m;
    m.count = c.n;
    if (c.n == 0) return m;
    const double n = static_cast<double>(c.n);
    m.mae = c.abs / n;
    m.rmse = std::sqrt(c.sq / n);
    if (c.n_ape > 0) m.mape = 100.0 * c.ape / static_cast<double>(c.n_ape);
    if (c.has_sigma) m.mean_sigma = c.sigma / n;
    return m;
  }

  double mape_eps_;
  std::vector<Cell> cells_;
  std::size_t excluded_ = 0;
};

/// MAE / RMSE / MAPE per horizon and in aggregate over a set of forecasts.
inline MetricReport compute_metrics(const std::vector<Tensor>& truth, const std::vector<Tensor>& pred,
                                    const std::vector<Tensor>* masks = nullptr, double mape_eps = kMapeEps) {
  if (truth.size() != pred.size() || truth.empty() || (masks && masks->size() != truth.size()))
    throw ShapeError("compute_metrics: mismatched sample counts");
  MetricAccumulator acc(truth.front().cols(), mape_eps);
  for (std::size_t k = 0; k < truth.size(); ++k) acc.add(truth[k], pred[k], masks ? &(*masks)[k] : nullptr);
  return acc.report();
}

}  // namespace eikf
