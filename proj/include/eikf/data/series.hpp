#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eikf/data/csv.hpp"

namespace eikf {

/// Raised for data that violates a pipeline precondition (too short, constant
/// columns, bad ratios).
class DataError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

/// Contiguous time segment of a larger series.
struct Segment {
  Tensor values;  // T_seg x n
  Tensor mask;    // T_seg x n, 1 = observed
  std::size_t offset = 0;  // global index of the first row

  std::size_t steps() const { return values.rows(); }
};

struct SplitSeries {
  Segment train, val, test;
};

namespace detail {

inline Tensor row_block(const Tensor& t, std::size_t begin, std::size_t count) {
  const std::size_t c = t.cols();
  const auto v = t.values();
  return Tensor({count, c}, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(begin * c),
                                                v.begin() + static_cast<std::ptrdiff_t>((begin + count) * c)));
}

}  // namespace detail

/// Segment lengths for a chronological split: floor allocation for val and
/// test, remainder to train.
inline std::array<std::size_t, 3> split_lengths(std::size_t steps, const SplitRatios& r) {
  if (!(r.train > 0 && r.val > 0 && r.test > 0)) throw DataError("split ratios must be positive");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw DataError("split ratios must sum to 1");
  const auto part = [steps](double ratio) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(steps) * ratio + 1e-9));
  };
  const std::size_t val = part(r.val), test = part(r.test);
  if (val + test > steps) throw DataError("split ratios leave no training data");
  return {steps - val - test, val, test};
}

/// Splits a series (and its mask) into train/val/test in time order. Every
/// segment must hold at least min_length steps.
inline SplitSeries chronological_split(const Tensor& values, const Tensor& mask, const SplitRatios& ratios,
                                       std::size_t min_length) {
  if (mask.shape() != values.shape())
    throw ShapeError("chronological_split: mask " + shape_str(mask.shape()) + " vs series " +
                     shape_str(values.shape()));
  const auto len = split_lengths(values.rows(), ratios);
  const char* names[] = {"train", "val", "test"};
  for (std::size_t k = 0; k < 3; ++k)
    if (len[k] < min_length || len[k] == 0)
      throw DataError(std::string("chronological_split: ") + names[k] + " segment has " + std::to_string(len[k]) +
                      " steps, need at least " + std::to_string(min_length));
  SplitSeries s;
  std::size_t off = 0;
  Segment* segs[] = {&s.train, &s.val, &s.test};
  for (std::size_t k = 0; k < 3; ++k) {
    segs[k]->values = detail::row_block(values, off, len[k]);
    segs[k]->mask = detail::row_block(mask, off, len[k]);
    segs[k]->offset = off;
    off += len[k];
  }
  return s;
}

inline SplitSeries chronological_split(const Tensor& values, const SplitRatios& ratios, std::size_t min_length) {
  return chronological_split(values, Tensor(values.shape(), 1.0), ratios, min_length);
}

/// Per-sensor z-score statistics (population standard deviation).
struct ScalerStats {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t sensors() const { return mean.size(); }
};

/// Fits on observed cells of the training segment only. A column with no
/// observed training cell (a long sensor outage) takes the statistics pooled
/// over every observed training cell.
inline ScalerStats fit_scaler(const Tensor& train, const Tensor* mask = nullptr,
                              const std::vector<std::string>* ids = nullptr) {
  const std::size_t T = train.rows(), n = train.cols();
  ScalerStats s{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  auto observed = [&](std::size_t t, std::size_t c) { return !mask || (*mask)(t, c) != 0.0; };
  auto fit = [&](std::size_t first, std::size_t last, const std::string& name) {
    double sum = 0.0, count = 0.0;
    for (std::size_t c = first; c < last; ++c)
      for (std::size_t t = 0; t < T; ++t)
        if (observed(t, c)) {
          sum += train(t, c);
          count += 1.0;
        }
    if (count == 0.0) return std::optional<std::pair<double, double>>{};
    const double mu = sum / count;
    double var = 0.0;
    for (std::size_t c = first; c < last; ++c)
      for (std::size_t t = 0; t < T; ++t)
        if (observed(t, c)) var += (train(t, c) - mu) * (train(t, c) - mu);
    const double sd = std::sqrt(var / count);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mu))))
      throw DataError("fit_scaler: column '" + name + "' has zero variance");
    return std::optional<std::pair<double, double>>{{mu, sd}};
  };
  std::optional<std::pair<double, double>> pooled;
  for (std::size_t c = 0; c < n; ++c) {
    const std::string name = ids ? (*ids)[c] : std::to_string(c);
    auto st = fit(c, c + 1, name);
    if (!st) {
      if (!pooled) pooled = fit(0, n, "pooled");
      if (!pooled) throw DataError("fit_scaler: column '" + name + "' has no observed values");
      st = pooled;
    }
    s.mean[c] = st->first;
    s.std[c] = st->second;
  }
  return s;
}

/// Scales a time-major (T x n) block.
inline Tensor apply_scaler(const Tensor& values, const ScalerStats& s) {
  if (values.cols() != s.sensors()) throw ShapeError("apply_scaler: sensor count mismatch");
  Tensor out = values;
  for (std::size_t t = 0; t < out.rows(); ++t)
    for (std::size_t c = 0; c < out.cols(); ++c) out(t, c) = (out(t, c) - s.mean[c]) / s.std[c];
  return out;
}

inline Tensor invert_scaler(const Tensor& values, const ScalerStats& s) {
  if (values.cols() != s.sensors()) throw ShapeError("invert_scaler: sensor count mismatch");
  Tensor out = values;
  for (std::size_t t = 0; t < out.rows(); ++t)
    for (std::size_t c = 0; c < out.cols(); ++c) out(t, c) = out(t, c) * s.std[c] + s.mean[c];
  return out;
}

/// Inverse scaling for node-major (n x horizon) forecasts.
inline Tensor invert_scaler_nodes(const Tensor& node_major, const ScalerStats& s) {
  if (node_major.rows() != s.sensors()) throw ShapeError("invert_scaler_nodes: sensor count mismatch");
  Tensor out = node_major;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t h = 0; h < out.cols(); ++h) out(i, h) = out(i, h) * s.std[i] + s.mean[i];
  return out;
}

/// One rolling-window sample. All tensors are node-major.
struct Window {
  Tensor history;       // n x tau, scaled, zero where unobserved
  Tensor history_mask;  // n x tau
  Tensor target;        // n x upsilon, scaled
  Tensor target_mask;   // n x upsilon
  std::size_t start = 0;  // global time index of the first history step
};

struct WindowedDataset {
  std::vector<Window> windows;
  std::size_t tau = 0;
  std::size_t upsilon = 0;

  std::size_t size() const { return windows.size(); }
};

/// Slides a (tau, upsilon) window one step at a time over an already scaled
/// segment; windows never leave the segment.
inline WindowedDataset make_windows(const Segment& scaled, std::size_t tau, std::size_t upsilon) {
  if (tau == 0 || upsilon == 0) throw DataError("make_windows: tau and upsilon must be positive");
  const std::size_t T = scaled.steps(), n = scaled.values.cols();
  if (T < tau + upsilon)
    throw DataError("make_windows: segment of " + std::to_string(T) + " steps is shorter than tau+upsilon=" +
                    std::to_string(tau + upsilon));
  WindowedDataset ds;
  ds.tau = tau;
  ds.upsilon = upsilon;
  const std::size_t count = T - tau - upsilon + 1;
  ds.windows.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Window w{Tensor({n, tau}), Tensor({n, tau}), Tensor({n, upsilon}), Tensor({n, upsilon}), scaled.offset + k};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t s = 0; s < tau; ++s) {
        const double m = scaled.mask(k + s, i);
        w.history_mask(i, s) = m;
        w.history(i, s) = m != 0.0 ? scaled.values(k + s, i) : 0.0;
      }
      for (std::size_t h = 0; h < upsilon; ++h) {
        w.target(i, h) = scaled.values(k + tau + h, i);
        w.target_mask(i, h) = scaled.mask(k + tau + h, i);
      }
    }
    ds.windows.push_back(std::move(w));
  }
  return ds;
}

}  // namespace eikf
