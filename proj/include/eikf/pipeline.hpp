#pragma once

// Data preparation shared by the CLI and the end-to-end tests: mask
// assembly, chronological split, scaling, windowing and the explicit graph.

#include <optional>
#include <string>

#include "eikf/config.hpp"
#include "eikf/data/csv.hpp"
#include "eikf/data/graph.hpp"
#include "eikf/data/missing.hpp"
#include "eikf/data/series.hpp"

namespace eikf {

struct PreparedData {
  RawSeries series;
  Tensor mask;  // T x n observed-cell mask after simulated missingness
  ExplicitGraph graph;
  SplitSeries split;
  ScalerStats scaler;
  WindowedDataset train, val, test;

  const WindowedDataset& by_name(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw FieldError("--split", "expected train, val or test, got '" + name + "'");
  }
};

inline std::uint64_t missing_seed(const RunConfig& c) { return c.missing.seed.value_or(c.train.seed); }

/// Builds the simulated missingness mask requested by the config (all ones
/// when no scheme is set).
inline Tensor simulated_mask(const RunConfig& c, std::size_t steps, std::size_t sensors) {
  if (!c.missing.scheme || c.missing.rate == 0.0) return Tensor({steps, sensors}, 1.0);
  if (*c.missing.scheme == MissingScheme::point)
    return simulate_point_missing(steps, sensors, c.missing.rate, missing_seed(c)).mask;
  return simulate_block_missing(steps, sensors, c.missing.rate, missing_seed(c), c.missing.p_failure).mask;
}

inline Segment scaled_segment(const Segment& s, const ScalerStats& scaler) {
  return Segment{apply_scaler(s.values, scaler), s.mask, s.offset};
}

/// In-memory variant: `observed` is an optional mask of originally observed
/// cells that is combined with the simulated one.
inline PreparedData prepare_data(const RunConfig& c, RawSeries series, const Tensor& distances,
                                 const std::optional<Tensor>& observed = std::nullopt) {
  PreparedData p;
  const std::size_t T = series.steps(), n = series.sensors();
  p.mask = simulated_mask(c, T, n);
  if (observed) {
    if (observed->shape() != p.mask.shape())
      throw DataError("mask shape " + shape_str(observed->shape()) + " does not match series " +
                      shape_str(p.mask.shape()));
    for (std::size_t i = 0; i < p.mask.size(); ++i) p.mask[i] *= (*observed)[i];
  }
  p.graph = build_adjacency(distances, c.model.kernel_width, c.model.kernel_threshold);
  p.split = chronological_split(series.values, p.mask, c.data.split_ratios, c.data.tau + c.data.upsilon);
  p.scaler = fit_scaler(p.split.train.values, &p.split.train.mask, &series.sensor_ids);
  p.train = make_windows(scaled_segment(p.split.train, p.scaler), c.data.tau, c.data.upsilon);
  p.val = make_windows(scaled_segment(p.split.val, p.scaler), c.data.tau, c.data.upsilon);
  p.test = make_windows(scaled_segment(p.split.test, p.scaler), c.data.tau, c.data.upsilon);
  p.series = std::move(series);
  return p;
}

inline PreparedData prepare_data(const RunConfig& c) {
  if (c.data.series_path.empty()) throw FieldError("data.series_path", "required");
  if (c.data.distance_path.empty()) throw FieldError("data.distance_path", "required");
  RawSeries series = load_series(c.data.series_path);
  const Tensor distances = load_distances(c.data.distance_path, series.sensor_ids);
  std::optional<Tensor> observed;
  if (!c.data.mask_path.empty()) observed = load_mask(c.data.mask_path, &series.sensor_ids);
  return prepare_data(c, std::move(series), distances, observed);
}

}  // namespace eikf
