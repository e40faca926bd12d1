#pragma once

// Synthetic sensor network with known structure:
//   x_{t+1} = theta * A_hat x_t + s(t) + eta_t
// where A_hat is the normalized planted graph, s is a per-community sinusoid
// selected by the planted incidence and eta is Gaussian noise.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "eikf/data/graph.hpp"

namespace eikf {

struct SyntheticConfig {
  std::size_t sensors = 12;
  std::size_t steps = 2000;
  std::size_t communities = 3;
  double diffusion = 0.8;         // theta
  double season_amplitude = 1.0;
  double noise_std = 0.3;
  double level = 0.0;             // constant added to every observation
  double spacing = 1.0;           // sensor spacing along the road
  double kernel_width = 1.0;      // kernel used to derive the planted graph
  std::uint64_t seed = 7;
};

/// Planted structure: sensors along a line, graph from the distance kernel,
/// community i mod m for the hyperedges.
struct PlantedStructure {
  Tensor distances;  // n x n
  Tensor adjacency;  // n x n
  Tensor incidence;  // n x m
  std::vector<double> periods;  // one per community
  std::vector<double> phases;
};

struct SyntheticData {
  RawSeries series;
  PlantedStructure truth;
};

inline std::vector<std::string> default_sensor_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("s" + std::to_string(i));
  return ids;
}

inline PlantedStructure make_planted_structure(const SyntheticConfig& cfg) {
  if (cfg.sensors < 2 || cfg.communities == 0) throw DataError("synthetic: need >= 2 sensors and >= 1 community");
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> jitter(-0.2 * cfg.spacing, 0.2 * cfg.spacing);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const std::size_t n = cfg.sensors, m = cfg.communities;
  std::vector<double> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = static_cast<double>(i) * cfg.spacing + jitter(rng);
  PlantedStructure p;
  p.distances = Tensor({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) p.distances(i, j) = std::abs(pos[i] - pos[j]);
  p.adjacency = build_adjacency(p.distances, cfg.kernel_width, kDefaultKernelThreshold).adjacency;
  p.incidence = Tensor({n, m}, 0.0);
  for (std::size_t i = 0; i < n; ++i) p.incidence(i, i % m) = 1.0;
  for (std::size_t c = 0; c < m; ++c) {
    p.periods.push_back(24.0 + 12.0 * static_cast<double>(c));
    p.phases.push_back(phase(rng));
  }
  return p;
}

/// Largest eigenvalue magnitude of a symmetric matrix by power iteration.
inline double spectral_radius(const Tensor& sym, std::size_t iterations = 500) {
  const std::size_t n = sym.rows();
  std::vector<double> v(n, 1.0), w(n);
  double lambda = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 0.0;
      for (std::size_t j = 0; j < n; ++j) w[i] += sym(i, j) * v[j];
      norm += w[i] * w[i];
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / norm;
    lambda = norm;
  }
  return lambda;
}

/// Seasonal forcing s(t) for every sensor.
inline std::vector<double> seasonal_term(const PlantedStructure& p, double amplitude, std::size_t t) {
  const std::size_t n = p.incidence.rows(), m = p.incidence.cols();
  std::vector<double> s(n, 0.0);
  for (std::size_t c = 0; c < m; ++c) {
    const double v = amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / p.periods[c] + p.phases[c]);
    for (std::size_t i = 0; i < n; ++i) s[i] += p.incidence(i, c) * v;
  }
  return s;
}

/// Noise-free one-step map theta * A_hat x + s(t).
inline std::vector<double> synthetic_step(const std::vector<double>& x, std::size_t t, const Tensor& adjacency_norm,
                                          const PlantedStructure& p, double diffusion, double amplitude) {
  const std::size_t n = x.size();
  std::vector<double> next = seasonal_term(p, amplitude, t);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += adjacency_norm(i, j) * x[j];
    next[i] += diffusion * acc;
  }
  return next;
}

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg, const PlantedStructure& truth) {
  const std::size_t n = cfg.sensors, T = cfg.steps;
  if (truth.adjacency.rows() != n || truth.incidence.rows() != n)
    throw DataError("synthetic: planted structures do not match sensor count");
  const Tensor a_hat = normalized_adjacency(truth.adjacency);
  const double rho = spectral_radius(a_hat);
  if (!(std::abs(cfg.diffusion) * rho < 1.0))
    throw DataError("synthetic: unstable dynamics, theta * rho(A_hat) = " + std::to_string(std::abs(cfg.diffusion) * rho));
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  SyntheticData out{RawSeries{Tensor({T, n}, 0.0), default_sensor_ids(n)}, truth};
  std::vector<double> x(n, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < n; ++i) out.series.values(t, i) = x[i] + cfg.level;
    if (t + 1 == T) break;
    x = synthetic_step(x, t, a_hat, truth, cfg.diffusion, cfg.season_amplitude);
    if (cfg.noise_std > 0.0)
      for (auto& v : x) v += cfg.noise_std * noise(rng);
  }
  return out;
}

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  return generate_synthetic(cfg, make_planted_structure(cfg));
}

}  // namespace eikf
