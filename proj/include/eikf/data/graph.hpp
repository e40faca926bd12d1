#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "eikf/data/csv.hpp"
#include "eikf/data/series.hpp"

namespace eikf {

inline constexpr double kDefaultKernelThreshold = 0.1;

/// Binary sensor graph with its source distances.
struct ExplicitGraph {
  Tensor adjacency;  // n x n in {0,1}, symmetric, zero diagonal
  Tensor distances;  // n x n, +inf where unknown
  double kernel_width = 0.0;
  double threshold = kDefaultKernelThreshold;
};

/// Standard deviation of the finite off-diagonal distances (each pair once).
inline double default_kernel_width(const Tensor& distances) {
  const std::size_t n = distances.rows();
  double sum = 0.0, sq = 0.0, count = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = distances(i, j);
      if (!std::isfinite(d)) continue;
      sum += d;
      sq += d * d;
      count += 1.0;
    }
  if (count == 0.0) return 1.0;
  const double mu = sum / count;
  const double sd = std::sqrt(std::max(0.0, sq / count - mu * mu));
  return sd > 0.0 ? sd : (mu > 0.0 ? mu : 1.0);
}

/// w_ij = exp(-d_ij^2 / width^2); edge iff w_ij >= threshold and i != j.
inline ExplicitGraph build_adjacency(const Tensor& distances, std::optional<double> kernel_width = std::nullopt,
                                     double threshold = kDefaultKernelThreshold) {
  if (distances.rank() != 2 || distances.rows() != distances.cols())
    throw DataError("build_adjacency: distances must be square, got " + shape_str(distances.shape()));
  const std::size_t n = distances.rows();
  for (std::size_t i = 0; i < n; ++i) {
    if (distances(i, i) != 0.0) throw DataError("build_adjacency: nonzero self distance for sensor " + std::to_string(i));
    for (std::size_t j = 0; j < n; ++j) {
      const double d = distances(i, j);
      if (std::isnan(d) || d < 0.0)
        throw DataError("build_adjacency: negative distance at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      if (d != distances(j, i))
        throw DataError("build_adjacency: asymmetric distances at (" + std::to_string(i) + "," + std::to_string(j) + ")");
    }
  }
  const double width = kernel_width.value_or(default_kernel_width(distances));
  if (!(width > 0.0)) throw DataError("build_adjacency: kernel width must be positive");
  ExplicitGraph g{Tensor({n, n}, 0.0), distances, width, threshold};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || !std::isfinite(distances(i, j))) continue;
      const double d = distances(i, j);
      const double w = std::exp(-(d * d) / (width * width));
      g.adjacency(i, j) = w >= threshold ? 1.0 : 0.0;
    }
  return g;
}

/// D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I.
inline Tensor normalized_adjacency(const Tensor& adjacency) {
  if (adjacency.rank() != 2 || adjacency.rows() != adjacency.cols())
    throw ShapeError("normalized_adjacency: expected square matrix, got " + shape_str(adjacency.shape()));
  const std::size_t n = adjacency.rows();
  Tensor a = adjacency;
  for (std::size_t i = 0; i < n; ++i) a(i, i) += 1.0;
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(n);
    for (std::size_t j = 0; j < n; ++j) row[j] = a(i, j);
    const double deg = order_free_sum(row);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
  return a;
}

/// Distance file: rows of (from_id, to_id, distance), undirected; an optional
/// header row is skipped. Unlisted pairs are +inf.
inline Tensor load_distances(const std::string& path, const std::vector<std::string>& sensor_ids) {
  auto in = csv::open_in(path);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < sensor_ids.size(); ++i) index.emplace(sensor_ids[i], i);
  const std::size_t n = sensor_ids.size();
  Tensor d({n, n}, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) d(i, i) = 0.0;
  std::string line;
  std::size_t row = 0;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = csv::split_line(line);
    double v = 0.0;
    if (first) {
      first = false;
      if (cells.size() == 3 && !csv::parse_double(cells[2], v)) continue;
    }
    ++row;
    if (cells.size() != 3)
      throw ParseError(path + ": row " + std::to_string(row) + " needs 3 cells", row, cells.size());
    if (!csv::parse_double(cells[2], v))
      throw ParseError(path + ": non-numeric distance at (" + std::to_string(row) + ",3)", row, 3);
    const auto a = index.find(cells[0]), b = index.find(cells[1]);
    if (a == index.end() || b == index.end())
      throw ParseError(path + ": unknown sensor id at row " + std::to_string(row), row, a == index.end() ? 1 : 2);
    if (a->second == b->second) continue;
    d(a->second, b->second) = v;
    d(b->second, a->second) = v;
  }
  return d;
}

inline void save_distances(const std::string& path, const Tensor& distances, const std::vector<std::string>& ids) {
  auto out = csv::open_out(path);
  out << "from,to,distance\n";
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = i + 1; j < ids.size(); ++j)
      if (std::isfinite(distances(i, j)))
        out << ids[i] << ',' << ids[j] << ',' << csv::format_double(distances(i, j)) << '\n';
}

}  // namespace eikf
