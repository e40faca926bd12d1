#pragma once

// Point (i.i.d. cell dropout) and block (contiguous per-sensor outage)
// missingness simulators. Masks are T x n with 1 = observed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "eikf/data/series.hpp"

namespace eikf {

enum class MissingScheme { point, block };

inline constexpr double kDefaultFailureProbability = 0.0015;
inline constexpr std::size_t kMinBlockLength = 4;

struct MissingnessMask {
  Tensor mask;
  MissingScheme scheme = MissingScheme::point;
  double target_rate = 0.0;

  double missing_fraction() const {
    double missing = 0.0;
    for (double v : mask.values()) missing += v == 0.0 ? 1.0 : 0.0;
    return missing / static_cast<double>(mask.size());
  }
};

inline void check_rate(double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw DataError("missing rate must lie in [0,1], got " + std::to_string(rate));
}

inline MissingnessMask simulate_point_missing(std::size_t steps, std::size_t sensors, double rate, std::uint64_t seed) {
  check_rate(rate);
  MissingnessMask m{Tensor({steps, sensors}, 1.0), MissingScheme::point, rate};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < m.mask.size(); ++i)
    if (unif(rng) < rate) m.mask[i] = 0.0;
  return m;
}

/// Stationary probability that a cell is covered by some block when failures
/// start with probability p per step and lengths are uniform on
/// [min_len, max_len]: 1 - prod_k (1 - p * P(L > k)).
inline double block_coverage(double p_failure, std::size_t min_len, std::size_t max_len) {
  const double span = static_cast<double>(max_len - min_len + 1);
  double log_uncovered = 0.0;
  for (std::size_t k = 0; k < max_len; ++k) {
    const double longer = k < min_len ? 1.0 : static_cast<double>(max_len - k) / span;
    const double q = 1.0 - p_failure * longer;
    if (q <= 0.0) return 1.0;
    log_uncovered += std::log(q);
  }
  return 1.0 - std::exp(log_uncovered);
}

/// Smallest-error maximum block length for a target missing rate.
inline std::size_t solve_block_max_length(double rate, double p_failure, std::size_t steps,
                                          std::size_t min_len = kMinBlockLength) {
  check_rate(rate);
  const std::size_t limit = std::max(steps, min_len);
  if (!(p_failure > 0.0) || block_coverage(p_failure, min_len, limit) < rate)
    throw DataError("block missingness: rate " + std::to_string(rate) + " unachievable with p_failure " +
                    std::to_string(p_failure) + " and block length <= " + std::to_string(limit));
  std::size_t lo = min_len, hi = limit;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (block_coverage(p_failure, min_len, mid) < rate)
      lo = mid + 1;
    else
      hi = mid;
  }
  if (lo > min_len &&
      std::abs(block_coverage(p_failure, min_len, lo - 1) - rate) < std::abs(block_coverage(p_failure, min_len, lo) - rate))
    --lo;
  return lo;
}

/// Per sensor, outages start i.i.d. with probability p_failure per step and
/// mask a uniform-length block; overlapping blocks merge. Blocks may start
/// before the first step so coverage is stationary across the series.
/// Generated blocks are applied in random order until exactly
/// round(rate * steps * sensors) cells are masked (the last block is cut
/// short), so the realized rate does not fluctuate with the small number of
/// failures in short series.
inline MissingnessMask simulate_block_missing(std::size_t steps, std::size_t sensors, double rate, std::uint64_t seed,
                                              double p_failure = kDefaultFailureProbability,
                                              std::size_t min_len = kMinBlockLength) {
  check_rate(rate);
  MissingnessMask m{Tensor({steps, sensors}, 1.0), MissingScheme::block, rate};
  if (rate == 0.0) return m;
  const std::size_t max_len = solve_block_max_length(rate, p_failure, steps, min_len);
  const auto target = static_cast<std::size_t>(std::llround(rate * static_cast<double>(steps * sensors)));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> length(min_len, max_len);
  const auto burn_in = static_cast<std::ptrdiff_t>(max_len) - 1;
  const auto T = static_cast<std::ptrdiff_t>(steps);
  struct Block {
    std::size_t sensor;
    std::ptrdiff_t start, len;
  };
  std::size_t masked = 0;
  for (std::size_t round = 0; masked < target; ++round) {
    if (round == 100000) throw DataError("block missingness: target rate not reached");
    std::vector<Block> blocks;
    for (std::size_t c = 0; c < sensors; ++c)
      for (std::ptrdiff_t start = -burn_in; start < T; ++start)
        if (unif(rng) < p_failure) blocks.push_back({c, start, static_cast<std::ptrdiff_t>(length(rng))});
    std::shuffle(blocks.begin(), blocks.end(), rng);
    for (const Block& b : blocks) {
      for (std::ptrdiff_t t = std::max<std::ptrdiff_t>(b.start, 0); t < std::min(b.start + b.len, T) && masked < target;
           ++t) {
        double& cell = m.mask(static_cast<std::size_t>(t), b.sensor);
        if (cell != 0.0) {
          cell = 0.0;
          ++masked;
        }
      }
      if (masked == target) break;
    }
  }
  return m;
}

/// Mean length of maximal runs of zeros, scanning each sensor column.
inline double mean_missing_run_length(const Tensor& mask) {
  double runs = 0.0, cells = 0.0;
  for (std::size_t c = 0; c < mask.cols(); ++c) {
    bool in_run = false;
    for (std::size_t t = 0; t < mask.rows(); ++t) {
      const bool missing = mask(t, c) == 0.0;
      if (missing) {
        cells += 1.0;
        if (!in_run) runs += 1.0;
      }
      in_run = missing;
    }
  }
  return runs == 0.0 ? 0.0 : cells / runs;
}

inline MissingScheme parse_scheme(const std::string& s) {
  if (s == "point") return MissingScheme::point;
  if (s == "block") return MissingScheme::block;
  throw DataError("unknown missingness scheme '" + s + "' (expected point or block)");
}

inline const char* scheme_name(MissingScheme s) { return s == MissingScheme::point ? "point" : "block"; }

}  // namespace eikf
