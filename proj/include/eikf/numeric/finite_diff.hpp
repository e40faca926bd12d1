#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "eikf/numeric/tensor.hpp"

namespace eikf {

/// Central-difference gradient of a tensor-to-scalar function.
inline Tensor finite_diff_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  Tensor grad(x.shape(), 0.0);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const Tensor up = f(probe);
    probe[i] = orig - h;
    const Tensor down = f(probe);
    probe[i] = orig;
    if (up.size() != 1 || down.size() != 1)
      throw ShapeError("finite_diff_grad: function returned shape " + shape_str(up.shape()) + ", expected scalar");
    grad[i] = (up[0] - down[0]) / (2.0 * h);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-8) {
  if (a.shape() != b.shape())
    throw ShapeError("max_relative_error: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace eikf
