#pragma once

#include <string>

#include "eikf/model/temporal.hpp"
#include "eikf/numeric/tape.hpp"

namespace eikf {

namespace detail {

inline Var masked(const Var& x, const Tensor* mask) {
  if (mask == nullptr) return x;
  if (mask->shape() != x.shape())
    throw ShapeError("loss: mask " + shape_str(mask->shape()) + " vs values " + shape_str(x.shape()));
  return mul(x, x.tape()->constant(*mask));
}

inline double observed_count(const Tensor& like, const Tensor* mask) {
  if (mask == nullptr) return static_cast<double>(like.size());
  double c = 0.0;
  for (double v : mask->values()) c += v != 0.0 ? 1.0 : 0.0;
  return c;
}

}  // namespace detail

/// Sum of |target - pred| over observed cells (building block for batch means).
inline Var absolute_error_sum(const Var& pred, const Tensor& target, const Tensor* mask = nullptr) {
  if (pred.shape() != target.shape())
    throw ShapeError("mae_loss: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  return sum(detail::masked(abs(sub(pred, pred.tape()->constant(target))), mask));
}

/// Mean absolute error over observed cells; zero when nothing is observed.
inline Var mae_loss(const Var& pred, const Tensor& target, const Tensor* mask = nullptr) {
  const double n = detail::observed_count(target, mask);
  const Var total = absolute_error_sum(pred, target, mask);
  return scale(total, n > 0.0 ? 1.0 / n : 0.0);
}

/// Sum over observed cells of log(var)/2 + (x - mu)^2 / (2 var).
inline Var gaussian_nll_sum(const Tensor& target, const Var& mean, const Var& variance, const Tensor* mask = nullptr) {
  if (mean.shape() != target.shape() || variance.shape() != target.shape())
    throw ShapeError("gaussian_nll: shapes " + shape_str(target.shape()) + ", " + shape_str(mean.shape()) + ", " +
                     shape_str(variance.shape()));
  for (double v : variance.value().values())
    if (v < kVarianceFloor)
      throw DomainError("gaussian_nll: variance " + std::to_string(v) + " below the floor " +
                        std::to_string(kVarianceFloor));
  const Var resid = square(sub(mean.tape()->constant(target), mean));
  const Var terms = add(scale(log(variance), 0.5), scale(div(resid, variance), 0.5));
  return sum(detail::masked(terms, mask));
}

inline Var gaussian_nll(const Tensor& target, const Var& mean, const Var& variance, const Tensor* mask = nullptr) {
  const double n = detail::observed_count(target, mask);
  return scale(gaussian_nll_sum(target, mean, variance, mask), n > 0.0 ? 1.0 / n : 0.0);
}

}  // namespace eikf
