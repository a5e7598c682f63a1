#pragma once

#include <functional>

namespace kfl {

/// Precision settings shared by the iterative solvers.
struct Tolerance {
  double abs_tol = 1e-10;
  int max_iter = 200;
};

/// Principal branch of the Lambert function: the w >= -1 solving w*exp(w) = x.
/// Domain x >= -1/e (within tol.abs_tol slack below the branch point).
/// Halley iteration from a piecewise initial guess; converges to
/// |w*exp(w) - x| <= 1e-12 * max(1, |x|).
/// Throws std::domain_error for x < -1/e - tol.abs_tol.
double lambert_w0(double x, const Tolerance& tol = {});

/// Root of a monotone continuous f on [lo, hi] by interval halving.
/// Requires f(lo) and f(hi) of opposite sign, or one of them within
/// tol.abs_tol of zero (that endpoint is returned directly).
/// Throws std::invalid_argument when no bracket exists and
/// std::runtime_error when max_iter halvings do not reach abs_tol width.
double bisect(const std::function<double(double)>& f, double lo, double hi,
              const Tolerance& tol = {});

}  // namespace kfl
