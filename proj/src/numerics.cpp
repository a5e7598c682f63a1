#include "kfl/numerics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace kfl {

namespace {

constexpr double kInvE = 0.36787944117144233;  // 1/e

double initial_guess(double x) {
  if (x < -0.32) {
    // Series around the branch point x = -1/e.
    double p = std::sqrt(2.0 * (std::exp(1.0) * x + 1.0));
    return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p;
  }
  if (x < std::exp(1.0)) {
    // W and log1p share the expansion x - x^2 + ... near zero.
    return std::log1p(x);
  }
  double l = std::log(x);
  return l - std::log(l);
}

}  // namespace

double lambert_w0(double x, const Tolerance& tol) {
  if (x < -kInvE - tol.abs_tol) {
    throw std::domain_error("lambert_w0: argument " + std::to_string(x) +
                            " below branch point -1/e");
  }
  if (x <= -kInvE) return -1.0;
  if (x == 0.0) return 0.0;

  double w = initial_guess(x);
  if (w <= -1.0) w = -1.0 + 1e-12;

  for (int it = 0; it < tol.max_iter; ++it) {
    double ew = std::exp(w);
    double f = w * ew - x;
    double denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0);
    if (denom == 0.0) break;
    double step = f / denom;
    w -= step;
    if (w < -1.0) w = -1.0;  // keep the iterate on the principal branch
    if (std::abs(step) <= 1e-16 * (1.0 + std::abs(w))) break;
  }
  return w;
}

double bisect(const std::function<double(double)>& f, double lo, double hi,
              const Tolerance& tol) {
  if (!(lo < hi)) {
    throw std::invalid_argument("bisect: requires lo < hi");
  }
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if (flo * fhi > 0.0) {
    if (std::abs(flo) <= tol.abs_tol) return lo;
    if (std::abs(fhi) <= tol.abs_tol) return hi;
    throw std::invalid_argument("bisect: f(lo) and f(hi) do not bracket a root");
  }

  for (int it = 0; it < tol.max_iter; ++it) {
    double mid = 0.5 * (lo + hi);
    if (hi - lo <= tol.abs_tol) return mid;
    double fmid = f(mid);
    if (fmid == 0.0) return mid;
    if (flo * fmid < 0.0) {
      hi = mid;
    } else {
      lo = mid;
      flo = fmid;
    }
  }
  throw std::runtime_error("bisect: no convergence after max_iter iterations");
}

}  // namespace kfl
