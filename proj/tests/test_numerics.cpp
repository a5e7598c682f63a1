#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "kfl/numerics.hpp"

using kfl::bisect;
using kfl::lambert_w0;
using kfl::Tolerance;

namespace {

// Independent oracle for W(x): the fixed point w <- (w^2 e^w + x)/(e^w (w+1))
// run to machine precision from w0 = ln(1+x).
double lambert_fixed_point(double x) {
  double w = std::log1p(x);
  for (int i = 0; i < 200; ++i) {
    double ew = std::exp(w);
    double next = (w * w * ew + x) / (ew * (w + 1.0));
    if (std::abs(next - w) <= 1e-17 * (1.0 + std::abs(next))) return next;
    w = next;
  }
  return w;
}

}  // namespace

TEST_CASE("lambert_w0 anchor values") {
  CHECK(lambert_w0(0.0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(lambert_w0(std::exp(1.0)) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(lambert_w0(-std::exp(-1.0)) == doctest::Approx(-1.0).epsilon(1e-9));
  double oracle = lambert_fixed_point(1.0);
  CHECK(oracle == doctest::Approx(0.5671432904).epsilon(1e-10));
  CHECK(lambert_w0(1.0) == doctest::Approx(oracle).epsilon(1e-13));
}

TEST_CASE("lambert_w0 domain error below the branch point") {
  CHECK_THROWS_AS(lambert_w0(-0.5), std::domain_error);
  // Within tolerance slack of -1/e: clamps to the branch value.
  CHECK(lambert_w0(-std::exp(-1.0) - 1e-12) == doctest::Approx(-1.0));
}

TEST_CASE("lambert_w0 identity and monotonicity on a log grid") {
  const double inv_e = std::exp(-1.0);
  double prev = -2.0;
  for (int i = 0; i <= 2000; ++i) {
    double s = 1e-9 * std::pow((1e9 + inv_e) / 1e-9, i / 2000.0);
    double x = s - inv_e;
    double w = lambert_w0(x);
    CHECK(std::abs(w * std::exp(w) - x) <= 1e-10 * std::max(1.0, std::abs(x)));
    CHECK(w >= prev - 1e-14);
    prev = w;
  }
}

TEST_CASE("bisect finds simple roots") {
  Tolerance tol{1e-10, 200};
  CHECK(bisect([](double x) { return x - 2.0; }, 0.0, 10.0, tol) ==
        doctest::Approx(2.0).epsilon(1e-9));
  CHECK(bisect([](double x) { return x * x * x - 8.0; }, 0.0, 10.0, tol) ==
        doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("bisect rejects a bracket without a sign change") {
  CHECK_THROWS_AS(bisect([](double x) { return x + 1.0; }, 0.0, 1.0, {}),
                  std::invalid_argument);
  CHECK_THROWS_AS(bisect([](double) { return 1.0; }, 1.0, 0.0, {}),
                  std::invalid_argument);
}

TEST_CASE("bisect accepts an endpoint already within tolerance") {
  Tolerance tol{1e-6, 200};
  CHECK(bisect([](double x) { return x + 1e-8; }, 0.0, 1.0, tol) == 0.0);
}

TEST_CASE("bisect is deterministic") {
  auto f = [](double x) { return std::sin(x) - 0.3; };
  Tolerance tol{1e-12, 200};
  double a = bisect(f, 0.0, 1.5, tol);
  double b = bisect(f, 0.0, 1.5, tol);
  CHECK(a == b);
}

TEST_CASE("bisect against a dense grid scan on a Lambert-style residual") {
  // Root of f(t) = W(t) - 0.5 located two ways.
  auto f = [](double t) { return lambert_w0(t) - 0.5; };
  Tolerance tol{1e-10, 200};
  double root = bisect(f, 0.0, 10.0, tol);

  double best = 0.0, best_val = 1e300;
  for (int i = 0; i <= 100000; ++i) {
    double t = 10.0 * i / 100000.0;
    double v = std::abs(f(t));
    if (v < best_val) {
      best_val = v;
      best = t;
    }
  }
  CHECK(root == doctest::Approx(best).epsilon(1e-4));
  CHECK(root == doctest::Approx(0.5 * std::exp(0.5)).epsilon(1e-8));
}
