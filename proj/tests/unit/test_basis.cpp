#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "trukan/basis.hpp"
#include "trukan/error.hpp"
#include "trukan/gradcheck.hpp"
#include "trukan/knots.hpp"
#include "trukan/ops.hpp"

using namespace trukan;
using namespace trukan::basis;

TEST_CASE("truncated power values") {
  CHECK(truncated_power(0.2, 0.5, 3) == 0.0);
  CHECK(truncated_power(1.5, 0.5, 3) == 1.0);
  CHECK(truncated_power(1.0, 0.5, 2) == 0.25);
  // Indicator is closed on the left.
  CHECK(truncated_power(0.5, 0.5, 0) == 1.0);
  CHECK(truncated_power(0.49, 0.5, 0) == 0.0);
}

TEST_CASE("truncated power derivatives") {
  CHECK(truncated_power_deriv(1.5, 0.5, 3, 1) == 3.0);
  CHECK(truncated_power_deriv(1.5, 0.5, 3, 3) == 6.0);
  CHECK(truncated_power_deriv(0.9, 0.5, 3, 3) == 6.0);
  CHECK(truncated_power_deriv(0.1, 0.5, 3, 3) == 0.0);
  CHECK(truncated_power_deriv(1.5, 0.5, 3, 2) == 6.0);
  CHECK(truncated_power_deriv(1.5, 0.5, 3, 0) == 1.0);
  CHECK_THROWS_AS(truncated_power_deriv(1.0, 0.0, 2, 3), ValueError);
}

TEST_CASE("truncated power is C^(k-1) across the knot") {
  const double t = 0.3, h = 1e-7;
  for (int k = 1; k <= 3; ++k)
    for (int m = 0; m < k; ++m) {
      const double left = truncated_power_deriv(t - h, t, k, m);
      const double right = truncated_power_deriv(t + h, t, k, m);
      CHECK(std::abs(left - right) < 1e-6);
    }
}

TEST_CASE("analytic first derivative equals autodiff") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 1; k <= 3; ++k)
    for (int i = 0; i < 1000; ++i) {
      const double x = u(rng), t = u(rng);
      if (x == t) continue;
      Tensor xt = Tensor::from(1, 1, {x}, true);
      backward(sum(truncated_power(xt, t, k)));
      CHECK(xt.grad()[0] == doctest::Approx(truncated_power_deriv(x, t, k, 1)).epsilon(1e-12));
    }
}

TEST_CASE("B-spline evaluation") {
  const std::vector<double> knots01 = {0.0, 1.0, 2.0, 3.0};
  const auto b0 = bspline_basis(1.5, knots01, 0);
  CHECK(b0 == std::vector<double>{0.0, 1.0, 0.0});
  CHECK(bspline_basis(1.0, knots01, 0)[1] == 1.0);  // half-open [1, 2)
  CHECK(bspline_basis(1.0, knots01, 0)[0] == 0.0);

  const std::vector<double> hat = {0.0, 1.0, 2.0};
  CHECK(bspline_basis(1.0, hat, 1)[0] == doctest::Approx(1.0));
  CHECK(bspline_basis(0.5, hat, 1)[0] == doctest::Approx(0.5));

  CHECK_THROWS_AS(bspline_basis(0.5, std::vector<double>{0.0, 1.0}, 1), ValueError);
  CHECK_THROWS_AS(bspline_basis(0.5, std::vector<double>{0.0, 2.0, 1.0, 3.0}, 1), ValueError);
}

TEST_CASE("B-spline partition of unity and non-negativity") {
  for (int k = 0; k <= 3; ++k) {
    const std::size_t g = 8;
    std::vector<double> knots;
    for (int i = -k; i <= static_cast<int>(g) + k; ++i) knots.push_back(-1.0 + 2.0 * i / static_cast<double>(g));
    for (int s = 0; s < 200; ++s) {
      const double x = -1.0 + 2.0 * (s + 0.5) / 200.0;
      const auto b = bspline_basis(x, knots, k);
      CHECK(b.size() == g + static_cast<std::size_t>(k));
      double total = 0.0;
      for (double v : b) {
        CHECK(v >= 0.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("B-spline derivative matches finite differences") {
  const std::vector<double> knots = {-1.6, -1.2, -0.8, -0.4, 0.0, 0.4, 0.8, 1.2, 1.6};
  for (double x : {-0.77, -0.1, 0.33, 0.91}) {
    const auto d = bspline_basis_deriv(x, knots, 3);
    const auto p = bspline_basis(x + 1e-6, knots, 3), m = bspline_basis(x - 1e-6, knots, 3);
    for (std::size_t j = 0; j < d.size(); ++j) CHECK(d[j] == doctest::Approx((p[j] - m[j]) / 2e-6).epsilon(1e-6));
  }
}

TEST_CASE("B-spline tensor evaluation is differentiable in x") {
  const std::vector<double> knots = {-1.6, -1.2, -0.8, -0.4, 0.0, 0.4, 0.8, 1.2, 1.6};
  Tensor x = Tensor::from(2, 2, {-0.7, 0.1, 0.45, 0.93}, true);
  const Tensor w = Tensor::full(4, 5, 0.3);
  const auto r = gradcheck([&] { return sum(mul(bspline_eval(x, knots, 3), w)); }, {x});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("polynomial evaluation and derivatives") {
  const std::vector<double> a = {1, 2, 3};
  CHECK(poly_eval(a, 2.0) == 17.0);
  CHECK(poly_eval(std::vector<double>{4.5}, -3.0) == 4.5);
  CHECK(poly_deriv(a, 2.0, 1) == 14.0);
  CHECK(poly_deriv(a, 2.0, 0) == 17.0);
  CHECK(poly_deriv(std::vector<double>{0, 0, 3}, 5.0, 2) == 6.0);
  CHECK(poly_deriv(a, 2.0, 3) == 0.0);
  CHECK_THROWS(poly_eval(std::vector<double>{}, 1.0));

  Tensor c = Tensor::from(1, 3, {1, 2, 3}, true);
  Tensor x = Tensor::from(1, 1, {2.0}, true);
  backward(sum(poly_eval(c, x)));
  CHECK(c.grad() == std::vector<double>{1, 2, 4});
  CHECK(x.grad()[0] == 14.0);
}

TEST_CASE("SiLU") {
  CHECK(silu(0.0) == 0.0);
  CHECK(silu_deriv(0.0) == 0.5);
  CHECK(std::abs(silu(20.0) - 20.0) < 1e-7);
  for (double x : {-3.0, -0.5, 0.7, 2.2}) {
    CHECK(silu_deriv(x) == doctest::Approx((silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6).epsilon(1e-8));
  }
}

TEST_CASE("sine basis") {
  const Tensor x = Tensor::from(1, 1, {0.5});
  CHECK(sine_basis(x, Tensor::from(1, 1, {0.0}), Tensor::from(1, 1, {0.4})).item() == doctest::Approx(std::sin(0.4)));
  CHECK(sine_basis(x, Tensor::from(1, 1, {std::numbers::pi}), Tensor::from(1, 1, {0.0})).item() ==
        doctest::Approx(1.0));
  Tensor f = Tensor::from(1, 3, {0.5, 1.5, 2.5}, true);
  Tensor xs = Tensor::from(2, 2, {0.1, -0.6, 0.8, 0.3}, true);
  const Tensor ph = Tensor::from(2, 3, {0.0, 0.1, 0.2, 0.3, 0.4, 0.5});
  const Tensor w = Tensor::from(2, 6, {1, -2, 3, 0.5, 0.1, -1, 2, 2, -0.3, 0.7, 1.1, -0.4});
  const auto r = gradcheck([&] { return sum(mul(sine_basis(xs, f, ph), w)); }, {f, xs});
  CHECK(r.max_rel_error < 1e-7);
  CHECK_THROWS_AS(sine_basis(xs, f, Tensor::zeros(3, 3)), ShapeError);
}

TEST_CASE("knot materialisation") {
  const auto fixed = KnotSet::fixed(-1.0, 1.0, 3).values();
  CHECK(fixed == std::vector<double>{-1.0, 0.0, 1.0});

  const auto eq = KnotSet::learnable(-1.0, 1.0, 5).values();
  const auto fx = KnotSet::fixed(-1.0, 1.0, 5).values();
  for (std::size_t j = 0; j < 5; ++j) CHECK(eq[j] == doctest::Approx(fx[j]).epsilon(1e-14));

  CHECK_THROWS(KnotSet::fixed(-1.0, 1.0, 0));

  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int draw = 0; draw < 10000; ++draw) {
    auto ks = KnotSet::learnable(-1.0, 1.0, 6);
    for (double& r : ks.raw().data_mut()) r = n(rng);
    const auto v = ks.values();
    for (std::size_t j = 0; j + 1 < v.size(); ++j) REQUIRE(v[j] < v[j + 1]);
    REQUIRE(v.front() >= -1.0);
    REQUIRE(v.back() <= 1.0);
  }
}

TEST_CASE("learnable knots are differentiable in the raw gaps") {
  auto ks = KnotSet::learnable(-1.0, 1.0, 6);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& r : ks.raw().data_mut()) r = n(rng);
  const Tensor w = Tensor::from(1, 6, {0.3, -1.0, 2.0, 0.7, -0.2, 1.1});
  const auto r = gradcheck([&] { return sum(mul(ks.materialize(), w)); }, {ks.raw()});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("B-spline to truncated power conversion") {
  SUBCASE("zero coefficients") {
    const std::vector<double> knots = {-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5};
    const auto rep = bspline_to_truncated(std::vector<double>(5, 0.0), knots, 1);
    for (double c : rep.coeffs) CHECK(c == 0.0);
    for (double a : rep.poly) CHECK(a == 0.0);
  }
  SUBCASE("degree-1 hat") {
    // Hat on {0, 1, 2} = x_+ - 2 (x-1)_+ + (x-2)_+ over its whole support.
    const std::vector<double> knots = {0.0, 1.0, 2.0};
    const auto rep = bspline_to_truncated(std::vector<double>{1.0}, knots, 1, ConversionDomain::Support);
    double worst = 0.0;
    for (int s = 0; s < 1000; ++s) {
      const double x = 2.0 * s / 999.0;
      const double oracle = std::max(x, 0.0) - 2.0 * std::max(x - 1.0, 0.0) + std::max(x - 2.0, 0.0);
      worst = std::max(worst, std::abs(rep(x) - oracle));
    }
    CHECK(worst < 1e-10);
  }
  SUBCASE("random cubic expansion, G = 8") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> knots;
    for (int i = -3; i <= 11; ++i) knots.push_back(-1.0 + 2.0 * i / 8.0);
    std::vector<double> c(11);
    for (double& v : c) v = n(rng);
    const auto rep = bspline_to_truncated(c, knots, 3);
    double worst = 0.0;
    for (int s = 0; s < 1000; ++s) {
      const double x = -1.0 + 2.0 * (s + 0.5) / 1000.0;
      worst = std::max(worst, std::abs(rep(x) - bspline_expansion(c, knots, 3, x)));
    }
    CHECK(worst < 1e-8);
    CHECK(rep.knots.size() == 7);
    CHECK(rep.condition >= 1.0);
  }
}
