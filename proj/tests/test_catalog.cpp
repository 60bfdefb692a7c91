#include "nelson/catalog.hpp"
#include "nelson/quadrature.hpp"

#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>

using namespace nelson;

TEST_CASE("Gaussian gain and oracle value") {
  // c(t) = (2(1+t) - 1) / (2(1+t)^2); value = int c^2 (1+t)^2 / 2 = int (1 + 2t)^2 / (8 (1+t)^2).
  const GaussianCase g = gaussian_entropic_case(VariancePath::square(1.0));
  CHECK(g.gain(0.0) == doctest::Approx(0.5));
  CHECK(g.gain(1.0) == doctest::Approx(3.0 / 8.0));
  const double exact = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      [](double t) { return (1 + 2 * t) * (1 + 2 * t) / (8 * (1 + t) * (1 + t)); }, 0.0, 1.0);
  CHECK(g.oracle_value == doctest::Approx(exact).epsilon(1e-12));
  // Closed form: (4t - 4 log(1+t) - 1/(1+t)) / 8 from 0 to 1.
  CHECK(g.oracle_value == doctest::Approx((4 - 4 * std::log(2.0) - 0.5 + 1) / 8).epsilon(1e-12));
}

TEST_CASE("Gaussian case validates the variance path") {
  VariancePath bad{[](double t) { return 1 - 2 * t; }, [](double) { return -2.0; }, "bad"};
  CHECK_THROWS_AS(gaussian_entropic_case(bad), InvalidArgument);
  const GaussianCase g = gaussian_entropic_case(VariancePath::constant(2.0), 3.0);
  CHECK(g.oracle_value == doctest::Approx(3.0 / 16).epsilon(1e-12));  // c = -1/4, c^2 s^2 / 2 = 1/16
  CHECK(g.spec.m0.cov(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("Bessel parameters and the closed-form dual field") {
  const BesselCase c = bessel_case(1.5, 1.2);
  CHECK(c.nu == doctest::Approx(-0.25));
  CHECK(c.admissible);
  CHECK_FALSE(bessel_case(1.5, 1.8).admissible);
  CHECK(bessel_case(1.5, 1.49).admissible);
  const BesselCase q2 = bessel_case(1.5, 2.0);
  CHECK(q2.q == doctest::Approx(2.0));
  CHECK(q2.psi(0.25) == doctest::Approx(-1.0));
  CHECK(q2.psi(-0.25) == doctest::Approx(1.0));
  CHECK_THROWS_AS(bessel_case(2.0, 1.2), InvalidArgument);
  CHECK_THROWS_AS(bessel_case(1.0, 1.2), InvalidArgument);
}

TEST_CASE("Bessel drift recovered from the dual field under the p-cost") {
  // grad g(Psi) = -sign(x) |Psi|^{q-1} = -(delta - 1) / (2x): minus the Bessel drift.
  const BesselCase c = bessel_case(1.5, 1.3);
  const CostFunction cost = CostFunction::power(c.p, [p = c.p](double, const Point&) { return 1.0 / p; });
  for (double x : {0.3, 1.0, 2.5}) {
    const double z = c.psi(x);
    CHECK(cost.grad_g(0, Point::Constant(1, x), Point::Constant(1, z))(0) ==
          doctest::Approx(-(c.delta - 1) / (2 * x)).epsilon(1e-8));
  }
}

TEST_CASE("X and |Y| share their marginals") {
  const BesselCase c = bessel_case(1.5, 1.2);
  const LabeledEnsemble y = bessel_y_ensemble(c, 4000, 200, 5, 20);
  SimulationOptions o;
  o.n_paths = 4000;
  o.n_steps = 200;
  o.seed = 5;
  o.record_stride = 20;
  o.singular = c.control(200);
  const PathEnsemble x = simulate(c.spec, nullptr, o);
  REQUIRE(x.n_records() == static_cast<int>(y.times.size()));
  for (std::size_t r = 0; r < y.times.size(); ++r)
    for (int p = 0; p < y.n_paths; ++p) CHECK_EQ(std::abs(y.state(p, r)), x.state(p, static_cast<int>(r))(0));
  // Y takes both signs after the flip.
  int neg = 0;
  for (int p = 0; p < y.n_paths; ++p) neg += y.state(p, static_cast<int>(y.times.size()) - 1) < 0;
  CHECK(neg > 0);
}

TEST_CASE("control labels keep the Y states and decouple the label") {
  const BesselCase c = bessel_case(1.5, 1.2);
  const LabeledEnsemble y = bessel_y_ensemble(c, 4000, 200, 5, 20);
  const LabeledEnsemble k = bessel_y_ensemble(c, 4000, 200, 5, 20, true);
  CHECK(y.states == k.states);
  CHECK(y.tau == k.tau);
  int agree = 0;
  for (int p = 0; p < y.n_paths; ++p) agree += y.label[p] == k.label[p];
  CHECK(agree > 1700);
  CHECK(agree < 2300);
}

TEST_CASE("inverse moment is finite and refines stably in the admissible range") {
  const BesselCase c = bessel_case(1.5, 1.2);
  const McEstimate a = bessel_inverse_moment(c, 5000, 200, 1), b = bessel_inverse_moment(c, 5000, 400, 1);
  CHECK(std::isfinite(a.estimate));
  CHECK(std::abs(b.estimate / a.estimate - 1) < 0.1);
}

TEST_CASE("zero and radial fields pass the curl test, separable bumps fail it") {
  const NonUniversalityReport z = nonuniversality_case(Field2D::zero(), 51);
  CHECK(z.max_residual == 0.0);
  const NonUniversalityReport r = nonuniversality_case(Field2D::radial_bump(), 101);
  CHECK(r.max_residual <= 1e-8);
  CHECK_FALSE(r.universal_candidate_fails);
  const NonUniversalityReport s = nonuniversality_case(Field2D::separable_bumps(), 101);
  CHECK(s.universal_candidate_fails);
  CHECK(s.max_residual > 100 * s.tol_curl);
}

TEST_CASE("field derivatives match finite differences") {
  for (const Field2D& B : {Field2D::separable_bumps(1.3, 0.8, 1.1), Field2D::radial_bump(0.7, 1.2)}) {
    const double h = 1e-6;
    for (auto [x, y] : {std::pair{0.1, -0.3}, std::pair{0.5, 0.2}}) {
      CHECK(B.Bx(x, y) == doctest::Approx((B.B(x + h, y) - B.B(x - h, y)) / (2 * h)).epsilon(1e-6));
      CHECK(B.By(x, y) == doctest::Approx((B.B(x, y + h) - B.B(x, y - h)) / (2 * h)).epsilon(1e-6));
      CHECK(B.Bxx(x, y) == doctest::Approx((B.Bx(x + h, y) - B.Bx(x - h, y)) / (2 * h)).epsilon(1e-5));
      CHECK(B.Bxy(x, y) == doctest::Approx((B.Bx(x, y + h) - B.Bx(x, y - h)) / (2 * h)).epsilon(1e-5));
      CHECK(B.Byy(x, y) == doctest::Approx((B.By(x, y + h) - B.By(x, y - h)) / (2 * h)).epsilon(1e-5));
    }
  }
}

TEST_CASE("residual is antisymmetric under swapping x and y") {
  const Field2D B = Field2D::separable_bumps(1.0, 0.7, 1.0);
  const int n = 41;
  const NonUniversalityReport a = nonuniversality_case(B, n), b = nonuniversality_case(B.swapped(), n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      CHECK(b.residual[j * n + i] == doctest::Approx(-a.residual[i * n + j]).scale(1e-12));
}

TEST_CASE("residual equals the curl of |grad B| grad B by finite differences") {
  const Field2D B = Field2D::separable_bumps();
  auto F1 = [&](double x, double y) { return std::hypot(B.Bx(x, y), B.By(x, y)) * B.Bx(x, y); };
  auto F2 = [&](double x, double y) { return std::hypot(B.Bx(x, y), B.By(x, y)) * B.By(x, y); };
  const int n = 11;
  const NonUniversalityReport r = nonuniversality_case(B, n, 1.0);
  const auto g = linspace(-1.0, 1.0, n);
  const double h = 1e-6;
  for (int j = 1; j < n - 1; ++j)
    for (int i = 1; i < n - 1; ++i) {
      const double x = g[i], y = g[j];
      const double curl = (F2(x + h, y) - F2(x - h, y)) / (2 * h) - (F1(x, y + h) - F1(x, y - h)) / (2 * h);
      CHECK(r.residual[j * n + i] == doctest::Approx(curl).epsilon(1e-5).scale(1e-4));
    }
}
