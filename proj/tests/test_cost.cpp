#include "nelson/cost.hpp"
#include "nelson/marginals.hpp"
#include "nelson/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace nelson;

namespace {

Point pt(double a) { return Point::Constant(1, a); }
Point pt2(double a, double b) {
  Point p(2);
  p << a, b;
  return p;
}

// sup_y { y z - g*(y) } by a dense scan followed by golden-section refinement.
double brute_conjugate_1d(const CostFunction& c, double z) {
  double best_y = 0.0, best = 0.0;
  for (double y = -50.0; y <= 50.0; y += 1e-3) {
    const double v = y * z - c.gstar(0.0, pt(0.0), pt(y));
    if (v > best) best = v, best_y = y;
  }
  double a = best_y - 1e-3, b = best_y + 1e-3;
  const double r = (std::sqrt(5.0) - 1) / 2;
  for (int i = 0; i < 100; ++i) {
    const double m1 = b - r * (b - a), m2 = a + r * (b - a);
    const double f1 = m1 * z - c.gstar(0, pt(0), pt(m1)), f2 = m2 * z - c.gstar(0, pt(0), pt(m2));
    if (f1 > f2) b = m2;
    else a = m1;
  }
  const double y = 0.5 * (a + b);
  return std::max(best, y * z - c.gstar(0, pt(0), pt(y)));
}

MarginalFlow unit_flow(int dim) {
  return MarginalFlow::gaussian(dim, 1.0, GaussianPath{[dim](double) { return Point(Point::Zero(dim)); },
                                                       [dim](double) { return Matrix(Matrix::Identity(dim, dim)); }});
}

}  // namespace

TEST_CASE("quadratic cost is self-conjugate") {
  const CostFunction c = CostFunction::quadratic();
  for (double z : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
    CHECK(c.g(0, pt(0), pt(z)) == doctest::Approx(0.5 * z * z).epsilon(1e-12));
    CHECK(c.grad_g(0, pt(0), pt(z))(0) == doctest::Approx(z).epsilon(1e-12));
    CHECK(c.gstar(0, pt(0), pt(z)) == doctest::Approx(0.5 * z * z));
  }
  CHECK(c.quadratic_growth());
}

TEST_CASE("power cost conjugate matches a brute-force supremum") {
  for (double p : {1.5, 3.0, 4.0}) {
    const CostFunction c = CostFunction::power(p);
    for (double z : {-2.0, -0.3, 0.4, 1.7}) {
      CAPTURE(p);
      CAPTURE(z);
      CHECK(c.g(0, pt(0), pt(z)) == doctest::Approx(brute_conjugate_1d(c, z)).epsilon(1e-6));
    }
  }
}

TEST_CASE("numerical conjugate of a custom radial cost matches the brute force") {
  const CostFunction c = CostFunction::custom(
      [](double, const Point&, const Point& y) {
        const double r = y.norm();
        return r * r / 2 + r * r * r * r / 4;
      },
      true, 2.0);
  for (double z : {-1.5, 0.2, 2.0}) CHECK(c.g(0, pt(0), pt(z)) == doctest::Approx(brute_conjugate_1d(c, z)).epsilon(1e-6));
}

TEST_CASE("Fenchel-Young inequality with equality at the gradient") {
  Rng rng(11, 0);
  for (const CostFunction& c : {CostFunction::quadratic(), CostFunction::power(3.0), CostFunction::power(1.5),
                                CostFunction::power_with_log(2.5)}) {
    for (int i = 0; i < 50; ++i) {
      const Point y = pt2(2 * rng.normal(), 2 * rng.normal());
      const Point z = pt2(2 * rng.normal(), 2 * rng.normal());
      CHECK(c.gstar(0, y, y) + c.g(0, y, z) >= y.dot(z) - 1e-9);
      const Point yz = c.grad_g(0, y, z);
      CHECK(c.gstar(0, y, yz) + c.g(0, y, z) == doctest::Approx(yz.dot(z)).epsilon(1e-6));
    }
  }
}

TEST_CASE("gradient of g against central differences") {
  const CostFunction c = CostFunction::power(3.0);
  const Point x = pt2(0, 0);
  for (const Point& z : {pt2(0.3, -1.2), pt2(2.0, 0.5), pt2(-0.7, 0.1)}) {
    const Point gr = c.grad_g(0, x, z);
    for (int k = 0; k < 2; ++k) {
      Point zp = z, zm = z;
      const double h = 1e-5;
      zp(k) += h;
      zm(k) -= h;
      CHECK(gr(k) == doctest::Approx((c.g(0, x, zp) - c.g(0, x, zm)) / (2 * h)).epsilon(1e-6));
    }
  }
}

TEST_CASE("g is even and convex along random segments") {
  Rng rng(5, 1);
  const CostFunction c = CostFunction::power(2.5);
  for (int i = 0; i < 100; ++i) {
    const Point a = pt2(rng.normal(), rng.normal()), b = pt2(rng.normal(), rng.normal());
    const Point x = pt2(0, 0);
    CHECK(c.g(0, x, a) == doctest::Approx(c.g(0, x, Point(-a))));
    CHECK(c.g(0, x, Point(0.5 * (a + b))) <= 0.5 * (c.g(0, x, a) + c.g(0, x, b)) + 1e-12);
  }
}

TEST_CASE("structural probes pass for built-in costs and flag linear growth") {
  const MarginalFlow flow = unit_flow(1);
  for (const CostFunction& c : {CostFunction::quadratic(), CostFunction::power(3.0), CostFunction::power(1.5)}) {
    CAPTURE(c.name());
    CHECK(validate_assumption_C(c, flow, 100).all_passed());
  }
  const CostFunction lin = CostFunction::custom([](double, const Point&, const Point& y) { return y.norm(); }, true, 1.0);
  const ValidationReport r = validate_assumption_C(lin, flow, 100);
  CHECK_FALSE(r.all_passed());
  REQUIRE(r.find("superlinear_growth") != nullptr);
  CHECK_FALSE(r.find("superlinear_growth")->passed);
}

TEST_CASE("invalid exponents are rejected") {
  CHECK_THROWS_AS(CostFunction::power(1.0), InvalidArgument);
  CHECK_THROWS_AS(CostFunction::power(0.5), InvalidArgument);
}
