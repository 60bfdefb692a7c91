#include "nelson/cost.hpp"
#include "nelson/diffusion.hpp"

#include <doctest.h>

#include <cmath>

using namespace nelson;

namespace {

Point pt(double a) { return Point::Constant(1, a); }

DiffusionSpec bm(double var0 = 1.0) {
  Matrix c(1, 1);
  c(0, 0) = var0;
  return brownian_spec(1, 1.0, InitialLaw::gaussian(pt(0), c));
}

// Sample mean and variance of coordinate 0 at a record.
std::pair<double, double> moments(const PathEnsemble& e, int r) {
  double s = 0, s2 = 0;
  for (int p = 0; p < e.n_paths; ++p) {
    const double x = e.state(p, r)(0);
    s += x;
    s2 += x * x;
  }
  const double m = s / e.n_paths;
  return {m, s2 / e.n_paths - m * m};
}

}  // namespace

TEST_CASE("Brownian variance grows linearly") {
  SimulationOptions o;
  o.n_paths = 20000;
  o.n_steps = 50;
  o.seed = 3;
  const PathEnsemble e = simulate(bm(), nullptr, o);
  const auto [m, v] = moments(e, e.n_records() - 1);
  // s.e. of the variance estimate is about v sqrt(2/n) = 0.02.
  CHECK(std::abs(m) < 0.05);
  CHECK(v == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("Ornstein-Uhlenbeck mean decays as exp(-k t)") {
  DiffusionSpec s = brownian_spec(1, 1.0, InitialLaw::dirac(pt(2.0)));
  s.drift = [](double, const Point& x) { return Point(-1.5 * x); };
  SimulationOptions o;
  o.n_paths = 20000;
  o.n_steps = 400;
  const PathEnsemble e = simulate(s, nullptr, o);
  const double m = moments(e, e.n_records() - 1).first;
  // Euler bias O(dt) plus MC noise ~ 0.005.
  CHECK(m == doctest::Approx(2.0 * std::exp(-1.5)).epsilon(0.03));
}

TEST_CASE("simulation is reproducible and independent of path order") {
  SimulationOptions o;
  o.n_paths = 200;
  o.n_steps = 20;
  o.seed = 42;
  const PathEnsemble a = simulate(bm(), nullptr, o), b = simulate(bm(), nullptr, o);
  CHECK(a.states == b.states);
  o.n_paths = 50;
  const PathEnsemble c = simulate(bm(), nullptr, o);
  // Streams are keyed by path index, so a shorter run is a prefix.
  for (int p = 0; p < 50; ++p) CHECK(c.state(p, 20)(0) == a.state(p, 20)(0));
  o.seed = 43;
  CHECK(simulate(bm(), nullptr, o).states != c.states);
}

TEST_CASE("generator against the Ito expansion of a polynomial") {
  DiffusionSpec s = brownian_spec(2, 1.0, InitialLaw::dirac(Point::Zero(2)));
  s.drift = [](double t, const Point& x) {
    Point b(2);
    b << -x(0) + t, 0.5 * x(1);
    return b;
  };
  Matrix sig(2, 2);
  sig << 1.0, 0.0, 0.3, 2.0;
  s.sigma = [sig](double, const Point&) { return sig; };
  s.sigma_is_identity = false;
  // w = t x0^2 + x0 x1
  TestFunctionJet j;
  Point x(2);
  x << 0.4, -1.1;
  const double t = 0.3;
  j.value = t * x(0) * x(0) + x(0) * x(1);
  j.dt = x(0) * x(0);
  j.grad = Point(2);
  j.grad << 2 * t * x(0) + x(1), x(0);
  j.hess = Matrix(2, 2);
  j.hess << 2 * t, 1, 1, 0;
  const Matrix a = sig * sig.transpose();
  const Point b = s.b(t, x);
  const double expect = j.dt + b.dot(j.grad) + 0.5 * (a.cwiseProduct(j.hess)).sum();
  CHECK(apply_generator(s, j, t, x) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("singular sigma is rejected") {
  DiffusionSpec s = brownian_spec(2, 1.0, InitialLaw::dirac(Point::Zero(2)));
  Matrix sig(2, 2);
  sig << 1, 2, 2, 4;
  s.sigma = [sig](double, const Point&) { return sig; };
  CHECK_THROWS_AS(s.check_sigma(0.0, Point::Zero(2)), InvalidArgument);
  CHECK(brownian_spec(2, 1.0, InitialLaw::dirac(Point::Zero(2))).check_sigma(0, Point::Zero(2)) ==
        doctest::Approx(1.0));
}

TEST_CASE("reflection keeps the clipped Bessel scheme nonnegative") {
  DiffusionSpec s = brownian_spec(1, 1.0, InitialLaw::dirac(pt(0.2)));
  s.drift = [](double, const Point& x) { return Point(0.25 / x.array()); };
  SimulationOptions o;
  o.n_paths = 500;
  o.n_steps = 100;
  o.singular = SingularDriftControl{10 * std::sqrt(0.01), true};
  const PathEnsemble e = simulate(s, nullptr, o);
  CHECK(e.n_flagged == 0);
  for (double v : e.states) CHECK(v >= 0.0);
}

TEST_CASE("Girsanov weights of a constant shift have mean one") {
  const DiffusionSpec s = bm();
  SimulationOptions o;
  o.n_paths = 20000;
  o.n_steps = 50;
  const PathEnsemble e = simulate(s, nullptr, o);
  // psi = -0.5: recovered drift 0.5 under the quadratic cost.
  const WeightReport w = girsanov_weight(e, s, [](double, const Point&) { return pt(-0.5); }, CostFunction::quadratic());
  CHECK(std::abs(w.mean - 1.0) < 3 * w.std_error);
  // Reweighted terminal mean is the shifted mean 0.5.
  double num = 0;
  for (int p = 0; p < e.n_paths; ++p) num += w.weights[p] * e.state(p, e.n_records() - 1)(0);
  CHECK(num / e.n_paths == doctest::Approx(0.5).epsilon(0.1));
}
