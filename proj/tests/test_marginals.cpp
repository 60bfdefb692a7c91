#include "nelson/marginals.hpp"
#include "nelson/quadrature.hpp"

#include <doctest.h>

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace nelson;

namespace {

MarginalFlow gauss1(std::function<double(double)> mean, std::function<double(double)> var, double T = 1.0) {
  return MarginalFlow::gaussian(1, T,
                                GaussianPath{[mean](double t) { return Point(Point::Constant(1, mean(t))); },
                                             [var](double t) { return Matrix(Matrix::Constant(1, 1, var(t))); }});
}

MeasureSlice samples(std::vector<double> xs) {
  MeasureSlice s;
  for (double x : xs) {
    s.points.push_back(Point::Constant(1, x));
    s.weights.push_back(1.0 / xs.size());
  }
  return s;
}

}  // namespace

TEST_CASE("Gaussian slice quadrature reproduces moments") {
  const MarginalFlow f = gauss1([](double t) { return 0.5 * t; }, [](double t) { return 1 + t; });
  const MeasureSlice s = f.quadrature_slice(0.6);
  CHECK(s.mass() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.mean()(0) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(s.covariance()(0, 0) == doctest::Approx(1.6).epsilon(1e-12));
  double m4 = 0;
  for (std::size_t i = 0; i < s.points.size(); ++i) m4 += s.weights[i] * std::pow(s.points[i](0) - 0.3, 4);
  CHECK(m4 == doctest::Approx(3 * 1.6 * 1.6).epsilon(1e-10));
}

TEST_CASE("cell-wise slice integrates the density over the breaks") {
  const MarginalFlow f = gauss1([](double) { return 0.0; }, [](double) { return 4.0; });
  const std::vector<std::vector<double>> breaks{linspace(-3.0, 5.0, 17)};
  const MeasureSlice s = f.quadrature_slice_on(0.5, breaks);
  const boost::math::normal_distribution<> n(0.0, 2.0);
  CHECK(s.mass() == doctest::Approx(cdf(n, 5.0) - cdf(n, -3.0)).epsilon(1e-8));
}

TEST_CASE("two-dimensional Gaussian covariance is honoured") {
  Matrix c(2, 2);
  c << 2.0, 0.6, 0.6, 1.0;
  const MarginalFlow f = MarginalFlow::gaussian(2, 1.0, GaussianPath{[](double) { return Point(Point::Zero(2)); },
                                                                     [c](double) { return c; }});
  const Matrix got = f.quadrature_slice(0.2).covariance();
  CHECK((got - c).norm() < 1e-10);
}

TEST_CASE("mass box holds the requested fraction") {
  const MarginalFlow f = gauss1([](double) { return 1.0; }, [](double t) { return (1 + t) * (1 + t); });
  const Box b = f.mass_box(0.999);
  const boost::math::normal_distribution<> n(1.0, 2.0);
  CHECK(cdf(n, b.hi(0)) - cdf(n, b.lo(0)) >= 0.999 - 1e-9);
  CHECK(b.hi(0) - b.lo(0) < 2 * 2 * 3.5);
}

TEST_CASE("space-time quadrature of moments") {
  const MarginalFlow f = gauss1([](double) { return 0.0; }, [](double t) { return 1 + t; }, 2.0);
  CHECK(spacetime_quadrature(f, [](double, const Point&) { return 1.0; }) == doctest::Approx(2.0).epsilon(1e-12));
  // int_0^2 (1 + t) dt = 4
  CHECK(spacetime_quadrature(f, [](double, const Point& x) { return x(0) * x(0); }) == doctest::Approx(4.0).epsilon(1e-10));
}

TEST_CASE("one-dimensional W1 is the quantile coupling") {
  CHECK(w1_slice_distance(samples({0, 1, 2}), samples({1, 2, 3})) == doctest::Approx(1.0));
  CHECK(w1_slice_distance(samples({0, 0, 0, 4}), samples({1, 1, 1, 1})) == doctest::Approx(1.5));
  const MarginalFlow a = gauss1([](double) { return 0.0; }, [](double) { return 1.0; });
  const MarginalFlow b = gauss1([](double) { return 0.7; }, [](double) { return 1.0; });
  CHECK(w1_slice_distance(a.discretize_slice(0, 2000, 1), b.discretize_slice(0, 2000, 1)) ==
        doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("W1 is symmetric and satisfies the triangle inequality") {
  const MarginalFlow f = gauss1([](double) { return 0.0; }, [](double) { return 1.0; });
  const MeasureSlice a = f.sample_slice(0, 500, 1), b = f.sample_slice(0, 500, 2), c = f.sample_slice(0, 500, 3);
  CHECK(w1_slice_distance(a, b) == doctest::Approx(w1_slice_distance(b, a)));
  CHECK(w1_slice_distance(a, c) <= w1_slice_distance(a, b) + w1_slice_distance(b, c) + 1e-12);
}

TEST_CASE("mixture slices mix moments linearly") {
  const MarginalFlow a = gauss1([](double) { return 0.0; }, [](double) { return 1.0; });
  const MarginalFlow b = gauss1([](double) { return 2.0; }, [](double) { return 3.0; });
  const MarginalFlow m = MarginalFlow::mixture(a, b, 0.25);
  const MeasureSlice s = m.quadrature_slice(0.5);
  CHECK(s.mass() == doctest::Approx(1.0));
  CHECK(s.mean()(0) == doctest::Approx(0.5));
  // E y^2 = 0.75 * 1 + 0.25 * (3 + 4)
  double m2 = 0;
  for (std::size_t i = 0; i < s.points.size(); ++i) m2 += s.weights[i] * s.points[i](0) * s.points[i](0);
  CHECK(m2 == doctest::Approx(2.5));
}

TEST_CASE("grid densities round-trip through CSV and must keep unit mass") {
  const auto dir = std::filesystem::temp_directory_path() / "nelson_grid_test";
  std::filesystem::create_directories(dir);
  const auto file = (dir / "grid.csv").string();
  {
    std::ofstream f(file);
    f << "t,x_1,density\n";
    for (double t : {0.0, 1.0})
      for (int i = 0; i < 4; ++i) f << t << "," << 0.25 + 0.5 * i << "," << 0.5 << "\n";
  }
  const MarginalFlow g = read_grid_csv(file, 1.0);
  CHECK(g.total_mass_at(0.5) == doctest::Approx(1.0));
  CHECK(g.quadrature_slice(0.5).mean()(0) == doctest::Approx(1.0));
  {
    std::ofstream f(file);
    f << "t,x_1,density\n";
    for (double t : {0.0, 1.0})
      for (int i = 0; i < 4; ++i) f << t << "," << 0.25 + 0.5 * i << "," << (t > 0 ? 0.6 : 0.5) << "\n";
  }
  CHECK_THROWS(read_grid_csv(file, 1.0));
  CHECK_NOTHROW(read_grid_csv(file, 1.0, MassMode::TruncatedSigmaFinite));
}

TEST_CASE("empirical flows expose only their slice times") {
  EmpiricalData d;
  d.times = {0.0, 0.5, 1.0};
  for (int k = 0; k < 3; ++k) d.slices.push_back(samples({-1.0 * k, 1.0 * k}));
  const MarginalFlow f = MarginalFlow::empirical(1.0, d);
  CHECK_FALSE(f.time_continuous());
  CHECK(f.slice_times().size() == 3);
  CHECK(f.quadrature_slice(0.5).covariance()(0, 0) == doctest::Approx(1.0));
}
