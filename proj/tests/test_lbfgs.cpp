#include "nelson/lbfgs.hpp"

#include <doctest.h>

#include <cmath>

using namespace nelson;

TEST_CASE("Rosenbrock minimum") {
  auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g.resize(2);
    const double a = 1 - x(0), b = x(1) - x(0) * x(0);
    g(0) = -2 * a - 400 * x(0) * b;
    g(1) = 200 * b;
    return a * a + 100 * b * b;
  };
  LbfgsOptions o;
  o.max_iter = 2000;
  o.grad_tol = 1e-10;
  const LbfgsResult r = lbfgs_minimize(f, Eigen::Vector2d(-1.2, 1.0), o);
  CHECK(r.converged);
  CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.x(1) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("ill-conditioned quadratic") {
  const int n = 30;
  Eigen::VectorXd d(n), c(n);
  for (int i = 0; i < n; ++i) d(i) = std::pow(10.0, 4.0 * i / (n - 1)), c(i) = std::sin(i + 1.0);
  auto f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = d.cwiseProduct(x) - c;
    return 0.5 * x.dot(d.cwiseProduct(x)) - c.dot(x);
  };
  LbfgsOptions o;
  o.grad_tol = 1e-9;
  o.max_iter = 5000;  // unit steps on a condition number of 1e4
  const LbfgsResult r = lbfgs_minimize(f, Eigen::VectorXd::Zero(n), o);
  CHECK(r.converged);
    CHECK((r.x - c.cwiseQuotient(d)).lpNorm<Eigen::Infinity>() <= 1e-9);
  // Objective decreases monotonically along the log.
  for (std::size_t i = 1; i < r.log.size(); ++i) CHECK(r.log[i].objective <= r.log[i - 1].objective + 1e-12 * std::abs(r.log[i - 1].objective));
}

TEST_CASE("custom stopping rule") {
  auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = 2 * x;
    return x.squaredNorm();
  };
  LbfgsOptions o;
  o.stop = [](const Eigen::VectorXd& x, const Eigen::VectorXd&) { return x.squaredNorm() < 1e-3; };
  const LbfgsResult r = lbfgs_minimize(f, Eigen::Vector3d(1, 2, 3), o);
  CHECK(r.f < 1e-3);
}
