#include "nelson/mfg.hpp"
#include "nelson/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace nelson;

namespace {

MfgProblem problem(InteractionFunctional R) {
  return MfgProblem::brownian(1.0, 1.0, CostFunction::quadratic(), std::move(R), 5);
}

MeasureSlice gauss_slice(double m, double v) {
  const MarginalFlow f = MarginalFlow::gaussian(
      1, 1.0, GaussianPath{[m](double) { return Point(Point::Constant(1, m)); },
                           [v](double) { return Matrix(Matrix::Constant(1, 1, v)); }});
  return f.quadrature_slice(0.0);
}

}  // namespace

TEST_CASE("interaction functionals are nonnegative with consistent flat derivatives") {
  const auto vt = InteractionFunctional::variance_target(2.0, [](double t) { return 1.5 + t; });
  const auto mq = InteractionFunctional::mean_field_quadratic(0.7, 0.3);
  Rng rng(8, 0);
  for (int i = 0; i < 20; ++i) {
    const MeasureSlice a = gauss_slice(rng.normal(), 0.2 + rng.uniform() * 3);
    const MeasureSlice b = gauss_slice(rng.normal(), 0.2 + rng.uniform() * 3);
    const double t = rng.uniform();
    for (const auto* R : {&vt, &mq}) {
      CHECK((*R)(t, a) >= 0.0);
      CHECK(derivative_consistency(*R, t, a, b) < 1e-4);
      CHECK(std::isfinite(R->gradient_bound(t, a, 5.0)));
    }
  }
}

TEST_CASE("flow family starts at the reference variance and is reference at eta = 0") {
  const FlowFamily f(1.0, 1.0, 5);
  Eigen::VectorXd eta(5);
  eta << 0.3, -0.2, 0.5, 0.1, -0.4;
  CHECK(f.variance(eta, 0.0) == doctest::Approx(1.0));
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(5);
  CHECK(f.variance(z, 0.7) == doctest::Approx(1.7));
  CHECK(f.quadratic_value(z) == doctest::Approx(0.0));
  const double h = 1e-6;
  CHECK(f.variance_rate(eta, 0.4) == doctest::Approx((f.variance(eta, 0.4 + h) - f.variance(eta, 0.4 - h)) / (2 * h)).epsilon(1e-6));
}

TEST_CASE("MKV objective uses the dual value and agrees with the closed form") {
  const MfgProblem pb = problem(InteractionFunctional::none());
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(5);
  CHECK(std::abs(mkv_objective(z, pb)) < 1e-8);
  Eigen::VectorXd eta(5);
  eta << 0.2, 0.4, 0.4, 0.3, 0.2;
  const MkvEvaluation e = mkv_evaluate(eta, pb);
  CHECK(e.control_value == doctest::Approx(pb.family.quadratic_value(eta)).epsilon(0.01));
}

TEST_CASE("objective is linear in lambda and ordered by the target") {
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(5);
  auto vstar = [](double t) { return 2 * (1 + t); };
  const double r1 = mkv_objective(z, problem(InteractionFunctional::variance_target(1.0, vstar)));
  const double r2 = mkv_objective(z, problem(InteractionFunctional::variance_target(2.0, vstar)));
  CHECK(r2 == doctest::Approx(2 * r1).epsilon(1e-6));
  CHECK(r1 == doctest::Approx(7.0 / 3.0).epsilon(1e-6));  // int (1+t)^2 dt
  // Matching the target variance 2(1+t) at the cost of control beats the reference.
  Eigen::VectorXd towards(5);
  towards << 0.3, 0.5, 0.6, 0.6, 0.6;
  CHECK(mkv_objective(towards, problem(InteractionFunctional::variance_target(1.0, vstar))) < r1);
}

TEST_CASE("minimizer without interaction stays at the reference") {
  MkvOptions o;
  o.min_step = 0.1;
  const MkvResult r = minimize_mkv(problem(InteractionFunctional::none()), o);
  CHECK(r.eta.norm() == 0.0);
  CHECK(std::abs(r.value) < 1e-8);
}

TEST_CASE("target equal to the reference keeps the reference optimal") {
  MkvOptions o;
  o.min_step = 0.05;
  const MkvResult r =
      minimize_mkv(problem(InteractionFunctional::variance_target(1.0, [](double t) { return 1 + t; })), o);
  CHECK(r.value < 1e-6);
}

TEST_CASE("optimal variance lies strictly between reference and target") {
  // Oracle: one-dimensional scan over the constant-log-shift direction eta = a (1, ..., 1).
  auto vstar = [](double t) { return 3 * (1 + t); };
  const MfgProblem pb = problem(InteractionFunctional::variance_target(0.5, vstar));
  double best_a = 0, best = mkv_objective(Eigen::VectorXd::Zero(5), pb);
  for (double a = 0.05; a <= 1.3; a += 0.05) {
    const double v = mkv_objective(Eigen::VectorXd::Constant(5, a), pb);
    if (v < best) best = v, best_a = a;
  }
  CHECK(best_a > 0.0);
  CHECK(best_a < std::log(3.0));
  const MkvResult r = minimize_mkv(pb);
  CHECK(r.value <= best + 1e-9);
  const double s_end = pb.family.variance(r.eta, 1.0);
  CHECK(s_end > 2.0);
  CHECK(s_end < 6.0);
}

TEST_CASE("equilibrium holds at the minimizer and fails at the reference") {
  const MfgProblem pb = problem(InteractionFunctional::variance_target(1.0, [](double t) { return 2 * (1 + t); }));
  const MkvResult r = minimize_mkv(pb);
  CHECK(r.converged);
  CHECK(r.solution.certified);
  const EquilibriumReport eq = verify_equilibrium(r.flow, pb, default_perturbations(pb.family, r.eta));
  CHECK(eq.checks.size() == 5);
  CHECK(eq.pass);
  // mu_bar = mu: both sides agree up to the solver.
  const EquilibriumReport self = verify_equilibrium(r.flow, pb, {Perturbation{"self", r.flow}});
  CHECK(self.checks[0].rhs == doctest::Approx(self.checks[0].lhs).epsilon(1e-6));
  const EquilibriumReport power =
      verify_equilibrium(pb.family.flow(Eigen::VectorXd::Zero(5)), pb, {Perturbation{"optimum", r.flow}});
  CHECK_FALSE(power.pass);
  CHECK(power.violations == 1);
}

TEST_CASE("control value is convex along flow mixtures") {
  const MfgProblem pb = problem(InteractionFunctional::none());
  Eigen::VectorXd a(5), b(5);
  a << 0.3, 0.5, 0.6, 0.6, 0.6;
  b << -0.2, -0.3, -0.3, -0.2, -0.1;
  for (const auto& c : convexity_check(pb.family.flow(a), pb.family.flow(b), pb)) CHECK(c.holds);
}
