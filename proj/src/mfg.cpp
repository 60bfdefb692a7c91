#include "nelson/mfg.hpp"

#include "nelson/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace nelson {

InteractionFunctional InteractionFunctional::variance_target(double lambda, std::function<double(double)> v_star) {
  if (!(lambda >= 0.0)) throw InvalidArgument("R.lambda must be nonnegative");
  InteractionFunctional r;
  r.kind = "variance_target";
  r.value = [=](double t, double, double m2) {
    const double d = m2 - v_star(t);
    return lambda * d * d;
  };
  r.gradient = [=](double t, double, double m2) {
    return std::array<double, 3>{0.0, 0.0, 2.0 * lambda * (m2 - v_star(t))};
  };
  return r;
}

InteractionFunctional InteractionFunctional::mean_field_quadratic(double lambda, double target) {
  if (!(lambda >= 0.0)) throw InvalidArgument("R.lambda must be nonnegative");
  InteractionFunctional r;
  r.kind = "mean_field_quadratic";
  r.value = [=](double, double m1, double) { return lambda * (m1 - target) * (m1 - target); };
  r.gradient = [=](double, double m1, double) {
    return std::array<double, 3>{0.0, 2.0 * lambda * (m1 - target), 0.0};
  };
  return r;
}

InteractionFunctional InteractionFunctional::none() {
  InteractionFunctional r;
  r.kind = "none";
  r.value = [](double, double, double) { return 0.0; };
  r.gradient = [](double, double, double) { return std::array<double, 3>{0.0, 0.0, 0.0}; };
  return r;
}

namespace {

std::array<double, 3> moments(const MeasureSlice& m) {
  double s0 = 0, s1 = 0, s2 = 0;
  for (std::size_t i = 0; i < m.points.size(); ++i) {
    const double y = m.points[i](0), w = m.weights[i];
    s0 += w;
    s1 += w * y;
    s2 += w * y * y;
  }
  return {s0, s1, s2};
}

}  // namespace

double InteractionFunctional::operator()(double t, const MeasureSlice& m) const {
  const auto mo = moments(m);
  return value(t, mo[1] / mo[0], mo[2] / mo[0]);
}

double InteractionFunctional::pairing(double t, const MeasureSlice& m, const MeasureSlice& other) const {
  const auto a = moments(m), b = moments(other);
  const auto g = gradient(t, a[1] / a[0], a[2] / a[0]);
  return g[0] * b[0] + g[1] * b[1] + g[2] * b[2];
}

double InteractionFunctional::gradient_bound(double t, const MeasureSlice& m, double radius) const {
  const auto a = moments(m);
  const auto g = gradient(t, a[1] / a[0], a[2] / a[0]);
  return std::abs(g[0]) + std::abs(g[1]) * radius + std::abs(g[2]) * radius * radius;
}

double derivative_consistency(const InteractionFunctional& R, double t, const MeasureSlice& m, const MeasureSlice& n,
                              double eps) {
  const auto a = moments(m), b = moments(n);
  const double m1 = a[1] / a[0], m2 = a[2] / a[0], n1 = b[1] / b[0], n2 = b[2] / b[0];
  const double fd = (R.value(t, m1 + eps * (n1 - m1), m2 + eps * (n2 - m2)) - R.value(t, m1, m2)) / eps;
  const auto g = R.gradient(t, m1, m2);
  const double exact = g[1] * (n1 - m1) + g[2] * (n2 - m2);
  return std::abs(fd - exact);
}

FlowFamily::FlowFamily(double s0sq, double horizon, int n_params) : s0sq_(s0sq), horizon_(horizon), n_(n_params) {
  if (!(s0sq > 0.0)) throw InvalidArgument("initial variance must be positive");
  if (!(horizon > 0.0)) throw InvalidArgument("horizon must be positive");
  if (n_params < 3) throw InvalidArgument("flow family needs at least 3 parameters");
  knots_.assign(4, 0.0);
  const int interior = n_params - 3;
  for (int i = 1; i <= interior; ++i) knots_.push_back(horizon * i / (interior + 1));
  knots_.insert(knots_.end(), 4, horizon);
}

namespace {

// Sum of eta_k B_{k+1}(t) and its derivative.
std::pair<double, double> spline_sum(const std::vector<double>& knots, const Eigen::VectorXd& eta, double t) {
  thread_local std::vector<LocalValue> vals;
  vals.clear();
  Family1D::bspline(knots).eval(t, vals);
  double s = 0, ds = 0;
  for (const auto& v : vals)
    if (v.index >= 1 && v.index - 1 < eta.size()) {
      s += eta(v.index - 1) * v.v;
      ds += eta(v.index - 1) * v.d1;
    }
  return {s, ds};
}

}  // namespace

double FlowFamily::variance(const Eigen::VectorXd& eta, double t) const {
  return (s0sq_ + t) * std::exp(spline_sum(knots_, eta, t).first);
}

double FlowFamily::variance_rate(const Eigen::VectorXd& eta, double t) const {
  const auto [s, ds] = spline_sum(knots_, eta, t);
  return std::exp(s) * (1.0 + (s0sq_ + t) * ds);
}

MarginalFlow FlowFamily::flow(const Eigen::VectorXd& eta) const {
  if (eta.size() != n_) throw InvalidArgument("flow parameter vector has the wrong length");
  const FlowFamily self = *this;
  const Eigen::VectorXd e = eta;
  return MarginalFlow::gaussian(1, horizon_,
                                GaussianPath{[](double) { return Point(Point::Zero(1)); },
                                             [self, e](double t) {
                                               Matrix m(1, 1);
                                               m(0, 0) = self.variance(e, t);
                                               return m;
                                             }});
}

double FlowFamily::quadratic_value(const Eigen::VectorXd& eta, int panels) const {
  double v = 0.0;
  for (int k = 0; k < panels; ++k) {
    const Rule1D r = gauss_legendre(6, horizon_ * k / panels, horizon_ * (k + 1) / panels);
    for (std::size_t i = 0; i < r.nodes.size(); ++i) {
      const double S = variance(eta, r.nodes[i]);
      const double c = (variance_rate(eta, r.nodes[i]) - 1.0) / (2.0 * S);
      v += r.weights[i] * 0.5 * c * c * S;
    }
  }
  return v;
}

MfgProblem MfgProblem::brownian(double s0sq, double horizon, CostFunction cost, InteractionFunctional R,
                                int n_params) {
  Point m(1);
  m(0) = 0.0;
  Matrix c(1, 1);
  c(0, 0) = s0sq;
  return MfgProblem{brownian_spec(1, horizon, InitialLaw::gaussian(m, c)),
                    std::move(cost),
                    std::move(R),
                    FlowFamily(s0sq, horizon, n_params),
                    BasisOptions{},
                    SolverOptions{},
                    QuadratureOptions{}};
}

namespace {

template <class F>
double time_integral(const MfgProblem& problem, double horizon, F&& f) {
  double acc = 0.0;
  const int panels = problem.time_panels;
  for (int k = 0; k < panels; ++k) {
    const Rule1D r = gauss_legendre(4, horizon * k / panels, horizon * (k + 1) / panels);
    for (std::size_t i = 0; i < r.nodes.size(); ++i) acc += r.weights[i] * f(r.nodes[i]);
  }
  return acc;
}

SolverOptions inner_options(const MfgProblem& problem, const std::optional<Eigen::VectorXd>& warm) {
  SolverOptions so = problem.solver;
  so.compute_norm = false;
  if (warm) so.warm_start = warm;
  return so;
}

DualSolution solve_value(const MarginalFlow& flow, const MfgProblem& problem,
                         const std::optional<Eigen::VectorXd>& warm = std::nullopt) {
  const TestFunctionBasis basis = TestFunctionBasis::build(flow, problem.basis);
  std::optional<Eigen::VectorXd> w = warm;
  if (w && w->size() != basis.size()) w.reset();
  return maximize_dual(basis, problem.spec, flow, problem.cost, inner_options(problem, w));
}

}  // namespace

double interaction_integral(const MfgProblem& problem, const MarginalFlow& flow) {
  return time_integral(problem, flow.horizon(),
                       [&](double t) { return problem.R(t, flow.quadrature_slice(t, problem.quad)); });
}

double interaction_pairing(const MfgProblem& problem, const MarginalFlow& mu, const MarginalFlow& nu) {
  return time_integral(problem, mu.horizon(), [&](double t) {
    return problem.R.pairing(t, mu.quadrature_slice(t, problem.quad), nu.quadrature_slice(t, problem.quad));
  });
}

MkvEvaluation mkv_evaluate(const Eigen::VectorXd& eta, const MfgProblem& problem,
                           const std::optional<Eigen::VectorXd>& warm) {
  const MarginalFlow flow = problem.family.flow(eta);
  try {
    DualSolution sol = solve_value(flow, problem, warm);
    const double inter = interaction_integral(problem, flow);
    const double v = sol.dual_value;
    return MkvEvaluation{v + inter, v, inter, std::move(sol)};
  } catch (const DualConvergenceError& e) {
    std::ostringstream os;
    os << "inner dual solve did not converge at eta = [" << eta.transpose() << "]: " << e.what();
    throw ConvergenceError(os.str());
  }
}

double mkv_objective(const Eigen::VectorXd& eta, const MfgProblem& problem) {
  return mkv_evaluate(eta, problem).value;
}

MkvResult minimize_mkv(const MfgProblem& problem, const MkvOptions& opts, const std::optional<Eigen::VectorXd>& eta0) {
  const int n = problem.family.size();
  Eigen::VectorXd eta = eta0 ? *eta0 : Eigen::VectorXd::Zero(n);
  if (eta.size() != n) throw InvalidArgument("initial eta has the wrong length");
  MkvEvaluation best = mkv_evaluate(eta, problem);
  int evals = 1;
  std::vector<double> trace{best.value};
  double step = opts.initial_step;
  while (step >= opts.min_step && evals < opts.max_evaluations) {
    bool moved = false;
    for (int k = 0; k < n && evals < opts.max_evaluations; ++k) {
      for (double sgn : {1.0, -1.0}) {
        Eigen::VectorXd cand = eta;
        cand(k) = std::clamp(cand(k) + sgn * step, -opts.bound, opts.bound);
        if (cand(k) == eta(k)) continue;
        ++evals;
        try {
          MkvEvaluation e = mkv_evaluate(cand, problem, best.solution.theta);
          if (e.value < best.value) {
            eta = cand;
            best = std::move(e);
            trace.push_back(best.value);
            moved = true;
            break;
          }
        } catch (const ConvergenceError&) {
          // treated as a worse point
        }
        if (evals >= opts.max_evaluations) break;
      }
    }
    if (!moved) step *= 0.5;
  }
  const MarginalFlow flow = problem.family.flow(eta);
  return MkvResult{eta, flow, std::move(best.solution), best.value, best.control_value, best.interaction,
                   evals, step < opts.min_step, trace};
}

std::vector<Perturbation> default_perturbations(const FlowFamily& family, const Eigen::VectorXd& eta) {
  const double T = family.horizon();
  auto make = [&](std::string name, std::function<double(double)> mean, std::function<double(double)> factor) {
    const FlowFamily f = family;
    const Eigen::VectorXd e = eta;
    return Perturbation{std::move(name),
                        MarginalFlow::gaussian(1, T,
                                               GaussianPath{[mean](double t) {
                                                              Point m(1);
                                                              m(0) = mean(t);
                                                              return m;
                                                            },
                                                            [f, e, factor](double t) {
                                                              Matrix c(1, 1);
                                                              c(0, 0) = f.variance(e, t) * factor(t);
                                                              return c;
                                                            }})};
  };
  auto zero = [](double) { return 0.0; };
  auto one = [](double) { return 1.0; };
  std::vector<Perturbation> out;
  out.push_back(make("mean_shift_plus", [T](double t) { return 0.2 * t / T; }, one));
  out.push_back(make("mean_shift_minus", [T](double t) { return -0.2 * t / T; }, one));
  for (double f : {0.8, 1.25}) {
    std::ostringstream os;
    os << "variance_scale_" << f;
    out.push_back(make(os.str(), zero, [T, f](double t) { return 1.0 + (f - 1.0) * t / T; }));
  }
  out.push_back(make("variance_bump", zero, [T](double t) {
    const double u = (t - 0.5 * T) / (0.25 * T);
    return std::abs(u) < 1 ? std::exp(0.3 * std::pow(1 - u * u, 3)) : 1.0;
  }));
  return out;
}

EquilibriumReport verify_equilibrium(const MarginalFlow& mu, const MfgProblem& problem,
                                     const std::vector<Perturbation>& perturbations) {
  if (perturbations.empty()) throw InvalidArgument("verify_equilibrium needs at least one perturbation");
  EquilibriumReport rep;
  const DualSolution base = solve_value(mu, problem);
  rep.value_mu = base.dual_value;
  const double own = interaction_pairing(problem, mu, mu);
  rep.checks.resize(perturbations.size());
  std::vector<double> values(perturbations.size(), 0.0);
  // Independent solves; the dual solver already uses the thread pool inside.
  for (std::size_t i = 0; i < perturbations.size(); ++i) {
    EquilibriumCheck& c = rep.checks[i];
    c.name = perturbations[i].name;
    c.lhs = rep.value_mu + own;
    try {
      const DualSolution s = solve_value(perturbations[i].flow, problem, base.theta);
      values[i] = s.dual_value;
      c.rhs = s.dual_value + interaction_pairing(problem, mu, perturbations[i].flow);
    } catch (const DualConvergenceError&) {
      c.inconclusive = true;
    }
  }
  double vmax = std::abs(rep.value_mu);
  for (double v : values) vmax = std::max(vmax, std::abs(v));
  rep.slack = 2.0 * (0.01 * vmax + 1e-6);
  rep.pass = true;
  for (auto& c : rep.checks) {
    if (c.inconclusive) {
      rep.pass = false;
      continue;
    }
    c.holds = c.lhs <= c.rhs + rep.slack;
    if (!c.holds) {
      ++rep.violations;
      rep.pass = false;
    }
  }
  return rep;
}

std::vector<ConvexityCheck> convexity_check(const MarginalFlow& mu, const MarginalFlow& nu, const MfgProblem& problem) {
  const DualSolution a = solve_value(mu, problem);
  const DualSolution b = solve_value(nu, problem, a.theta);
  std::vector<ConvexityCheck> out;
  for (double eps : {0.25, 0.5}) {
    const MarginalFlow mix = MarginalFlow::mixture(mu, nu, eps);
    const DualSolution m = solve_value(mix, problem, a.theta);
    ConvexityCheck c;
    c.eps = eps;
    c.mixed = m.dual_value;
    c.chord = eps * b.dual_value + (1 - eps) * a.dual_value;
    const double slack =
        2.0 * (0.01 * std::max({std::abs(a.dual_value), std::abs(b.dual_value), std::abs(m.dual_value)}) + 1e-6);
    c.holds = c.mixed <= c.chord + slack;
    out.push_back(c);
  }
  return out;
}

}  // namespace nelson
