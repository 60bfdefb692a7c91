#pragma once

#include "nelson/cost.hpp"
#include "nelson/diffusion.hpp"
#include "nelson/dual_solver.hpp"
#include "nelson/marginals.hpp"

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace nelson {

/// Mean-field interaction R_t[m] depending on a one-dimensional slice through
/// its first two moments. Its flat derivative is the quadratic
/// grad R_t[m](y) = a + b y + c y^2.
struct InteractionFunctional {
  std::string kind;
  std::function<double(double t, double m1, double m2)> value;
  /// Returns (a, b, c).
  std::function<std::array<double, 3>(double t, double m1, double m2)> gradient;

  /// lambda (int y^2 dm - v*(t))^2.
  static InteractionFunctional variance_target(double lambda, std::function<double(double)> v_star);
  /// lambda (int y dm - target)^2.
  static InteractionFunctional mean_field_quadratic(double lambda, double target = 0.0);
  static InteractionFunctional none();

  double operator()(double t, const MeasureSlice& m) const;
  /// int grad R_t[m] d(other).
  double pairing(double t, const MeasureSlice& m, const MeasureSlice& other) const;
  /// sup |grad R_t[m](y)| over |y| <= radius.
  double gradient_bound(double t, const MeasureSlice& m, double radius) const;
};

/// Zero-mean Gaussian flows N(0, S_eta(t)) with
/// log S_eta(t) = log(s0^2 + t) + sum_k eta_k B_k(t), the B_k clamped cubic
/// splines on [0, T] that vanish at t = 0 (the initial law stays fixed).
class FlowFamily {
 public:
  FlowFamily(double s0sq, double horizon, int n_params);
  int size() const { return n_; }
  double horizon() const { return horizon_; }
  double s0sq() const { return s0sq_; }
  double variance(const Eigen::VectorXd& eta, double t) const;
  double variance_rate(const Eigen::VectorXd& eta, double t) const;
  MarginalFlow flow(const Eigen::VectorXd& eta) const;
  /// Closed form of the quadratic-cost value of the flow: int c^2 S / 2 dt.
  double quadratic_value(const Eigen::VectorXd& eta, int panels = 128) const;

 private:
  double s0sq_, horizon_;
  int n_;
  std::vector<double> knots_;
};

struct MfgProblem {
  DiffusionSpec spec;  // one-dimensional Brownian reference started at N(0, s0^2)
  CostFunction cost;
  InteractionFunctional R;
  FlowFamily family;
  BasisOptions basis;
  SolverOptions solver;
  QuadratureOptions quad;
  int time_panels = 32;  // Gauss-Legendre panels for int R dt

  static MfgProblem brownian(double s0sq, double horizon, CostFunction cost, InteractionFunctional R,
                             int n_params = 5);
};

/// int_0^T R_t[mu_t] dt.
double interaction_integral(const MfgProblem& problem, const MarginalFlow& flow);
/// int_0^T int grad R_t[mu_t] d(nu_t) dt.
double interaction_pairing(const MfgProblem& problem, const MarginalFlow& mu, const MarginalFlow& nu);

struct MkvEvaluation {
  double value = 0.0;        // dual value + int R
  double control_value = 0.0;
  double interaction = 0.0;
  DualSolution solution;
};

/// value(P[mu(eta)]) + int R_t[mu_t] dt, the first term by the dual solver.
MkvEvaluation mkv_evaluate(const Eigen::VectorXd& eta, const MfgProblem& problem,
                           const std::optional<Eigen::VectorXd>& warm = std::nullopt);
double mkv_objective(const Eigen::VectorXd& eta, const MfgProblem& problem);

struct MkvOptions {
  double initial_step = 0.5;
  double min_step = 2e-3;
  double bound = 3.0;  // |eta_k| <= bound
  int max_evaluations = 400;
};

struct MkvResult {
  Eigen::VectorXd eta;
  MarginalFlow flow;
  DualSolution solution;
  double value = 0.0;
  double control_value = 0.0;
  double interaction = 0.0;
  int evaluations = 0;
  bool converged = false;  // step fell below min_step within budget
  std::vector<double> trace;  // best value after each accepted move
};

/// Compass search over eta, warm-starting each inner solve from the last one.
MkvResult minimize_mkv(const MfgProblem& problem, const MkvOptions& opts = {},
                       const std::optional<Eigen::VectorXd>& eta0 = std::nullopt);

struct Perturbation {
  std::string name;
  MarginalFlow flow;
};

/// Mean shifts +-0.2 t/T, variance scalings S (1 + (f - 1) t/T) for
/// f in {0.8, 1.25}, and S exp(0.3 bump) with a bump centred at T/2.
std::vector<Perturbation> default_perturbations(const FlowFamily& family, const Eigen::VectorXd& eta);

struct EquilibriumCheck {
  std::string name;
  double lhs = 0.0;  // value(mu) + int grad R[mu] d mu
  double rhs = 0.0;  // value(mu_bar) + int grad R[mu] d mu_bar
  bool holds = false;
  bool inconclusive = false;
};

struct EquilibriumReport {
  double slack = 0.0;
  double value_mu = 0.0;
  std::vector<EquilibriumCheck> checks;
  bool pass = false;  // every conclusive check holds and none is inconclusive
  int violations = 0;
};

/// Slack = 2 (0.01 max|value| + 1e-6) over the values involved.
EquilibriumReport verify_equilibrium(const MarginalFlow& mu, const MfgProblem& problem,
                                     const std::vector<Perturbation>& perturbations);

struct ConvexityCheck {
  double eps = 0.0;
  double mixed = 0.0;
  double chord = 0.0;
  bool holds = false;
};

/// value(mu + eps (nu - mu)) <= eps value(nu) + (1 - eps) value(mu) + slack at
/// eps in {0.25, 0.5}.
std::vector<ConvexityCheck> convexity_check(const MarginalFlow& mu, const MarginalFlow& nu, const MfgProblem& problem);

/// Finite-difference check of the flat derivative: returns
/// |(R[m + eps (n - m)] - R[m]) / eps - int grad R[m] d(n - m)|.
double derivative_consistency(const InteractionFunctional& R, double t, const MeasureSlice& m,
                              const MeasureSlice& n, double eps = 1e-6);

}  // namespace nelson
