#pragma once

#include "nelson/cost.hpp"
#include "nelson/diffusion.hpp"
#include "nelson/function_space.hpp"
#include "nelson/lbfgs.hpp"
#include "nelson/marginals.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <memory>
#include <optional>
#include <vector>

namespace nelson {

/// The dual objective J(theta) = int int [L_t w - g(t, x, sigma' grad w)] dmu dt
/// restricted to the span of a basis, on a quadrature rule fixed at
/// construction. Per node the basis jets are precomputed, so objective and
/// gradient are sparse sums and the gradient is exact for the discrete J.
class DualProblem {
 public:
  DualProblem(TestFunctionBasis basis, DiffusionSpec spec, MarginalFlow flow, CostFunction cost,
              const QuadratureOptions& quad = {});

  int size() const { return basis_.size(); }
  const TestFunctionBasis& basis() const { return basis_; }
  const DiffusionSpec& spec() const { return spec_; }
  const MarginalFlow& flow() const { return flow_; }
  const CostFunction& cost() const { return cost_; }
  int n_nodes() const { return static_cast<int>(nodes_.size()); }

  double objective(const Eigen::VectorXd& theta) const;
  /// Objective value; writes dJ/dtheta_k = int int [L_t phi_k - grad g(sigma' Psi)' sigma' grad phi_k].
  double objective_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const;
  /// Energy form int int g*(t, x, grad g(t, x, sigma' Psi)) dmu dt.
  double energy_value(const Eigen::VectorXd& theta) const;
  /// c_k = int int L_t phi_k dmu dt (the gradient at theta = 0).
  const Eigen::VectorXd& linear_term() const { return linear_; }
  /// int int (1 + |x|) dmu dt on the same rule.
  double foc_scale() const { return foc_scale_; }
  /// Curvature proxy int int |sigma' grad phi_k|^2 dmu dt per element.
  const Eigen::VectorXd& diagonal_scale() const { return diag_; }
  /// Metric G_kj = int int (sigma' grad phi_k)'(sigma' grad phi_j) dmu dt
  /// (the Hessian of -J for the quadratic cost).
  Eigen::SparseMatrix<double> gram() const;

 private:
  struct Term {
    int index;
    double L;
    Point sg;  // sigma' grad phi_k
  };
  struct Node {
    double t;
    Point x;
    double weight;
    int begin, end;  // range in terms_
  };

  void fields(const Eigen::VectorXd& theta, std::vector<Point>& z) const;

  TestFunctionBasis basis_;
  DiffusionSpec spec_;
  MarginalFlow flow_;
  CostFunction cost_;
  std::vector<Node> nodes_;
  std::vector<Term> terms_;
  Eigen::VectorXd linear_;
  Eigen::VectorXd diag_;
  double foc_scale_ = 0.0;
};

struct SolverOptions {
  double tol_foc_rel = 1e-6;  // tol_foc = tol_foc_rel * foc_scale
  int max_iter = 500;         // per attempt
  int restarts = 3;           // total attempts
  int memory = 20;
  std::uint64_t seed = 1;
  std::optional<Eigen::VectorXd> warm_start;
  enum class Preconditioner { None, Diagonal, Gram };
  /// Gram: ascent in coordinates u = L' theta with G = L L' (sparse Cholesky).
  Preconditioner precondition = Preconditioner::Gram;
  bool compute_norm = true;   // Luxemburg norm of Psi in the solution
  /// The ascent aims at polish * tol_foc so that theta . grad J, the gap
  /// between the objective and energy forms, is well below the value.
  /// Certification still uses tol_foc.
  double polish = 1e-3;
};

struct DualSolution {
  TestFunctionBasis basis;
  Eigen::VectorXd theta;
  double dual_value = 0.0;
  double energy_value = 0.0;
  double grad_norm_at_opt = 0.0;  // max-norm of dJ/dtheta
  double tol_foc = 0.0;
  double luxemburg_norm_psi = 0.0;
  int iterations = 0;
  int attempts = 0;
  bool certified = false;
  std::vector<LbfgsIterate> log;  // J per iterate; grad_norm in preconditioned coordinates

  /// Psi(t, x) = grad w_theta(t, x); zero outside the basis support.
  Point psi(double t, const Point& x) const { return basis.eval_grad_w(theta, t, x); }
  VectorField psi_field() const;
};

/// Raised when no attempt reaches the FOC tolerance; carries the best iterate.
class DualConvergenceError : public ConvergenceError {
 public:
  DualConvergenceError(const std::string& what, DualSolution best)
      : ConvergenceError(what), best(std::move(best)) {}
  DualSolution best;
};

/// Limited-memory quasi-Newton ascent on J with Armijo backtracking. The
/// first attempt starts from the warm start (or 0); further attempts restart
/// from the best iterate with a small seeded perturbation and fresh memory.
/// Throws DualConvergenceError if max |dJ/dtheta| > tol_foc after all attempts.
DualSolution maximize_dual(const DualProblem& problem, const SolverOptions& opts = {});
DualSolution maximize_dual(const TestFunctionBasis& basis, const DiffusionSpec& spec, const MarginalFlow& flow,
                           const CostFunction& cost, const SolverOptions& opts = {});

double dual_objective(const Eigen::VectorXd& theta, const TestFunctionBasis& basis, const DiffusionSpec& spec,
                      const MarginalFlow& flow, const CostFunction& cost);
Eigen::VectorXd dual_gradient(const Eigen::VectorXd& theta, const TestFunctionBasis& basis, const DiffusionSpec& spec,
                              const MarginalFlow& flow, const CostFunction& cost);
double dual_value_energy(const DualSolution& sol, const DiffusionSpec& spec, const MarginalFlow& flow,
                         const CostFunction& cost);

/// Attainment diagnostic: optimal value on the given basis and on the basis
/// with time and space knot counts doubled.
struct RefinementDelta {
  double coarse = 0.0;
  double fine = 0.0;
  double delta = 0.0;  // fine - coarse
};
RefinementDelta refinement_delta(const BasisOptions& basis_opts, const DiffusionSpec& spec, const MarginalFlow& flow,
                                 const CostFunction& cost, const SolverOptions& opts = {});

}  // namespace nelson
