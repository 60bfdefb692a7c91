#include "nelson/dual_solver.hpp"

#include "nelson/rng.hpp"

#include <cmath>
#include <sstream>

namespace nelson {

DualProblem::DualProblem(TestFunctionBasis basis, DiffusionSpec spec, MarginalFlow flow, CostFunction cost,
                         const QuadratureOptions& quad)
    : basis_(std::move(basis)), spec_(std::move(spec)), flow_(std::move(flow)), cost_(std::move(cost)) {
  if (basis_.dim() != flow_.dim() || spec_.dim != flow_.dim())
    throw InvalidArgument("basis, diffusion and flow dimensions differ");
  std::vector<std::vector<double>> space_breaks;
  for (const auto& f : basis_.space_families()) space_breaks.push_back(f.breaks());
  const auto rule = spacetime_rule(flow_, basis_.time_breaks(), quad, space_breaks);
  linear_ = Eigen::VectorXd::Zero(size());
  diag_ = Eigen::VectorXd::Zero(size());
  std::vector<ElementJet> els;
  for (const auto& sn : rule) {
    foc_scale_ += sn.weight * (1.0 + sn.x.norm());
    basis_.eval_elements(sn.t, sn.x, els);
    if (els.empty()) continue;
    const Matrix sig_t = spec_.sig(sn.t, sn.x).transpose();
    Node n{sn.t, sn.x, sn.weight, static_cast<int>(terms_.size()), 0};
    for (const auto& e : els) {
      TestFunctionJet j;
      j.value = e.value;
      j.dt = e.dt;
      j.grad = e.grad;
      j.hess = e.hess;
      Term term{e.index, apply_generator(spec_, j, sn.t, sn.x), Point(sig_t * e.grad)};
      linear_(e.index) += sn.weight * term.L;
      diag_(e.index) += sn.weight * term.sg.squaredNorm();
      terms_.push_back(std::move(term));
    }
    n.end = static_cast<int>(terms_.size());
    nodes_.push_back(std::move(n));
  }
}

void DualProblem::fields(const Eigen::VectorXd& theta, std::vector<Point>& z) const {
  if (theta.size() != size()) throw InvalidArgument("coefficient vector length does not match basis size");
  z.resize(nodes_.size());
  const int n = static_cast<int>(nodes_.size());
  const int q = flow_.dim();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    Point zi = Point::Zero(q);
    for (int k = nodes_[i].begin; k < nodes_[i].end; ++k) zi += theta(terms_[k].index) * terms_[k].sg;
    z[i] = zi;
  }
}

double DualProblem::objective(const Eigen::VectorXd& theta) const {
  std::vector<Point> z;
  fields(theta, z);
  const int n = static_cast<int>(nodes_.size());
  std::vector<double> gv(n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) gv[i] = cost_.g(nodes_[i].t, nodes_[i].x, z[i]);
  double s = linear_.dot(theta);
  for (int i = 0; i < n; ++i) s -= nodes_[i].weight * gv[i];
  return s;
}

double DualProblem::objective_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
  std::vector<Point> z;
  fields(theta, z);
  const int n = static_cast<int>(nodes_.size());
  std::vector<double> gv(n);
  std::vector<Point> dg(n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    gv[i] = cost_.g(nodes_[i].t, nodes_[i].x, z[i]);
    dg[i] = cost_.grad_g(nodes_[i].t, nodes_[i].x, z[i]);
  }
  // Serial accumulation keeps the result independent of the worker count.
  grad = linear_;
  double s = linear_.dot(theta);
  for (int i = 0; i < n; ++i) {
    const double w = nodes_[i].weight;
    s -= w * gv[i];
    for (int k = nodes_[i].begin; k < nodes_[i].end; ++k) grad(terms_[k].index) -= w * dg[i].dot(terms_[k].sg);
  }
  if (!std::isfinite(s)) throw Error("dual objective is not finite");
  return s;
}

Eigen::VectorXd DualProblem::gradient(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd g;
  objective_and_gradient(theta, g);
  return g;
}

double DualProblem::energy_value(const Eigen::VectorXd& theta) const {
  std::vector<Point> z;
  fields(theta, z);
  const int n = static_cast<int>(nodes_.size());
  std::vector<double> e(n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const Point y = cost_.grad_g(nodes_[i].t, nodes_[i].x, z[i]);
    e[i] = cost_.gstar(nodes_[i].t, nodes_[i].x, y);
  }
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += nodes_[i].weight * e[i];
  return s;
}

VectorField DualSolution::psi_field() const {
  auto b = std::make_shared<TestFunctionBasis>(basis);
  auto th = std::make_shared<Eigen::VectorXd>(theta);
  return [b, th](double t, const Point& x) { return b->eval_grad_w(*th, t, x); };
}

Eigen::SparseMatrix<double> DualProblem::gram() const {
  std::vector<Eigen::Triplet<double>> trip;
  for (const auto& nd : nodes_)
    for (int a = nd.begin; a < nd.end; ++a)
      for (int b = nd.begin; b < nd.end; ++b)
        trip.emplace_back(terms_[a].index, terms_[b].index, nd.weight * terms_[a].sg.dot(terms_[b].sg));
  Eigen::SparseMatrix<double> G(size(), size());
  G.setFromTriplets(trip.begin(), trip.end());
  return G;
}

namespace {

// Linear change of variables theta = M u used to condition the ascent.
class Metric {
 public:
  Metric(const DualProblem& problem, SolverOptions::Preconditioner kind) : kind_(kind) {
    const int n = problem.size();
    if (kind_ == SolverOptions::Preconditioner::Diagonal) {
      d_.resize(n);
      const double mx = problem.diagonal_scale().maxCoeff();
      for (int k = 0; k < n; ++k) d_(k) = 1.0 / std::sqrt(std::max(problem.diagonal_scale()(k), 1e-12 * mx + 1e-300));
    } else if (kind_ == SolverOptions::Preconditioner::Gram) {
      Eigen::SparseMatrix<double> G = problem.gram();
      double mx = 0.0;
      for (int k = 0; k < n; ++k) mx = std::max(mx, G.coeff(k, k));
      // Elements never seen by the rule get a unit diagonal; a tiny ridge
      // keeps the factorization definite.
      for (int k = 0; k < n; ++k) G.coeffRef(k, k) += 1e-12 * mx + (G.coeff(k, k) > 0.0 ? 0.0 : 1.0);
      llt_.compute(G);
      if (llt_.info() != Eigen::Success) throw Error("Gram preconditioner factorization failed");
    }
  }
  // theta = M u; with G = P' L L' P we take M = P' L^{-T}.
  Eigen::VectorXd theta(const Eigen::VectorXd& u) const {
    switch (kind_) {
      case SolverOptions::Preconditioner::None: return u;
      case SolverOptions::Preconditioner::Diagonal: return d_.cwiseProduct(u);
      default: {
        Eigen::VectorXd y = llt_.matrixU().solve(u);
        return llt_.permutationPinv() * y;
      }
    }
  }
  Eigen::VectorXd u(const Eigen::VectorXd& theta) const {
    switch (kind_) {
      case SolverOptions::Preconditioner::None: return theta;
      case SolverOptions::Preconditioner::Diagonal: return theta.cwiseQuotient(d_);
      default: {
        Eigen::VectorXd y = llt_.permutationP() * theta;
        return llt_.matrixU() * y;
      }
    }
  }
  // grad_u = M' grad_theta.
  Eigen::VectorXd grad_u(const Eigen::VectorXd& gt) const {
    switch (kind_) {
      case SolverOptions::Preconditioner::None: return gt;
      case SolverOptions::Preconditioner::Diagonal: return d_.cwiseProduct(gt);
      default: {
        Eigen::VectorXd y = llt_.permutationP() * gt;
        return llt_.matrixL().solve(y);
      }
    }
  }
  Eigen::VectorXd grad_theta(const Eigen::VectorXd& gu) const {
    switch (kind_) {
      case SolverOptions::Preconditioner::None: return gu;
      case SolverOptions::Preconditioner::Diagonal: return gu.cwiseQuotient(d_);
      default: {
        Eigen::VectorXd y = llt_.matrixL() * gu;
        return llt_.permutationPinv() * y;
      }
    }
  }

 private:
  SolverOptions::Preconditioner kind_;
  Eigen::VectorXd d_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt_;
};

}  // namespace

DualSolution maximize_dual(const DualProblem& problem, const SolverOptions& opts) {
  const int n = problem.size();
  const double tol = opts.tol_foc_rel * problem.foc_scale();
  const Metric M(problem, opts.precondition);
  Eigen::VectorXd grad_theta(n);
  ObjectiveFn fg = [&](const Eigen::VectorXd& u, Eigen::VectorXd& gu) {
    const double J = problem.objective_and_gradient(M.theta(u), grad_theta);
    gu = -M.grad_u(grad_theta);
    return -J;
  };
  LbfgsOptions lo;
  lo.memory = opts.memory;
  lo.max_iter = opts.max_iter;
  lo.stop = [&](const Eigen::VectorXd&, const Eigen::VectorXd& gu) {
    return M.grad_theta(gu).lpNorm<Eigen::Infinity>() <= opts.polish * tol;
  };

  Eigen::VectorXd start = Eigen::VectorXd::Zero(n);
  if (opts.warm_start) {
    if (opts.warm_start->size() != n) throw InvalidArgument("warm start has wrong length");
    start = *opts.warm_start;
  }
  Rng rng(opts.seed, 77);
  Eigen::VectorXd best_u = M.u(start);
  double best_f = INFINITY, best_gn = INFINITY;
  std::vector<LbfgsIterate> log;
  int iterations = 0, attempts = 0;
  bool certified = false;
  for (int a = 0; a < std::max(1, opts.restarts) && !certified; ++a) {
    ++attempts;
    Eigen::VectorXd u0 = best_u;
    if (a > 0) {
      const double amp = 1e-3 * std::max(1.0, best_u.lpNorm<Eigen::Infinity>());
      for (int k = 0; k < n; ++k) u0(k) += amp * rng.normal();
    }
    const LbfgsResult r = lbfgs_minimize(fg, u0, lo);
    for (const auto& it : r.log)
      log.push_back({iterations + it.iter, -it.objective, it.grad_norm, it.step});
    iterations += r.iterations;
    const double gn = M.grad_theta(r.grad).lpNorm<Eigen::Infinity>();
    if (r.f < best_f || gn <= tol) {
      best_f = r.f;
      best_u = r.x;
      best_gn = gn;
    }
    certified = best_gn <= tol;
  }
  DualSolution sol{problem.basis(), M.theta(best_u)};
  Eigen::VectorXd g;
  sol.dual_value = problem.objective_and_gradient(sol.theta, g);
  sol.grad_norm_at_opt = g.lpNorm<Eigen::Infinity>();
  sol.energy_value = problem.energy_value(sol.theta);
  sol.tol_foc = tol;
  sol.iterations = iterations;
  sol.attempts = attempts;
  sol.certified = sol.grad_norm_at_opt <= tol;
  sol.log = std::move(log);
  if (opts.compute_norm) {
    try {
      sol.luxemburg_norm_psi = luxemburg_norm(problem.flow(), problem.spec(), problem.cost(), sol.psi_field());
    } catch (const Error&) {
      sol.luxemburg_norm_psi = INFINITY;
    }
  }
  if (!sol.certified) {
    std::ostringstream os;
    os << "dual ascent did not reach the first-order tolerance: max|grad| = " << sol.grad_norm_at_opt
       << " > tol_foc = " << tol << " after " << iterations << " iterations";
    throw DualConvergenceError(os.str(), std::move(sol));
  }
  return sol;
}

DualSolution maximize_dual(const TestFunctionBasis& basis, const DiffusionSpec& spec, const MarginalFlow& flow,
                           const CostFunction& cost, const SolverOptions& opts) {
  return maximize_dual(DualProblem(basis, spec, flow, cost), opts);
}

double dual_objective(const Eigen::VectorXd& theta, const TestFunctionBasis& basis, const DiffusionSpec& spec,
                      const MarginalFlow& flow, const CostFunction& cost) {
  return DualProblem(basis, spec, flow, cost).objective(theta);
}

Eigen::VectorXd dual_gradient(const Eigen::VectorXd& theta, const TestFunctionBasis& basis, const DiffusionSpec& spec,
                              const MarginalFlow& flow, const CostFunction& cost) {
  return DualProblem(basis, spec, flow, cost).gradient(theta);
}

double dual_value_energy(const DualSolution& sol, const DiffusionSpec& spec, const MarginalFlow& flow,
                         const CostFunction& cost) {
  return DualProblem(sol.basis, spec, flow, cost).energy_value(sol.theta);
}

RefinementDelta refinement_delta(const BasisOptions& basis_opts, const DiffusionSpec& spec, const MarginalFlow& flow,
                                 const CostFunction& cost, const SolverOptions& opts) {
  auto value = [&](const BasisOptions& bo) {
    try {
      return maximize_dual(TestFunctionBasis::build(flow, bo), spec, flow, cost, opts).dual_value;
    } catch (const DualConvergenceError& e) {
      return e.best.dual_value;
    }
  };
  BasisOptions fine = basis_opts;
  fine.time_knots = 2 * basis_opts.time_knots - 1;
  fine.space_knots = 2 * basis_opts.space_knots - 1;
  RefinementDelta d;
  d.coarse = value(basis_opts);
  d.fine = value(fine);
  d.delta = d.fine - d.coarse;
  return d;
}

}  // namespace nelson
