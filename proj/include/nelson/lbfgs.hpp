#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace nelson {

struct LbfgsOptions {
  int memory = 20;
  int max_iter = 500;
  double grad_tol = 1e-8;  // stop when max |grad| <= grad_tol
  double armijo = 1e-4;
  int max_backtracks = 50;
  /// Optional replacement for the grad_tol test, given (x, grad).
  std::function<bool(const Eigen::VectorXd&, const Eigen::VectorXd&)> stop;
};

struct LbfgsIterate {
  int iter;
  double objective;
  double grad_norm;  // max-norm
  double step;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
  bool stalled = false;  // line search could not decrease f
  std::vector<LbfgsIterate> log;
};

/// Objective returning f(x) and writing grad f(x) into the second argument.
using ObjectiveFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

/// Limited-memory BFGS minimization with Armijo backtracking, plus an
/// approximate Wolfe acceptance once decreases reach roundoff. Accepted steps
/// never increase f by more than 1e-12 |f|. The iterate log starts with the initial point.
LbfgsResult lbfgs_minimize(const ObjectiveFn& fg, Eigen::VectorXd x0, const LbfgsOptions& opts = {});

}  // namespace nelson
