#include "nelson/lbfgs.hpp"

#include <cmath>
#include <deque>

namespace nelson {

LbfgsResult lbfgs_minimize(const ObjectiveFn& fg, Eigen::VectorXd x0, const LbfgsOptions& opts) {
  LbfgsResult r;
  r.x = std::move(x0);
  r.grad.resize(r.x.size());
  r.f = fg(r.x, r.grad);
  r.log.push_back({0, r.f, r.grad.lpNorm<Eigen::Infinity>(), 0.0});

  std::deque<Eigen::VectorXd> S, Y;
  std::deque<double> rho;
  Eigen::VectorXd g_new(r.x.size()), x_new;
  std::vector<double> alpha;
  auto done = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
    return opts.stop ? opts.stop(x, g) : g.lpNorm<Eigen::Infinity>() <= opts.grad_tol;
  };

  for (int it = 1; it <= opts.max_iter; ++it) {
    if (done(r.x, r.grad)) {
      r.converged = true;
      break;
    }
    // Two-loop recursion.
    Eigen::VectorXd d = -r.grad;
    alpha.assign(S.size(), 0.0);
    for (int i = static_cast<int>(S.size()) - 1; i >= 0; --i) {
      alpha[i] = rho[i] * S[i].dot(d);
      d -= alpha[i] * Y[i];
    }
    if (!S.empty()) d *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    for (std::size_t i = 0; i < S.size(); ++i) {
      const double beta = rho[i] * Y[i].dot(d);
      d += (alpha[i] - beta) * S[i];
    }
    double slope = r.grad.dot(d);
    if (!(slope < 0.0)) {
      // Curvature information went bad; fall back to steepest descent.
      S.clear();
      Y.clear();
      rho.clear();
      d = -r.grad;
      slope = r.grad.dot(d);
    }
    double step = S.empty() ? std::min(1.0, 1.0 / r.grad.lpNorm<Eigen::Infinity>()) : 1.0;
    double f_new = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < opts.max_backtracks; ++bt) {
      x_new = r.x + step * d;
      f_new = fg(x_new, g_new);
      if (!std::isfinite(f_new)) {
        step *= 0.5;
        continue;
      }
      if (f_new <= r.f + opts.armijo * step * slope) {
        accepted = true;
        break;
      }
      // Near the optimum the Armijo decrease drops below roundoff in f; fall
      // back to the approximate Wolfe test on the directional derivative.
      const double dg = g_new.dot(d);
      if (f_new <= r.f + 1e-12 * std::abs(r.f) && dg >= 0.9 * slope && dg <= (2 * opts.armijo - 1) * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (S.empty()) {
        r.stalled = true;
        break;
      }
      S.clear();
      Y.clear();
      rho.clear();
      continue;
    }
    Eigen::VectorXd s = x_new - r.x, y = g_new - r.grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > opts.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    r.x = x_new;
    r.f = f_new;
    r.grad = g_new;
    r.iterations = it;
    r.log.push_back({it, r.f, r.grad.lpNorm<Eigen::Infinity>(), step});
  }
  if (done(r.x, r.grad)) r.converged = true;
  return r;
}

}  // namespace nelson
