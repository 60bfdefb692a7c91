#include "nelson/quadrature.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <numbers>

namespace nelson {

namespace {

// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix, weights the
// squared first eigenvector components times the zeroth moment.
Rule1D golub_welsch(const Eigen::VectorXd& off_diag, double mu0) {
  const int n = static_cast<int>(off_diag.size()) + 1;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) {
    J(i, i + 1) = off_diag(i);
    J(i + 1, i) = off_diag(i);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  Rule1D r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    r.nodes[i] = es.eigenvalues()(i);
    const double v = es.eigenvectors()(0, i);
    r.weights[i] = mu0 * v * v;
  }
  return r;
}

}  // namespace

Rule1D gauss_legendre(int n, double a, double b) {
  if (n < 1) throw InvalidArgument("gauss_legendre needs n >= 1");
  Rule1D r;
  if (n == 1) {
    r.nodes = {0.5 * (a + b)};
    r.weights = {b - a};
    return r;
  }
  Eigen::VectorXd beta(n - 1);
  for (int k = 1; k < n; ++k) beta(k - 1) = k / std::sqrt(4.0 * k * k - 1.0);
  r = golub_welsch(beta, 2.0);
  for (int i = 0; i < n; ++i) {
    r.nodes[i] = 0.5 * (a + b) + 0.5 * (b - a) * r.nodes[i];
    r.weights[i] *= 0.5 * (b - a);
  }
  return r;
}

Rule1D gauss_hermite_normal(int n) {
  if (n < 1) throw InvalidArgument("gauss_hermite needs n >= 1");
  if (n == 1) return Rule1D{{0.0}, {1.0}};
  // Probabilists' Hermite polynomials: recurrence coefficient sqrt(k).
  Eigen::VectorXd beta(n - 1);
  for (int k = 1; k < n; ++k) beta(k - 1) = std::sqrt(static_cast<double>(k));
  Rule1D r = golub_welsch(beta, 1.0);
  return r;
}

std::vector<double> simpson_weights(const std::vector<double>& grid) {
  const std::size_t n = grid.size();
  std::vector<double> w(n, 0.0);
  if (n == 1) return w;
  bool uniform = true;
  const double h = grid[1] - grid[0];
  for (std::size_t i = 1; i < n; ++i)
    if (std::abs((grid[i] - grid[i - 1]) - h) > 1e-9 * std::abs(h)) uniform = false;
  if (uniform && n % 2 == 1 && n >= 3) {
    for (std::size_t i = 0; i < n; ++i) {
      const double c = (i == 0 || i == n - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      w[i] = c * h / 3.0;
    }
    return w;
  }
  for (std::size_t i = 1; i < n; ++i) {
    const double d = grid[i] - grid[i - 1];
    w[i - 1] += 0.5 * d;
    w[i] += 0.5 * d;
  }
  return w;
}

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = a;
    return out;
  }
  for (int i = 0; i < n; ++i) out[i] = a + (b - a) * i / (n - 1);
  out.back() = b;
  return out;
}

double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

}  // namespace nelson
