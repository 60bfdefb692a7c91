#pragma once

#include "nelson/cost.hpp"
#include "nelson/diffusion.hpp"
#include "nelson/marginals.hpp"
#include "nelson/types.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace nelson {

/// Value and first two derivatives of one univariate basis function.
struct LocalValue {
  int index;
  double v, d1, d2;
};

/// A family of compactly supported univariate functions: cubic B-splines on a
/// knot vector, or Gaussian bumps tapered by (1 - u^2)^3 (C^2 at the cutoff).
class Family1D {
 public:
  enum class Kind { BSpline, Rbf };

  /// Cubic B-splines on an explicit nondecreasing knot vector.
  static Family1D bspline(std::vector<double> knots);
  /// Clamped cubic B-splines on `breaks` with the first and last functions
  /// removed, so every member vanishes at both ends of the interval.
  static Family1D clamped_interior(const std::vector<double>& breaks);
  /// Uniform cubic B-splines whose interior knots split [lo, hi] into
  /// n_knots - 1 cells, extended by `pad` knots on each side.
  static Family1D uniform(double lo, double hi, int n_knots, int pad);
  /// Tapered Gaussian bumps centred on the same uniform knot layout.
  static Family1D rbf(double lo, double hi, int n_knots, int pad);

  Kind kind() const { return kind_; }
  int size() const { return size_; }
  const std::vector<double>& knots() const { return knots_; }
  double support_lo() const;
  double support_hi() const;
  /// Distinct knot values (interval breakpoints).
  std::vector<double> breaks() const;

  /// Appends the members that are nonzero (or have nonzero derivatives) at x.
  void eval(double x, std::vector<LocalValue>& out) const;

 private:
  Kind kind_ = Kind::BSpline;
  std::vector<double> knots_;  // B-spline knots, or RBF centres
  int size_ = 0;
  int first_ = 0;  // index offset of the first retained B-spline
  double width_ = 1.0;  // RBF width
};

struct BasisOptions {
  int time_knots = 12;
  int space_knots = 16;
  Family1D::Kind kind = Family1D::Kind::BSpline;
  std::optional<Box> box;  // empty: 99.9% mass box of the flow
  double mass_fraction = 0.999;
  int pad_knots = 3;
  /// Time knots are t_i = T/2 (1 + sign(s)(1 - (1 - |s|)^grading)) for uniform
  /// s in [-1, 1]; 1 means uniform. Grading resolves the boundary layers that
  /// the optimal field develops where test functions are forced to vanish.
  double time_grading = 4.0;
};

/// Derivatives of one tensor basis element at a point.
struct ElementJet {
  int index;
  double value;
  double dt;
  Point grad;
  Matrix hess;
};

/// Tensor-product basis phi_k(t, x) = T_i(t) S_j1(x_1) ... S_jq(x_q) of the
/// test-function class. Every element vanishes at t = 0 and t = T and outside
/// the spatial box. Element index k = i * n_space + j with j row-major over the
/// spatial factors (first coordinate slowest).
class TestFunctionBasis {
 public:
  TestFunctionBasis(double horizon, Family1D time, std::vector<Family1D> space);
  static TestFunctionBasis build(const MarginalFlow& flow, const BasisOptions& opts = {});

  int size() const { return n_time_ * n_space_; }
  int dim() const { return static_cast<int>(space_.size()); }
  double horizon() const { return horizon_; }
  const Family1D& time_family() const { return time_; }
  const std::vector<Family1D>& space_families() const { return space_; }
  std::vector<double> time_breaks() const { return time_.breaks(); }
  /// Union of element supports in space.
  Box support_box() const;
  bool covers(double t, const Point& x) const;

  /// Elements with nonzero jet at (t, x). Empty outside the support.
  void eval_elements(double t, const Point& x, std::vector<ElementJet>& out) const;

  TestFunctionJet jet(const Eigen::VectorXd& theta, double t, const Point& x) const;
  double eval_w(const Eigen::VectorXd& theta, double t, const Point& x) const;
  Point eval_grad_w(const Eigen::VectorXd& theta, double t, const Point& x) const;
  double eval_Lt_w(const Eigen::VectorXd& theta, const DiffusionSpec& spec, double t, const Point& x) const;

 private:
  double horizon_;
  Family1D time_;
  std::vector<Family1D> space_;
  int n_time_ = 0;
  int n_space_ = 1;
};

/// Graded time breakpoints on [0, T] (see BasisOptions::time_grading).
std::vector<double> graded_breaks(double horizon, int n_knots, double grading);

struct LuxemburgOptions {
  double rel_width = 1e-10;
  double cap = 1e12;  // largest tested level before declaring "not in L^g"
  int time_intervals = 32;
  QuadratureOptions quad;
};

/// ||psi||_g = inf{l > 0 : int int g(t, x, sigma' psi / l) dmu_t dt <= 1}, by
/// bisection on the nonincreasing map l -> int int g(sigma' psi / l).
/// Throws Error("... not in L^g ...") if the integral exceeds 1 at every level
/// up to the cap.
double luxemburg_norm(const MarginalFlow& flow, const DiffusionSpec& spec, const CostFunction& cost,
                      const VectorField& psi, const LuxemburgOptions& opts = {});

}  // namespace nelson
