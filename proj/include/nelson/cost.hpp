#pragma once

#include "nelson/types.hpp"

#include <memory>
#include <string>
#include <vector>

namespace nelson {

class MarginalFlow;

enum class CostKind { Quadratic, Power, PowerWithLog, Custom };

/// Generalized entropy density g*(t,x,y), its convex conjugate g and the
/// conjugate's gradient.
///
/// Built-in kinds:
///   Quadratic      g*(y) = |y|^2 / 2                  (self-conjugate)
///   Power          g*(y) = R(t,x) |y|^p
///   PowerWithLog   g*(y) = R(t,x) |y|^p (1 + |log|y||)
///   Custom         user supplied g*; conjugated numerically
///
/// The growth/doubling constants (p_growth, doubling_C/h, ell/H) are the
/// witnesses used by validate_assumption_C. Instances are immutable and safe to
/// share between threads.
class CostFunction {
 public:
  using GStar = std::function<double(double t, const Point& x, const Point& y)>;

  static CostFunction quadratic();
  static CostFunction power(double p, ScalarField scale = nullptr);
  static CostFunction power_with_log(double p, ScalarField scale = nullptr);
  /// `radial` declares g*(t,x,y) = phi(t,x,|y|); the conjugate then reduces to
  /// a 1D concave maximization. Non-radial costs use coordinate-wise
  /// alternating ascent (approximate).
  static CostFunction custom(GStar gstar, bool radial, double p_growth = 2.0);

  CostKind kind() const { return kind_; }
  std::string name() const;
  double exponent() const { return p_; }
  bool radial() const { return radial_; }
  /// True when g* grows at least quadratically (Girsanov density available).
  bool quadratic_growth() const;

  double gstar(double t, const Point& x, const Point& y) const;
  double g(double t, const Point& x, const Point& z) const;
  Point grad_g(double t, const Point& x, const Point& z) const;

  double p_growth = 2.0;
  double doubling_C = 4.0;
  ScalarField doubling_h;  // null means h == 0
  double ell = 2.0;
  ScalarField H;  // null means H == 0

 private:
  CostFunction() = default;
  double scale_at(double t, const Point& x) const;
  double conjugate_radial(double t, const Point& x, double r) const;
  double conjugate_general(double t, const Point& x, const Point& z) const;

  CostKind kind_ = CostKind::Quadratic;
  double p_ = 2.0;
  ScalarField scale_;
  GStar custom_;
  bool radial_ = true;
  double log_H_constant_ = 0.0;
};

/// Thrown when the numerical conjugate's maximization fails to converge.
class ConjugationError : public ConvergenceError {
 public:
  ConjugationError(const std::string& what, double bracket_width)
      : ConvergenceError(what), bracket_width(bracket_width) {}
  double bracket_width;
};

struct ValidationEntry {
  std::string name;
  bool passed = true;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationEntry> entries;
  bool all_passed() const;
  const ValidationEntry* find(const std::string& name) const;
};

/// Numerical probes of the structural assumptions on g*: zero only at zero,
/// evenness, superlinear growth at 0 and at infinity, the doubling and
/// ell-bounds, and midpoint strict convexity. (t, x) are drawn from the flow.
/// Failures are report entries, never exceptions.
ValidationReport validate_assumption_C(const CostFunction& cost, const MarginalFlow& flow,
                                       int n_samples, std::uint64_t seed = 7);

}  // namespace nelson
