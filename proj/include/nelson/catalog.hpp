#pragma once

#include "nelson/cost.hpp"
#include "nelson/diffusion.hpp"
#include "nelson/dual_solver.hpp"
#include "nelson/marginals.hpp"
#include "nelson/primal.hpp"

#include <functional>
#include <string>

namespace nelson {

// ---------------------------------------------------------------------------
// Entropic Gaussian flows N(0, s(t)^2) over Brownian motion.

struct VariancePath {
  std::function<double(double)> s2;
  std::function<double(double)> ds2;
  std::string name;

  static VariancePath linear(double s0sq = 1.0, double slope = 1.0);  // s0sq + slope t
  static VariancePath square(double s0 = 1.0);                        // (s0 + t)^2
  static VariancePath constant(double v = 1.0);
};

struct GaussianCase {
  DiffusionSpec spec;
  MarginalFlow flow;
  VariancePath variance;
  double horizon = 1.0;
  /// Linear feedback gain c(t) = (d(s^2)/dt - 1) / (2 s^2): the drift c(t) x
  /// moves N(0, s_t^2) along the prescribed variance.
  double gain(double t) const;
  ControlledDrift oracle_drift() const;
  /// int_0^T c(t)^2 s(t)^2 / 2 dt.
  double oracle_value = 0.0;
};

GaussianCase gaussian_entropic_case(const VariancePath& s, double horizon = 1.0);

// ---------------------------------------------------------------------------
// Bessel(delta) and the sign-flipped Y process.

struct BesselCase {
  double delta = 1.5;
  double nu = -0.25;  // delta / 2 - 1
  double p = 1.2;
  double q = 6.0;     // Hoelder conjugate of p
  double horizon = 1.0;
  double x0 = 1.0;
  bool admissible = false;  // 1 < p < 2 nu + 2
  DiffusionSpec spec;       // dX = (delta - 1) / (2 X) dt + dW, X_0 = x0

  /// Closed-form dual field -((delta - 1) / (2|x|))^{1/(q-1)} sign(x).
  double psi(double x) const;
  /// Clip radius 10 sqrt(dt) with reflection at the origin.
  SingularDriftControl control(int n_steps, double clip_factor = 10.0) const;
};

BesselCase bessel_case(double delta, double p, double horizon = 1.0, double x0 = 1.0);

/// E int_0^T max(|X_t|, r)^{-p} dt on the clipped, reflected Euler scheme,
/// with r = cap_factor sqrt(dt). Below the step scale the reflected chain has
/// a flat density at 0, so without the cap the estimator has infinite mean for
/// every p > 1.
McEstimate bessel_inverse_moment(const BesselCase& c, int n_paths, int n_steps, std::uint64_t seed,
                                 double cap_factor = 1.0);

/// Simulates X and returns either Y (sign(X_{tau/2} - 1) X after tau) with its
/// label A = {X_{tau/2} > 1}. With `control_labels` the states are the same
/// but A is replaced by a fair coin independent of the path.
/// tau is the first grid time with X <= clip radius. States are recorded every
/// `record_stride` steps.
LabeledEnsemble bessel_y_ensemble(const BesselCase& c, int n_paths, int n_steps, std::uint64_t seed,
                                  int record_stride = 10, bool control_labels = false);

// ---------------------------------------------------------------------------
// Two-dimensional non-universality certificate.

/// Scalar field on R^2 with derivatives up to order two.
struct Field2D {
  std::function<double(double, double)> B, Bx, By, Bxx, Bxy, Byy;
  std::string name;

  static Field2D zero();
  /// p(x) q(y) with p, q the C^2 bumps (1 - (u / width)^2)^3 on [-width, width].
  static Field2D separable_bumps(double amplitude = 1.0, double wx = 1.0, double wy = 1.0);
  /// rho(x^2 + y^2) with rho(u) = amplitude (1 - u / R^2)^3 for u < R^2.
  static Field2D radial_bump(double amplitude = 1.0, double radius = 1.0);
  /// B(y, x).
  Field2D swapped() const;
};

struct NonUniversalityReport {
  int grid = 0;
  double half_width = 0.0;
  double max_residual = 0.0;
  double scale = 0.0;     // max |grad B| * max |Hess B| over the grid
  double tol_curl = 0.0;  // 1e-6 * scale
  bool universal_candidate_fails = false;  // max residual > tol_curl
  std::vector<double> residual;  // row-major, y slowest
};

/// r = d_x F_2 - d_y F_1 for F = |grad B| grad B on an n x n grid over
/// [-half_width, half_width]^2, via
/// r = [B_y (B_x B_xx + B_y B_xy) - B_x (B_x B_xy + B_y B_yy)] / |grad B|
/// (r = 0 where grad B = 0).
NonUniversalityReport nonuniversality_case(const Field2D& B, int n_grid = 201, double half_width = 1.25);

/// Optional full solve on a truncated Lebesgue flow: reference dX = grad B dt
/// + dW, flow uniform on a box; compares recovered drifts of the quadratic and
/// cubic costs (relative L2 over the box).
struct NonUniversalitySolve {
  double drift_discrepancy = 0.0;
  double quadratic_drift_error = 0.0;  // |recovered - 0| / |grad B| in L2; Brownian law is optimal
  double value_quadratic = 0.0;
  double value_cubic = 0.0;
  bool certified = false;
};
NonUniversalitySolve nonuniversality_full_solve(const Field2D& B, double half_width = 2.0, int cells = 40,
                                                int space_knots = 10, int time_knots = 6, double horizon = 1.0);

}  // namespace nelson
