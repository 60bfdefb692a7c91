#pragma once

#include "nelson/diffusion.hpp"
#include "nelson/quadrature.hpp"
#include "nelson/types.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace nelson {

/// A weighted point cloud: either quadrature nodes of a slice mu_t or samples.
struct MeasureSlice {
  int dim = 1;
  std::vector<Point> points;
  std::vector<double> weights;

  double mass() const;
  Point mean() const;
  Matrix covariance() const;
  bool empty() const { return points.empty(); }
};

enum class MassMode { Probability, TruncatedSigmaFinite };

/// Gaussian flow t -> N(m(t), S(t)).
struct GaussianPath {
  std::function<Point(double)> mean;
  std::function<Matrix(double)> cov;
};

/// Density tabulated on a uniform cell grid over a box, one table per time.
/// Values are row-major over cells with the first coordinate varying slowest.
struct GridDensityData {
  std::vector<double> times;
  Box box;
  std::vector<int> cells;  // cells per dimension
  std::vector<std::vector<double>> density;
};

struct EmpiricalData {
  std::vector<double> times;
  std::vector<MeasureSlice> slices;
};

/// Prescribed flow of marginals t -> mu_t on [0, T]. Immutable; copies share
/// the underlying data.
class MarginalFlow {
 public:
  static MarginalFlow gaussian(int dim, double horizon, GaussianPath path);
  static MarginalFlow grid(double horizon, GridDensityData data, MassMode mode = MassMode::Probability);
  static MarginalFlow empirical(double horizon, EmpiricalData data);
  /// Slice-wise mixture (1 - eps) a_t + eps b_t.
  static MarginalFlow mixture(const MarginalFlow& a, const MarginalFlow& b, double eps);

  int dim() const;
  double horizon() const;
  MassMode mass_mode() const;
  std::string kind() const;
  /// Slices can be evaluated at any t (Gaussian, grid with time interpolation,
  /// mixtures of those); empirical flows exist only at their slice times.
  bool time_continuous() const;
  std::vector<double> slice_times() const;
  const GaussianPath* gaussian_path() const;

  /// Quadrature nodes and weights for integration against mu_t.
  MeasureSlice quadrature_slice(double t, const QuadratureOptions& opts = {}) const;
  /// Same, but Gaussian slices are integrated cell by cell on the given
  /// per-dimension breakpoints (Gauss-Legendre nodes weighted by the density),
  /// ignoring mass outside them. Used when the integrand vanishes outside a
  /// spline support and must be resolved at the spline scale.
  MeasureSlice quadrature_slice_on(double t, const std::vector<std::vector<double>>& space_breaks,
                                   const QuadratureOptions& opts = {}) const;
  /// Random draws from mu_t (weights 1/n).
  MeasureSlice sample_slice(double t, int n, std::uint64_t seed) const;
  /// Deterministic n-point discretization where available (quantiles of 1D
  /// Gaussian slices), otherwise seeded samples.
  MeasureSlice discretize_slice(double t, int n, std::uint64_t seed) const;

  double total_mass_at(double t) const;
  /// Coordinate box holding `fraction` of the mass of every slice.
  Box mass_box(double fraction) const;
  /// Largest slice spread sqrt(tr Cov mu_t) over the slice grid.
  double spatial_scale() const;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

/// int_0^T int f(t, x) mu_t(dx) dt. Time: composite Simpson on a uniform slice
/// grid (continuous flows) or on the flow's own slice times (empirical). Space:
/// Gauss-Hermite for Gaussian slices, cell midpoints for grids, weighted
/// particle sums for empirical slices.
double spacetime_quadrature(const MarginalFlow& flow, const ScalarField& f, const QuadratureOptions& opts = {});

/// A single space-time quadrature node.
struct SpaceTimeNode {
  double t;
  Point x;
  double weight;
};

/// Fixed rule used by the dual solver: Gauss-Legendre inside each interval of
/// `time_breaks` for continuous flows, Simpson over slice times otherwise.
/// With `space_breaks`, slices come from quadrature_slice_on.
std::vector<SpaceTimeNode> spacetime_rule(const MarginalFlow& flow, const std::vector<double>& time_breaks,
                                          const QuadratureOptions& opts = {},
                                          const std::vector<std::vector<double>>& space_breaks = {});

/// Wasserstein-1 distance between slices (normalized to unit mass). Exact
/// quantile coupling in 1D; sliced W1 over 64 seeded directions otherwise.
double w1_slice_distance(const MeasureSlice& a, const MeasureSlice& b, std::uint64_t seed = 12345);

/// Empirical flow holding the ensemble states at the recorded times closest to
/// `slice_times`. Flagged paths are excluded.
MarginalFlow flow_from_ensemble(const PathEnsemble& ensemble, const std::vector<double>& slice_times);

/// Flow-consistency diagnostics: adjacent-slice W1 / dt and W1(mu_0, m0).
struct FlowDiagnostics {
  double continuity_constant = 0.0;
  double initial_w1 = 0.0;
  std::vector<double> slice_masses;
};
FlowDiagnostics diagnose_flow(const MarginalFlow& flow, const InitialLaw& m0, int n_slices = 17,
                              std::uint64_t seed = 99);

/// Reads a grid density CSV: header `t,x_1[,x_2..],density`, rows sorted by t
/// then cell (first coordinate slowest). Cell centers must lie on a uniform grid.
MarginalFlow read_grid_csv(const std::string& file, double horizon, MassMode mode = MassMode::Probability);
/// Reads an empirical flow CSV: header `t,x_1[,x_2..][,weight]`.
MarginalFlow read_empirical_csv(const std::string& file, double horizon);

}  // namespace nelson
