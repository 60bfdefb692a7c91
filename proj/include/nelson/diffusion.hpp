#pragma once

#include "nelson/rng.hpp"
#include "nelson/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nelson {

class CostFunction;

struct Box {
  Point lo;
  Point hi;
  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const Point& x) const;
};

/// Initial law m0: point mass, Gaussian, or an arbitrary sampler.
struct InitialLaw {
  enum class Kind { Dirac, Gaussian, Sampler };
  Kind kind = Kind::Dirac;
  Point mean;
  Matrix cov;
  std::function<Point(Rng&)> sampler;

  static InitialLaw dirac(const Point& x);
  static InitialLaw gaussian(const Point& mean, const Matrix& cov);
  Point sample(Rng& rng) const;
};

/// Reference diffusion dX = b dt + sigma dW on R^q over [0, T].
struct DiffusionSpec {
  int dim = 1;
  double horizon = 1.0;
  VectorField drift;  // b(t, x)
  MatrixField sigma;  // sigma(t, x), q x q, invertible
  InitialLaw m0;
  std::optional<Box> domain;
  bool sigma_is_identity = false;
  std::string drift_name = "zero";

  Point b(double t, const Point& x) const { return drift(t, x); }
  Matrix sig(double t, const Point& x) const { return sigma(t, x); }
  Matrix a(double t, const Point& x) const;

  /// Throws InvalidArgument when sigma is singular (or numerically so) at the
  /// given point. Returns the condition number otherwise.
  double check_sigma(double t, const Point& x) const;
};

/// Brownian reference (b = 0, sigma = I) with the given initial law.
DiffusionSpec brownian_spec(int dim, double horizon, InitialLaw m0);

/// Derivatives of a test function at one space-time point.
struct TestFunctionJet {
  double value = 0.0;
  double dt = 0.0;
  Point grad;
  Matrix hess;
};

/// L_t w = dt w + b' grad w + 1/2 sum_ij a^ij d2_ij w.
double apply_generator(const DiffusionSpec& spec, const TestFunctionJet& w, double t, const Point& x);

/// Near-origin handling for singular drifts (Bessel type): the drift is
/// evaluated at radius max(|x|, clip_radius) and the state is reflected
/// |X| <- |X| after each step.
struct SingularDriftControl {
  double clip_radius = 0.0;
  bool reflect = false;
};

struct SimulationOptions {
  int n_paths = 1000;
  int n_steps = 100;
  std::uint64_t seed = 1;
  int record_stride = 1;  // store every k-th state
  bool keep_increments = true;  // only honored when record_stride == 1
  std::optional<SingularDriftControl> singular;
  double flagged_fraction_limit = 0.01;
};

/// Simulated trajectories. States are stored row-major as
/// [path][record][coordinate]; increments (dW) as [path][step][coordinate].
struct PathEnsemble {
  int n_paths = 0;
  int n_steps = 0;
  int dim = 1;
  int record_stride = 1;
  double horizon = 1.0;
  std::uint64_t seed = 0;
  std::string drift_label;
  std::vector<double> times;  // recorded times
  std::vector<double> states;
  std::vector<double> increments;
  std::vector<std::uint8_t> flagged;
  int n_flagged = 0;

  int n_records() const { return static_cast<int>(times.size()); }
  bool has_increments() const { return !increments.empty(); }
  Point state(int path, int record) const;
  Point increment(int path, int step) const;
  double step_size() const { return horizon / n_steps; }
  /// Index of the recorded time closest to t.
  int nearest_record(double t) const;
};

/// Read-only view of one simulated path handed to streaming visitors.
struct PathView {
  int path_index = 0;
  int n_steps = 0;
  int dim = 1;
  double dt = 0.0;
  bool flagged = false;
  std::span<const double> states;      // (n_steps + 1) * dim
  std::span<const double> increments;  // n_steps * dim (Brownian dW)
  Point state(int step) const;
  Point increment(int step) const;
};

/// Euler-Maruyama over every path, handing each completed path to `visit`.
/// Paths are independent streams keyed by (seed, path index), so results do
/// not depend on the worker count. `visit` may be called concurrently for
/// different paths; it must only write to per-path slots. Returns the number
/// of flagged (non-finite) paths; throws when they exceed the limit.
/// A null `drift` means the reference drift b.
int simulate_paths(const DiffusionSpec& spec, const VectorField& drift, const SimulationOptions& opts,
                   const std::function<void(const PathView&)>& visit);

/// Simulates and stores a PathEnsemble (memory: n_paths * records * q).
PathEnsemble simulate(const DiffusionSpec& spec, const VectorField& drift, const SimulationOptions& opts,
                      const std::string& drift_label = "");

struct WeightReport {
  std::vector<double> weights;
  double mean = 0.0;
  double std_error = 0.0;
  int n_flagged = 0;
  bool mean_warning = false;  // |mean - 1| > 5 s.e.
};

/// Discretized stochastic exponential E(-int grad_g(sigma' psi)' sigma^{-1} dM)_T
/// per path, for an ensemble simulated under the reference drift with
/// increments retained.
WeightReport girsanov_weight(const PathEnsemble& ensemble, const DiffusionSpec& spec, const VectorField& psi,
                             const CostFunction& cost);

/// Log of the same stochastic exponential for a single streamed path.
double girsanov_log_weight(const PathView& path, const DiffusionSpec& spec, const VectorField& psi,
                           const CostFunction& cost);

/// Writes `path_id,t,x_1..x_q` rows.
void write_paths_csv(const PathEnsemble& ensemble, const std::string& file);

}  // namespace nelson
