#pragma once

#include "nelson/cost.hpp"
#include "nelson/diffusion.hpp"
#include "nelson/dual_solver.hpp"
#include "nelson/marginals.hpp"

#include <optional>
#include <string>
#include <vector>

namespace nelson {

/// Drift b + sigma u of a controlled diffusion together with its control
/// u = sigma' beta, the argument of g* in the primal cost.
struct ControlledDrift {
  VectorField drift;
  VectorField control;  // null when only the drift is known
  std::optional<Box> support;  // region where the control can be nonzero
  std::string label = "custom";
};

/// dX = {b - sigma grad g(t, X, sigma' Psi)} dt + sigma dW. Outside the basis
/// support Psi = 0 and the drift falls back to b.
ControlledDrift recover_drift(const DualSolution& sol, const DiffusionSpec& spec, const CostFunction& cost);

/// The uncontrolled reference (u = 0).
ControlledDrift reference_drift(const DiffusionSpec& spec);

struct McOptions {
  int n_paths = 100000;
  int n_steps = 400;
  std::uint64_t seed = 1;
};

struct MarginalReport {
  std::vector<double> times;
  std::vector<double> w1;        // per slice
  std::vector<double> w1_noise;  // per-slice Monte-Carlo s.e. proxy
  double scale = 0.0;            // max_t sqrt(tr Cov mu_t)
  double tolerance = 0.0;        // max(0.02 scale, 3 max noise)
  double max_w1 = 0.0;
  double exit_fraction = 0.0;    // share of slice states outside the control support
  bool exit_flag = false;        // exit_fraction > 0.5%
  int n_flagged = 0;
  bool pass = false;
};

/// Simulates under `drift` and compares slices at `slice_times` (17 uniform
/// times by default) with the flow in W1. The s.e. proxy of a slice is half
/// the W1 distance between the two halves of the simulated sample.
MarginalReport verify_marginals(const ControlledDrift& drift, const DiffusionSpec& spec, const MarginalFlow& flow,
                                const McOptions& mc = {}, std::vector<double> slice_times = {});

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// E int_0^T g*(t, X_t, u(t, X_t)) dt along paths simulated under the drift
/// (left-point rule on the Euler grid). Throws if the control is missing.
McEstimate primal_cost_mc(const ControlledDrift& drift, const DiffusionSpec& spec, const CostFunction& cost,
                          const McOptions& mc = {});

struct GapReport {
  double dual_value = 0.0;
  double dual_energy_value = 0.0;
  double primal_mc = 0.0;
  double primal_se = 0.0;
  double gap_rel = 0.0;
  bool gap_pass = false;          // |primal - dual| <= 0.03 |dual| + 3 se
  bool surrogate_gap = false;     // dual < primal - 3 se beyond the 3% budget
  MarginalReport marginals;
  bool pass = false;              // gap_pass && marginals.pass
};

/// Simulates once under the recovered drift and reports the gap and the
/// marginal check from the same paths.
GapReport duality_gap_report(const DualSolution& sol, const DiffusionSpec& spec, const MarginalFlow& flow,
                             const CostFunction& cost, const McOptions& mc = {});

/// One-dimensional paths with a past-dependent label, as produced by the
/// Bessel Y construction: states on a coarse record grid, the discretized
/// hitting time tau (infinity if not hit) and the label A = {X_{tau/2} > 1}.
struct LabeledEnsemble {
  std::vector<double> times;
  int n_paths = 0;
  std::vector<double> states;  // [path][record]
  std::vector<double> tau;
  std::vector<std::uint8_t> label;
  double state(int p, int r) const { return states[static_cast<std::size_t>(p) * times.size() + r]; }
};

struct MarkovReport {
  double statistic = 0.0;
  double null_band = 0.0;  // max over label permutations
  bool outside_band = false;
  int n_eligible = 0;
  int bins_used = 0;
  int bins_dropped = 0;
  /// Past-dependence check on the signed state: within bins of Y_s, future
  /// sign for tau < s versus tau >= s, with its own permutation band.
  double signed_statistic = 0.0;
  double signed_null_band = 0.0;
};

/// Within equal-count bins of |Y_s| over paths with tau < s, the difference of
/// mean future sign between A and its complement; the statistic is the
/// occupancy-weighted mean of squared differences, compared with the maximum
/// over `n_perm` label permutations. The future sign is the average of
/// sign(Y_u) over recorded u > s (0 when there is none). Bins with fewer than
/// 30 paths, or with an empty group, are dropped.
MarkovReport markov_statistic(const LabeledEnsemble& ens, double s, int bins = 10, int n_perm = 200,
                              std::uint64_t seed = 2024);

}  // namespace nelson
