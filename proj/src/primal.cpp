#include "nelson/primal.hpp"

#include "nelson/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nelson {

ControlledDrift recover_drift(const DualSolution& sol, const DiffusionSpec& spec, const CostFunction& cost) {
  const VectorField psi = sol.psi_field();
  ControlledDrift d;
  d.label = "recovered";
  d.support = sol.basis.support_box();
  d.control = [psi, spec, cost](double t, const Point& x) -> Point {
    const Point p = psi(t, x);
    if (p.squaredNorm() == 0.0) return Point::Zero(x.size());
    const Point z = spec.sigma_is_identity ? p : Point(spec.sig(t, x).transpose() * p);
    return -cost.grad_g(t, x, z);
  };
  const VectorField u = d.control;
  d.drift = [u, spec](double t, const Point& x) -> Point {
    const Point c = u(t, x);
    return spec.b(t, x) + (spec.sigma_is_identity ? c : Point(spec.sig(t, x) * c));
  };
  return d;
}

ControlledDrift reference_drift(const DiffusionSpec& spec) {
  ControlledDrift d;
  d.label = "reference";
  d.drift = spec.drift;
  const int q = spec.dim;
  d.control = [q](double, const Point&) { return Point(Point::Zero(q)); };
  return d;
}

namespace {

struct PassResult {
  std::vector<double> cost;            // per path
  std::vector<std::vector<double>> slices;  // [slice][path * q + i]
  std::vector<std::uint8_t> flagged;
  long outside = 0;
  int n_flagged = 0;
};

// One Euler pass under b + sigma u. Uses the same per-path streams as
// simulate(), so the paths coincide with a stored ensemble of equal seed.
PassResult controlled_pass(const ControlledDrift& cd, const DiffusionSpec& spec, const CostFunction* cost,
                           const McOptions& mc, const std::vector<double>& slice_times) {
  if (mc.n_paths < 1 || mc.n_steps < 1) throw InvalidArgument("Monte Carlo needs n_paths, n_steps >= 1");
  const int q = spec.dim;
  const int n = mc.n_steps;
  const double dt = spec.horizon / n;
  const double sqdt = std::sqrt(dt);
  std::vector<int> slice_step(slice_times.size());
  for (std::size_t j = 0; j < slice_times.size(); ++j)
    slice_step[j] = std::clamp(static_cast<int>(std::lround(slice_times[j] / dt)), 0, n);
  PassResult r;
  r.cost.assign(mc.n_paths, 0.0);
  r.flagged.assign(mc.n_paths, 0);
  r.slices.assign(slice_times.size(), std::vector<double>(static_cast<std::size_t>(mc.n_paths) * q, 0.0));
  const bool use_control = static_cast<bool>(cd.control);
  long outside = 0;
  int n_flagged = 0;
#pragma omp parallel for schedule(static) reduction(+ : outside, n_flagged)
  for (int p = 0; p < mc.n_paths; ++p) {
    Rng rng(mc.seed, static_cast<std::uint64_t>(p));
    Point x = spec.m0.sample(rng);
    Point dw(q);
    double acc = 0.0;
    bool bad = false;
    std::size_t next = 0;
    auto record = [&](int step) {
      while (next < slice_step.size() && slice_step[next] == step) {
        for (int i = 0; i < q; ++i) r.slices[next][static_cast<std::size_t>(p) * q + i] = x(i);
        if (cd.support && !cd.support->contains(x)) ++outside;
        ++next;
      }
    };
    // slice_step is sorted because slice times are.
    record(0);
    for (int k = 0; k < n; ++k) {
      const double t = k * dt;
      for (int i = 0; i < q; ++i) dw(i) = sqdt * rng.normal();
      if (!bad) {
        Point drift;
        if (use_control) {
          const Point u = cd.control(t, x);
          if (cost) acc += cost->gstar(t, x, u) * dt;
          drift = spec.b(t, x) + (spec.sigma_is_identity ? u : Point(spec.sig(t, x) * u));
        } else {
          drift = cd.drift(t, x);
        }
        if (!drift.allFinite()) {
          bad = true;
        } else {
          x += drift * dt + (spec.sigma_is_identity ? dw : Point(spec.sig(t, x) * dw));
          if (!x.allFinite()) bad = true;
        }
      }
      record(k + 1);
    }
    if (bad || !std::isfinite(acc)) {
      r.flagged[p] = 1;
      ++n_flagged;
    }
    r.cost[p] = acc;
  }
  r.outside = outside;
  r.n_flagged = n_flagged;
  if (n_flagged > 0.01 * mc.n_paths)
    throw Error(std::to_string(n_flagged) + " of " + std::to_string(mc.n_paths) +
                " paths produced non-finite values under the controlled drift");
  return r;
}

MeasureSlice slice_of(const PassResult& r, std::size_t j, int q, int begin, int end) {
  MeasureSlice s;
  s.dim = q;
  for (int p = begin; p < end; ++p) {
    if (r.flagged[p]) continue;
    Point x(q);
    for (int i = 0; i < q; ++i) x(i) = r.slices[j][static_cast<std::size_t>(p) * q + i];
    s.points.push_back(x);
  }
  s.weights.assign(s.points.size(), 1.0 / std::max<std::size_t>(1, s.points.size()));
  return s;
}

MarginalReport marginal_report(const PassResult& r, const ControlledDrift& cd, const MarginalFlow& flow,
                               const McOptions& mc, const std::vector<double>& times) {
  const int q = flow.dim();
  MarginalReport rep;
  rep.times = times;
  rep.scale = flow.spatial_scale();
  rep.n_flagged = r.n_flagged;
  double max_noise = 0.0;
  const int n_target = std::clamp(mc.n_paths, 2000, 20000);
  for (std::size_t j = 0; j < times.size(); ++j) {
    const MeasureSlice sim = slice_of(r, j, q, 0, mc.n_paths);
    const MeasureSlice target = flow.discretize_slice(times[j], n_target, mix64(mc.seed + 1000 + j));
    rep.w1.push_back(w1_slice_distance(sim, target));
    const double half = w1_slice_distance(slice_of(r, j, q, 0, mc.n_paths / 2),
                                          slice_of(r, j, q, mc.n_paths / 2, mc.n_paths));
    rep.w1_noise.push_back(0.5 * half);
    max_noise = std::max(max_noise, 0.5 * half);
  }
  rep.max_w1 = *std::max_element(rep.w1.begin(), rep.w1.end());
  rep.tolerance = std::max(0.02 * rep.scale, 3.0 * max_noise);
  if (cd.support) {
    rep.exit_fraction = static_cast<double>(r.outside) / (static_cast<double>(mc.n_paths) * times.size());
    rep.exit_flag = rep.exit_fraction > 0.005;
  }
  rep.pass = rep.max_w1 <= rep.tolerance;
  return rep;
}

McEstimate cost_estimate(const PassResult& r) {
  double s = 0.0, s2 = 0.0;
  int n = 0;
  for (std::size_t p = 0; p < r.cost.size(); ++p) {
    if (r.flagged[p]) continue;
    s += r.cost[p];
    s2 += r.cost[p] * r.cost[p];
    ++n;
  }
  McEstimate e;
  if (n == 0) return e;
  e.estimate = s / n;
  e.std_error = std::sqrt(std::max(0.0, s2 / n - e.estimate * e.estimate) / n);
  return e;
}

std::vector<double> default_times(const MarginalFlow& flow, std::vector<double> t) {
  if (t.empty()) t = linspace(0.0, flow.horizon(), 17);
  std::sort(t.begin(), t.end());
  for (double v : t)
    if (v < 0.0 || v > flow.horizon() + 1e-12) throw InvalidArgument("slice time outside [0, T]");
  return t;
}

}  // namespace

MarginalReport verify_marginals(const ControlledDrift& drift, const DiffusionSpec& spec, const MarginalFlow& flow,
                                const McOptions& mc, std::vector<double> slice_times) {
  slice_times = default_times(flow, std::move(slice_times));
  if (!drift.drift && !drift.control) throw InvalidArgument("verify_marginals needs a drift");
  const PassResult r = controlled_pass(drift, spec, nullptr, mc, slice_times);
  return marginal_report(r, drift, flow, mc, slice_times);
}

McEstimate primal_cost_mc(const ControlledDrift& drift, const DiffusionSpec& spec, const CostFunction& cost,
                          const McOptions& mc) {
  if (!drift.control)
    throw InvalidArgument("primal cost needs the control beta (sigma' beta) explicitly; a bare drift is not enough");
  return cost_estimate(controlled_pass(drift, spec, &cost, mc, {}));
}

GapReport duality_gap_report(const DualSolution& sol, const DiffusionSpec& spec, const MarginalFlow& flow,
                             const CostFunction& cost, const McOptions& mc) {
  const ControlledDrift d = recover_drift(sol, spec, cost);
  const std::vector<double> times = default_times(flow, {});
  const PassResult r = controlled_pass(d, spec, &cost, mc, times);
  GapReport g;
  g.dual_value = sol.dual_value;
  g.dual_energy_value = sol.energy_value;
  const McEstimate e = cost_estimate(r);
  g.primal_mc = e.estimate;
  g.primal_se = e.std_error;
  const double diff = g.primal_mc - g.dual_value;
  g.gap_rel = std::abs(diff) / std::max(std::abs(g.dual_value), 1e-300);
  g.gap_pass = std::abs(diff) <= 0.03 * std::abs(g.dual_value) + 3.0 * g.primal_se;
  g.surrogate_gap = diff > 0.03 * std::abs(g.dual_value) + 3.0 * g.primal_se;
  g.marginals = marginal_report(r, d, flow, mc, times);
  g.pass = g.gap_pass && g.marginals.pass;
  return g;
}

namespace {

struct BinStat {
  double stat = 0.0;
  int used = 0;
  int dropped = 0;
};

// Occupancy-weighted mean over bins of (mean F | group 1 - mean F | group 0)^2.
BinStat binned_difference(const std::vector<int>& bin, int n_bins, const std::vector<double>& F,
                          const std::vector<std::uint8_t>& group) {
  std::vector<double> s1(n_bins, 0.0), s0(n_bins, 0.0);
  std::vector<int> n1(n_bins, 0), n0(n_bins, 0);
  for (std::size_t i = 0; i < F.size(); ++i) {
    if (group[i]) {
      s1[bin[i]] += F[i];
      ++n1[bin[i]];
    } else {
      s0[bin[i]] += F[i];
      ++n0[bin[i]];
    }
  }
  BinStat b;
  double occ = 0.0;
  for (int k = 0; k < n_bins; ++k) {
    const int tot = n1[k] + n0[k];
    if (tot < 30 || n1[k] == 0 || n0[k] == 0) {
      if (tot > 0) ++b.dropped;
      continue;
    }
    const double d = s1[k] / n1[k] - s0[k] / n0[k];
    b.stat += tot * d * d;
    occ += tot;
    ++b.used;
  }
  if (occ > 0) b.stat /= occ;
  return b;
}

std::vector<int> quantile_bins(const std::vector<double>& key, int n_bins) {
  std::vector<int> order(key.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return key[a] < key[b]; });
  std::vector<int> bin(key.size());
  for (std::size_t r = 0; r < order.size(); ++r)
    bin[order[r]] = std::min(n_bins - 1, static_cast<int>(r * n_bins / std::max<std::size_t>(1, order.size())));
  return bin;
}

double permutation_band(const std::vector<int>& bin, int n_bins, const std::vector<double>& F,
                        std::vector<std::uint8_t> group, int n_perm, std::uint64_t seed) {
  Rng rng(seed, 5);
  double band = 0.0;
  for (int k = 0; k < n_perm; ++k) {
    std::shuffle(group.begin(), group.end(), rng.engine());
    band = std::max(band, binned_difference(bin, n_bins, F, group).stat);
  }
  return band;
}

}  // namespace

MarkovReport markov_statistic(const LabeledEnsemble& ens, double s, int bins, int n_perm, std::uint64_t seed) {
  if (bins < 1) throw InvalidArgument("markov_statistic needs at least one bin");
  MarkovReport rep;
  const int n_rec = static_cast<int>(ens.times.size());
  int rs = 0;
  for (int r = 1; r < n_rec; ++r)
    if (std::abs(ens.times[r] - s) < std::abs(ens.times[rs] - s)) rs = r;
  auto future = [&](int p) {
    if (rs + 1 >= n_rec) return 0.0;
    double f = 0.0;
    for (int r = rs + 1; r < n_rec; ++r) {
      const double y = ens.state(p, r);
      f += (y > 0) - (y < 0);
    }
    return f / (n_rec - rs - 1);
  };

  std::vector<double> key, F;
  std::vector<std::uint8_t> group;
  for (int p = 0; p < ens.n_paths; ++p) {
    if (!(ens.tau[p] < s)) continue;
    key.push_back(std::abs(ens.state(p, rs)));
    F.push_back(future(p));
    group.push_back(ens.label[p]);
  }
  rep.n_eligible = static_cast<int>(F.size());
  if (!F.empty()) {
    const std::vector<int> bin = quantile_bins(key, bins);
    const BinStat b = binned_difference(bin, bins, F, group);
    rep.statistic = b.stat;
    rep.bins_used = b.used;
    rep.bins_dropped = b.dropped;
    rep.null_band = permutation_band(bin, bins, F, group, n_perm, seed);
  }
  rep.outside_band = rep.statistic > rep.null_band;

  // Signed-state check over all paths: group = {tau < s}.
  std::vector<double> skey, sF;
  std::vector<std::uint8_t> sgroup;
  for (int p = 0; p < ens.n_paths; ++p) {
    skey.push_back(ens.state(p, rs));
    sF.push_back(future(p));
    sgroup.push_back(ens.tau[p] < s ? 1 : 0);
  }
  if (!sF.empty()) {
    const std::vector<int> bin = quantile_bins(skey, bins);
    rep.signed_statistic = binned_difference(bin, bins, sF, sgroup).stat;
    rep.signed_null_band = permutation_band(bin, bins, sF, sgroup, n_perm, seed + 1);
  }
  return rep;
}

}  // namespace nelson
