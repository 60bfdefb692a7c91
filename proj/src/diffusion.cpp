#include "nelson/diffusion.hpp"

#include "nelson/cost.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace nelson {

bool Box::contains(const Point& x) const {
  for (int i = 0; i < x.size(); ++i)
    if (x(i) < lo(i) || x(i) > hi(i)) return false;
  return true;
}

InitialLaw InitialLaw::dirac(const Point& x) {
  InitialLaw m;
  m.kind = Kind::Dirac;
  m.mean = x;
  m.cov = Matrix::Zero(x.size(), x.size());
  return m;
}

InitialLaw InitialLaw::gaussian(const Point& mean, const Matrix& cov) {
  InitialLaw m;
  m.kind = Kind::Gaussian;
  m.mean = mean;
  m.cov = cov;
  return m;
}

Point InitialLaw::sample(Rng& rng) const {
  switch (kind) {
    case Kind::Dirac: return mean;
    case Kind::Gaussian: {
      const int q = static_cast<int>(mean.size());
      Point z(q);
      for (int i = 0; i < q; ++i) z(i) = rng.normal();
      Eigen::LLT<Matrix> llt(cov);
      if (llt.info() != Eigen::Success) throw InvalidArgument("initial covariance is not positive definite");
      return mean + Matrix(llt.matrixL()) * z;
    }
    case Kind::Sampler: return sampler(rng);
  }
  return mean;
}

Matrix DiffusionSpec::a(double t, const Point& x) const {
  if (sigma_is_identity) return Matrix::Identity(dim, dim);
  const Matrix s = sigma(t, x);
  return s * s.transpose();
}

double DiffusionSpec::check_sigma(double t, const Point& x) const {
  const Matrix s = sigma(t, x);
  if (s.rows() != dim || s.cols() != dim) throw InvalidArgument("sigma has wrong shape");
  Eigen::JacobiSVD<Matrix> svd(s);
  const auto sv = svd.singularValues();
  const double smax = sv(0), smin = sv(sv.size() - 1);
  if (!(smin > 1e-12 * std::max(1.0, smax)) || !std::isfinite(smax)) {
    std::ostringstream os;
    os << "sigma is not invertible at t=" << t << " (the reference diffusion needs an invertible sigma)";
    throw InvalidArgument(os.str());
  }
  return smax / smin;
}

DiffusionSpec brownian_spec(int dim, double horizon, InitialLaw m0) {
  DiffusionSpec s;
  s.dim = dim;
  s.horizon = horizon;
  s.drift = [dim](double, const Point&) { return Point(Point::Zero(dim)); };
  s.sigma = [dim](double, const Point&) { return Matrix(Matrix::Identity(dim, dim)); };
  s.sigma_is_identity = true;
  s.m0 = std::move(m0);
  s.drift_name = "zero";
  return s;
}

double apply_generator(const DiffusionSpec& spec, const TestFunctionJet& w, double t, const Point& x) {
  const Point b = spec.b(t, x);
  double out = w.dt + b.dot(w.grad);
  if (spec.sigma_is_identity) {
    out += 0.5 * w.hess.trace();
  } else {
    out += 0.5 * (spec.a(t, x).cwiseProduct(w.hess)).sum();
  }
  return out;
}

Point PathEnsemble::state(int path, int record) const {
  Point x(dim);
  const std::size_t base = (static_cast<std::size_t>(path) * n_records() + record) * dim;
  for (int i = 0; i < dim; ++i) x(i) = states[base + i];
  return x;
}

Point PathEnsemble::increment(int path, int step) const {
  Point x(dim);
  const std::size_t base = (static_cast<std::size_t>(path) * n_steps + step) * dim;
  for (int i = 0; i < dim; ++i) x(i) = increments[base + i];
  return x;
}

int PathEnsemble::nearest_record(double t) const {
  const auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0;
  if (it == times.end()) return n_records() - 1;
  const int hi = static_cast<int>(it - times.begin());
  return (t - times[hi - 1] <= times[hi] - t) ? hi - 1 : hi;
}

Point PathView::state(int step) const {
  Point x(dim);
  for (int i = 0; i < dim; ++i) x(i) = states[static_cast<std::size_t>(step) * dim + i];
  return x;
}

Point PathView::increment(int step) const {
  Point x(dim);
  for (int i = 0; i < dim; ++i) x(i) = increments[static_cast<std::size_t>(step) * dim + i];
  return x;
}

namespace {

Point clipped(const Point& x, double radius) {
  const double r = x.norm();
  if (r >= radius) return x;
  if (r == 0.0) {
    Point e = Point::Zero(x.size());
    e(0) = radius;
    return e;
  }
  return (radius / r) * x;
}

}  // namespace

int simulate_paths(const DiffusionSpec& spec, const VectorField& drift, const SimulationOptions& opts,
                   const std::function<void(const PathView&)>& visit) {
  if (opts.n_paths < 1 || opts.n_steps < 1) throw InvalidArgument("simulate requires n_paths, n_steps >= 1");
  const int q = spec.dim;
  const int n_steps = opts.n_steps;
  const double dt = spec.horizon / n_steps;
  const double sqdt = std::sqrt(dt);
  const VectorField& f = drift ? drift : spec.drift;
  int n_flagged = 0;

#pragma omp parallel reduction(+ : n_flagged)
  {
    std::vector<double> states(static_cast<std::size_t>(n_steps + 1) * q);
    std::vector<double> incs(static_cast<std::size_t>(n_steps) * q);
#pragma omp for schedule(static)
    for (int p = 0; p < opts.n_paths; ++p) {
      Rng rng(opts.seed, static_cast<std::uint64_t>(p));
      Point x = spec.m0.sample(rng);
      bool flagged = false;
      for (int i = 0; i < q; ++i) states[i] = x(i);
      Point dw(q);
      for (int k = 0; k < n_steps; ++k) {
        const double t = k * dt;
        for (int i = 0; i < q; ++i) dw(i) = sqdt * rng.normal();
        if (!flagged) {
          const Point xe = (opts.singular && opts.singular->clip_radius > 0) ? clipped(x, opts.singular->clip_radius) : x;
          const Point bx = f(t, xe);
          if (!bx.allFinite()) {
            flagged = true;
          } else if (spec.sigma_is_identity) {
            x += bx * dt + dw;
          } else {
            x += bx * dt + spec.sigma(t, x) * dw;
          }
          if (opts.singular && opts.singular->reflect) x = x.cwiseAbs();
          if (!x.allFinite()) flagged = true;
        }
        for (int i = 0; i < q; ++i) {
          states[static_cast<std::size_t>(k + 1) * q + i] = x(i);
          incs[static_cast<std::size_t>(k) * q + i] = dw(i);
        }
      }
      if (flagged) ++n_flagged;
      PathView view;
      view.path_index = p;
      view.n_steps = n_steps;
      view.dim = q;
      view.dt = dt;
      view.flagged = flagged;
      view.states = states;
      view.increments = incs;
      visit(view);
    }
  }
  if (n_flagged > opts.flagged_fraction_limit * opts.n_paths) {
    std::ostringstream os;
    os << n_flagged << " of " << opts.n_paths << " paths produced non-finite drift values";
    throw Error(os.str());
  }
  return n_flagged;
}

PathEnsemble simulate(const DiffusionSpec& spec, const VectorField& drift, const SimulationOptions& opts,
                      const std::string& drift_label) {
  PathEnsemble e;
  e.n_paths = opts.n_paths;
  e.n_steps = opts.n_steps;
  e.dim = spec.dim;
  e.horizon = spec.horizon;
  e.seed = opts.seed;
  e.record_stride = std::max(1, opts.record_stride);
  e.drift_label = drift_label.empty() ? (drift ? "custom" : "reference") : drift_label;
  const int stride = e.record_stride;
  const double dt = spec.horizon / opts.n_steps;
  for (int k = 0; k <= opts.n_steps; k += stride) e.times.push_back(k * dt);
  if ((opts.n_steps % stride) != 0) e.times.push_back(spec.horizon);
  const int n_rec = e.n_records();
  const int q = spec.dim;
  e.states.assign(static_cast<std::size_t>(opts.n_paths) * n_rec * q, 0.0);
  const bool keep = opts.keep_increments && stride == 1;
  if (keep) e.increments.assign(static_cast<std::size_t>(opts.n_paths) * opts.n_steps * q, 0.0);
  e.flagged.assign(opts.n_paths, 0);

  e.n_flagged = simulate_paths(spec, drift, opts, [&](const PathView& v) {
    const std::size_t base = static_cast<std::size_t>(v.path_index) * n_rec * q;
    for (int r = 0; r < n_rec; ++r) {
      const int k = std::min(r * stride, v.n_steps);
      for (int i = 0; i < q; ++i) e.states[base + static_cast<std::size_t>(r) * q + i] = v.states[static_cast<std::size_t>(k) * q + i];
    }
    if (keep) {
      std::copy(v.increments.begin(), v.increments.end(),
                e.increments.begin() + static_cast<std::ptrdiff_t>(v.path_index) * v.n_steps * q);
    }
    e.flagged[v.path_index] = v.flagged ? 1 : 0;
  });
  return e;
}

double girsanov_log_weight(const PathView& path, const DiffusionSpec& spec, const VectorField& psi,
                           const CostFunction& cost) {
  // dM = sigma dW, so grad_g' sigma^{-1} dM = grad_g' dW.
  double log_w = 0.0;
  for (int k = 0; k < path.n_steps; ++k) {
    const double t = k * path.dt;
    const Point x = path.state(k);
    const Point ps = psi(t, x);
    const Point z = spec.sigma_is_identity ? ps : Point(spec.sigma(t, x).transpose() * ps);
    const Point u = cost.grad_g(t, x, z);
    log_w += -u.dot(path.increment(k)) - 0.5 * u.squaredNorm() * path.dt;
  }
  return log_w;
}

WeightReport girsanov_weight(const PathEnsemble& ensemble, const DiffusionSpec& spec, const VectorField& psi,
                             const CostFunction& cost) {
  if (!ensemble.has_increments() || ensemble.record_stride != 1)
    throw InvalidArgument("girsanov_weight needs an ensemble with retained increments");
  if (ensemble.drift_label != "reference")
    throw InvalidArgument("girsanov_weight needs an ensemble simulated under the reference drift");
  WeightReport rep;
  rep.weights.assign(ensemble.n_paths, 0.0);
  const int q = ensemble.dim;
  const int n_rec = ensemble.n_records();
#pragma omp parallel for schedule(static)
  for (int p = 0; p < ensemble.n_paths; ++p) {
    PathView v;
    v.path_index = p;
    v.n_steps = ensemble.n_steps;
    v.dim = q;
    v.dt = ensemble.step_size();
    v.states = std::span<const double>(ensemble.states.data() + static_cast<std::size_t>(p) * n_rec * q,
                                       static_cast<std::size_t>(n_rec) * q);
    v.increments = std::span<const double>(ensemble.increments.data() + static_cast<std::size_t>(p) * ensemble.n_steps * q,
                                           static_cast<std::size_t>(ensemble.n_steps) * q);
    const double lw = girsanov_log_weight(v, spec, psi, cost);
    rep.weights[p] = std::exp(lw);
  }
  double sum = 0.0, sum2 = 0.0;
  int n = 0;
  for (int p = 0; p < ensemble.n_paths; ++p) {
    double& w = rep.weights[p];
    if (!std::isfinite(w) || ensemble.flagged[p]) {
      w = 0.0;
      ++rep.n_flagged;
      continue;
    }
    sum += w;
    sum2 += w * w;
    ++n;
  }
  if (n > 0) {
    rep.mean = sum / n;
    const double var = std::max(0.0, sum2 / n - rep.mean * rep.mean);
    rep.std_error = std::sqrt(var / n);
  }
  rep.mean_warning = std::abs(rep.mean - 1.0) > 5.0 * rep.std_error;
  return rep;
}

void write_paths_csv(const PathEnsemble& ensemble, const std::string& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file);
  out << "path_id,t";
  for (int i = 0; i < ensemble.dim; ++i) out << ",x_" << (i + 1);
  out << "\n";
  out.precision(17);
  for (int p = 0; p < ensemble.n_paths; ++p)
    for (int r = 0; r < ensemble.n_records(); ++r) {
      out << p << "," << ensemble.times[r];
      const Point x = ensemble.state(p, r);
      for (int i = 0; i < ensemble.dim; ++i) out << "," << x(i);
      out << "\n";
    }
}

}  // namespace nelson
