#include "nelson/marginals.hpp"

#include "nelson/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <variant>

namespace nelson {

double MeasureSlice::mass() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

Point MeasureSlice::mean() const {
  Point m = Point::Zero(dim);
  double w = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    m += weights[i] * points[i];
    w += weights[i];
  }
  return w > 0 ? Point(m / w) : m;
}

Matrix MeasureSlice::covariance() const {
  const Point m = mean();
  Matrix c = Matrix::Zero(dim, dim);
  double w = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Point d = points[i] - m;
    c += weights[i] * d * d.transpose();
    w += weights[i];
  }
  return w > 0 ? Matrix(c / w) : c;
}

namespace {

struct GaussianImpl {
  GaussianPath path;
};

struct GridImpl {
  GridDensityData data;
  Point cell_size;
  double cell_volume = 1.0;
  int n_cells = 0;
};

struct EmpiricalImpl {
  EmpiricalData data;
};

}  // namespace

struct MarginalFlow::Impl {
  int dim = 1;
  double horizon = 1.0;
  MassMode mode = MassMode::Probability;
  struct MixtureImpl {
    MarginalFlow a, b;
    double eps;
  };
  std::variant<GaussianImpl, GridImpl, EmpiricalImpl, MixtureImpl> v;
};

namespace {

Matrix psd_sqrt(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  Point d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal();
}

Point cell_center(const GridImpl& g, int flat) {
  const int q = g.data.box.dim();
  Point c(q);
  for (int k = q - 1; k >= 0; --k) {
    const int i = flat % g.data.cells[k];
    flat /= g.data.cells[k];
    c(k) = g.data.box.lo(k) + (i + 0.5) * g.cell_size(k);
  }
  return c;
}

// Density table at time t by linear interpolation between stored times.
std::vector<double> grid_density_at(const GridImpl& g, double t) {
  const auto& ts = g.data.times;
  if (ts.size() == 1 || t <= ts.front()) return g.data.density.front();
  if (t >= ts.back()) return g.data.density.back();
  const auto it = std::upper_bound(ts.begin(), ts.end(), t);
  const std::size_t j = static_cast<std::size_t>(it - ts.begin());
  const double lam = (t - ts[j - 1]) / (ts[j] - ts[j - 1]);
  std::vector<double> d(g.n_cells);
  for (int i = 0; i < g.n_cells; ++i) d[i] = (1 - lam) * g.data.density[j - 1][i] + lam * g.data.density[j][i];
  return d;
}

std::size_t nearest_index(const std::vector<double>& ts, double t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < ts.size(); ++i)
    if (std::abs(ts[i] - t) < std::abs(ts[best] - t)) best = i;
  return best;
}

double weighted_quantile(std::vector<std::pair<double, double>> xw, double p) {
  std::sort(xw.begin(), xw.end());
  double total = 0.0;
  for (const auto& e : xw) total += e.second;
  double acc = 0.0;
  for (const auto& e : xw) {
    acc += e.second;
    if (acc >= p * total) return e.first;
  }
  return xw.back().first;
}

}  // namespace

MarginalFlow MarginalFlow::gaussian(int dim, double horizon, GaussianPath path) {
  if (!path.mean || !path.cov) throw InvalidArgument("gaussian flow needs mean and covariance paths");
  auto impl = std::make_shared<Impl>();
  impl->dim = dim;
  impl->horizon = horizon;
  impl->v = GaussianImpl{std::move(path)};
  MarginalFlow f;
  f.impl_ = impl;
  return f;
}

MarginalFlow MarginalFlow::grid(double horizon, GridDensityData data, MassMode mode) {
  const int q = data.box.dim();
  if (q < 1 || static_cast<int>(data.cells.size()) != q) throw InvalidArgument("grid flow: box/cell dimension mismatch");
  if (data.times.empty() || data.times.size() != data.density.size())
    throw InvalidArgument("grid flow: one density table per time required");
  GridImpl g;
  g.cell_size = Point(q);
  g.n_cells = 1;
  for (int k = 0; k < q; ++k) {
    if (data.cells[k] < 1) throw InvalidArgument("grid flow: cells must be positive");
    g.cell_size(k) = (data.box.hi(k) - data.box.lo(k)) / data.cells[k];
    g.cell_volume *= g.cell_size(k);
    g.n_cells *= data.cells[k];
  }
  for (std::size_t j = 0; j < data.times.size(); ++j) {
    if (static_cast<int>(data.density[j].size()) != g.n_cells) throw InvalidArgument("grid flow: density table has wrong size");
    double mass = 0.0;
    for (double d : data.density[j]) {
      if (!(d >= 0.0) || !std::isfinite(d)) throw InvalidArgument("grid flow: densities must be finite and nonnegative");
      mass += d * g.cell_volume;
    }
    if (mode == MassMode::Probability && std::abs(mass - 1.0) > 1e-6) {
      std::ostringstream os;
      os << "grid flow: slice at t=" << data.times[j] << " has mass " << mass << " (probability mode needs 1)";
      throw InvalidArgument(os.str());
    }
  }
  g.data = std::move(data);
  auto impl = std::make_shared<Impl>();
  impl->dim = q;
  impl->horizon = horizon;
  impl->mode = mode;
  impl->v = std::move(g);
  MarginalFlow f;
  f.impl_ = impl;
  return f;
}

MarginalFlow MarginalFlow::empirical(double horizon, EmpiricalData data) {
  if (data.times.empty() || data.times.size() != data.slices.size())
    throw InvalidArgument("empirical flow: one slice per time required");
  int q = data.slices.front().dim;
  for (auto& s : data.slices) {
    if (s.empty()) throw InvalidArgument("empirical flow: empty slice");
    if (s.weights.empty()) s.weights.assign(s.points.size(), 1.0 / s.points.size());
    const double m = s.mass();
    for (double& w : s.weights) w /= m;
  }
  auto impl = std::make_shared<Impl>();
  impl->dim = q;
  impl->horizon = horizon;
  impl->v = EmpiricalImpl{std::move(data)};
  MarginalFlow f;
  f.impl_ = impl;
  return f;
}

MarginalFlow MarginalFlow::mixture(const MarginalFlow& a, const MarginalFlow& b, double eps) {
  if (a.dim() != b.dim()) throw InvalidArgument("mixture of flows with different dimensions");
  if (!(eps >= 0.0 && eps <= 1.0)) throw InvalidArgument("mixture weight must lie in [0, 1]");
  auto impl = std::make_shared<Impl>();
  impl->dim = a.dim();
  impl->horizon = a.horizon();
  impl->v = Impl::MixtureImpl{a, b, eps};
  MarginalFlow f;
  f.impl_ = impl;
  return f;
}

int MarginalFlow::dim() const { return impl_->dim; }
double MarginalFlow::horizon() const { return impl_->horizon; }
MassMode MarginalFlow::mass_mode() const { return impl_->mode; }

std::string MarginalFlow::kind() const {
  switch (impl_->v.index()) {
    case 0: return "gaussian";
    case 1: return "grid";
    case 2: return "empirical";
    default: return "mixture";
  }
}

bool MarginalFlow::time_continuous() const {
  if (std::holds_alternative<EmpiricalImpl>(impl_->v)) return false;
  if (const auto* m = std::get_if<Impl::MixtureImpl>(&impl_->v)) return m->a.time_continuous() && m->b.time_continuous();
  return true;
}

std::vector<double> MarginalFlow::slice_times() const {
  if (const auto* e = std::get_if<EmpiricalImpl>(&impl_->v)) return e->data.times;
  if (const auto* m = std::get_if<Impl::MixtureImpl>(&impl_->v)) {
    if (!m->a.time_continuous()) return m->a.slice_times();
    if (!m->b.time_continuous()) return m->b.slice_times();
  }
  return linspace(0.0, horizon(), 17);
}

const GaussianPath* MarginalFlow::gaussian_path() const {
  if (const auto* g = std::get_if<GaussianImpl>(&impl_->v)) return &g->path;
  return nullptr;
}

MeasureSlice MarginalFlow::quadrature_slice(double t, const QuadratureOptions& opts) const {
  MeasureSlice s;
  s.dim = dim();
  const int q = dim();
  if (const auto* g = std::get_if<GaussianImpl>(&impl_->v)) {
    const Point m = g->path.mean(t);
    const Matrix L = psd_sqrt(g->path.cov(t));
    const Rule1D gh = gauss_hermite_normal(opts.gh_order);
    const int n = opts.gh_order;
    int total = 1;
    for (int k = 0; k < q; ++k) total *= n;
    s.points.reserve(total);
    s.weights.reserve(total);
    Point xi(q);
    for (int flat = 0; flat < total; ++flat) {
      int r = flat;
      double w = 1.0;
      for (int k = q - 1; k >= 0; --k) {
        const int i = r % n;
        r /= n;
        xi(k) = gh.nodes[i];
        w *= gh.weights[i];
      }
      s.points.push_back(m + L * xi);
      s.weights.push_back(w);
    }
  } else if (const auto* gr = std::get_if<GridImpl>(&impl_->v)) {
    const std::vector<double> d = grid_density_at(*gr, t);
    for (int c = 0; c < gr->n_cells; ++c) {
      if (d[c] <= 0.0) continue;
      s.points.push_back(cell_center(*gr, c));
      s.weights.push_back(d[c] * gr->cell_volume);
    }
  } else if (const auto* e = std::get_if<EmpiricalImpl>(&impl_->v)) {
    s = e->data.slices[nearest_index(e->data.times, t)];
  } else {
    const auto& mx = std::get<Impl::MixtureImpl>(impl_->v);
    MeasureSlice a = mx.a.quadrature_slice(t, opts);
    MeasureSlice b = mx.b.quadrature_slice(t, opts);
    for (auto& w : a.weights) w *= (1.0 - mx.eps);
    for (auto& w : b.weights) w *= mx.eps;
    s.points = std::move(a.points);
    s.weights = std::move(a.weights);
    s.points.insert(s.points.end(), b.points.begin(), b.points.end());
    s.weights.insert(s.weights.end(), b.weights.begin(), b.weights.end());
  }
  return s;
}

MeasureSlice MarginalFlow::quadrature_slice_on(double t, const std::vector<std::vector<double>>& space_breaks,
                                               const QuadratureOptions& opts) const {
  const int q = dim();
  if (space_breaks.empty()) return quadrature_slice(t, opts);
  if (static_cast<int>(space_breaks.size()) != q) throw InvalidArgument("space breakpoints per dimension required");
  if (const auto* mx = std::get_if<Impl::MixtureImpl>(&impl_->v)) {
    MeasureSlice a = mx->a.quadrature_slice_on(t, space_breaks, opts);
    MeasureSlice b = mx->b.quadrature_slice_on(t, space_breaks, opts);
    for (auto& w : a.weights) w *= (1.0 - mx->eps);
    for (auto& w : b.weights) w *= mx->eps;
    a.points.insert(a.points.end(), b.points.begin(), b.points.end());
    a.weights.insert(a.weights.end(), b.weights.begin(), b.weights.end());
    return a;
  }
  const auto* g = std::get_if<GaussianImpl>(&impl_->v);
  if (!g) return quadrature_slice(t, opts);
  const Point m = g->path.mean(t);
  const Matrix S = g->path.cov(t);
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success || S.diagonal().minCoeff() < 1e-14) return quadrature_slice(t, opts);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double norm = std::exp(-0.5 * (q * std::log(2.0 * std::numbers::pi) + logdet));
  std::vector<Rule1D> axes(q);
  for (int k = 0; k < q; ++k) {
    const auto& br = space_breaks[k];
    for (std::size_t c = 0; c + 1 < br.size(); ++c) {
      if (!(br[c + 1] > br[c])) continue;
      // Cells wide against the slice spread get more points, so that the
      // Gaussian weight stays resolved on coarse knot layouts.
      const double sd = std::sqrt(S(k, k));
      const int n = std::max(opts.gl_per_cell, static_cast<int>(std::ceil(4.0 * (br[c + 1] - br[c]) / sd)));
      const Rule1D r = gauss_legendre(n, br[c], br[c + 1]);
      axes[k].nodes.insert(axes[k].nodes.end(), r.nodes.begin(), r.nodes.end());
      axes[k].weights.insert(axes[k].weights.end(), r.weights.begin(), r.weights.end());
    }
  }
  MeasureSlice s;
  s.dim = q;
  std::vector<int> pos(q, 0);
  while (true) {
    Point x(q);
    double w = norm;
    for (int k = 0; k < q; ++k) {
      x(k) = axes[k].nodes[pos[k]];
      w *= axes[k].weights[pos[k]];
    }
    const Point d = x - m;
    w *= std::exp(-0.5 * d.dot(llt.solve(d)));
    if (w > 0.0) {
      s.points.push_back(x);
      s.weights.push_back(w);
    }
    int k = q - 1;
    while (k >= 0 && ++pos[k] == static_cast<int>(axes[k].nodes.size())) pos[k--] = 0;
    if (k < 0) break;
  }
  return s;
}

MeasureSlice MarginalFlow::sample_slice(double t, int n, std::uint64_t seed) const {
  MeasureSlice s;
  s.dim = dim();
  const int q = dim();
  Rng rng(seed, 0xabcdefULL);
  s.points.reserve(n);
  if (const auto* g = std::get_if<GaussianImpl>(&impl_->v)) {
    const Point m = g->path.mean(t);
    const Matrix L = psd_sqrt(g->path.cov(t));
    for (int i = 0; i < n; ++i) {
      Point z(q);
      for (int k = 0; k < q; ++k) z(k) = rng.normal();
      s.points.push_back(m + L * z);
    }
  } else if (const auto* mx = std::get_if<Impl::MixtureImpl>(&impl_->v)) {
    const MeasureSlice a = mx->a.sample_slice(t, n, mix64(seed + 1));
    const MeasureSlice b = mx->b.sample_slice(t, n, mix64(seed + 2));
    for (int i = 0; i < n; ++i) s.points.push_back(rng.uniform() < mx->eps ? b.points[i] : a.points[i]);
  } else {
    // Categorical draw from the quadrature/particle weights; grid draws are
    // spread uniformly inside the chosen cell.
    const MeasureSlice base = quadrature_slice(t);
    std::vector<double> cdf(base.weights.size());
    std::partial_sum(base.weights.begin(), base.weights.end(), cdf.begin());
    const auto* gr = std::get_if<GridImpl>(&impl_->v);
    for (int i = 0; i < n; ++i) {
      const double u = rng.uniform() * cdf.back();
      std::size_t j = static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      j = std::min(j, cdf.size() - 1);
      Point x = base.points[j];
      if (gr)
        for (int k = 0; k < q; ++k) x(k) += (rng.uniform() - 0.5) * gr->cell_size(k);
      s.points.push_back(x);
    }
  }
  s.weights.assign(s.points.size(), 1.0 / std::max<std::size_t>(1, s.points.size()));
  return s;
}

MeasureSlice MarginalFlow::discretize_slice(double t, int n, std::uint64_t seed) const {
  if (const auto* g = std::get_if<GaussianImpl>(&impl_->v); g && dim() == 1) {
    MeasureSlice s;
    s.dim = 1;
    const double m = g->path.mean(t)(0);
    const double sd = std::sqrt(std::max(0.0, g->path.cov(t)(0, 0)));
    s.points.reserve(n);
    for (int i = 0; i < n; ++i) {
      Point x(1);
      x(0) = m + sd * normal_quantile((i + 0.5) / n);
      s.points.push_back(x);
    }
    s.weights.assign(n, 1.0 / n);
    return s;
  }
  if (const auto* e = std::get_if<EmpiricalImpl>(&impl_->v)) return e->data.slices[nearest_index(e->data.times, t)];
  return sample_slice(t, n, seed);
}

double MarginalFlow::total_mass_at(double t) const { return quadrature_slice(t).mass(); }

Box MarginalFlow::mass_box(double fraction) const {
  const int q = dim();
  Box box{Point::Constant(q, 1e300), Point::Constant(q, -1e300)};
  const double tail = 0.5 * (1.0 - fraction);
  std::vector<double> ts = time_continuous() ? linspace(0.0, horizon(), 33) : slice_times();
  if (const auto* g = std::get_if<GaussianImpl>(&impl_->v)) {
    const double z = normal_quantile(1.0 - tail);
    for (double t : ts) {
      const Point m = g->path.mean(t);
      const Matrix S = g->path.cov(t);
      for (int k = 0; k < q; ++k) {
        const double sd = std::sqrt(std::max(0.0, S(k, k)));
        box.lo(k) = std::min(box.lo(k), m(k) - z * sd);
        box.hi(k) = std::max(box.hi(k), m(k) + z * sd);
      }
    }
    return box;
  }
  if (const auto* mx = std::get_if<Impl::MixtureImpl>(&impl_->v)) {
    const Box a = mx->a.mass_box(fraction), b = mx->b.mass_box(fraction);
    return Box{a.lo.cwiseMin(b.lo), a.hi.cwiseMax(b.hi)};
  }
  for (double t : ts) {
    const MeasureSlice s = quadrature_slice(t);
    for (int k = 0; k < q; ++k) {
      std::vector<std::pair<double, double>> xw;
      xw.reserve(s.points.size());
      for (std::size_t i = 0; i < s.points.size(); ++i) xw.emplace_back(s.points[i](k), s.weights[i]);
      box.lo(k) = std::min(box.lo(k), weighted_quantile(xw, tail));
      box.hi(k) = std::max(box.hi(k), weighted_quantile(xw, 1.0 - tail));
    }
  }
  if (const auto* gr = std::get_if<GridImpl>(&impl_->v)) {
    box.lo = box.lo.cwiseMax(gr->data.box.lo);
    box.hi = box.hi.cwiseMin(gr->data.box.hi);
  }
  return box;
}

double MarginalFlow::spatial_scale() const {
  double s = 0.0;
  std::vector<double> ts = time_continuous() ? linspace(0.0, horizon(), 17) : slice_times();
  for (double t : ts) s = std::max(s, std::sqrt(std::max(0.0, quadrature_slice(t).covariance().trace())));
  return s;
}

double spacetime_quadrature(const MarginalFlow& flow, const ScalarField& f, const QuadratureOptions& opts) {
  std::vector<double> ts;
  if (flow.time_continuous()) {
    int n = std::max(3, opts.time_slices);
    if (n % 2 == 0) ++n;
    ts = linspace(0.0, flow.horizon(), n);
  } else {
    ts = flow.slice_times();
  }
  const std::vector<double> wt = simpson_weights(ts);
  double total = 0.0;
  for (std::size_t j = 0; j < ts.size(); ++j) {
    if (wt[j] == 0.0) continue;
    const MeasureSlice s = flow.quadrature_slice(ts[j], opts);
    double acc = 0.0;
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const double v = f(ts[j], s.points[i]);
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "integrand is not finite at quadrature node t=" << ts[j] << " x=" << s.points[i].transpose();
        throw Error(os.str());
      }
      acc += s.weights[i] * v;
    }
    total += wt[j] * acc;
  }
  return total;
}

std::vector<SpaceTimeNode> spacetime_rule(const MarginalFlow& flow, const std::vector<double>& time_breaks,
                                          const QuadratureOptions& opts,
                                          const std::vector<std::vector<double>>& space_breaks) {
  std::vector<SpaceTimeNode> nodes;
  std::vector<std::pair<double, double>> tw;
  if (flow.time_continuous()) {
    for (std::size_t k = 0; k + 1 < time_breaks.size(); ++k) {
      const double a = time_breaks[k], b = time_breaks[k + 1];
      if (!(b > a)) continue;
      const Rule1D gl = gauss_legendre(opts.gl_per_interval, a, b);
      for (std::size_t i = 0; i < gl.nodes.size(); ++i) tw.emplace_back(gl.nodes[i], gl.weights[i]);
    }
  } else {
    const std::vector<double> ts = flow.slice_times();
    const std::vector<double> w = simpson_weights(ts);
    for (std::size_t i = 0; i < ts.size(); ++i) tw.emplace_back(ts[i], w[i]);
  }
  for (const auto& [t, w] : tw) {
    if (w == 0.0) continue;
    const MeasureSlice s = flow.quadrature_slice_on(t, space_breaks, opts);
    for (std::size_t i = 0; i < s.points.size(); ++i) nodes.push_back({t, s.points[i], w * s.weights[i]});
  }
  return nodes;
}

namespace {

double w1_1d(std::vector<std::pair<double, double>> a, std::vector<std::pair<double, double>> b) {
  double ma = 0.0, mb = 0.0;
  for (const auto& e : a) ma += e.second;
  for (const auto& e : b) mb += e.second;
  std::vector<std::pair<double, double>> all;
  all.reserve(a.size() + b.size());
  for (const auto& e : a) all.emplace_back(e.first, e.second / ma);
  for (const auto& e : b) all.emplace_back(e.first, -e.second / mb);
  std::sort(all.begin(), all.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
  double diff = 0.0, w1 = 0.0;
  for (std::size_t i = 0; i + 1 < all.size(); ++i) {
    diff += all[i].second;
    w1 += std::abs(diff) * (all[i + 1].first - all[i].first);
  }
  return w1;
}

std::vector<std::pair<double, double>> project(const MeasureSlice& s, const Point& dir) {
  std::vector<std::pair<double, double>> out;
  out.reserve(s.points.size());
  for (std::size_t i = 0; i < s.points.size(); ++i) out.emplace_back(s.points[i].dot(dir), s.weights[i]);
  return out;
}

}  // namespace

double w1_slice_distance(const MeasureSlice& a, const MeasureSlice& b, std::uint64_t seed) {
  if (a.empty() || b.empty()) throw InvalidArgument("w1_slice_distance: empty slice");
  if (a.dim != b.dim) throw InvalidArgument("w1_slice_distance: dimension mismatch");
  const int q = a.dim;
  if (q == 1) {
    Point e(1);
    e(0) = 1.0;
    return w1_1d(project(a, e), project(b, e));
  }
  constexpr int kDirections = 64;
  Rng rng(seed, 0);
  double total = 0.0;
  for (int d = 0; d < kDirections; ++d) {
    Point dir(q);
    for (int k = 0; k < q; ++k) dir(k) = rng.normal();
    dir /= dir.norm();
    total += w1_1d(project(a, dir), project(b, dir));
  }
  return total / kDirections;
}

MarginalFlow flow_from_ensemble(const PathEnsemble& ensemble, const std::vector<double>& slice_times) {
  EmpiricalData data;
  for (double t : slice_times) {
    if (t < -1e-12 || t > ensemble.horizon + 1e-12) throw InvalidArgument("slice time outside [0, T]");
    const int r = ensemble.nearest_record(t);
    MeasureSlice s;
    s.dim = ensemble.dim;
    s.points.reserve(ensemble.n_paths);
    for (int p = 0; p < ensemble.n_paths; ++p)
      if (!ensemble.flagged[p]) s.points.push_back(ensemble.state(p, r));
    s.weights.assign(s.points.size(), 1.0 / std::max<std::size_t>(1, s.points.size()));
    data.times.push_back(ensemble.times[r]);
    data.slices.push_back(std::move(s));
  }
  return MarginalFlow::empirical(ensemble.horizon, std::move(data));
}

FlowDiagnostics diagnose_flow(const MarginalFlow& flow, const InitialLaw& m0, int n_slices, std::uint64_t seed) {
  FlowDiagnostics d;
  const std::vector<double> ts = flow.time_continuous() ? linspace(0.0, flow.horizon(), n_slices) : flow.slice_times();
  constexpr int kN = 2000;
  MeasureSlice prev = flow.discretize_slice(ts.front(), kN, seed);
  d.slice_masses.push_back(flow.total_mass_at(ts.front()));
  for (std::size_t j = 1; j < ts.size(); ++j) {
    MeasureSlice cur = flow.discretize_slice(ts[j], kN, mix64(seed + j));
    d.slice_masses.push_back(flow.total_mass_at(ts[j]));
    const double dt = ts[j] - ts[j - 1];
    if (dt > 0) d.continuity_constant = std::max(d.continuity_constant, w1_slice_distance(prev, cur, seed) / dt);
    prev = std::move(cur);
  }
  MeasureSlice init;
  init.dim = flow.dim();
  Rng rng(seed, 1);
  for (int i = 0; i < kN; ++i) init.points.push_back(m0.sample(rng));
  init.weights.assign(kN, 1.0 / kN);
  d.initial_w1 = w1_slice_distance(flow.discretize_slice(ts.front(), kN, seed), init, seed);
  return d;
}

namespace {

std::vector<std::vector<double>> read_csv_rows(const std::string& file, std::vector<std::string>& header) {
  std::ifstream in(file);
  if (!in) throw InvalidArgument("cannot open " + file);
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument(file + ": empty file");
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != header.size()) throw InvalidArgument(file + ": ragged row");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

MarginalFlow read_grid_csv(const std::string& file, double horizon, MassMode mode) {
  std::vector<std::string> header;
  const auto rows = read_csv_rows(file, header);
  const int q = static_cast<int>(header.size()) - 2;
  if (q < 1 || header.front() != "t" || header.back() != "density")
    throw InvalidArgument(file + ": expected header t,x_1..x_q,density");
  std::vector<std::vector<double>> centers(q);
  std::map<double, int> time_index;
  for (const auto& r : rows) {
    time_index.emplace(r[0], 0);
    for (int k = 0; k < q; ++k) centers[k].push_back(r[1 + k]);
  }
  GridDensityData data;
  data.box = Box{Point(q), Point(q)};
  data.cells.resize(q);
  for (int k = 0; k < q; ++k) {
    auto& c = centers[k];
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }), c.end());
    const double h = c.size() > 1 ? (c.back() - c.front()) / (c.size() - 1) : 1.0;
    data.cells[k] = static_cast<int>(c.size());
    data.box.lo(k) = c.front() - 0.5 * h;
    data.box.hi(k) = c.back() + 0.5 * h;
  }
  int n_cells = 1;
  for (int k = 0; k < q; ++k) n_cells *= data.cells[k];
  int j = 0;
  for (auto& [t, idx] : time_index) {
    idx = j++;
    data.times.push_back(t);
  }
  data.density.assign(data.times.size(), std::vector<double>(n_cells, 0.0));
  for (const auto& r : rows) {
    int flat = 0;
    for (int k = 0; k < q; ++k) {
      const double h = (data.box.hi(k) - data.box.lo(k)) / data.cells[k];
      const int i = static_cast<int>(std::lround((r[1 + k] - data.box.lo(k)) / h - 0.5));
      flat = flat * data.cells[k] + std::clamp(i, 0, data.cells[k] - 1);
    }
    data.density[time_index[r[0]]][flat] = r.back();
  }
  return MarginalFlow::grid(horizon, std::move(data), mode);
}

MarginalFlow read_empirical_csv(const std::string& file, double horizon) {
  std::vector<std::string> header;
  const auto rows = read_csv_rows(file, header);
  const bool weighted = header.back() == "weight";
  const int q = static_cast<int>(header.size()) - 1 - (weighted ? 1 : 0);
  if (q < 1 || header.front() != "t") throw InvalidArgument(file + ": expected header t,x_1..x_q[,weight]");
  std::map<double, MeasureSlice> slices;
  for (const auto& r : rows) {
    auto& s = slices[r[0]];
    s.dim = q;
    Point x(q);
    for (int k = 0; k < q; ++k) x(k) = r[1 + k];
    s.points.push_back(x);
    s.weights.push_back(weighted ? r.back() : 1.0);
  }
  EmpiricalData data;
  for (auto& [t, s] : slices) {
    data.times.push_back(t);
    data.slices.push_back(std::move(s));
  }
  return MarginalFlow::empirical(horizon, std::move(data));
}

}  // namespace nelson
