#include "nelson/catalog.hpp"

#include "nelson/quadrature.hpp"
#include "nelson/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace nelson {

VariancePath VariancePath::linear(double s0sq, double slope) {
  return {[=](double t) { return s0sq + slope * t; }, [=](double) { return slope; }, "linear"};
}

VariancePath VariancePath::square(double s0) {
  return {[=](double t) { return (s0 + t) * (s0 + t); }, [=](double t) { return 2.0 * (s0 + t); }, "square"};
}

VariancePath VariancePath::constant(double v) {
  return {[=](double) { return v; }, [](double) { return 0.0; }, "constant"};
}

double GaussianCase::gain(double t) const {
  const double s2 = variance.s2(t);
  return (variance.ds2(t) - 1.0) / (2.0 * s2);
}

ControlledDrift GaussianCase::oracle_drift() const {
  ControlledDrift d;
  d.label = "oracle";
  const VariancePath v = variance;
  auto c = [v](double t) { return (v.ds2(t) - 1.0) / (2.0 * v.s2(t)); };
  d.control = [c](double t, const Point& x) { return Point(c(t) * x); };
  d.drift = d.control;
  return d;
}

GaussianCase gaussian_entropic_case(const VariancePath& s, double horizon) {
  if (!s.s2 || !s.ds2) throw InvalidArgument("variance path needs s^2 and its derivative");
  for (double t : linspace(0.0, horizon, 1001)) {
    const double v = s.s2(t);
    if (!(v > 0.0) || !std::isfinite(v)) {
      std::ostringstream os;
      os << "variance path hits zero (or is not finite) at t=" << t;
      throw InvalidArgument(os.str());
    }
  }
  GaussianCase g;
  g.variance = s;
  g.horizon = horizon;
  Point m0 = Point::Zero(1);
  Matrix c0(1, 1);
  c0(0, 0) = s.s2(0.0);
  g.spec = brownian_spec(1, horizon, InitialLaw::gaussian(m0, c0));
  const VariancePath v = s;
  g.flow = MarginalFlow::gaussian(1, horizon,
                                  GaussianPath{[](double) { return Point(Point::Zero(1)); },
                                               [v](double t) {
                                                 Matrix m(1, 1);
                                                 m(0, 0) = v.s2(t);
                                                 return m;
                                               }});
  // Composite Gauss-Legendre, 256 panels of 8 points.
  double value = 0.0;
  const int panels = 256;
  for (int k = 0; k < panels; ++k) {
    const Rule1D r = gauss_legendre(8, horizon * k / panels, horizon * (k + 1) / panels);
    for (std::size_t i = 0; i < r.nodes.size(); ++i) {
      const double c = g.gain(r.nodes[i]);
      value += r.weights[i] * 0.5 * c * c * s.s2(r.nodes[i]);
    }
  }
  g.oracle_value = value;
  return g;
}

double BesselCase::psi(double x) const {
  if (x == 0.0) return 0.0;
  const double mag = std::pow((delta - 1.0) / (2.0 * std::abs(x)), 1.0 / (q - 1.0));
  return x > 0 ? -mag : mag;
}

SingularDriftControl BesselCase::control(int n_steps, double clip_factor) const {
  return SingularDriftControl{clip_factor * std::sqrt(horizon / n_steps), true};
}

BesselCase bessel_case(double delta, double p, double horizon, double x0) {
  if (!(delta > 1.0 && delta < 2.0)) throw InvalidArgument("Bessel dimension delta must lie in (1, 2)");
  if (!(p > 1.0)) throw InvalidArgument("cost exponent p must exceed 1");
  BesselCase c;
  c.delta = delta;
  c.nu = delta / 2.0 - 1.0;
  c.p = p;
  c.q = p / (p - 1.0);
  c.horizon = horizon;
  c.x0 = x0;
  c.admissible = p < 2.0 * c.nu + 2.0;
  Point start(1);
  start(0) = x0;
  c.spec = brownian_spec(1, horizon, InitialLaw::dirac(start));
  c.spec.drift = [delta](double, const Point& x) { return Point((delta - 1.0) / (2.0 * x.array())); };
  c.spec.drift_name = "bessel";
  return c;
}

McEstimate bessel_inverse_moment(const BesselCase& c, int n_paths, int n_steps, std::uint64_t seed,
                                 double cap_factor) {
  SimulationOptions opts;
  opts.n_paths = n_paths;
  opts.n_steps = n_steps;
  opts.seed = seed;
  opts.singular = c.control(n_steps);
  const double r = cap_factor * std::sqrt(c.horizon / n_steps);
  std::vector<double> v(n_paths, 0.0);
  simulate_paths(c.spec, nullptr, opts, [&](const PathView& path) {
    double acc = 0.0;
    for (int k = 0; k < path.n_steps; ++k) acc += std::pow(std::max(std::abs(path.state(k)(0)), r), -c.p);
    v[path.path_index] = acc * path.dt;
  });
  double s = 0.0, s2 = 0.0;
  for (double x : v) {
    s += x;
    s2 += x * x;
  }
  McEstimate e;
  e.estimate = s / n_paths;
  e.std_error = std::sqrt(std::max(0.0, s2 / n_paths - e.estimate * e.estimate) / n_paths);
  return e;
}

LabeledEnsemble bessel_y_ensemble(const BesselCase& c, int n_paths, int n_steps, std::uint64_t seed,
                                  int record_stride, bool control_labels) {
  SimulationOptions opts;
  opts.n_paths = n_paths;
  opts.n_steps = n_steps;
  opts.seed = seed;
  opts.singular = c.control(n_steps);
  const double r = opts.singular->clip_radius;
  const int stride = std::max(1, record_stride);
  LabeledEnsemble e;
  e.n_paths = n_paths;
  std::vector<int> rec_steps;
  for (int k = 0; k <= n_steps; k += stride) rec_steps.push_back(k);
  if (rec_steps.back() != n_steps) rec_steps.push_back(n_steps);
  const double dt = c.horizon / n_steps;
  for (int k : rec_steps) e.times.push_back(k * dt);
  const std::size_t n_rec = rec_steps.size();
  e.states.assign(static_cast<std::size_t>(n_paths) * n_rec, 0.0);
  e.tau.assign(n_paths, INFINITY);
  e.label.assign(n_paths, 0);
  simulate_paths(c.spec, nullptr, opts, [&](const PathView& path) {
    const int p = path.path_index;
    int hit = -1;
    for (int k = 1; k <= path.n_steps; ++k)
      if (path.state(k)(0) <= r) {
        hit = k;
        break;
      }
    double sign = 1.0;
    if (hit >= 0) {
      const double mid = path.state(hit / 2)(0);
      e.label[p] = mid > 1.0 ? 1 : 0;
      sign = mid > 1.0 ? 1.0 : -1.0;
      e.tau[p] = hit * path.dt;
    }
    if (control_labels) {
      // Same Y path, label replaced by a coin independent of the flip.
      Rng coin(seed ^ 0x5bd1e995ULL, static_cast<std::uint64_t>(p));
      e.label[p] = coin.uniform() < 0.5 ? 1 : 0;
    }
    for (std::size_t j = 0; j < n_rec; ++j) {
      const int k = rec_steps[j];
      const double x = path.state(k)(0);
      e.states[static_cast<std::size_t>(p) * n_rec + j] = (hit >= 0 && k > hit) ? sign * x : x;
    }
  });
  return e;
}

Field2D Field2D::zero() {
  auto z = [](double, double) { return 0.0; };
  return {z, z, z, z, z, z, "zero"};
}

namespace {

struct Bump1D {
  double w;
  double v(double x) const {
    const double u = x / w;
    return std::abs(u) < 1 ? std::pow(1 - u * u, 3) : 0.0;
  }
  double d1(double x) const {
    const double u = x / w;
    return std::abs(u) < 1 ? -6.0 * u * std::pow(1 - u * u, 2) / w : 0.0;
  }
  double d2(double x) const {
    const double u = x / w;
    return std::abs(u) < 1 ? (-6.0 * std::pow(1 - u * u, 2) + 24.0 * u * u * (1 - u * u)) / (w * w) : 0.0;
  }
};

}  // namespace

Field2D Field2D::separable_bumps(double amplitude, double wx, double wy) {
  const Bump1D p{wx}, q{wy};
  const double a = amplitude;
  return {[=](double x, double y) { return a * p.v(x) * q.v(y); },
          [=](double x, double y) { return a * p.d1(x) * q.v(y); },
          [=](double x, double y) { return a * p.v(x) * q.d1(y); },
          [=](double x, double y) { return a * p.d2(x) * q.v(y); },
          [=](double x, double y) { return a * p.d1(x) * q.d1(y); },
          [=](double x, double y) { return a * p.v(x) * q.d2(y); },
          "separable_bumps"};
}

Field2D Field2D::radial_bump(double amplitude, double radius) {
  const double R2 = radius * radius, a = amplitude;
  // rho(u) = a (1 - u/R2)^3 on u < R2.
  auto r1 = [=](double u) { return u < R2 ? -3.0 * a / R2 * std::pow(1 - u / R2, 2) : 0.0; };
  auto r2 = [=](double u) { return u < R2 ? 6.0 * a / (R2 * R2) * (1 - u / R2) : 0.0; };
  return {[=](double x, double y) {
            const double u = x * x + y * y;
            return u < R2 ? a * std::pow(1 - u / R2, 3) : 0.0;
          },
          [=](double x, double y) { return 2 * x * r1(x * x + y * y); },
          [=](double x, double y) { return 2 * y * r1(x * x + y * y); },
          [=](double x, double y) { return 2 * r1(x * x + y * y) + 4 * x * x * r2(x * x + y * y); },
          [=](double x, double y) { return 4 * x * y * r2(x * x + y * y); },
          [=](double x, double y) { return 2 * r1(x * x + y * y) + 4 * y * y * r2(x * x + y * y); },
          "radial_bump"};
}

Field2D Field2D::swapped() const {
  const Field2D f = *this;
  return {[f](double x, double y) { return f.B(y, x); },   [f](double x, double y) { return f.By(y, x); },
          [f](double x, double y) { return f.Bx(y, x); },  [f](double x, double y) { return f.Byy(y, x); },
          [f](double x, double y) { return f.Bxy(y, x); }, [f](double x, double y) { return f.Bxx(y, x); },
          f.name + "_swapped"};
}

NonUniversalityReport nonuniversality_case(const Field2D& B, int n_grid, double half_width) {
  if (n_grid < 2) throw InvalidArgument("grid needs at least 2 points per side");
  NonUniversalityReport rep;
  rep.grid = n_grid;
  rep.half_width = half_width;
  rep.residual.assign(static_cast<std::size_t>(n_grid) * n_grid, 0.0);
  const std::vector<double> g = linspace(-half_width, half_width, n_grid);
  double max_grad = 0.0, max_hess = 0.0;
  for (int j = 0; j < n_grid; ++j)
    for (int i = 0; i < n_grid; ++i) {
      const double x = g[i], y = g[j];
      const double bx = B.Bx(x, y), by = B.By(x, y);
      const double bxx = B.Bxx(x, y), bxy = B.Bxy(x, y), byy = B.Byy(x, y);
      const double n = std::hypot(bx, by);
      max_grad = std::max(max_grad, n);
      max_hess = std::max({max_hess, std::abs(bxx), std::abs(bxy), std::abs(byy)});
      double r = 0.0;
      if (n > 0.0) r = (by * (bx * bxx + by * bxy) - bx * (bx * bxy + by * byy)) / n;
      rep.residual[static_cast<std::size_t>(j) * n_grid + i] = r;
      rep.max_residual = std::max(rep.max_residual, std::abs(r));
    }
  rep.scale = max_grad * max_hess;
  rep.tol_curl = 1e-6 * rep.scale;
  rep.universal_candidate_fails = rep.max_residual > rep.tol_curl;
  return rep;
}

NonUniversalitySolve nonuniversality_full_solve(const Field2D& B, double half_width, int cells, int space_knots,
                                                int time_knots, double horizon) {
  GridDensityData data;
  data.times = {0.0, horizon};
  data.box = Box{Point::Constant(2, -half_width), Point::Constant(2, half_width)};
  data.cells = {cells, cells};
  data.density.assign(2, std::vector<double>(static_cast<std::size_t>(cells) * cells, 1.0));
  const MarginalFlow flow = MarginalFlow::grid(horizon, data, MassMode::TruncatedSigmaFinite);

  DiffusionSpec spec = brownian_spec(2, horizon, InitialLaw::dirac(Point::Zero(2)));
  const double L = half_width;
  spec.m0.kind = InitialLaw::Kind::Sampler;
  spec.m0.sampler = [L](Rng& rng) {
    Point x(2);
    x << (2 * rng.uniform() - 1) * L, (2 * rng.uniform() - 1) * L;
    return x;
  };
  spec.drift = [B](double, const Point& x) {
    Point d(2);
    d << B.Bx(x(0), x(1)), B.By(x(0), x(1));
    return d;
  };
  spec.drift_name = B.name + "_gradient";

  BasisOptions bo;
  bo.box = data.box;
  bo.pad_knots = 0;  // keep every element inside the box
  bo.space_knots = space_knots;
  bo.time_knots = time_knots;
  const TestFunctionBasis basis = TestFunctionBasis::build(flow, bo);
  SolverOptions so;
  so.compute_norm = false;
  NonUniversalitySolve out;
  const CostFunction quad = CostFunction::quadratic(), cubic = CostFunction::power(3.0);
  const DualSolution sq = maximize_dual(basis, spec, flow, quad, so);
  const DualSolution sc = maximize_dual(basis, spec, flow, cubic, so);
  out.value_quadratic = sq.dual_value;
  out.value_cubic = sc.dual_value;
  out.certified = sq.certified && sc.certified;
  const ControlledDrift dq = recover_drift(sq, spec, quad), dc = recover_drift(sc, spec, cubic);
  double num = 0.0, den = 0.0, err = 0.0;
  for (double t : linspace(0.25 * horizon, 0.75 * horizon, 5))
    for (double x : linspace(-L, L, 41))
      for (double y : linspace(-L, L, 41)) {
        Point z(2);
        z << x, y;
        const Point a = dq.drift(t, z), b = dc.drift(t, z), ref = spec.b(t, z);
        num += (a - b).squaredNorm();
        err += a.squaredNorm();
        den += ref.squaredNorm();
      }
  out.drift_discrepancy = std::sqrt(num / den);
  out.quadratic_drift_error = std::sqrt(err / den);
  return out;
}

}  // namespace nelson
