#include "nelson/cost.hpp"

#include "nelson/marginals.hpp"
#include "nelson/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace nelson {

namespace {

constexpr double kGolden = 0.6180339887498949;
constexpr double kBracketTol = 1e-10;
constexpr int kMaxDoublings = 1000;
constexpr int kMaxGoldenIter = 600;
constexpr int kMaxAlternatingSweeps = 200;

void require_finite(const Point& v, const char* what) {
  if (!v.allFinite()) {
    std::ostringstream os;
    os << "non-finite " << what << " passed to cost evaluation";
    throw InvalidArgument(os.str());
  }
}

// Maximizes a concave f on [0, inf): bracket by doubling the upper end until
// the forward slope turns negative, then golden-section search.
template <class F>
double maximize_concave_halfline(F&& f, double* arg_out) {
  double lo = 0.0;
  double hi = 1.0;
  auto slope = [&](double x) {
    const double h = 1e-7 * std::max(1.0, x);
    return (f(x + h) - f(std::max(0.0, x - h))) / (x + h - std::max(0.0, x - h));
  };
  int doublings = 0;
  while (slope(hi) > 0.0) {
    lo = hi;
    hi *= 2.0;
    if (++doublings > kMaxDoublings || !std::isfinite(hi)) {
      throw ConjugationError("numerical conjugation: maximizer not bracketed", hi - lo);
    }
  }
  double a = lo, b = hi;
  double c = b - kGolden * (b - a);
  double d = a + kGolden * (b - a);
  double fc = f(c), fd = f(d);
  int iter = 0;
  while (b - a > kBracketTol * std::max(1.0, b)) {
    if (++iter > kMaxGoldenIter) {
      std::ostringstream os;
      os << "numerical conjugation did not converge; bracket width " << (b - a);
      throw ConjugationError(os.str(), b - a);
    }
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kGolden * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kGolden * (b - a);
      fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  if (arg_out) *arg_out = x;
  return std::max({f(x), f(a), f(b), f(0.0)});
}

// Same as above on the whole line: the sign of the slope at 0 picks the side.
template <class F>
double maximize_concave_line(F&& f, double* arg_out) {
  const double h = 1e-9;
  const double s0 = (f(h) - f(-h)) / (2 * h);
  if (s0 == 0.0) {
    if (arg_out) *arg_out = 0.0;
    return f(0.0);
  }
  const double sign = s0 > 0 ? 1.0 : -1.0;
  double arg = 0.0;
  const double v = maximize_concave_halfline([&](double r) { return f(sign * r); }, &arg);
  if (arg_out) *arg_out = sign * arg;
  return v;
}

}  // namespace

CostFunction CostFunction::quadratic() {
  CostFunction c;
  c.kind_ = CostKind::Quadratic;
  c.p_ = 2.0;
  c.p_growth = 2.0;
  c.doubling_C = 4.0;
  c.ell = 2.0;
  return c;
}

CostFunction CostFunction::power(double p, ScalarField scale) {
  if (!(p > 1.0) || !std::isfinite(p)) throw InvalidArgument("power cost requires p > 1");
  CostFunction c;
  c.kind_ = CostKind::Power;
  c.p_ = p;
  c.scale_ = std::move(scale);
  c.p_growth = p;
  c.doubling_C = std::pow(2.0, p);
  c.ell = std::pow(2.0, 1.0 / (p - 1.0));
  return c;
}

CostFunction CostFunction::power_with_log(double p, ScalarField scale) {
  if (!(p > 1.0) || !std::isfinite(p)) throw InvalidArgument("power-log cost requires p > 1");
  CostFunction c;
  c.kind_ = CostKind::PowerWithLog;
  c.p_ = p;
  c.scale_ = std::move(scale);
  c.p_growth = p;
  c.doubling_C = std::pow(2.0, p) * (1.0 + std::log(2.0));
  c.ell = std::pow(2.0, 2.0 / (p - 1.0));
  // phi(r) - phi(ell r)/(2 ell) is positive only on a bounded range of r;
  // its supremum (times R) is the H witness.
  const auto phi = [p](double r) { return r > 0 ? std::pow(r, p) * (1.0 + std::abs(std::log(r))) : 0.0; };
  double k = 0.0;
  for (int i = 0; i <= 4000; ++i) {
    const double r = std::pow(10.0, -8.0 + 12.0 * i / 4000.0);
    k = std::max(k, phi(r) - phi(c.ell * r) / (2.0 * c.ell));
  }
  c.log_H_constant_ = 1.01 * k + 1e-12;
  const double kk = c.log_H_constant_;
  ScalarField sc = c.scale_;
  c.H = [kk, sc](double t, const Point& x) { return kk * (sc ? sc(t, x) : 1.0); };
  return c;
}

CostFunction CostFunction::custom(GStar gstar, bool radial, double p_growth) {
  if (!gstar) throw InvalidArgument("custom cost requires a g* evaluator");
  CostFunction c;
  c.kind_ = CostKind::Custom;
  c.custom_ = std::move(gstar);
  c.radial_ = radial;
  c.p_ = p_growth;
  c.p_growth = p_growth;
  return c;
}

std::string CostFunction::name() const {
  std::ostringstream os;
  switch (kind_) {
    case CostKind::Quadratic: return "quadratic";
    case CostKind::Power: os << "power(p=" << p_ << ")"; return os.str();
    case CostKind::PowerWithLog: os << "power_log(p=" << p_ << ")"; return os.str();
    case CostKind::Custom: return radial_ ? "custom(radial)" : "custom";
  }
  return "unknown";
}

bool CostFunction::quadratic_growth() const {
  switch (kind_) {
    case CostKind::Quadratic: return true;
    case CostKind::Power:
    case CostKind::PowerWithLog: return p_ >= 2.0;
    case CostKind::Custom: return p_growth >= 2.0;
  }
  return false;
}

double CostFunction::scale_at(double t, const Point& x) const { return scale_ ? scale_(t, x) : 1.0; }

double CostFunction::gstar(double t, const Point& x, const Point& y) const {
  require_finite(y, "y");
  switch (kind_) {
    case CostKind::Quadratic: return 0.5 * y.squaredNorm();
    case CostKind::Power: return scale_at(t, x) * std::pow(y.norm(), p_);
    case CostKind::PowerWithLog: {
      const double r = y.norm();
      if (r == 0.0) return 0.0;
      return scale_at(t, x) * std::pow(r, p_) * (1.0 + std::abs(std::log(r)));
    }
    case CostKind::Custom: return custom_(t, x, y);
  }
  return 0.0;
}

double CostFunction::conjugate_radial(double t, const Point& x, double r) const {
  if (r == 0.0) return 0.0;
  // phi(s) = g*(t, x, s e) along any unit direction e.
  Point e = Point::Zero(x.size() > 0 ? x.size() : 1);
  e(0) = 1.0;
  const auto f = [&](double s) { return s * r - gstar(t, x, Point(s * e)); };
  return maximize_concave_halfline(f, nullptr);
}

double CostFunction::conjugate_general(double t, const Point& x, const Point& z) const {
  Point y = Point::Zero(z.size());
  double value = 0.0;
  for (int sweep = 0; sweep < kMaxAlternatingSweeps; ++sweep) {
    double change = 0.0;
    for (int i = 0; i < z.size(); ++i) {
      Point trial = y;
      const auto f = [&](double s) {
        trial(i) = s;
        return z.dot(trial) - gstar(t, x, trial);
      };
      double arg = 0.0;
      value = maximize_concave_line(f, &arg);
      change = std::max(change, std::abs(arg - y(i)));
      y(i) = arg;
    }
    if (change < 1e-12) break;
  }
  return std::max(0.0, value);
}

double CostFunction::g(double t, const Point& x, const Point& z) const {
  require_finite(z, "z");
  switch (kind_) {
    case CostKind::Quadratic: return 0.5 * z.squaredNorm();
    case CostKind::Power: {
      const double r = z.norm();
      if (r == 0.0) return 0.0;
      const double R = scale_at(t, x);
      const double ystar = std::pow(r / (p_ * R), 1.0 / (p_ - 1.0));
      return (p_ - 1.0) * R * std::pow(ystar, p_);
    }
    case CostKind::PowerWithLog: return conjugate_radial(t, x, z.norm());
    case CostKind::Custom: return radial_ ? conjugate_radial(t, x, z.norm()) : conjugate_general(t, x, z);
  }
  return 0.0;
}

Point CostFunction::grad_g(double t, const Point& x, const Point& z) const {
  require_finite(z, "z");
  switch (kind_) {
    case CostKind::Quadratic: return z;
    case CostKind::Power: {
      const double r = z.norm();
      if (r == 0.0) return Point::Zero(z.size());
      const double ystar = std::pow(r / (p_ * scale_at(t, x)), 1.0 / (p_ - 1.0));
      return (ystar / r) * z;
    }
    case CostKind::PowerWithLog:
    case CostKind::Custom: {
      Point grad(z.size());
      for (int i = 0; i < z.size(); ++i) {
        const double h = 1e-5 * std::max(1.0, std::abs(z(i)));
        Point zp = z, zm = z;
        zp(i) += h;
        zm(i) -= h;
        grad(i) = (g(t, x, zp) - g(t, x, zm)) / (zp(i) - zm(i));
      }
      if (z.isZero(0.0)) grad.setZero();
      return grad;
    }
  }
  return Point::Zero(z.size());
}

bool ValidationReport::all_passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const ValidationEntry& e) { return e.passed; });
}

const ValidationEntry* ValidationReport::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

ValidationReport validate_assumption_C(const CostFunction& cost, const MarginalFlow& flow, int n_samples,
                                       std::uint64_t seed) {
  ValidationReport report;
  if (n_samples < 1) throw InvalidArgument("validate_assumption_C requires n_samples >= 1");
  const int q = flow.dim();
  const double T = flow.horizon();
  Rng rng(seed, 0);

  auto random_direction = [&]() {
    Point u(q);
    for (int i = 0; i < q; ++i) u(i) = rng.normal();
    const double n = u.norm();
    if (n == 0.0) u(0) = 1.0;
    return Point(u / std::max(n, 1e-300));
  };

  ValidationEntry zero{"zero_at_zero", true, ""};
  ValidationEntry even{"evenness", true, ""};
  ValidationEntry small{"vanishing_slope_at_zero", true, ""};
  ValidationEntry large{"superlinear_growth", true, ""};
  ValidationEntry doubling{"doubling", true, ""};
  ValidationEntry ellb{"ell_bound", true, ""};
  ValidationEntry convex{"strict_convexity", true, ""};

  auto fail = [](ValidationEntry& e, const std::string& msg) {
    if (e.passed) e.detail = msg;
    e.passed = false;
  };

  for (int i = 0; i < n_samples; ++i) {
    const double t = T * rng.uniform();
    const MeasureSlice slice = flow.sample_slice(t, 1, mix64(seed + 977 * (i + 1)));
    const Point& x = slice.points.front();
    const Point u = random_direction();
    const double radius = std::pow(10.0, -3.0 + 6.0 * rng.uniform());
    const Point y = radius * u;

    const double g0 = cost.gstar(t, x, Point::Zero(q));
    const double gy = cost.gstar(t, x, y);
    std::ostringstream where;
    where << "t=" << t << " |y|=" << radius;
    if (g0 != 0.0) fail(zero, "g*(0) = " + std::to_string(g0));
    if (!(gy > 0.0)) fail(zero, "g*(y) <= 0 at " + where.str());

    const double gm = cost.gstar(t, x, Point(-y));
    if (std::abs(gy - gm) > 1e-12 * std::max(1.0, std::abs(gy))) fail(even, "g*(y) != g*(-y) at " + where.str());

    {
      const double r1 = 1e-2, r2 = 1e-8;
      const double s1 = cost.gstar(t, x, Point(r1 * u)) / r1;
      const double s2 = cost.gstar(t, x, Point(r2 * u)) / r2;
      if (!(s2 <= 0.5 * s1)) fail(small, "g*(y)/|y| does not vanish as |y| -> 0 (" + std::to_string(s1) + " -> " + std::to_string(s2) + ")");
    }
    {
      const double p = cost.p_growth;
      const double r1 = 1e2, r2 = 1e6;
      const double s1 = cost.gstar(t, x, Point(r1 * u)) / std::pow(r1, p);
      const double s2 = cost.gstar(t, x, Point(r2 * u)) / std::pow(r2, p);
      if (!(s1 > 0.0) || !(s2 >= 0.5 * s1)) fail(large, "g*(y)/|y|^p decays at large |y| (" + std::to_string(s1) + " -> " + std::to_string(s2) + ")");
      // Superlinearity itself, independent of the declared exponent.
      const double l1 = cost.gstar(t, x, Point(r1 * u)) / r1, l2 = cost.gstar(t, x, Point(r2 * u)) / r2;
      if (!(l2 >= 10.0 * l1)) fail(large, "g*(y)/|y| does not grow at large |y| (" + std::to_string(l1) + " -> " + std::to_string(l2) + ")");
    }
    {
      const double h = cost.doubling_h ? cost.doubling_h(t, x) : 0.0;
      const double lhs = cost.gstar(t, x, Point(2.0 * y));
      const double rhs = cost.doubling_C * gy + h;
      if (lhs > rhs * (1 + 1e-12) + 1e-300) fail(doubling, "g*(2y) > C g*(y) + h at " + where.str());
    }
    {
      const double H = cost.H ? cost.H(t, x) : 0.0;
      const double rhs = cost.gstar(t, x, Point(cost.ell * y)) / (2.0 * cost.ell) + H;
      if (gy > rhs * (1 + 1e-12) + 1e-300) fail(ellb, "g*(y) > g*(ell y)/(2 ell) + H at " + where.str());
    }
    {
      const Point y2 = std::pow(10.0, -2.0 + 4.0 * rng.uniform()) * random_direction();
      const double mid = cost.gstar(t, x, Point(0.5 * (y + y2)));
      const double avg = 0.5 * (gy + cost.gstar(t, x, y2));
      if ((y - y2).norm() > 1e-6 * std::max(y.norm(), y2.norm()) && !(mid < avg))
        fail(convex, "midpoint convexity violated at " + where.str());
    }
  }
  report.entries = {zero, even, small, large, doubling, ellb, convex};
  return report;
}

}  // namespace nelson
