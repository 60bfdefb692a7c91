#include "nelson/function_space.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace nelson {

namespace {

constexpr int kDeg = 3;
constexpr double kRbfCutoff = 3.0;

double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

std::vector<double> uniform_knots(double lo, double hi, int n_knots, int pad) {
  if (n_knots < 2) throw InvalidArgument("a spatial family needs at least 2 knots");
  if (!(hi > lo)) throw InvalidArgument("spatial box has zero width");
  const double h = (hi - lo) / (n_knots - 1);
  std::vector<double> k;
  for (int i = -pad; i < n_knots + pad; ++i) k.push_back(lo + i * h);
  return k;
}

}  // namespace

Family1D Family1D::bspline(std::vector<double> knots) {
  if (knots.size() < kDeg + 2) throw InvalidArgument("cubic B-splines need at least 5 knots");
  if (!std::is_sorted(knots.begin(), knots.end())) throw InvalidArgument("B-spline knots must be nondecreasing");
  Family1D f;
  f.kind_ = Kind::BSpline;
  f.size_ = static_cast<int>(knots.size()) - kDeg - 1;
  f.knots_ = std::move(knots);
  return f;
}

Family1D Family1D::clamped_interior(const std::vector<double>& breaks) {
  if (breaks.size() < 2) throw InvalidArgument("need at least 2 time breakpoints");
  std::vector<double> k(kDeg, breaks.front());
  k.insert(k.end(), breaks.begin(), breaks.end());
  k.insert(k.end(), kDeg, breaks.back());
  Family1D f = bspline(std::move(k));
  f.first_ = 1;
  f.size_ -= 2;
  if (f.size_ < 1) throw InvalidArgument("time basis is empty");
  return f;
}

Family1D Family1D::uniform(double lo, double hi, int n_knots, int pad) {
  return bspline(uniform_knots(lo, hi, n_knots, pad));
}

Family1D Family1D::rbf(double lo, double hi, int n_knots, int pad) {
  Family1D f;
  f.kind_ = Kind::Rbf;
  f.width_ = (hi - lo) / (n_knots - 1);
  // Centres one spacing beyond the box; pad is absorbed by the cutoff radius.
  (void)pad;
  f.knots_ = uniform_knots(lo, hi, n_knots, 1);
  f.size_ = static_cast<int>(f.knots_.size());
  return f;
}

double Family1D::support_lo() const {
  return kind_ == Kind::Rbf ? knots_.front() - kRbfCutoff * width_ : knots_[first_];
}

double Family1D::support_hi() const {
  return kind_ == Kind::Rbf ? knots_.back() + kRbfCutoff * width_ : knots_[first_ + size_ + kDeg];
}

std::vector<double> Family1D::breaks() const {
  std::vector<double> b = knots_;
  b.erase(std::unique(b.begin(), b.end()), b.end());
  return b;
}

void Family1D::eval(double x, std::vector<LocalValue>& out) const {
  if (kind_ == Kind::Rbf) {
    for (int i = 0; i < size_; ++i) {
      const double u = (x - knots_[i]) / width_;
      if (std::abs(u) >= kRbfCutoff) continue;
      const double f = std::exp(-0.5 * u * u);
      const double s = 1.0 - u * u / (kRbfCutoff * kRbfCutoff);
      const double c2 = kRbfCutoff * kRbfCutoff;
      const double tau = s * s * s;
      const double tau1 = -6.0 * u / c2 * s * s;
      const double tau2 = -6.0 / c2 * s * s + 24.0 * u * u / (c2 * c2) * s;
      const double f1 = -u * f, f2 = (u * u - 1.0) * f;
      out.push_back({i, f * tau, (f1 * tau + f * tau1) / width_,
                     (f2 * tau + 2.0 * f1 * tau1 + f * tau2) / (width_ * width_)});
    }
    return;
  }
  const auto& U = knots_;
  const int m = static_cast<int>(U.size()) - 1;
  if (x < U.front() || x > U.back()) return;
  // Span j: U[j] <= x < U[j+1] with U[j] < U[j+1]; the right end belongs to
  // the last nonempty span.
  int j = static_cast<int>(std::upper_bound(U.begin(), U.end(), x) - U.begin()) - 1;
  if (j >= m) {
    j = m - 1;
    while (j > 0 && !(U[j] < U[j + 1])) --j;
  }
  // N[d][s] holds N_{j-3+s, d}; slot 4 stays zero.
  std::array<std::array<double, 5>, 4> N{};
  N[0][3] = 1.0;
  auto idx_ok = [&](int k, int d) { return k >= 0 && k + d + 1 <= m; };
  for (int d = 1; d <= kDeg; ++d) {
    for (int s = 3 - d; s <= 3; ++s) {
      const int k = j - 3 + s;
      if (!idx_ok(k, d)) continue;
      const double a = safe_ratio(x - U[k], U[k + d] - U[k]);
      const double b = safe_ratio(U[k + d + 1] - x, U[k + d + 1] - U[k + 1]);
      N[d][s] = a * N[d - 1][s] + b * N[d - 1][s + 1];
    }
  }
  std::array<double, 5> D2{};  // first derivative of degree-2 functions
  for (int s = 1; s <= 3; ++s) {
    const int k = j - 3 + s;
    if (!idx_ok(k, 2)) continue;
    D2[s] = 2.0 * (safe_ratio(N[1][s], U[k + 2] - U[k]) - safe_ratio(N[1][s + 1], U[k + 3] - U[k + 1]));
  }
  for (int s = 0; s <= 3; ++s) {
    const int k = j - 3 + s;
    if (!idx_ok(k, 3)) continue;
    const int r = k - first_;
    if (r < 0 || r >= size_) continue;
    const double l = U[k + 3] - U[k], rr = U[k + 4] - U[k + 1];
    const double d1 = 3.0 * (safe_ratio(N[2][s], l) - safe_ratio(N[2][s + 1], rr));
    const double d2 = 3.0 * (safe_ratio(D2[s], l) - safe_ratio(D2[s + 1], rr));
    if (N[3][s] == 0.0 && d1 == 0.0 && d2 == 0.0) continue;
    out.push_back({r, N[3][s], d1, d2});
  }
}

std::vector<double> graded_breaks(double horizon, int n_knots, double grading) {
  if (n_knots < 2) throw InvalidArgument("need at least 2 time knots");
  if (!(grading >= 1.0)) throw InvalidArgument("time grading exponent must be >= 1");
  std::vector<double> t(n_knots);
  for (int i = 0; i < n_knots; ++i) {
    const double s = 2.0 * i / (n_knots - 1) - 1.0;
    const double g = 1.0 - std::pow(1.0 - std::abs(s), grading);
    t[i] = 0.5 * horizon * (1.0 + (s < 0 ? -g : g));
  }
  t.front() = 0.0;
  t.back() = horizon;
  return t;
}

TestFunctionBasis::TestFunctionBasis(double horizon, Family1D time, std::vector<Family1D> space)
    : horizon_(horizon), time_(std::move(time)), space_(std::move(space)) {
  if (space_.empty() || static_cast<int>(space_.size()) > kMaxDim)
    throw InvalidArgument("tensor basis supports 1 to 3 spatial dimensions");
  n_time_ = time_.size();
  for (const auto& s : space_) n_space_ *= s.size();
}

TestFunctionBasis TestFunctionBasis::build(const MarginalFlow& flow, const BasisOptions& opts) {
  const int q = flow.dim();
  Box box = opts.box ? *opts.box : flow.mass_box(opts.mass_fraction);
  if (box.dim() != q) throw InvalidArgument("basis box dimension does not match the flow");
  std::vector<Family1D> space;
  for (int k = 0; k < q; ++k) {
    double lo = box.lo(k), hi = box.hi(k);
    if (!(hi - lo > 1e-9)) {
      lo -= 0.5;
      hi += 0.5;
    }
    space.push_back(opts.kind == Family1D::Kind::Rbf ? Family1D::rbf(lo, hi, opts.space_knots, opts.pad_knots)
                                                     : Family1D::uniform(lo, hi, opts.space_knots, opts.pad_knots));
  }
  const Family1D time =
      Family1D::clamped_interior(graded_breaks(flow.horizon(), opts.time_knots, opts.time_grading));
  return TestFunctionBasis(flow.horizon(), time, std::move(space));
}

Box TestFunctionBasis::support_box() const {
  Box b{Point(dim()), Point(dim())};
  for (int k = 0; k < dim(); ++k) {
    b.lo(k) = space_[k].support_lo();
    b.hi(k) = space_[k].support_hi();
  }
  return b;
}

bool TestFunctionBasis::covers(double t, const Point& x) const {
  return t > 0.0 && t < horizon_ && support_box().contains(x);
}

void TestFunctionBasis::eval_elements(double t, const Point& x, std::vector<ElementJet>& out) const {
  out.clear();
  thread_local std::vector<LocalValue> tv;
  thread_local std::array<std::vector<LocalValue>, kMaxDim> sv;
  tv.clear();
  time_.eval(t, tv);
  if (tv.empty()) return;
  const int q = dim();
  for (int k = 0; k < q; ++k) {
    sv[k].clear();
    space_[k].eval(x(k), sv[k]);
    if (sv[k].empty()) return;
  }
  std::array<int, kMaxDim> pos{};
  std::array<int, kMaxDim> stride{};
  stride[q - 1] = 1;
  for (int k = q - 2; k >= 0; --k) stride[k] = stride[k + 1] * space_[k + 1].size();
  while (true) {
    int sidx = 0;
    double prod = 1.0;
    for (int k = 0; k < q; ++k) {
      sidx += sv[k][pos[k]].index * stride[k];
      prod *= sv[k][pos[k]].v;
    }
    Point g(q);
    Matrix h(q, q);
    for (int a = 0; a < q; ++a) {
      for (int b = a; b < q; ++b) {
        double p = 1.0;
        for (int k = 0; k < q; ++k) {
          const LocalValue& lv = sv[k][pos[k]];
          if (a == b && k == a) p *= lv.d2;
          else if (k == a || k == b) p *= lv.d1;
          else p *= lv.v;
        }
        h(a, b) = h(b, a) = p;
      }
      double p = 1.0;
      for (int k = 0; k < q; ++k) p *= (k == a) ? sv[k][pos[k]].d1 : sv[k][pos[k]].v;
      g(a) = p;
    }
    for (const LocalValue& tl : tv) {
      ElementJet e;
      e.index = tl.index * n_space_ + sidx;
      e.value = tl.v * prod;
      e.dt = tl.d1 * prod;
      e.grad = tl.v * g;
      e.hess = tl.v * h;
      out.push_back(std::move(e));
    }
    int k = q - 1;
    while (k >= 0 && ++pos[k] == static_cast<int>(sv[k].size())) pos[k--] = 0;
    if (k < 0) break;
  }
}

TestFunctionJet TestFunctionBasis::jet(const Eigen::VectorXd& theta, double t, const Point& x) const {
  if (theta.size() != size()) throw InvalidArgument("coefficient vector length does not match basis size");
  TestFunctionJet j;
  j.grad = Point::Zero(dim());
  j.hess = Matrix::Zero(dim(), dim());
  thread_local std::vector<ElementJet> els;
  eval_elements(t, x, els);
  for (const auto& e : els) {
    const double c = theta(e.index);
    j.value += c * e.value;
    j.dt += c * e.dt;
    j.grad += c * e.grad;
    j.hess += c * e.hess;
  }
  return j;
}

double TestFunctionBasis::eval_w(const Eigen::VectorXd& theta, double t, const Point& x) const {
  return jet(theta, t, x).value;
}

Point TestFunctionBasis::eval_grad_w(const Eigen::VectorXd& theta, double t, const Point& x) const {
  return jet(theta, t, x).grad;
}

double TestFunctionBasis::eval_Lt_w(const Eigen::VectorXd& theta, const DiffusionSpec& spec, double t,
                                    const Point& x) const {
  return apply_generator(spec, jet(theta, t, x), t, x);
}

double luxemburg_norm(const MarginalFlow& flow, const DiffusionSpec& spec, const CostFunction& cost,
                      const VectorField& psi, const LuxemburgOptions& opts) {
  const auto nodes = spacetime_rule(flow, linspace(0.0, flow.horizon(), opts.time_intervals + 1), opts.quad);
  std::vector<Point> z(nodes.size());
  bool all_zero = true;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    z[i] = spec.sig(nodes[i].t, nodes[i].x).transpose() * psi(nodes[i].t, nodes[i].x);
    if (!z[i].allFinite()) throw Error("field is not finite at a quadrature node");
    if (z[i].squaredNorm() > 0.0) all_zero = false;
  }
  if (all_zero) return 0.0;
  auto modular = [&](double l) {
    double s = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) s += nodes[i].weight * cost.g(nodes[i].t, nodes[i].x, z[i] / l);
    return std::isfinite(s) ? s : INFINITY;
  };
  double hi = 1.0;
  while (modular(hi) > 1.0) {
    hi *= 2.0;
    if (hi > opts.cap) throw Error("field is not in L^g: modular exceeds 1 at every level up to the cap");
  }
  double lo = hi;
  while (lo > 1e-300 && modular(lo) <= 1.0) lo *= 0.5;
  while (hi - lo > opts.rel_width * hi) {
    const double mid = 0.5 * (lo + hi);
    (modular(mid) > 1.0 ? lo : hi) = mid;
  }
  return hi;
}

}  // namespace nelson
