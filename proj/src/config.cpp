#include "nelson/config.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace nelson {

using nlohmann::json;

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

[[noreturn]] void fail(const std::string& key, const std::string& expectation) {
  throw ConfigError("config key '" + key + "': " + expectation);
}

// Reads one object, fills defaults into `out` and rejects unknown keys.
class Section {
 public:
  Section(json in, std::string path, std::set<std::string> allowed) : in_(std::move(in)), path_(std::move(path)) {
    if (!in_.is_object()) fail(path_, "expected an object");
    for (auto it = in_.begin(); it != in_.end(); ++it)
      if (!allowed.count(it.key())) fail(key(it.key()), "unknown key");
    out_ = json::object();
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  bool has(const std::string& k) const { return in_.contains(k); }
  const json& raw(const std::string& k) const { return in_.at(k); }

  double number(const std::string& k, std::optional<double> def = std::nullopt) {
    if (!has(k)) {
      if (!def) fail(key(k), "required number is missing");
      out_[k] = *def;
      return *def;
    }
    if (!in_[k].is_number()) fail(key(k), "expected a number");
    out_[k] = in_[k];
    return in_[k].get<double>();
  }

  int integer(const std::string& k, int def, int lo) {
    if (!has(k)) {
      out_[k] = def;
      return def;
    }
    if (!in_[k].is_number_integer()) fail(key(k), "expected an integer");
    const int v = in_[k].get<int>();
    if (v < lo) fail(key(k), "expected an integer >= " + std::to_string(lo));
    out_[k] = v;
    return v;
  }

  std::string text(const std::string& k, std::optional<std::string> def = std::nullopt) {
    if (!has(k)) {
      if (!def) fail(key(k), "required string is missing");
      out_[k] = *def;
      return *def;
    }
    if (!in_[k].is_string()) fail(key(k), "expected a string");
    out_[k] = in_[k];
    return in_[k].get<std::string>();
  }

  void put(const std::string& k, json v) { out_[k] = std::move(v); }
  json& out() { return out_; }

 private:
  json in_;
  std::string path_;
  json out_;
};

// "name:arg" -> (name, arg).
std::pair<std::string, std::string> split_named(const std::string& s) {
  const auto pos = s.find(':');
  if (pos == std::string::npos) return {s, ""};
  return {s.substr(0, pos), s.substr(pos + 1)};
}

double parse_number(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    fail(key, "expected a number after ':' but got '" + s + "'");
  }
}

std::vector<double> parse_list(const std::string& key, const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(parse_number(key, item));
  return v;
}

Point vector_of(const std::string& key, const json& j, int dim) {
  if (j.is_number() && dim == 1) return Point::Constant(1, j.get<double>());
  if (!j.is_array() || static_cast<int>(j.size()) != dim) fail(key, "expected an array of length " + std::to_string(dim));
  Point p(dim);
  for (int i = 0; i < dim; ++i) {
    if (!j[i].is_number()) fail(key, "expected numbers");
    p(i) = j[i].get<double>();
  }
  return p;
}

// A number c means c I; otherwise a dim x dim array of rows.
Matrix matrix_of(const std::string& key, const json& j, int dim) {
  if (j.is_number()) return Matrix::Identity(dim, dim) * j.get<double>();
  if (!j.is_array() || static_cast<int>(j.size()) != dim) fail(key, "expected a number or a " + std::to_string(dim) + "x" + std::to_string(dim) + " array");
  Matrix m(dim, dim);
  for (int r = 0; r < dim; ++r) {
    if (!j[r].is_array() || static_cast<int>(j[r].size()) != dim) fail(key, "expected square rows");
    for (int c = 0; c < dim; ++c) {
      if (!j[r][c].is_number()) fail(key, "expected numbers");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

CostFunction parse_cost(const json& j, json& echo) {
  Section s(j, "cost", {"kind", "p", "scale"});
  const std::string kind = s.text("kind", "quadratic");
  double p = 2.0;
  if (s.has("p") || kind != "quadratic") {
    p = s.number("p", kind == "quadratic" ? std::optional<double>(2.0) : std::nullopt);
    if (!(p > 1.0)) fail("cost.p", "must exceed 1 (superlinear growth of g*)");
  }
  double scale = 1.0;
  if (s.has("scale")) {
    const json& v = s.raw("scale");
    if (v.is_number()) {
      scale = v.get<double>();
    } else if (v.is_string()) {
      const auto [name, arg] = split_named(v.get<std::string>());
      if (name != "constant") fail("cost.scale", "expected a number or \"constant:<v>\"");
      scale = parse_number("cost.scale", arg);
    } else {
      fail("cost.scale", "expected a number or \"constant:<v>\"");
    }
    if (!(scale > 0.0)) fail("cost.scale", "must be positive");
  }
  s.put("scale", "constant:" + std::to_string(scale));
  echo["cost"] = s.out();
  ScalarField sf = nullptr;
  if (scale != 1.0) sf = [scale](double, const Point&) { return scale; };
  if (kind == "quadratic") {
    if (p != 2.0) fail("cost.p", "quadratic cost has p = 2");
    if (scale != 1.0) return CostFunction::power(2.0, [scale](double, const Point&) { return 0.5 * scale; });
    return CostFunction::quadratic();
  }
  if (kind == "power") return CostFunction::power(p, sf);
  if (kind == "power_log") return CostFunction::power_with_log(p, sf);
  fail("cost.kind", "expected \"quadratic\", \"power\" or \"power_log\"");
}

VectorField named_drift(const std::string& key, const std::string& spec, int dim) {
  const auto [name, arg] = split_named(spec);
  if (name == "zero") return [dim](double, const Point&) { return Point(Point::Zero(dim)); };
  if (name == "ou") {
    const double k = parse_number(key, arg);
    return [k](double, const Point& x) { return Point(-k * x); };
  }
  if (name == "constant") {
    const auto v = parse_list(key, arg);
    if (static_cast<int>(v.size()) != dim) fail(key, "constant drift needs dim entries");
    Point c(dim);
    for (int i = 0; i < dim; ++i) c(i) = v[i];
    return [c](double, const Point&) { return c; };
  }
  if (name == "bessel") {
    const double delta = parse_number(key, arg);
    if (dim != 1) fail(key, "bessel drift is one-dimensional");
    return [delta](double, const Point& x) { return Point((delta - 1.0) / (2.0 * x.array())); };
  }
  fail(key, "expected \"zero\", \"ou:<k>\", \"constant:<v1,...>\" or \"bessel:<delta>\"");
}

DiffusionSpec parse_diffusion(const json& j, json& echo) {
  Section s(j, "diffusion", {"dim", "T", "b", "sigma", "m0"});
  const int dim = s.integer("dim", 1, 1);
  if (dim > kMaxDim) fail("diffusion.dim", "at most " + std::to_string(kMaxDim));
  const double T = s.number("T", 1.0);
  if (!(T > 0.0)) fail("diffusion.T", "must be positive");
  const std::string b = s.text("b", "zero");

  InitialLaw m0 = InitialLaw::dirac(Point::Zero(dim));
  json m0echo = {{"type", "dirac"}, {"x", std::vector<double>(dim, 0.0)}};
  if (s.has("m0")) {
    Section m(s.raw("m0"), "diffusion.m0", {"type", "x", "mean", "cov"});
    const std::string type = m.text("type");
    if (type == "dirac") {
      const Point x = m.has("x") ? vector_of("diffusion.m0.x", m.raw("x"), dim) : Point(Point::Zero(dim));
      m.put("x", std::vector<double>(x.data(), x.data() + dim));
      m0 = InitialLaw::dirac(x);
    } else if (type == "gaussian") {
      const Point mean =
          m.has("mean") ? vector_of("diffusion.m0.mean", m.raw("mean"), dim) : Point(Point::Zero(dim));
      if (!m.has("cov")) fail("diffusion.m0.cov", "required for a gaussian initial law");
      const Matrix cov = matrix_of("diffusion.m0.cov", m.raw("cov"), dim);
      m.put("mean", std::vector<double>(mean.data(), mean.data() + dim));
      m.put("cov", m.raw("cov"));
      m0 = InitialLaw::gaussian(mean, cov);
    } else {
      fail("diffusion.m0.type", "expected \"dirac\" or \"gaussian\"");
    }
    m0echo = m.out();
  }
  s.put("m0", m0echo);

  DiffusionSpec spec = brownian_spec(dim, T, m0);
  spec.drift = named_drift("diffusion.b", b, dim);
  spec.drift_name = b;
  if (s.has("sigma") && !(s.raw("sigma").is_string() && s.raw("sigma") == "identity")) {
    const Matrix sig = matrix_of("diffusion.sigma", s.raw("sigma"), dim);
    spec.sigma = [sig](double, const Point&) { return sig; };
    spec.sigma_is_identity = sig.isIdentity(0.0);
    s.put("sigma", s.raw("sigma"));
  } else {
    s.put("sigma", "identity");
  }
  echo["diffusion"] = s.out();
  // Probe sigma at the initial mean and a few offsets.
  const Point c = m0.mean.size() == dim ? m0.mean : Point(Point::Zero(dim));
  for (double t : {0.0, 0.5 * T, T})
    for (double off : {0.0, 1.0, -1.0}) spec.check_sigma(t, Point(c.array() + off));
  return spec;
}

std::function<Matrix(double)> covariance_path(const std::string& key, const json& j, int dim) {
  if (j.is_string()) {
    const auto [name, arg] = split_named(j.get<std::string>());
    const auto v = parse_list(key, arg);
    auto scalar = [dim](std::function<double(double)> f) {
      return [f, dim](double t) { return Matrix(Matrix::Identity(dim, dim) * f(t)); };
    };
    if (name == "linear" && v.size() == 2) {
      const double a = v[0], b = v[1];
      return scalar([a, b](double t) { return a + b * t; });
    }
    if (name == "square" && v.size() == 1) {
      const double s0 = v[0];
      return scalar([s0](double t) { return (s0 + t) * (s0 + t); });
    }
    if (name == "constant" && v.size() == 1) {
      const double c = v[0];
      return scalar([c](double) { return c; });
    }
    fail(key, "expected \"linear:a,b\", \"square:s0\", \"constant:v\", a number or a matrix");
  }
  const Matrix m = matrix_of(key, j, dim);
  return [m](double) { return m; };
}

std::function<Point(double)> mean_path(const std::string& key, const json& j, int dim) {
  if (j.is_string()) {
    const auto [name, arg] = split_named(j.get<std::string>());
    if (name == "zero") return [dim](double) { return Point(Point::Zero(dim)); };
    if (name == "linear") {
      const auto v = parse_list(key, arg);
      if (static_cast<int>(v.size()) != 2 * dim) fail(key, "linear mean needs 2*dim entries (start..., slope...)");
      Point a(dim), b(dim);
      for (int i = 0; i < dim; ++i) {
        a(i) = v[i];
        b(i) = v[dim + i];
      }
      return [a, b](double t) { return Point(a + t * b); };
    }
    fail(key, "expected \"zero\", \"linear:a...,b...\" or an array");
  }
  const Point m = vector_of(key, j, dim);
  return [m](double) { return m; };
}

std::string resolve(const std::string& base, const std::string& file) {
  std::filesystem::path p(file);
  if (p.is_relative()) p = std::filesystem::path(base) / p;
  return p.string();
}

MarginalFlow parse_marginals(const json& j, int dim, double T, const std::string& base, json& echo) {
  Section s(j, "marginals", {"type", "mean", "cov", "file", "mode"});
  const std::string type = s.text("type");
  MarginalFlow flow;
  if (type == "gaussian") {
    const json mean = s.has("mean") ? s.raw("mean") : json("zero");
    const json cov = s.has("cov") ? s.raw("cov") : json(1.0);
    s.put("mean", mean);
    s.put("cov", cov);
    flow = MarginalFlow::gaussian(dim, T,
                                  GaussianPath{mean_path("marginals.mean", mean, dim),
                                               covariance_path("marginals.cov", cov, dim)});
  } else if (type == "grid") {
    const std::string file = s.text("file");
    const std::string mode = s.text("mode", "probability");
    MassMode mm = MassMode::Probability;
    if (mode == "truncated") mm = MassMode::TruncatedSigmaFinite;
    else if (mode != "probability") fail("marginals.mode", "expected \"probability\" or \"truncated\"");
    flow = read_grid_csv(resolve(base, file), T, mm);
  } else if (type == "empirical") {
    flow = read_empirical_csv(resolve(base, s.text("file")), T);
  } else {
    fail("marginals.type", "expected \"gaussian\", \"grid\" or \"empirical\"");
  }
  if (flow.dim() != dim) fail("marginals", "dimension differs from diffusion.dim");
  echo["marginals"] = s.out();
  return flow;
}

BasisOptions parse_basis(const json& j, int dim, json& echo) {
  Section s(j, "basis", {"time_knots", "space_knots", "kind", "box", "pad_knots", "time_grading", "mass_fraction"});
  BasisOptions b;
  b.time_knots = s.integer("time_knots", b.time_knots, 3);
  b.space_knots = s.integer("space_knots", b.space_knots, 2);
  const std::string kind = s.text("kind", "bspline");
  if (kind == "rbf") b.kind = Family1D::Kind::Rbf;
  else if (kind != "bspline") fail("basis.kind", "expected \"bspline\" or \"rbf\"");
  b.pad_knots = s.integer("pad_knots", b.pad_knots, 0);
  b.time_grading = s.number("time_grading", b.time_grading);
  if (!(b.time_grading >= 1.0)) fail("basis.time_grading", "must be >= 1");
  b.mass_fraction = s.number("mass_fraction", b.mass_fraction);
  if (!(b.mass_fraction > 0.0 && b.mass_fraction < 1.0)) fail("basis.mass_fraction", "must lie in (0, 1)");
  if (s.has("box") && !(s.raw("box").is_string() && s.raw("box") == "auto")) {
    const json& box = s.raw("box");
    if (!box.is_array() || box.size() != 2) fail("basis.box", "expected \"auto\" or [[lo...], [hi...]]");
    Box bx{vector_of("basis.box", box[0], dim), vector_of("basis.box", box[1], dim)};
    if (!(bx.lo.array() < bx.hi.array()).all()) fail("basis.box", "lo must be below hi");
    b.box = bx;
    s.put("box", box);
  } else {
    s.put("box", "auto");
  }
  echo["basis"] = s.out();
  return b;
}

SolverOptions parse_solver(const json& j, json& echo) {
  Section s(j, "solver", {"tol_foc_rel", "max_iter", "restarts", "memory", "precondition", "polish"});
  SolverOptions o;
  o.tol_foc_rel = s.number("tol_foc_rel", o.tol_foc_rel);
  if (!(o.tol_foc_rel > 0.0)) fail("solver.tol_foc_rel", "must be positive");
  o.max_iter = s.integer("max_iter", o.max_iter, 1);
  o.restarts = s.integer("restarts", o.restarts, 0);
  o.memory = s.integer("memory", o.memory, 1);
  o.polish = s.number("polish", o.polish);
  if (!(o.polish > 0.0 && o.polish <= 1.0)) fail("solver.polish", "must lie in (0, 1]");
  const std::string pc = s.text("precondition", "gram");
  if (pc == "gram") o.precondition = SolverOptions::Preconditioner::Gram;
  else if (pc == "diagonal") o.precondition = SolverOptions::Preconditioner::Diagonal;
  else if (pc == "none") o.precondition = SolverOptions::Preconditioner::None;
  else fail("solver.precondition", "expected \"gram\", \"diagonal\" or \"none\"");
  echo["solver"] = s.out();
  return o;
}

}  // namespace

RunConfig parse_config(const json& doc, const std::string& base_dir) {
  Section top(doc, "", {"seed", "workers", "cost", "diffusion", "marginals", "basis", "solver", "mc", "R", "mfg"});
  RunConfig rc;
  rc.base_dir = base_dir;
  json echo = json::object();
  if (top.has("seed")) {
    const json& s = top.raw("seed");
    if (!s.is_number_integer() || (!s.is_number_unsigned() && s.get<long long>() < 0))
      fail("seed", "expected a nonnegative integer");
    rc.seed = s.get<std::uint64_t>();
  }
  echo["seed"] = rc.seed;
  rc.workers = top.integer("workers", 0, 0);
  echo["workers"] = rc.workers;

  rc.cost = parse_cost(top.has("cost") ? top.raw("cost") : json::object(), echo);
  rc.spec = parse_diffusion(top.has("diffusion") ? top.raw("diffusion") : json::object(), echo);
  if (!top.has("marginals")) fail("marginals", "required section is missing");
  rc.flow = parse_marginals(top.raw("marginals"), rc.spec.dim, rc.spec.horizon, base_dir, echo);
  rc.basis = parse_basis(top.has("basis") ? top.raw("basis") : json::object(), rc.spec.dim, echo);
  rc.solver = parse_solver(top.has("solver") ? top.raw("solver") : json::object(), echo);
  rc.solver.seed = rc.seed;

  {
    Section s(top.has("mc") ? top.raw("mc") : json::object(), "mc", {"n_paths", "n_steps", "slices"});
    rc.mc.n_paths = s.integer("n_paths", rc.mc.n_paths, 2);
    rc.mc.n_steps = s.integer("n_steps", rc.mc.n_steps, 1);
    rc.slices = s.integer("slices", rc.slices, 2);
    rc.mc.seed = rc.seed + 1;
    echo["mc"] = s.out();
  }

  if (top.has("R")) {
    Section s(top.raw("R"), "R", {"kind", "lambda", "v_star", "target"});
    const std::string kind = s.text("kind");
    const double lambda = s.number("lambda", 1.0);
    if (kind == "variance_target") {
      if (!s.has("v_star")) fail("R.v_star", "required for variance_target");
      const json& v = s.raw("v_star");
      std::function<double(double)> vs;
      if (v.is_number()) {
        const double c = v.get<double>();
        vs = [c](double) { return c; };
      } else if (v.is_string() && split_named(v.get<std::string>()).first == "factor") {
        // factor:<f> targets f times the reference variance s0^2 + t.
        const double f = parse_number("R.v_star", split_named(v.get<std::string>()).second);
        const double s0 = rc.spec.m0.kind == InitialLaw::Kind::Gaussian ? rc.spec.m0.cov(0, 0) : 0.0;
        vs = [f, s0](double t) { return f * (s0 + t); };
      } else {
        fail("R.v_star", "expected a number or \"factor:<f>\"");
      }
      s.put("v_star", v);
      rc.R = InteractionFunctional::variance_target(lambda, vs);
    } else if (kind == "mean_field_quadratic") {
      rc.R = InteractionFunctional::mean_field_quadratic(lambda, s.number("target", 0.0));
    } else {
      fail("R.kind", "expected \"variance_target\" or \"mean_field_quadratic\"");
    }
    echo["R"] = s.out();
  }
  {
    Section s(top.has("mfg") ? top.raw("mfg") : json::object(), "mfg",
              {"n_params", "initial_step", "min_step", "bound", "max_evaluations"});
    rc.mfg_params = s.integer("n_params", rc.mfg_params, 3);
    rc.mfg.initial_step = s.number("initial_step", rc.mfg.initial_step);
    rc.mfg.min_step = s.number("min_step", rc.mfg.min_step);
    rc.mfg.bound = s.number("bound", rc.mfg.bound);
    rc.mfg.max_evaluations = s.integer("max_evaluations", rc.mfg.max_evaluations, 1);
    echo["mfg"] = s.out();
  }
  rc.effective = echo;
  rc.hash = fnv1a_hex(echo.dump());
  return rc;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  const auto dir = std::filesystem::path(path).parent_path();
  return parse_config(doc, dir.empty() ? "." : dir.string());
}

}  // namespace nelson
