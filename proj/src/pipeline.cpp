#include "nelson/pipeline.hpp"

#include "nelson/catalog.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nelson {

using nlohmann::json;

std::map<std::string, std::string> parse_params(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidArgument("parameter '" + item + "' is not of the form key=value");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

namespace {

// Artifact path next to the report: report.json -> report_<suffix>.csv.
std::string sibling(const std::string& out, const std::string& suffix) {
  std::filesystem::path p(out.empty() ? "nelson_report.json" : out);
  const std::string stem = p.stem().string();
  return (p.parent_path() / (stem + "_" + suffix + ".csv")).string();
}

void write_json(const std::string& path, const json& j) {
  if (path.empty()) return;
  std::ofstream f(path);
  if (!f) throw InvalidArgument("cannot write '" + path + "'");
  f << j.dump(2) << "\n";
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InvalidArgument("cannot write '" + path + "'");
  f.precision(12);
  return f;
}

class Params {
 public:
  explicit Params(const std::map<std::string, std::string>& m) : m_(m) {}
  double num(const std::string& k, double def) {
    used_.insert(k);
    auto it = m_.find(k);
    if (it == m_.end()) return def;
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw InvalidArgument("parameter '" + k + "' expects a number");
    }
  }
  int integer(const std::string& k, int def) { return static_cast<int>(std::lround(num(k, def))); }
  std::string str(const std::string& k, const std::string& def) {
    used_.insert(k);
    auto it = m_.find(k);
    return it == m_.end() ? def : it->second;
  }
  void finish() const {
    for (const auto& [k, v] : m_)
      if (!used_.count(k)) throw InvalidArgument("unknown parameter '" + k + "'");
  }

 private:
  const std::map<std::string, std::string>& m_;
  std::set<std::string> used_;
};

const RunConfig& need(const std::optional<RunConfig>& c, const std::string& cmd) {
  if (!c) throw InvalidArgument(cmd + " needs --config");
  return *c;
}

json stamp(json report, const std::string& command, const std::optional<RunConfig>& config) {
  report["command"] = command;
  report["version"] = kLibraryVersion;
  report["config_hash"] = config ? config->hash : std::string("none");
  if (config) report["config"] = config->effective;
  return report;
}

double energy_rel(const DualSolution& s) {
  return std::abs(s.energy_value - s.dual_value) / std::max(std::abs(s.dual_value), 1e-300);
}

void write_iteration_log(const std::string& path, const DualSolution& s) {
  auto f = open_csv(path);
  f << "iter,objective,grad_norm,step\n";
  for (const auto& it : s.log) f << it.iter << "," << it.objective << "," << it.grad_norm << "," << it.step << "\n";
}

// Psi and the recovered drift on a grid over the basis support (1D and 2D).
void write_drift_field(const std::string& path, const DualSolution& s, const DiffusionSpec& spec,
                       const CostFunction& cost) {
  if (spec.dim > 2) return;
  const ControlledDrift d = recover_drift(s, spec, cost);
  const Box box = s.basis.support_box();
  auto f = open_csv(path);
  const int n = spec.dim == 1 ? 101 : 41;
  const auto times = linspace(0.0, spec.horizon, 11);
  if (spec.dim == 1) {
    f << "t,x_1,psi_1,drift_1\n";
    for (double t : times)
      for (double x : linspace(box.lo(0), box.hi(0), n)) {
        Point p(1);
        p(0) = x;
        f << t << "," << x << "," << s.psi(t, p)(0) << "," << d.drift(t, p)(0) << "\n";
      }
  } else {
    f << "t,x_1,x_2,psi_1,psi_2,drift_1,drift_2\n";
    for (double t : times)
      for (double x : linspace(box.lo(0), box.hi(0), n))
        for (double y : linspace(box.lo(1), box.hi(1), n)) {
          Point p(2);
          p << x, y;
          const Point ps = s.psi(t, p), dr = d.drift(t, p);
          f << t << "," << x << "," << y << "," << ps(0) << "," << ps(1) << "," << dr(0) << "," << dr(1) << "\n";
        }
  }
}

json marginal_json(const MarginalReport& m) {
  return {{"slice_times", m.times},         {"marginal_w1", m.w1},         {"w1_noise", m.w1_noise},
          {"scale", m.scale},               {"tolerance", m.tolerance},    {"max_w1", m.max_w1},
          {"exit_fraction", m.exit_fraction}, {"exit_flag", m.exit_flag}, {"n_flagged", m.n_flagged},
          {"pass", m.pass}};
}

void write_slices(const std::string& path, const MarginalReport& m) {
  auto f = open_csv(path);
  f << "t,w1,w1_noise,tolerance\n";
  for (std::size_t i = 0; i < m.times.size(); ++i)
    f << m.times[i] << "," << m.w1[i] << "," << m.w1_noise[i] << "," << m.tolerance << "\n";
}

json gap_json(const GapReport& g) {
  json j = {{"dual_value", g.dual_value},   {"dual_energy_value", g.dual_energy_value},
            {"primal_mc", g.primal_mc},     {"primal_se", g.primal_se},
            {"gap_rel", g.gap_rel},         {"gap_pass", g.gap_pass},
            {"surrogate_gap", g.surrogate_gap}};
  j["marginals"] = marginal_json(g.marginals);
  j["marginal_w1"] = g.marginals.w1;
  j["pass"] = g.pass;
  return j;
}

json cmd_solve_dual(const CommandOptions& o, const RunConfig& c, std::ostream& log) {
  const TestFunctionBasis basis = TestFunctionBasis::build(c.flow, c.basis);
  log << "solve-dual: " << basis.size() << " basis functions\n";
  DualSolution s = [&] {
    try {
      return maximize_dual(basis, c.spec, c.flow, c.cost, c.solver);
    } catch (const DualConvergenceError& e) {
      log << "solve-dual: " << e.what() << "; reporting the best iterate\n";
      return e.best;
    }
  }();
  json j = solution_to_json(s);
  j["energy_rel_diff"] = energy_rel(s);
  j["pass"] = s.certified && energy_rel(s) <= 1e-4;
  write_iteration_log(sibling(o.out, "log"), s);
  write_drift_field(sibling(o.out, "drift"), s, c.spec, c.cost);
  return j;
}

DualSolution load_solution(const std::string& file, const RunConfig& c) {
  if (file.empty()) throw InvalidArgument("this command needs --solution");
  std::ifstream in(file);
  if (!in) throw InvalidArgument("cannot open solution '" + file + "'");
  return solution_from_json(json::parse(in), c);
}

json cmd_check_gap(const CommandOptions& o, const RunConfig& c, std::ostream& log) {
  const DualSolution s = load_solution(o.solution, c);
  log << "check-gap: " << c.mc.n_paths << " paths x " << c.mc.n_steps << " steps\n";
  const GapReport g = duality_gap_report(s, c.spec, c.flow, c.cost, c.mc);
  write_slices(sibling(o.out, "slices"), g.marginals);
  return gap_json(g);
}

json cmd_simulate(const CommandOptions& o, const RunConfig& c, std::ostream& log) {
  ControlledDrift d;
  if (o.drift == "recovered") {
    d = recover_drift(load_solution(o.solution, c), c.spec, c.cost);
  } else if (o.drift == "reference") {
    d = reference_drift(c.spec);
  } else {
    throw InvalidArgument("--drift expects recovered or reference");
  }
  log << "simulate: drift " << d.label << "\n";
  const MarginalReport m = verify_marginals(d, c.spec, c.flow, c.mc, linspace(0.0, c.spec.horizon, c.slices));
  write_slices(sibling(o.out, "slices"), m);
  if (o.export_paths > 0) {
    SimulationOptions so;
    so.n_paths = std::min(o.export_paths, c.mc.n_paths);
    so.n_steps = c.mc.n_steps;
    so.seed = c.mc.seed;
    so.record_stride = std::max(1, c.mc.n_steps / 100);
    so.keep_increments = false;
    write_paths_csv(simulate(c.spec, d.drift, so, d.label), sibling(o.out, "paths"));
  }
  json j = marginal_json(m);
  j["drift"] = o.drift;
  return j;
}

json catalog_gaussian(Params& P, std::ostream& log) {
  const std::string kind = P.str("variance", "square");
  const double T = P.num("T", 1.0);
  VariancePath v = VariancePath::square(P.num("s0", 1.0));
  if (kind == "linear") v = VariancePath::linear(P.num("s0sq", 1.0), P.num("slope", 1.0));
  else if (kind == "constant") v = VariancePath::constant(P.num("v", 1.0));
  else if (kind != "square") throw InvalidArgument("variance expects square, linear or constant");
  const double p = P.num("p", 2.0);
  McOptions mc;
  mc.n_paths = P.integer("n_paths", 100000);
  mc.n_steps = P.integer("n_steps", 400);
  mc.seed = static_cast<std::uint64_t>(P.integer("seed", 1));
  P.finish();
  const GaussianCase g = gaussian_entropic_case(v, T);
  const CostFunction cost = p == 2.0 ? CostFunction::quadratic() : CostFunction::power(p);
  const TestFunctionBasis basis = TestFunctionBasis::build(g.flow, {});
  SolverOptions so;
  so.seed = mc.seed;
  const DualSolution s = maximize_dual(basis, g.spec, g.flow, cost, so);
  log << "catalog gaussian: dual " << s.dual_value << " oracle " << g.oracle_value << "\n";
  json j;
  j["case"] = "gaussian";
  j["variance"] = v.name;
  j["p"] = p;
  j["oracle_value"] = g.oracle_value;
  j["dual_value"] = s.dual_value;
  j["energy_rel_diff"] = energy_rel(s);
  j["certified"] = s.certified;
  bool pass = s.certified && energy_rel(s) <= 1e-4;
  if (p == 2.0) {
    const double rel = std::abs(s.dual_value - g.oracle_value) / g.oracle_value;
    j["oracle_rel_err"] = rel;
    pass = pass && rel <= 0.05;
    const GapReport gap = duality_gap_report(s, g.spec, g.flow, cost, mc);
    j["gap"] = gap_json(gap);
    pass = pass && gap.pass;
  }
  j["pass"] = pass;
  return j;
}

json catalog_bessel(Params& P, std::ostream& log) {
  const double delta = P.num("delta", 1.5), p = P.num("p", 1.2), T = P.num("T", 1.0);
  const int n_paths = P.integer("n_paths", 100000), n_steps = P.integer("n_steps", 400);
  const auto seed = static_cast<std::uint64_t>(P.integer("seed", 1));
  const double s_time = P.num("s", 0.5 * T);
  P.finish();
  const BesselCase c = bessel_case(delta, p, T);
  const McEstimate coarse = bessel_inverse_moment(c, n_paths, n_steps, seed);
  const McEstimate fine = bessel_inverse_moment(c, n_paths, 2 * n_steps, seed);
  const double change = fine.estimate / coarse.estimate - 1.0;
  log << "catalog bessel: E int |X|^-p  " << coarse.estimate << " -> " << fine.estimate << "\n";
  const LabeledEnsemble y = bessel_y_ensemble(c, n_paths, n_steps, seed + 7);
  const LabeledEnsemble ctl = bessel_y_ensemble(c, n_paths, n_steps, seed + 7, 10, true);
  const MarkovReport my = markov_statistic(y, s_time), mc = markov_statistic(ctl, s_time);
  json j;
  j["case"] = "bessel";
  j["delta"] = delta;
  j["nu"] = c.nu;
  j["p"] = p;
  j["admissible"] = c.admissible;
  j["psi_at_1"] = c.psi(1.0);
  j["inverse_moment"] = {{"n_steps", n_steps}, {"coarse", coarse.estimate}, {"coarse_se", coarse.std_error},
                         {"fine", fine.estimate}, {"fine_se", fine.std_error}, {"relative_change", change}};
  auto mj = [](const MarkovReport& r) {
    return json{{"statistic", r.statistic},         {"null_band", r.null_band},
                {"outside_band", r.outside_band},   {"n_eligible", r.n_eligible},
                {"bins_used", r.bins_used},         {"bins_dropped", r.bins_dropped},
                {"signed_statistic", r.signed_statistic}, {"signed_null_band", r.signed_null_band}};
  };
  j["markov_y"] = mj(my);
  j["markov_control"] = mj(mc);
  const bool refinement_ok = c.admissible ? std::abs(change) <= 0.10 : change >= 0.50;
  j["refinement_pass"] = refinement_ok;
  j["markov_pass"] = my.outside_band && !mc.outside_band;
  j["pass"] = refinement_ok && my.outside_band && !mc.outside_band;
  return j;
}

json catalog_nonuniversality(Params& P, std::ostream& log) {
  const std::string field = P.str("field", "separable");
  const int grid = P.integer("grid", 201);
  const double hw = P.num("half_width", 1.25);
  const bool full = P.integer("full_solve", 0) != 0;
  P.finish();
  Field2D B = Field2D::zero();
  if (field == "separable") B = Field2D::separable_bumps();
  else if (field == "radial") B = Field2D::radial_bump();
  else if (field != "zero") throw InvalidArgument("field expects separable, radial or zero");
  const NonUniversalityReport r = nonuniversality_case(B, grid, hw);
  log << "catalog nonuniversality: max|r| " << r.max_residual << " tol_curl " << r.tol_curl << "\n";
  json j;
  j["case"] = "nonuniversality";
  j["field"] = field;
  j["grid"] = grid;
  j["half_width"] = hw;
  j["max_residual"] = r.max_residual;
  j["tol_curl"] = r.tol_curl;
  j["verdict"] = r.universal_candidate_fails ? "cost-dependent (non-universal)" : "no obstruction found";
  bool pass = true;
  if (field == "separable") pass = r.max_residual > 100.0 * r.tol_curl;
  else pass = r.max_residual <= r.tol_curl;
  if (full) {
    const NonUniversalitySolve s = nonuniversality_full_solve(B);
    j["full_solve"] = {{"drift_discrepancy", s.drift_discrepancy},
                       {"quadratic_drift_error", s.quadratic_drift_error},
                       {"value_quadratic", s.value_quadratic},
                       {"value_cubic", s.value_cubic},
                       {"certified", s.certified}};
    pass = pass && s.certified;
  }
  j["pass"] = pass;
  return j;
}

json cmd_mfg(const CommandOptions& o, const RunConfig& c, std::ostream& log) {
  if (!c.R) throw ConfigError("config key 'R': required for mfg-solve");
  if (c.spec.dim != 1 || c.spec.m0.kind != InitialLaw::Kind::Gaussian)
    throw ConfigError("config key 'diffusion': mfg-solve needs a one-dimensional Brownian reference with a "
                      "gaussian m0");
  MfgProblem pb = MfgProblem::brownian(c.spec.m0.cov(0, 0), c.spec.horizon, c.cost, *c.R, c.mfg_params);
  pb.basis = c.basis;
  pb.solver = c.solver;
  const MkvResult r = minimize_mkv(pb, c.mfg);
  log << "mfg-solve: value " << r.value << " after " << r.evaluations << " evaluations\n";
  const EquilibriumReport eq = verify_equilibrium(r.flow, pb, default_perturbations(pb.family, r.eta));
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(pb.family.size());
  const EquilibriumReport power = verify_equilibrium(pb.family.flow(zero), pb, {Perturbation{"optimum", r.flow}});
  const auto cvx = convexity_check(pb.family.flow(zero), r.flow, pb);
  auto checks = [](const EquilibriumReport& e) {
    json a = json::array();
    for (const auto& k : e.checks)
      a.push_back({{"name", k.name}, {"lhs", k.lhs}, {"rhs", k.rhs}, {"holds", k.holds}, {"inconclusive", k.inconclusive}});
    return a;
  };
  json j;
  j["eta"] = std::vector<double>(r.eta.data(), r.eta.data() + r.eta.size());
  j["value"] = r.value;
  j["control_value"] = r.control_value;
  j["interaction"] = r.interaction;
  j["evaluations"] = r.evaluations;
  j["converged"] = r.converged;
  j["equilibrium"] = {{"slack", eq.slack}, {"checks", checks(eq)}, {"pass", eq.pass}};
  j["power_check"] = {{"checks", checks(power)}, {"violated", power.violations > 0}};
  json cj = json::array();
  bool cvx_ok = true;
  for (const auto& k : cvx) {
    cj.push_back({{"eps", k.eps}, {"mixed", k.mixed}, {"chord", k.chord}, {"holds", k.holds}});
    cvx_ok = cvx_ok && k.holds;
  }
  j["convexity"] = cj;
  auto f = open_csv(sibling(o.out, "trace"));
  f << "move,value\n";
  for (std::size_t i = 0; i < r.trace.size(); ++i) f << i << "," << r.trace[i] << "\n";
  auto g = open_csv(sibling(o.out, "variance"));
  g << "t,variance\n";
  for (double t : linspace(0.0, pb.family.horizon(), 51)) g << t << "," << pb.family.variance(r.eta, t) << "\n";
  j["pass"] = eq.pass && cvx_ok && r.solution.certified;
  return j;
}

json cmd_validate_cost(const RunConfig& c) {
  const ValidationReport v = validate_assumption_C(c.cost, c.flow, 200, c.seed);
  json a = json::array();
  for (const auto& e : v.entries) a.push_back({{"name", e.name}, {"passed", e.passed}, {"detail", e.detail}});
  return {{"cost", c.cost.name()}, {"entries", a}, {"pass", v.all_passed()}};
}

}  // namespace

json solution_to_json(const DualSolution& s) {
  json basis;
  basis["horizon"] = s.basis.horizon();
  basis["time_knots"] = s.basis.time_family().knots();
  json sp = json::array();
  for (const auto& f : s.basis.space_families()) sp.push_back(f.knots());
  basis["space_knots"] = sp;
  basis["kind"] = s.basis.space_families().front().kind() == Family1D::Kind::Rbf ? "rbf" : "bspline";
  return {{"theta", std::vector<double>(s.theta.data(), s.theta.data() + s.theta.size())},
          {"basis", basis},
          {"dual_value", s.dual_value},
          {"energy_value", s.energy_value},
          {"grad_norm", s.grad_norm_at_opt},
          {"tol_foc", s.tol_foc},
          {"luxemburg_norm_psi", s.luxemburg_norm_psi},
          {"iterations", s.iterations},
          {"attempts", s.attempts},
          {"certified", s.certified}};
}

DualSolution solution_from_json(const json& j, const RunConfig& c) {
  TestFunctionBasis basis = TestFunctionBasis::build(c.flow, c.basis);
  const auto theta = j.at("theta").get<std::vector<double>>();
  const auto tk = j.at("basis").at("time_knots").get<std::vector<double>>();
  const auto sk = j.at("basis").at("space_knots").get<std::vector<std::vector<double>>>();
  auto close = [](const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (std::abs(a[i] - b[i]) > 1e-9 * (1 + std::abs(a[i]))) return false;
    return true;
  };
  bool same = static_cast<int>(theta.size()) == basis.size() && close(tk, basis.time_family().knots()) &&
              sk.size() == basis.space_families().size();
  for (std::size_t i = 0; same && i < sk.size(); ++i) same = close(sk[i], basis.space_families()[i].knots());
  if (!same) throw InvalidArgument("solution was produced with a different basis than this config builds");
  DualSolution s{basis, Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size())};
  s.dual_value = j.at("dual_value").get<double>();
  s.energy_value = j.at("energy_value").get<double>();
  s.grad_norm_at_opt = j.at("grad_norm").get<double>();
  s.tol_foc = j.at("tol_foc").get<double>();
  s.certified = j.at("certified").get<bool>();
  return s;
}

json run_command(const CommandOptions& o, const std::optional<RunConfig>& config, std::ostream& log) {
#ifdef _OPENMP
  if (config && config->workers > 0) omp_set_num_threads(config->workers);
#endif
  if (config) log << "config (defaults filled): " << config->effective.dump() << "\n";
  json report;
  if (o.command == "solve-dual") {
    report = cmd_solve_dual(o, need(config, o.command), log);
  } else if (o.command == "check-gap") {
    report = cmd_check_gap(o, need(config, o.command), log);
  } else if (o.command == "simulate") {
    report = cmd_simulate(o, need(config, o.command), log);
  } else if (o.command == "catalog") {
    Params P(o.params);
    if (o.catalog == "gaussian") report = catalog_gaussian(P, log);
    else if (o.catalog == "bessel") report = catalog_bessel(P, log);
    else if (o.catalog == "nonuniversality") report = catalog_nonuniversality(P, log);
    else throw InvalidArgument("unknown catalog case '" + o.catalog + "'");
  } else if (o.command == "mfg-solve") {
    report = cmd_mfg(o, need(config, o.command), log);
  } else if (o.command == "validate-cost") {
    report = cmd_validate_cost(need(config, o.command));
  } else {
    throw InvalidArgument("unknown command '" + o.command + "'");
  }
  report = stamp(std::move(report), o.command, config);
  write_json(o.out, report);
  return report;
}

int run_pipeline(const CommandOptions& o, const std::optional<RunConfig>& config, std::ostream& log) {
  try {
    const json r = run_command(o, config, log);
    if (o.out.empty()) std::cout << r.dump(2) << "\n";
    return r.value("pass", false) ? 0 : 1;
  } catch (const std::exception& e) {
    std::string type = "error";
    if (dynamic_cast<const ConfigError*>(&e)) type = "config_error";
    else if (dynamic_cast<const InvalidArgument*>(&e)) type = "invalid_argument";
    else if (dynamic_cast<const ConvergenceError*>(&e)) type = "convergence_error";
    const json err = {{"error", {{"type", type}, {"message", e.what()}, {"command", o.command}}},
                      {"version", kLibraryVersion},
                      {"pass", false}};
    std::cerr << err.dump(2) << "\n";
    try {
      write_json(o.out, err);
    } catch (const std::exception&) {
    }
    return 2;
  }
}

}  // namespace nelson
