#pragma once

// Batch runner: JSON configuration, command dispatch, artifacts and verdicts.
//
// Exit codes: 0 all verdicts pass, 2 some verdict failed, 3 numerical
// non-convergence, 4 configuration error.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cuspma/errors.hpp"
#include "cuspma/estimates.hpp"
#include "cuspma/fields.hpp"
#include "cuspma/geometry.hpp"
#include "cuspma/io.hpp"
#include "cuspma/ma_solver.hpp"
#include "cuspma/quasi_atlas.hpp"

namespace cuspma::cli {

using io::json;

enum ExitCode { kPass = 0, kVerdictFail = 2, kNonConvergence = 3, kConfigError = 4 };

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"solve",         "sweep",          "geometry-report",
                                          "verify-charts", "verify-sobolev", "estimates-report"};
  return c;
}

struct Overrides {
  std::optional<std::string> out;
  std::optional<int> grid;
  std::optional<std::vector<double>> eps_schedule;
};

struct RunConfig {
  json effective;  // the configuration after overrides, minus the output path
  ModelGeometry geometry;
  int grid = 64;
  std::string case_name = "run";
  std::string forcing = "zero";
  json forcing_params = json::object();
  double p0 = 6.0;
  SolverConfig solver;
  std::vector<double> schedule{1.0};
  json probes = json::object();
  std::string out = "out";
};

// ---------------------------------------------------------------------------
// Config parsing

namespace detail {

inline const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline double get_num(const json& obj, const char* key, const std::string& path, double dflt) {
  const json* v = find(obj, key);
  if (!v) return dflt;
  if (!v->is_number()) throw ConfigError(path + "." + key, "expected a number");
  return v->get<double>();
}

inline int get_int(const json& obj, const char* key, const std::string& path, int dflt) {
  const json* v = find(obj, key);
  if (!v) return dflt;
  if (!v->is_number_integer()) throw ConfigError(path + "." + key, "expected an integer");
  return v->get<int>();
}

inline bool get_bool(const json& obj, const char* key, const std::string& path, bool dflt) {
  const json* v = find(obj, key);
  if (!v) return dflt;
  if (!v->is_boolean()) throw ConfigError(path + "." + key, "expected true or false");
  return v->get<bool>();
}

inline std::string get_str(const json& obj, const char* key, const std::string& path,
                           const std::string& dflt) {
  const json* v = find(obj, key);
  if (!v) return dflt;
  if (!v->is_string()) throw ConfigError(path + "." + key, "expected a string");
  return v->get<std::string>();
}

inline const json& get_obj(const json& obj, const char* key, const std::string& path) {
  static const json empty = json::object();
  const json* v = find(obj, key);
  if (!v) return empty;
  if (!v->is_object()) throw ConfigError(path.empty() ? key : path + "." + key, "expected an object");
  return *v;
}

inline Point get_point(const json& obj, const char* key, const std::string& path, Point dflt) {
  const json* v = find(obj, key);
  if (!v) return dflt;
  if (!v->is_array() || v->size() != 2) throw ConfigError(path + "." + key, "expected [s1, s2]");
  Point p;
  for (const auto& x : *v) {
    if (!x.is_number()) throw ConfigError(path + "." + key, "expected numbers");
    p.push_back(x.get<double>());
  }
  return p;
}

inline void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }) == keys.end())
      throw ConfigError((path.empty() ? "" : path + ".") + it.key(), "unknown key");
  }
}

}  // namespace detail

inline const std::vector<std::string>& forcing_names() {
  static const std::vector<std::string> n{"zero", "bump", "manufactured", "tailed", "slow"};
  return n;
}

/// Parses and validates a configuration. Malformed JSON and out-of-range
/// values raise ConfigError naming the line or the field.
inline RunConfig parse_config(const std::string& text, const Overrides& ov = {}) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann reports "at line L, column C"
    throw ConfigError("json", e.what());
  }
  if (!j.is_object()) throw ConfigError("json", "top level must be an object");
  detail::reject_unknown(j, "", {"case", "geometry", "forcing", "solver", "probes", "output"});

  RunConfig c;
  c.case_name = detail::get_str(j, "case", "", "run");
  if (c.case_name.empty() || c.case_name.find_first_of("/\\ ") != std::string::npos)
    throw ConfigError("case", "must be a non-empty name without spaces or slashes");

  const json& g = detail::get_obj(j, "geometry", "");
  detail::reject_unknown(g, "geometry", {"n", "k", "kappa", "s_max", "grid"});
  c.geometry.n = detail::get_int(g, "n", "geometry", 2);
  c.geometry.k = detail::get_int(g, "k", "geometry", 2);
  c.geometry.kappa = detail::get_num(g, "kappa", "geometry", kDefaultKappa);
  c.geometry.s_max = detail::get_num(g, "s_max", "geometry", 30.0);
  c.grid = ov.grid ? *ov.grid : detail::get_int(g, "grid", "geometry", 64);
  try {
    c.geometry.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("geometry." + e.field(), e.reason());
  }
  if (c.grid < 8 || c.grid > 1024) throw ConfigError("geometry.grid", "must lie in [8, 1024]");

  const json& f = detail::get_obj(j, "forcing", "");
  c.forcing = detail::get_str(f, "name", "forcing", "zero");
  if (std::find(forcing_names().begin(), forcing_names().end(), c.forcing) == forcing_names().end())
    throw ConfigError("forcing.name", "unknown forcing \"" + c.forcing + "\"");
  c.p0 = detail::get_num(f, "p0", "forcing", 6.0);
  if (!(c.p0 > 2.0 * c.geometry.n)) throw ConfigError("forcing.p0", "must exceed 2n");
  c.forcing_params = f;

  const json& s = detail::get_obj(j, "solver", "");
  detail::reject_unknown(s, "solver", {"newton_tol", "max_iter", "damping", "bc", "eps_schedule",
                                        "require_compatibility"});
  c.solver.newton_tol = detail::get_num(s, "newton_tol", "solver", 1e-10);
  c.solver.max_iter = detail::get_int(s, "max_iter", "solver", 50);
  c.solver.damping = detail::get_num(s, "damping", "solver", 0.5);
  c.solver.bc = detail::get_str(s, "bc", "solver", "dirichlet");
  c.solver.require_compatibility = detail::get_bool(s, "require_compatibility", "solver", false);
  c.solver.grid = c.grid;
  c.solver.s_min = c.geometry.s_min();
  c.solver.s_max = c.geometry.s_max;
  if (ov.eps_schedule) {
    c.schedule = *ov.eps_schedule;
  } else if (const json* e = detail::find(s, "eps_schedule")) {
    if (!e->is_array() || e->empty()) throw ConfigError("solver.eps_schedule", "expected a non-empty array");
    c.schedule.clear();
    for (const auto& x : *e) {
      if (!x.is_number()) throw ConfigError("solver.eps_schedule", "expected numbers");
      c.schedule.push_back(x.get<double>());
    }
  }
  for (std::size_t m = 0; m < c.schedule.size(); ++m) {
    if (!(c.schedule[m] > 0.0 && c.schedule[m] <= 1.0))
      throw ConfigError("solver.eps_schedule", "entries must lie in (0, 1]");
    if (m > 0 && !(c.schedule[m] < c.schedule[m - 1]))
      throw ConfigError("solver.eps_schedule", "must be strictly decreasing");
  }
  c.solver.epsilon = c.schedule.front();
  try {
    c.solver.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("solver." + e.field(), e.reason());
  }

  c.probes = detail::get_obj(j, "probes", "");
  c.out = ov.out ? *ov.out : detail::get_str(j, "output", "", "out");

  c.effective = j;
  c.effective["geometry"]["grid"] = c.grid;
  c.effective["solver"]["eps_schedule"] = c.schedule;
  c.effective.erase("output");  // where artifacts go does not change them
  return c;
}

inline RunConfig load_config(const std::filesystem::path& p, const Overrides& ov = {}) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("config", "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), ov);
}

/// Builds the named forcing; compact forcings must stay two cells inside the box.
inline ForcingField make_forcing(const RunConfig& c) {
  const json& f = c.forcing_params;
  const double a = c.geometry.s_min(), b = c.geometry.s_max;
  ForcingField out;
  if (c.forcing == "zero") {
    out.name = "zero";
    out.F = zero_field(c.geometry.k);
  } else if (c.forcing == "bump") {
    detail::reject_unknown(f, "forcing", {"name", "p0", "amplitude", "c1", "c2", "radius"});
    DipoleParams p;
    p.amplitude = detail::get_num(f, "amplitude", "forcing", p.amplitude);
    p.c1 = detail::get_point(f, "c1", "forcing", p.c1);
    p.c2 = detail::get_point(f, "c2", "forcing", p.c2);
    p.radius = detail::get_num(f, "radius", "forcing", p.radius);
    if (!(p.radius > 0.0)) throw ConfigError("forcing.radius", "must be positive");
    out = bump_forcing(p, c.geometry.n);
  } else if (c.forcing == "manufactured") {
    detail::reject_unknown(f, "forcing", {"name", "p0", "amplitude", "center", "radius"});
    SmoothBump sb = registered_phi_star(a, b);
    sb.amplitude = detail::get_num(f, "amplitude", "forcing", sb.amplitude);
    sb.center = detail::get_point(f, "center", "forcing", sb.center);
    const double r = detail::get_num(f, "radius", "forcing", sb.radius[0]);
    sb.radius = {r, r};
    try {
      out = manufactured_forcing(sb.field("phi_star"), c.schedule.front(), Box{{a, a}, {b, b}});
    } catch (const PreconditionError& e) {
      throw ConfigError("forcing.amplitude", e.what());
    }
  } else if (c.forcing == "tailed") {
    out = tailed_forcing(detail::get_num(f, "amplitude", "forcing", 1.0));
  } else {
    out = slow_forcing(detail::get_num(f, "amplitude", "forcing", 1.0));
  }
  out.p0 = c.p0;
  if (out.compact && out.F.support) {
    const double margin = 2.0 * (b - a) / c.grid;
    const Box& s = *out.F.support;
    for (int j = 0; j < 2; ++j)
      if (s.lo[j] < a + margin || s.hi[j] > b - margin)
        throw ConfigError("forcing", "support must stay two grid cells inside the box");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Verdicts and artifacts

class Verdicts {
 public:
  void set(const std::string& id, bool pass) { v_[id] = pass ? "pass" : "fail"; }
  void flag(const std::string& id) { v_[id] = "flagged"; }
  bool all_pass() const {
    return std::none_of(v_.begin(), v_.end(), [](const auto& p) { return p.second == "fail"; });
  }
  json to_json() const {
    json j = json::object();
    for (const auto& [k, s] : v_) j[k] = s;
    return j;
  }
  const std::map<std::string, std::string>& map() const { return v_; }

 private:
  std::map<std::string, std::string> v_;
};

struct Context {
  const RunConfig& cfg;
  std::filesystem::path dir;
  Verdicts verdicts;
  std::vector<std::string> artifacts;
  std::ostream& log;

  void csv(const std::string& name, const io::CsvTable& t) {
    t.write(dir / name);
    artifacts.push_back(name);
  }
  void jsonfile(const std::string& name, const json& j) {
    io::write_json(dir / name, j);
    artifacts.push_back(name);
  }
};

inline std::string snapshot_name(const RunConfig& c, double eps) {
  return c.case_name + "_" + io::tag(eps) + "_" + std::to_string(c.grid);
}

inline void write_snapshot(Context& ctx, const SolutionField& sol, const SolverConfig& sc) {
  io::CsvTable t({"i", "j", "s1", "s2", "phi", "residual"});
  const TorusGrid& G = sol.grid;
  for (int i = 0; i <= G.N; ++i)
    for (int j = 0; j <= G.N; ++j)
      t.add({(long long)i, (long long)j, G.s(i), G.s(j), sol.phi(i, j), sol.residual(i, j)});
  const std::string base = snapshot_name(ctx.cfg, sol.epsilon);
  ctx.csv(base + ".csv", t);
  json side;
  side["epsilon"] = sol.epsilon;
  side["grid"] = G.N;
  side["s_min"] = G.a;
  side["s_max"] = G.b;
  side["newton_tol"] = sc.newton_tol;
  side["max_iter"] = sc.max_iter;
  side["damping"] = sc.damping;
  side["iterations"] = sol.iterations;
  side["converged"] = sol.converged;
  side["residual_log"] = sol.residual_log;
  side["min_eigenvalue"] = sol.min_eig.value;
  side["min_eigenvalue_at"] = sol.min_eig.s;
  ctx.jsonfile(base + ".json", side);
}

inline void require_solver_geometry(const RunConfig& c) {
  if (c.geometry.n != 2 || c.geometry.k != 2)
    throw ConfigError("geometry.n", "the solver commands need n = k = 2");
}

/// Checks shared by every converged solve.
inline void solve_checks(Context& ctx, const SolutionField& sol, const ForcingField& f,
                         const std::string& prefix) {
  const Field F = Field::sample(sol.grid, f.F.value);
  const SolverConfig& sc = ctx.cfg.solver;
  ctx.verdicts.set(prefix + "positivity", positivity_check(sol.phi).positive);
  ctx.verdicts.set(prefix + "max_principle",
                   sol.epsilon * sol.phi.sup_abs() <= F.sup_abs() + 10.0 * sc.newton_tol);
  // the pulled-back equation on node-aligned chart samples
  const ChartInterpolant ci(sol, F);
  double worst = 0.0;
  for (const auto& ch : solver_charts(sol.grid.b)) worst = std::max(worst, quasi_chart_residual_nodes(ci, ch).sup);
  ctx.verdicts.set(prefix + "chart_residual", worst <= 10.0 * sc.newton_tol);
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_solve(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  require_solver_geometry(c);
  const ForcingField f = make_forcing(c);
  SolverConfig sc = c.solver;
  sc.epsilon = c.schedule.front();
  try {
    const SolutionField sol = newton_solve(f, sc);
    write_snapshot(ctx, sol, sc);
    ctx.verdicts.set("newton_converged", sol.converged);
    solve_checks(ctx, sol, f, "");
    if (c.forcing == "zero") ctx.verdicts.set("fixed_point", sol.phi.sup_abs() <= 1e-10);
    if (c.forcing == "manufactured") {
      const SmoothBump sb = registered_phi_star(c.geometry.s_min(), c.geometry.s_max);
      const json& fp = c.forcing_params;
      SmoothBump b = sb;
      b.amplitude = detail::get_num(fp, "amplitude", "forcing", sb.amplitude);
      b.center = detail::get_point(fp, "center", "forcing", sb.center);
      const double r = detail::get_num(fp, "radius", "forcing", sb.radius[0]);
      b.radius = {r, r};
      const Field exact = Field::sample(sol.grid, [&](const Point& s) { return b.value(s); });
      ctx.log << "manufactured error " << io::num(sup_diff(sol.phi, exact)) << "\n";
    }
    return kPass;
  } catch (const SolveFailure& e) {
    write_snapshot(ctx, e.last(), sc);
    ctx.verdicts.set("newton_converged", false);
    throw;
  }
}

inline io::CsvTable norm_table(const EstimateReport& rep, const SolutionFamily& fam) {
  io::CsvTable t({"epsilon", "sup_phi", "sup_grad", "sup_lap", "sup_tr", "w3p", "I_F", "cauchy",
                  "iterations", "cold_iterations", "coarse_rel"});
  for (std::size_t m = 0; m < rep.rows.size(); ++m) {
    const NormRow& r = rep.rows[m];
    t.add({r.epsilon, r.sup_phi, r.sup_grad, r.sup_lap, r.sup_tr, r.w3p, r.I_F,
           m == 0 ? 0.0 : fam.cauchy[m - 1], (long long)fam.members[m].sol.iterations,
           (long long)fam.members[m].cold_iterations, r.coarse_rel});
  }
  return t;
}

inline SolutionFamily solve_family(Context& ctx, const ForcingField& f, bool cold) {
  const RunConfig& c = ctx.cfg;
  SolutionFamily fam = epsilon_continuation(f, c.solver, c.schedule, cold);
  for (const auto& m : fam.members) write_snapshot(ctx, m.sol, c.solver);
  if (!fam.complete) {
    ctx.verdicts.set("continuation_complete", false);
    throw NonConvergenceError("continuation stopped: " + fam.failure);
  }
  ctx.verdicts.set("continuation_complete", true);
  return fam;
}

inline int cmd_sweep(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  require_solver_geometry(c);
  const ForcingField f = make_forcing(c);
  const bool cold = detail::get_bool(c.probes, "warm_start", "probes", true);
  const SolutionFamily fam = solve_family(ctx, f, cold);
  const bool audit = detail::get_bool(c.probes, "truncation_audit", "probes", true);
  const EstimateReport rep = norm_report(fam, f, c.solver, audit);
  ctx.csv("estimates_" + c.case_name + "_" + std::to_string(c.grid) + ".csv", norm_table(rep, fam));

  ctx.verdicts.set("uniformity", rep.uniform);
  bool cauchy = true;
  for (std::size_t m = 1; m < fam.cauchy.size(); ++m) cauchy = cauchy && fam.cauchy[m] < fam.cauchy[m - 1];
  if (c.forcing == "zero") {
    double sup = 0.0;
    for (const auto& m : fam.members) sup = std::max(sup, m.sol.phi.sup_abs());
    ctx.verdicts.set("fixed_point", sup <= 1e-10);
  } else if (fam.cauchy.size() >= 2) {
    ctx.verdicts.set("cauchy_decreasing", cauchy);
  }
  if (cold && c.forcing != "zero") {
    bool fewer = true;
    for (std::size_t m = 1; m < fam.members.size(); ++m)
      fewer = fewer && fam.members[m].sol.iterations < fam.members[m].cold_iterations;
    ctx.verdicts.set("warm_start", fewer);
  }
  if (audit) {
    if (rep.truncation_flagged) ctx.verdicts.flag("truncation_audit");
    else ctx.verdicts.set("truncation_audit", true);
  }
  bool ladders = true;
  for (std::size_t m = 0; m < fam.members.size(); ++m) {
    const SolutionField& sol = fam.members[m].sol;
    solve_checks(ctx, sol, f, "eps" + io::tag(sol.epsilon) + ".");
    const Ladder l = moser_trace(sol.phi, MeasureSpec::dmu(), c.geometry.n);
    ladders = ladders && l.nondecreasing() && l.final_gap() <= 0.02;
  }
  ctx.verdicts.set("moser_sup_recovery", ladders);
  return kPass;
}

inline int cmd_geometry_report(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  const ModelGeometry& g = c.geometry;
  const GeometryBounds B = measure_bounds(g, 64);
  io::CsvTable t({"s", "rho", "model_coeff", "gauss_curvature", "gauss_curvature_fd",
                  "holomorphic_curvature", "grad_rho_ratio", "volume_beyond"});
  double kmin = 1e300, kmax = -1e300, fd_err = 0.0, ratio_max = 0.0;
  for (int i = 0; i < 64; ++i) {
    const double s = g.s_min() + (g.s_max - g.s_min()) * i / 63.0;
    const CuspPoint p = CuspPoint::torus_invariant(std::vector<double>(g.k, s), g.n - g.k);
    const double K = gauss_curvature_cusp(s);
    // FD oracle: K = -(1/(2 mu)) (log mu)'' with mu = 1/(4 s^2)
    const double h = 1e-3 * s;
    auto lm = [](double x) { return std::log(0.25 / (x * x)); };
    const double Kfd = -(lm(s + h) - 2.0 * lm(s) + lm(s - h)) / (h * h) / (2.0 * 0.25 / (s * s));
    const double ratio = grad_rho_ratio(g, p).ratio;
    kmin = std::min(kmin, K);
    kmax = std::max(kmax, K);
    fd_err = std::max(fd_err, std::abs(Kfd - K) / std::abs(K));
    ratio_max = std::max(ratio_max, ratio);
    t.add({s, weight_rho(g, p).rho, model_metric(g, p).diag()(0), K, Kfd,
           holomorphic_sectional_curvature_cusp(s), ratio, cusp_strip_volume(s, INFINITY)});
  }
  ctx.csv("geometry_" + c.case_name + ".csv", t);
  ctx.verdicts.set("curvature_constant", (kmax - kmin) <= 1e-6 * std::abs(kmin));
  ctx.verdicts.set("curvature_fd_oracle", fd_err <= 1e-6);
  ctx.verdicts.set("grad_rho_bounded", ratio_max <= B.grad_ratio * (1.0 + 1e-12));
  ModelGeometry g1 = ModelGeometry::make(1, 1, g.kappa, std::max(g.s_max, 2e4));
  const double lim =
      grad_rho_ratio(g1, CuspPoint::torus_invariant({1e4}, 0), QuadraticProfile::scalar(1, 0.5)).ratio;
  ctx.verdicts.set("grad_rho_limit", std::abs(lim - 1.0) <= 1e-3);
  const double s0 = g.s_min();
  const double vol_q = integrate_torus_invariant(1, 1, s0, 1e6 * s0, [](const Point&) { return 1.0; }, 256, 8);
  ctx.verdicts.set("volume_closed_form", std::abs(vol_q - 2.0 * std::numbers::pi / s0 * (1.0 - 1e-6)) <= 1e-8);

  // quasi-isometry against the reference metric with f = 0 and lambda = 1
  std::vector<CuspPoint> pts;
  for (int i = 0; i < 64; ++i)
    pts.push_back(CuspPoint::torus_invariant(
        std::vector<double>(g.k, g.s_min() + (g.s_max - g.s_min()) * i / 63.0), g.n - g.k));
  const ReferenceField ref = reference_metric_local(g, 1.0, QuadraticProfile::zero(g.n), pts);
  double C = 1.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    C = std::max(C, quasi_isometry_constant(ref.samples[i].metric, model_metric(g, pts[i])));
  ctx.verdicts.set("quasi_isometry", ref.ok() && std::isfinite(C));
  json b;
  b["curvature_lower"] = B.curvature_lower;
  b["scalar"] = B.scalar;
  b["grad_ratio"] = B.grad_ratio;
  b["quasi_isometry_C"] = C;
  ctx.jsonfile("bounds_" + c.case_name + ".json", b);
  return kPass;
}

/// Rows in the probe CSV layout shared by the atlas commands.
inline io::CsvTable probe_table() {
  return io::CsvTable({"probe_id", "parameters", "lhs", "rhs", "ratio", "refinement_level", "converged"});
}

inline std::string wstr(cplx w) {
  return io::num(w.real()) + (w.imag() < 0 ? "" : "+") + io::num(w.imag()) + "i";
}

inline int cmd_verify_charts(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  const ModelGeometry& g = c.geometry;
  const CoveringSequence seq = covering_sequence(g.kappa, g.s_max);
  io::CsvTable t = probe_table();
  std::mt19937_64 rng(20240101);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  double metric_err = 0.0, metric_fd = 0.0, weight_err = 0.0, lo = 1e300, hi = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double delta = 0.95 * U(rng);
    const cplx w = std::polar(0.75 * std::sqrt(U(rng)), 2.0 * std::numbers::pi * U(rng));
    const double pm = pullback_metric(delta, w), pc = pullback_metric_closed(w);
    const double pw = pullback_weight(delta, w), pl = -std::log(std::norm(quasi_map(delta, w)));
    metric_err = std::max(metric_err, std::abs(pm - pc) / pc);
    weight_err = std::max(weight_err, std::abs(pw - pl) / pw);
    lo = std::min(lo, (1.0 - delta) * pw);
    hi = std::max(hi, (1.0 - delta) * pw);
    // FD chain rule: |dz/dw|^2 by central differences of quasi_map
    const double h = 1e-6;
    const cplx dz = (quasi_map(delta, w + h) - quasi_map(delta, w - h)) / (2.0 * h);
    const cplx z = quasi_map(delta, w);
    const double s = -std::log(std::norm(z));
    const double fd = std::norm(dz) / (std::norm(z) * s * s);
    metric_fd = std::max(metric_fd, std::abs(fd - pc) / pc);
    const std::string par = "delta=" + io::num(delta) + ";w=" + wstr(w);
    t.add({std::string("pullback_metric"), par, pm, pc, pm / pc, 0LL, 1LL});
    t.add({std::string("pullback_metric_fd"), par, fd, pc, fd / pc, 0LL, 1LL});
    t.add({std::string("pullback_weight"), par, pw, pl, pw / pl, 0LL, 1LL});
  }
  // extremes of (1 - delta) s on the closed 3/4 disc: attained on the real axis
  for (double x : {-0.75, 0.75}) {
    const double d = 0.5;
    lo = std::min(lo, (1.0 - d) * pullback_weight(d, x));
    hi = std::max(hi, (1.0 - d) * pullback_weight(d, x));
  }
  ctx.verdicts.set("chart_metric_closed_form", metric_err <= 1e-12);
  ctx.verdicts.set("chart_metric_fd_oracle", metric_fd <= 1e-6);
  ctx.verdicts.set("chart_weight_identity", weight_err <= 1e-12);
  ctx.verdicts.set("chart_weight_bounds", lo >= 2.0 / 7.0 * (1.0 - 1e-12) && hi <= 28.0 * (1.0 + 1e-12));

  io::CsvTable cov({"l", "sigma", "delta", "A", "strip_lo", "strip_hi", "image_lo", "image_hi", "edge_chart"});
  bool image_ok = true, a_sigma = true;
  for (std::size_t l = 0; l < seq.size(); ++l) {
    cov.add({(long long)l + 1, seq.sigma[l], seq.delta[l], seq.A[l], seq.strip[l].lo, seq.strip[l].hi,
             seq.strip_wide[l].lo, seq.strip_wide[l].hi, (long long)seq.edge_chart[l]});
    if (!seq.edge_chart[l]) image_ok = image_ok && seq.strip_wide[l].lo >= seq.s_min();
    a_sigma = a_sigma && seq.A[l] * seq.sigma[l] >= 1.0 && seq.A[l] * seq.sigma[l] <= 4.0;
  }
  ctx.csv("covering_" + c.case_name + ".csv", cov);
  ctx.verdicts.set("sigma1", std::abs(seq.sigma.front() + 0.6 * std::log(g.kappa)) <= 1e-12);
  ctx.verdicts.set("strip_multiplicity", seq.strip_multiplicity <= CoveringSequence::kMultiplicityBound &&
                                             seq.ball_neighbors <= CoveringSequence::kMultiplicityBound);
  ctx.verdicts.set("strips_cover", seq.covers());
  ctx.verdicts.set("image_containment", image_ok);
  ctx.verdicts.set("doubling_equivalence", a_sigma);

  io::CsvTable br = probe_table();
  double cmax = 0.0, c0max = 0.0;
  bool converged = true;
  const int k = std::min(g.k, 2);
  for (const ClosedForm& f : integrand_registry(k, seq.s_min())) {
    const BracketRow r0 = bracket_probe(f, seq, g.n, k, 0);
    const BracketRow r = bracket_probe_converged(f, seq, g.n, k);
    cmax = std::max(cmax, r.c());
    c0max = std::max(c0max, r0.c());
    converged = converged && r.converged;
    const std::string par = std::string("registry=") + kIntegrandRegistryVersion + ";f=" + f.name;
    br.add({std::string("bracket_lower_3/4"), par, r.sum_three_quarter, r.direct, r.lower_ratio, (long long)r.level, (long long)r.converged});
    br.add({std::string("bracket_upper_1/2"), par, r.direct, r.sum_half, r.upper_ratio, (long long)r.level, (long long)r.converged});
    br.add({std::string("bracket_swapped_lower_1/2"), par, r.sum_half, r.direct, r.swapped_lower, (long long)r.level, (long long)r.converged});
    br.add({std::string("bracket_swapped_upper_3/4"), par, r.direct, r.sum_three_quarter, r.swapped_upper, (long long)r.level, (long long)r.converged});
    br.add({std::string("weighted_plain_1/2"), par, r.weighted_direct, r.weighted_plain_half, r.weighted_direct / r.weighted_plain_half, (long long)r.level, (long long)r.converged});
  }
  ctx.csv("charts_" + c.case_name + ".csv", t);
  ctx.csv("bracket_" + c.case_name + ".csv", br);
  ctx.verdicts.set("bracket_constant", cmax <= 100.0);
  ctx.verdicts.set("bracket_stable", std::abs(c0max - cmax) <= 0.2 * cmax);
  ctx.verdicts.set("bracket_converged", converged);
  json s;
  s["c"] = cmax;
  s["c_level0"] = c0max;
  s["registry"] = kIntegrandRegistryVersion;
  ctx.jsonfile("bracket_" + c.case_name + ".json", s);
  return kPass;
}

inline int cmd_verify_sobolev(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  const ModelGeometry& g = c.geometry;
  if (g.k != 2) throw ConfigError("geometry.k", "the Sobolev probe uses k = 2");
  const double p = detail::get_num(c.probes, "sobolev_p", "probes", 2.0);
  const double q = detail::get_num(c.probes, "sobolev_q", "probes", 4.0);
  if (!sobolev_admissible(p, q, g.n)) throw ConfigError("probes.sobolev_q", "inadmissible (p, q)");
  io::CsvTable t = probe_table();
  double m0 = 0.0, m1 = 0.0, scale = 0.0;
  for (const ClosedForm& v : sobolev_family(g)) {
    const SobolevValue a = sobolev_ratio(v, g, p, q, 0);
    const SobolevValue b = sobolev_ratio(v, g, p, q, 1);
    const SobolevValue s = sobolev_ratio(scaled(v, 10.0), g, p, q, 1);
    m0 = std::max(m0, a.ratio);
    m1 = std::max(m1, b.ratio);
    scale = std::max(scale, std::abs(s.ratio - b.ratio) / b.ratio);
    const std::string par = "v=" + v.name + ";p=" + io::num(p) + ";q=" + io::num(q);
    t.add({std::string("sobolev"), par, a.lhs, a.rhs, a.ratio, 0LL, 1LL});
    t.add({std::string("sobolev"), par, b.lhs, b.rhs, b.ratio, 1LL, (long long)(std::abs(a.ratio - b.ratio) <= 0.2 * b.ratio)});
  }
  ctx.verdicts.set("sobolev_finite", std::isfinite(m1) && m1 > 0.0);
  ctx.verdicts.set("sobolev_stable", std::abs(m0 - m1) <= 0.2 * m1);
  ctx.verdicts.set("sobolev_scaling", scale <= 1e-12);
  bool refused = false;
  try {
    sobolev_ratio(sobolev_family(g).front(), g, 2.0, 8.0);
  } catch (const PreconditionError&) {
    refused = true;
  }
  ctx.verdicts.set("sobolev_inadmissible_refused", refused);

  // sup-norm probe on two bumps of equal height and different support
  const double a = g.s_min(), b = g.s_max, mid = 0.5 * (a + b);
  bool ladders = true;
  for (double r : {0.15 * (b - a), 0.3 * (b - a)}) {
    SmoothBump sb{{mid, mid}, {r, r}, 1.0};
    const SupBoundRow row = sup_bound_probe(sb.field("bump_r" + io::tag(r)), g.n, 2, c.p0, a, b, mid - r, mid + r);
    for (std::size_t i = 0; i < row.q.size(); ++i)
      t.add({std::string("sup_ladder"), "v=" + row.name + ";q=" + io::num(row.q[i]), row.ladder[i], row.sup,
             row.ladder[i] / row.sup, 0LL, 1LL});
    t.add({std::string("sup_bound"), "v=" + row.name + ";p0=" + io::num(c.p0), row.sup,
           std::pow(row.I, 1.0 / c.p0), row.ratio, 0LL, (long long)!row.I_divergent});
    for (std::size_t i = 1; i < row.ladder.size(); ++i) ladders = ladders && row.ladder[i] >= row.ladder[i - 1] * (1 - 1e-12);
  }
  ctx.verdicts.set("sup_ladder_monotone", ladders);
  ctx.csv("sobolev_" + c.case_name + ".csv", t);
  return kPass;
}

inline int cmd_estimates_report(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  require_solver_geometry(c);
  const ForcingField f = make_forcing(c);
  const SolutionFamily fam = solve_family(ctx, f, false);
  const ModelGeometry& g = c.geometry;
  const GeometryBounds B = measure_bounds(g, 64);

  io::CsvTable ineq({"epsilon", "inequality", "checked", "violations", "band_hits", "violation_measure",
                     "min_slack", "band"});
  io::CsvTable lad({"epsilon", "measure", "q", "norm", "sup"});
  bool trace_ok = true, grad_ok = true, lap_ok = true, aprime = true, wpos = true, ladders = true;
  for (const auto& m : fam.members) {
    const SolutionField& sol = m.sol;
    const Field F = Field::sample(sol.grid, f.F.value);
    const bool positive = positivity_check(sol.phi).positive;
    const char* names[] = {"grad", "lap", "trace"};
    for (Inequality w : {Inequality::grad, Inequality::lap, Inequality::trace}) {
      const InequalityVerdict v = differential_inequality_check(sol, F, B, w, g.n);
      ineq.add({sol.epsilon, std::string(names[int(w)]), (long long)v.checked, (long long)v.violations,
                (long long)v.band_hits, v.violation_measure, v.min_slack, v.band_scale});
      if (w == Inequality::trace && positive) trace_ok = trace_ok && v.violations == 0;
      if (w == Inequality::grad) grad_ok = grad_ok && v.violations == 0;
      if (w == Inequality::lap) lap_ok = lap_ok && v.violations == 0;
    }
    const AuxiliaryFields aux = auxiliary_fields(sol, F, B, g.n);
    for (std::size_t i = 0; i < aux.A_prime.v.size(); ++i) {
      aprime = aprime && aux.A_prime.v[i] >= aux.B + 1.0 && aux.A_prime.v[i] <= aux.B + 3.0;
      wpos = wpos && aux.w.v[i] > 0.0;
    }
    for (const MeasureSpec& ms : {MeasureSpec::dmu(), MeasureSpec::dnu()}) {
      const Ladder l = moser_trace(sol.phi, ms, g.n);
      for (std::size_t i = 0; i < l.q.size(); ++i) lad.add({sol.epsilon, ms.name(), l.q[i], l.norm[i], l.sup});
      ladders = ladders && l.nondecreasing() && l.final_gap() <= 0.02;
    }
  }
  ctx.csv("inequalities_" + c.case_name + ".csv", ineq);
  ctx.csv("ladders_" + c.case_name + ".csv", lad);
  ctx.verdicts.set("trace_inequality", trace_ok);
  ctx.verdicts.set("gradient_inequality", grad_ok);
  ctx.verdicts.set("laplacian_inequality", lap_ok);
  ctx.verdicts.set("aux_A_prime_range", aprime);
  ctx.verdicts.set("aux_w_positive", wpos);
  ctx.verdicts.set("moser_sup_recovery", ladders);

  // flux probe on an extended box
  if (detail::get_bool(c.probes, "gaffney", "probes", true) && c.forcing != "zero") {
    SolverConfig big = c.solver;
    big.epsilon = 1.0;
    big.s_max = detail::get_num(c.probes, "gaffney_s_max", "probes", 34.0);
    big.grid = detail::get_int(c.probes, "gaffney_grid", "probes", 128);
    if (!(big.s_max > c.solver.s_max)) throw ConfigError("probes.gaffney_s_max", "must exceed geometry.s_max");
    const SolutionField sol = newton_solve(f, big);
    const Field F = Field::sample(sol.grid, f.F.value);
    const AuxiliaryFields aux = auxiliary_fields(sol, F, B, g.n);
    const auto S = nested_truncations(sol.grid);
    io::CsvTable gt({"field", "p", "S", "divergence", "outer_flux"});
    bool vanish = true, halving = true;
    for (double p : {1.0, 2.0}) {
      const GaffneyProbe gp = gaffney_probe(sol, aux.u, p, S);
      for (const auto& r : gp.rows) gt.add({std::string("u"), p, r.S, r.divergence, r.outer_flux});
      vanish = vanish && gp.vanishing;
      if (p == 1.0)
        for (std::size_t i = 1; i < gp.rows.size(); ++i)
          halving = halving && std::abs(gp.rows[i].divergence) <= 0.5 * std::abs(gp.rows[i - 1].divergence);
    }
    const GaffneyProbe ctl = control_probe(g.s_min(), S, true);
    const GaffneyProbe ctl2 = control_probe(g.s_min(), S, false);
    for (const auto& r : ctl.rows) gt.add({std::string("grad_log_rho"), 0.0, r.S, r.divergence, r.outer_flux});
    for (const auto& r : ctl2.rows) gt.add({std::string("grad_rho"), 0.0, r.S, r.divergence, r.outer_flux});
    ctx.csv("gaffney_" + c.case_name + ".csv", gt);
    ctx.verdicts.set("gaffney_vanishing", vanish);
    ctx.verdicts.set("gaffney_halving", halving);
    ctx.verdicts.set("gaffney_control_detected", !ctl.vanishing && !ctl2.vanishing);
  }

  // cutoff approximation of the registered tailed forcing
  const double cut_smax = detail::get_num(c.probes, "cutoff_s_max", "probes", 1000.0);
  const CutoffStudy cs = cutoff_study(tailed_forcing(), g.n, 2, g.s_min(), cut_smax);
  io::CsvTable ct({"k", "I_diff", "I_F"});
  for (std::size_t i = 0; i < cs.k.size(); ++i) ct.add({cs.k[i], cs.I_diff[i], cs.I_F});
  ctx.csv("cutoff_" + c.case_name + ".csv", ct);
  ctx.verdicts.set("cutoff_monotone", cs.monotone);
  ctx.verdicts.set("cutoff_small", cs.doublings_needed >= 0 && cs.doublings_needed <= 6);

  // the functional for the configured forcing and the two tailed references
  io::CsvTable it({"forcing", "p0", "value", "doubled", "rel_change", "divergent"});
  const IValue Ic = I_functional(f.F, g.n, 2, c.p0, g.s_min(), g.s_max);
  const IValue It = I_functional(tailed_forcing().F, g.n, 2, c.p0, g.s_min(), g.s_max);
  const IValue Is = I_functional(slow_forcing().F, g.n, 2, c.p0, g.s_min(), g.s_max);
  it.add({f.name, c.p0, Ic.value, Ic.doubled, Ic.rel_change, (long long)Ic.divergent});
  it.add({std::string("tailed"), c.p0, It.value, It.doubled, It.rel_change, (long long)It.divergent});
  it.add({std::string("slow"), c.p0, Is.value, Is.doubled, Is.rel_change, (long long)Is.divergent});
  ctx.csv("functional_" + c.case_name + ".csv", it);
  ctx.verdicts.set("I_finite", !Ic.divergent);
  if (Is.divergent) ctx.verdicts.flag("I_slow_tail");
  else ctx.verdicts.set("I_slow_tail", false);
  return kPass;
}

// ---------------------------------------------------------------------------
// Entry point

inline json manifest(const std::string& command, const RunConfig& c, const std::vector<std::string>& artifacts) {
  json m;
  m["tool"] = "cuspma";
  m["command"] = command;
  m["config_hash"] = io::fnv1a_hex(c.effective.dump());
  m["config"] = c.effective;
  m["grid"] = c.grid;
  m["s_min"] = c.geometry.s_min();
  m["s_max"] = c.geometry.s_max;
  m["tolerances"] = {{"newton_tol", c.solver.newton_tol}, {"max_iter", c.solver.max_iter}, {"damping", c.solver.damping}};
  m["eps_schedule"] = c.schedule;
  m["artifacts"] = artifacts;
  return m;
}

/// Runs `command` on an already parsed configuration and writes verdicts.json
/// and manifest.json. Returns the exit code.
inline int run(const std::string& command, const RunConfig& cfg, std::ostream& log = std::cerr) {
  static const std::map<std::string, std::function<int(Context&)>> table{
      {"solve", cmd_solve},
      {"sweep", cmd_sweep},
      {"geometry-report", cmd_geometry_report},
      {"verify-charts", cmd_verify_charts},
      {"verify-sobolev", cmd_verify_sobolev},
      {"estimates-report", cmd_estimates_report}};
  auto it = table.find(command);
  if (it == table.end()) {
    log << "error: unknown command \"" << command << "\"\n";
    return kConfigError;
  }
  Context ctx{cfg, cfg.out, {}, {}, log};
  int code = kPass;
  try {
    std::filesystem::create_directories(ctx.dir);
    code = it->second(ctx);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NonConvergenceError& e) {
    log << "non-convergence: " << e.what() << "\n";
    code = kNonConvergence;
  }
  io::write_json(ctx.dir / "verdicts.json", ctx.verdicts.to_json());
  io::write_json(ctx.dir / "manifest.json", manifest(command, cfg, ctx.artifacts));
  for (const auto& [k, v] : ctx.verdicts.map()) log << "  " << v << "  " << k << "\n";
  if (code == kPass && !ctx.verdicts.all_pass()) code = kVerdictFail;
  return code;
}

/// Loads the configuration file, applies overrides and runs.
inline int run_file(const std::string& command, const std::filesystem::path& config,
                    const Overrides& ov = {}, std::ostream& log = std::cerr) {
  if (std::find(commands().begin(), commands().end(), command) == commands().end()) {
    log << "error: unknown command \"" << command << "\"\n";
    return kConfigError;
  }
  try {
    return run(command, load_config(config, ov), log);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kConfigError;
  }
}

}  // namespace cuspma::cli
