// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: acceptance [output-dir]

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cuspma/cli.hpp"

using namespace cuspma;
namespace fs = std::filesystem;
using cli::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_out = fs::temp_directory_path() / "cuspma_acceptance";

const char* kBox = R"("geometry": {"n": 2, "k": 2, "kappa": 0.36787944117144233, "s_max": 12, "grid": 64})";

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SolverConfig box(int grid, double eps = 1.0) {
  SolverConfig c;
  c.grid = grid;
  c.epsilon = eps;
  return c;
}

std::vector<double> halving_schedule(int m) {
  std::vector<double> s;
  for (int i = 0; i <= m; ++i) s.push_back(std::ldexp(1.0, -i));
  return s;
}

// Runs a runner command and returns its verdicts; `code` receives the exit code.
json run_command(const std::string& command, const std::string& config, const std::string& sub, int* code) {
  cli::Overrides ov;
  ov.out = (g_out / sub).string();
  fs::remove_all(*ov.out);
  std::ostringstream log;
  *code = cli::run(command, cli::parse_config(config, ov), log);
  return json::parse(slurp(fs::path(*ov.out) / "verdicts.json"));
}

Outcome require(const json& v, std::initializer_list<const char*> keys) {
  Outcome o{true, ""};
  for (const char* k : keys) {
    const std::string s = v.contains(k) ? v[k].get<std::string>() : "missing";
    if (s != "pass") {
      o.pass = false;
      o.detail += std::string(o.detail.empty() ? "" : ", ") + k + "=" + s;
    }
  }
  if (o.pass) o.detail = std::to_string(keys.size()) + " checks";
  return o;
}

const ForcingField& bump() {
  static const ForcingField f = bump_forcing({});
  return f;
}

const SolutionFamily& bump_family() {
  static const SolutionFamily fam = epsilon_continuation(bump(), box(64), halving_schedule(8));
  return fam;
}

// ---------------------------------------------------------------------------

Outcome manufactured_convergence() {
  double e[3];
  const int grids[3] = {32, 64, 128};
  for (int m = 0; m < 3; ++m) {
    const SolverConfig c = box(grids[m]);
    const SmoothBump b = registered_phi_star(c.s_min, c.s_max);
    const ForcingField f = manufactured_forcing(b.field("phi_star"), 1.0, Box{{c.s_min, c.s_min}, {c.s_max, c.s_max}});
    const SolutionField sol = newton_solve(f, c);
    e[m] = sup_diff(sol.phi, Field::sample(sol.grid, [&](const Point& s) { return b.value(s); }));
  }
  const double o1 = std::log2(e[0] / e[1]), o2 = std::log2(e[1] / e[2]);
  return {std::min(o1, o2) >= 1.8 && e[2] <= 1e-4,
          "orders " + fmt(o1) + ", " + fmt(o2) + "; error " + fmt(e[2])};
}

Outcome exact_fixed_point() {
  double worst = 0.0;
  for (double eps : halving_schedule(8)) {
    const SolverConfig c = box(64, eps);
    const SolutionField sol = newton_solve(Field(grid_of(c)), c);
    if (!sol.converged) return {false, "no convergence at eps " + fmt(eps)};
    worst = std::max(worst, sol.phi.sup_abs());
  }
  return {worst <= 1e-10, "max sup " + fmt(worst)};
}

Outcome eps_uniformity() {
  const SolutionFamily& fam = bump_family();
  if (!fam.complete) return {false, "continuation stopped: " + fam.failure};
  const EstimateReport rep = norm_report(fam, bump(), box(64), false);
  const double I = I_functional(bump().F, 2, 2, 6.0, 2.0, 12.0).value;
  bool cauchy = fam.cauchy.size() >= 2;
  for (std::size_t m = 1; m < fam.cauchy.size(); ++m) cauchy = cauchy && fam.cauchy[m] < fam.cauchy[m - 1];
  return {rep.uniform && cauchy && std::isfinite(I),
          "ratios " + fmt(rep.ratio_phi) + "/" + fmt(rep.ratio_grad) + "/" + fmt(rep.ratio_lap) +
              (cauchy ? "; cauchy decreasing" : "; cauchy not decreasing")};
}

const std::string& atlas_config() {
  static const std::string c = R"({"case": "atlas", "geometry": {"n": 2, "k": 2, "s_max": 30},
                                   "probes": {"sobolev_p": 2, "sobolev_q": 4}})";
  return c;
}

Outcome chart_identities() {
  int code;
  const json v = run_command("verify-charts", atlas_config(), "charts", &code);
  return require(v, {"chart_metric_closed_form", "chart_metric_fd_oracle", "chart_weight_identity",
                     "chart_weight_bounds"});
}

Outcome covering_decomposition() {
  int code;
  const json v = run_command("verify-charts", atlas_config(), "covering", &code);
  Outcome o = require(v, {"bracket_constant", "bracket_stable", "sigma1", "strip_multiplicity", "strips_cover"});
  const json b = json::parse(slurp(g_out / "covering" / "bracket_atlas.json"));
  o.detail += "; c = " + fmt(b["c"].get<double>());
  return o;
}

Outcome sobolev_probe() {
  int code;
  const json v = run_command("verify-sobolev", atlas_config(), "sobolev", &code);
  return require(v, {"sobolev_finite", "sobolev_stable", "sobolev_scaling"});
}

Outcome geometry_bounds() {
  int code;
  const json v = run_command("geometry-report", atlas_config(), "geometry", &code);
  return require(v, {"curvature_constant", "curvature_fd_oracle", "grad_rho_bounded", "grad_rho_limit"});
}

Outcome inequality_suite() {
  const SolutionFamily& fam = bump_family();
  const GeometryBounds B = measure_bounds(ModelGeometry::make(2, 2, std::exp(-1.0), 12.0), 64);
  int trace_bad = 0, solves = 0;
  double measure = 0.0;
  for (const auto& m : fam.members) {
    const SolutionField& sol = m.sol;
    const Field F = Field::sample(sol.grid, bump().F.value);
    if (positivity_check(sol.phi).positive) {
      ++solves;
      trace_bad += differential_inequality_check(sol, F, B, Inequality::trace).violations;
    }
    for (Inequality w : {Inequality::grad, Inequality::lap})
      measure += differential_inequality_check(sol, F, B, w).violation_measure;
  }
  return {solves > 0 && trace_bad == 0 && measure == 0.0,
          std::to_string(solves) + " positive solves; trace violations " + std::to_string(trace_bad) +
              "; violation measure " + fmt(measure)};
}

Outcome gaffney_surrogate() {
  SolverConfig c = box(128);
  c.s_max = 34.0;
  const SolutionField sol = newton_solve(bump(), c);
  const Field F = Field::sample(sol.grid, bump().F.value);
  const GeometryBounds B = measure_bounds(ModelGeometry::make(2, 2, std::exp(-1.0), 34.0), 64);
  const AuxiliaryFields aux = auxiliary_fields(sol, F, B);
  const auto S = nested_truncations(sol.grid);
  bool vanish = true;
  double last = 0.0;
  for (double p : {1.0, 2.0}) {
    const GaffneyProbe g = gaffney_probe(sol, aux.u, p, S);
    vanish = vanish && g.vanishing;
    last = std::max(last, std::abs(g.rows.back().divergence));
  }
  const bool control = !control_probe(c.s_min, S, true).vanishing;
  return {vanish && control, "final |div| " + fmt(last) + (control ? "; control flagged" : "; control missed")};
}

Outcome cutoff_approximation_study() {
  const CutoffStudy st = cutoff_study(tailed_forcing(), 2, 2, 2.0, 1000.0);
  return {st.monotone && st.doublings_needed >= 0 && st.doublings_needed <= 6,
          "doublings " + std::to_string(st.doublings_needed) + "; ratio there " +
              fmt(st.I_diff[std::max(st.doublings_needed, 0)] / st.I_F)};
}

Outcome ladder_sup_recovery() {
  double worst = 0.0;
  bool monotone = true;
  for (const auto& m : bump_family().members) {
    const Ladder l = moser_trace(m.sol.phi, MeasureSpec::dmu(), 2);
    monotone = monotone && l.nondecreasing();
    worst = std::max(worst, l.final_gap());
  }
  return {monotone && worst <= 0.02, "worst gap " + fmt(worst)};
}

Outcome determinism() {
  const std::string config = std::string("{\"case\": \"bump\", ") + kBox +
                             R"(, "forcing": {"name": "bump", "p0": 6},
                             "solver": {"eps_schedule": [1, 0.5, 0.25, 0.125]}})";
  int ca, cb;
  run_command("sweep", config, "determinism_a", &ca);
  run_command("sweep", config, "determinism_b", &cb);
  int files = 0, differ = 0;
  for (const auto& e : fs::directory_iterator(g_out / "determinism_a")) {
    ++files;
    if (slurp(e.path()) != slurp(g_out / "determinism_b" / e.path().filename())) ++differ;
  }
  return {ca == cli::kPass && cb == cli::kPass && files > 0 && differ == 0,
          std::to_string(files) + " files, " + std::to_string(differ) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_out = argv[1];
  fs::create_directories(g_out);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"manufactured_convergence", manufactured_convergence},
      {"exact_fixed_point", exact_fixed_point},
      {"eps_uniformity", eps_uniformity},
      {"chart_identities", chart_identities},
      {"covering_decomposition", covering_decomposition},
      {"weighted_sobolev_probe", sobolev_probe},
      {"geometry_bounds", geometry_bounds},
      {"pointwise_inequalities", inequality_suite},
      {"flux_surrogate", gaffney_surrogate},
      {"cutoff_approximation", cutoff_approximation_study},
      {"ladder_sup_recovery", ladder_sup_recovery},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << i + 1 << " " << criteria[i].first << " (" << o.detail << ")"
              << std::endl;
  }
  std::cout << criteria.size() - failed << "/" << criteria.size() << " criteria pass" << std::endl;
  return failed == 0 ? 0 : 1;
}
