#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cuspma/cli.hpp"

using namespace cuspma;
using namespace cuspma::cli;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = CUSPMA_SOURCE_DIR;
const fs::path kGolden = CUSPMA_GOLDEN_DIR;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cuspma_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

// The ConfigError message for `text`, or "" when it parses.
std::string config_error(const std::string& text, const Overrides& ov = {}) {
  try {
    parse_config(text, ov);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

int run_text(const std::string& command, const std::string& text, const fs::path& out,
             std::string* log_out = nullptr, Overrides ov = {}) {
  ov.out = out.string();
  std::ostringstream log;
  int code;
  try {
    code = run(command, parse_config(text, ov), log);
  } catch (const ConfigError& e) {
    log << e.what();
    code = kConfigError;
  }
  if (log_out) *log_out = log.str();
  return code;
}

const char* kZero = R"({
  "case": "zero",
  "geometry": {"grid": 16, "s_max": 12, "kappa": 0.36787944117144233},
  "forcing": {"name": "zero"},
  "solver": {"eps_schedule": [1, 0.5]}
})";

std::vector<std::vector<std::string>> read_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

TEST(Config, MalformedJsonReportsPosition) {
  const std::string msg = config_error("{\n  \"case\": \"x\",\n  \"geometry\": {,}\n}");
  EXPECT_NE(msg.find("json"), std::string::npos);
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("column"), std::string::npos) << msg;
}

TEST(Config, BadKappaNamesField) {
  const std::string msg = config_error(R"({"geometry": {"kappa": 1.5}})");
  EXPECT_EQ(msg.rfind("geometry.kappa:", 0), 0u) << msg;
  EXPECT_EQ(msg.find("kappa", 15), std::string::npos) << "field repeated: " << msg;
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_NE(config_error(R"({"geometry": {"gird": 32}})").find("geometry.gird"), std::string::npos);
  EXPECT_NE(config_error(R"({"colour": 1})").find("colour"), std::string::npos);
  EXPECT_NE(config_error(R"({"geometry": {"grid": 4}})").find("geometry.grid"), std::string::npos);
  EXPECT_NE(config_error(R"({"geometry": {"grid": "big"}})").find("geometry.grid"), std::string::npos);
  EXPECT_NE(config_error(R"({"forcing": {"name": "nope"}})").find("forcing.name"), std::string::npos);
  EXPECT_NE(config_error(R"({"forcing": {"p0": 4}})").find("forcing.p0"), std::string::npos);
  EXPECT_NE(config_error(R"({"solver": {"eps_schedule": [0.5, 1]}})").find("solver.eps_schedule"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"solver": {"eps_schedule": [1, 0]}})").find("solver.eps_schedule"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"case": "a b"})").find("case"), std::string::npos);
  EXPECT_NE(config_error("[1, 2]").find("json"), std::string::npos);
  EXPECT_EQ(config_error("{}"), "");
}

TEST(Config, DefaultsAndOverrides) {
  const RunConfig d = parse_config("{}");
  EXPECT_EQ(d.grid, 64);
  EXPECT_EQ(d.forcing, "zero");
  EXPECT_DOUBLE_EQ(d.geometry.kappa, kDefaultKappa);
  EXPECT_EQ(d.schedule, std::vector<double>{1.0});

  Overrides ov;
  ov.grid = 48;
  ov.eps_schedule = std::vector<double>{1.0, 0.5};
  ov.out = "elsewhere";
  const RunConfig c = parse_config(kZero, ov);
  EXPECT_EQ(c.grid, 48);
  EXPECT_EQ(c.solver.grid, 48);
  EXPECT_EQ(c.out, "elsewhere");
  EXPECT_EQ(c.effective["geometry"]["grid"], 48);
  EXPECT_EQ(c.effective["solver"]["eps_schedule"].size(), 2u);
  EXPECT_FALSE(c.effective.contains("output"));
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"bump.json", "zero.json", "manufactured.json", "atlas.json"})
    EXPECT_NO_THROW(load_config(kSource / "configs" / name)) << name;
  EXPECT_THROW(load_config(kSource / "configs" / "missing.json"), ConfigError);
}

TEST(Config, CompactForcingMustFitTheGrid) {
  const RunConfig c = parse_config(R"({"geometry": {"grid": 16, "s_max": 12, "kappa": 0.36787944117144233}, "forcing": {"name": "bump"}})");
  EXPECT_THROW(make_forcing(c), ConfigError);
  const RunConfig ok = parse_config(R"({"geometry": {"grid": 64, "s_max": 12, "kappa": 0.36787944117144233}, "forcing": {"name": "bump"}})");
  EXPECT_NO_THROW(make_forcing(ok));
}

// ---------------------------------------------------------------------------
// exit codes

TEST(ExitCodes, PassOnZeroSweep) {
  const fs::path out = scratch("pass");
  std::string log;
  EXPECT_EQ(run_text("sweep", kZero, out, &log), kPass) << log;
  EXPECT_TRUE(fs::exists(out / "verdicts.json"));
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  EXPECT_TRUE(fs::exists(out / "zero_1_16.csv"));
  EXPECT_TRUE(fs::exists(out / "zero_0.5_16.csv"));
  const json v = json::parse(slurp(out / "verdicts.json"));
  EXPECT_EQ(v["fixed_point"], "pass");
}

TEST(ExitCodes, VerdictFailure) {
  // an uneven schedule: the step 0.45 -> 0.1 moves phi more than 0.5 -> 0.45
  const std::string text = R"({
    "case": "uneven",
    "geometry": {"grid": 48, "s_max": 12, "kappa": 0.36787944117144233},
    "forcing": {"name": "bump"},
    "solver": {"eps_schedule": [1, 0.5, 0.45, 0.1]},
    "probes": {"truncation_audit": false}
  })";
  const fs::path out = scratch("fail");
  std::string log;
  EXPECT_EQ(run_text("sweep", text, out, &log), kVerdictFail) << log;
  const json v = json::parse(slurp(out / "verdicts.json"));
  EXPECT_EQ(v["cauchy_decreasing"], "fail");
}

TEST(ExitCodes, NonConvergenceKeepsArtifacts) {
  const std::string text = R"({
    "case": "stall",
    "geometry": {"grid": 32, "s_max": 12, "kappa": 0.36787944117144233},
    "forcing": {"name": "bump", "amplitude": 0.5, "c1": [6.5, 6.5], "c2": [4.5, 4.5], "radius": 1.5},
    "solver": {"max_iter": 1}
  })";
  const fs::path out = scratch("stall");
  std::string log;
  EXPECT_EQ(run_text("solve", text, out, &log), kNonConvergence) << log;
  EXPECT_TRUE(fs::exists(out / "stall_1_32.csv"));
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  const json v = json::parse(slurp(out / "verdicts.json"));
  EXPECT_EQ(v["newton_converged"], "fail");
}

TEST(ExitCodes, ConfigErrors) {
  std::ostringstream log;
  EXPECT_EQ(run_file("sweep", kSource / "configs" / "missing.json", {}, log), kConfigError);
  EXPECT_EQ(run_file("frobnicate", kSource / "configs" / "zero.json", {}, log), kConfigError);
  EXPECT_NE(log.str().find("unknown command"), std::string::npos);
  // compact support too close to the edge at grid 16
  Overrides ov;
  ov.grid = 16;
  ov.out = scratch("cfg").string();
  EXPECT_EQ(run_file("solve", kSource / "configs" / "bump.json", ov, log), kConfigError);
  // the solver commands need n = k = 2
  EXPECT_EQ(run_text("solve", R"({"geometry": {"k": 1}})", scratch("k1")), kConfigError);
}

// ---------------------------------------------------------------------------
// manifest and determinism

TEST(Manifest, HashesEffectiveConfig) {
  const fs::path a = scratch("man_a"), b = scratch("man_b");
  ASSERT_EQ(run_text("sweep", kZero, a), kPass);
  ASSERT_EQ(run_text("sweep", kZero, b), kPass);
  const std::string ma = slurp(a / "manifest.json");
  EXPECT_EQ(ma, slurp(b / "manifest.json"));
  const json m = json::parse(ma);
  EXPECT_EQ(m["command"], "sweep");
  EXPECT_EQ(m["grid"], 16);
  EXPECT_EQ(m["config_hash"], io::fnv1a_hex(m["config"].dump()));
  EXPECT_EQ(m["config_hash"].get<std::string>().size(), 16u);
  for (const char* k : {"time", "timestamp", "date", "host"}) EXPECT_FALSE(m.contains(k)) << k;
  for (const auto& art : m["artifacts"]) EXPECT_TRUE(fs::exists(a / art.get<std::string>())) << art;

  Overrides ov;
  ov.grid = 24;
  const fs::path c = scratch("man_c");
  ASSERT_EQ(run_text("sweep", kZero, c, nullptr, ov), kPass);
  EXPECT_NE(json::parse(slurp(c / "manifest.json"))["config_hash"], m["config_hash"]);
}

TEST(Determinism, BumpSweepIsByteIdentical) {
  Overrides ov;
  ov.grid = 48;
  ov.eps_schedule = std::vector<double>{1.0, 0.5, 0.25};
  const std::string text = slurp(kSource / "configs" / "bump.json");
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  ASSERT_EQ(run_text("sweep", text, a, nullptr, ov), kPass);
  ASSERT_EQ(run_text("sweep", text, b, nullptr, ov), kPass);
  int files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path().filename();
  }
  EXPECT_GE(files, 6);
}

TEST(Determinism, CsvUsesSeventeenDigits) {
  EXPECT_EQ(io::num(0.1), "0.10000000000000001");
  EXPECT_EQ(std::stod(io::num(1.0 / 3.0)), 1.0 / 3.0);
  io::CsvTable t({"a", "b"});
  t.add({2.0 / 3.0, (long long)7});
  EXPECT_EQ(t.str(), "a,b\n0.66666666666666663,7\n");
  EXPECT_THROW(t.add({1.0}), PreconditionError);
}

// ---------------------------------------------------------------------------
// golden artifacts of the bump sweep at 64^2

TEST(Golden, BumpSweep) {
  const fs::path out = scratch("golden");
  Overrides ov;
  ov.out = out.string();
  std::ostringstream log;
  ASSERT_EQ(run_file("sweep", kSource / "configs" / "bump.json", ov, log), kPass) << log.str();
  const char* files[] = {"estimates_bump_64.csv", "verdicts.json"};
  if (std::getenv("CUSPMA_UPDATE_GOLDEN")) {
    fs::create_directories(kGolden);
    for (const char* f : files) fs::copy_file(out / f, kGolden / f, fs::copy_options::overwrite_existing);
    GTEST_SKIP() << "golden files rewritten";
  }
  EXPECT_EQ(slurp(out / "verdicts.json"), slurp(kGolden / "verdicts.json"));

  // numbers may move in the last bits across compilers; compare to 1e-8
  const auto got = read_csv(slurp(out / files[0]));
  const auto want = read_csv(slurp(kGolden / files[0]));
  ASSERT_EQ(got.size(), want.size());
  ASSERT_EQ(got.front(), want.front());
  for (std::size_t r = 1; r < got.size(); ++r) {
    ASSERT_EQ(got[r].size(), want[r].size());
    for (std::size_t c = 0; c < got[r].size(); ++c) {
      const double g = std::stod(got[r][c]), w = std::stod(want[r][c]);
      EXPECT_NEAR(g, w, 1e-8 * std::max(1.0, std::abs(w))) << "row " << r << " " << want.front()[c];
    }
  }
}
