#include "tvopt/scenario.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

using namespace tvopt;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("tvopt_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Json quartic_doc() {
  return Json::parse(R"({
    "name": "small",
    "seed": 3,
    "problem": {"name": "quartic", "params": {"b": 5}},
    "flow": {"alpha": 0.3, "dt": 0.002, "horizon": 6.0},
    "initial_conditions": {"x0": [-2]},
    "experiments": [
      {"kind": "simulate", "id": "sim"},
      {"kind": "sweep", "id": "grid", "alphas": [0.1, 0.3], "param": "b", "values": [5, 10]}
    ]
  })");
}

// Message of the ScenarioError raised by parsing `doc`, or "" if it parses.
std::string parse_error(const Json& doc) {
  try {
    parse_scenario(doc);
  } catch (const ScenarioError& e) {
    return e.what();
  }
  return "";
}

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(TVOPT_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void write_doc(const fs::path& p, const Json& doc) {
  std::ofstream f(p);
  f << doc.dump(2);
}

}  // namespace

TEST(ScenarioParse, Defaults) {
  const Scenario sc = parse_scenario(quartic_doc());
  ASSERT_EQ(sc.experiments.size(), 2u);
  EXPECT_EQ(sc.experiments[0].id, "sim");
  EXPECT_DOUBLE_EQ(sc.experiments[0].flow.cfg.alpha, 0.3);
  const auto& sw = std::get<SweepParams>(sc.experiments[1].params);
  EXPECT_EQ(sw.h1, "local-1");
  EXPECT_EQ(sw.h2, "global");
  EXPECT_DOUBLE_EQ(sw.no_track_radius, 1.0);
}

TEST(ScenarioParse, DefaultIdIsKindAndIndex) {
  Json doc = quartic_doc();
  doc["experiments"][0].erase("id");
  EXPECT_EQ(parse_scenario(doc).experiments[0].id, "simulate-0");
}

TEST(ScenarioParse, ErrorsNameTheField) {
  struct Case {
    std::string patch_path;
    Json value;
    std::string expect;
  };
  const std::vector<Case> cases{
      {"/experiments/1/alphas/1", -0.3, "experiments[1].alphas[1]: must be positive"},
      {"/experiments/0/kind", "simulat", "experiments[0].kind: unknown experiment kind"},
      {"/experiments/1/param", "c", "experiments[1].param: problem 'quartic' has no parameter 'c'"},
      {"/flow/dt", 0, "flow.dt: must be positive"},
      {"/flow/integrator", "rk5", "flow.integrator"},
      {"/problem/name", "nope", "problem.name: unknown problem"},
      {"/problem/params/b", "five", "problem.params.b: must be a number"},
      {"/experiments/0/x0", Json::array({1, 2}), "experiments[0].x0: must have 1 entries"},
      {"/experiments/1/h1", "h9", "experiments[1].h1: undefined trajectory 'h9'"},
      {"/experiments/0/bogus", 1, "experiments[0].bogus: unknown field"},
      {"/experiments/1/id", "sim", "experiments[1].id: duplicate id"},
      {"/experiments/0/id", "a/b", "experiments[0].id"},
  };
  for (const auto& c : cases) {
    Json doc = quartic_doc();
    doc[nlohmann::json::json_pointer(c.patch_path)] = c.value;
    const std::string msg = parse_error(doc);
    EXPECT_NE(msg.find(c.expect), std::string::npos) << c.patch_path << " -> '" << msg << "'";
  }
}

TEST(ScenarioParse, StochasticKindsNeedSeeds) {
  Json doc = Json::parse(R"({
    "problem": {"name": "ackley-constrained"},
    "experiments": [{"kind": "basin", "n_inits": 2,
      "sampler": {"reference": "global", "free": [1], "lo": [-1], "hi": [1]}}]
  })");
  EXPECT_NE(parse_error(doc).find("experiments[0].seed: required"), std::string::npos);
  doc["experiments"][0]["seed"] = 5;
  EXPECT_EQ(parse_error(doc), "");
  doc["experiments"][0].erase("seed");
  doc["seed"] = 9;
  EXPECT_EQ(parse_error(doc), "");
}

TEST(ScenarioParse, TracedLabelsMustExist) {
  Json doc = Json::parse(R"({
    "seed": 1,
    "problem": {"name": "quartic"},
    "trajectories": {"source": "trace", "t0": 0, "t1": 1, "trace": [{"label": "a", "seed": [-2]}]},
    "experiments": [{"kind": "certify", "h2": "b"}]
  })");
  EXPECT_NE(parse_error(doc).find("experiments[0].h2: undefined trajectory 'b'"), std::string::npos);
  doc["experiments"][0]["h2"] = "a";
  EXPECT_EQ(parse_error(doc), "");
  doc["trajectories"]["trace"].push_back({{"label", "a"}, {"seed", {1}}});
  EXPECT_NE(parse_error(doc).find("trajectories.trace[1].label: duplicate"), std::string::npos);
}

TEST(ScenarioParse, BasinSamplerLeavesDependentCoordinates) {
  Json doc = Json::parse(R"({
    "seed": 1,
    "problem": {"name": "ackley-constrained"},
    "experiments": [{"kind": "basin", "sampler": {"reference": "global", "free": [0, 1], "lo": [0, 0], "hi": [1, 1]}}]
  })");
  EXPECT_NE(parse_error(doc).find("experiments[0].sampler.free: must leave exactly m = 1"), std::string::npos);
}

TEST(ScenarioRun, EmptyExperimentListSucceeds) {
  const fs::path out = fresh_dir("empty");
  const Json doc = Json::parse(R"({"name": "empty", "experiments": []})");
  const RunResult r = run_scenario(parse_scenario(doc), doc, {out, 1, std::nullopt, std::nullopt});
  EXPECT_EQ(r.n_failed, 0u);
  EXPECT_EQ(r.summary["status"], "ok");
  EXPECT_TRUE(r.summary["experiments"].empty());
  EXPECT_TRUE(fs::exists(out / "summary.json"));
}

TEST(ScenarioRun, FailingExperimentDoesNotAbortOthers) {
  const fs::path out = fresh_dir("failing");
  Json doc = quartic_doc();
  // seeded on the local maximum, so tracing fails at run time
  doc["experiments"].insert(doc["experiments"].begin() + 1,
                            Json::parse(R"({"kind": "simulate", "id": "bad", "trajectories": {"source": "trace",
                              "trace": [{"label": "m", "seed": [-1]}]}})"));
  const RunResult r = run_scenario(parse_scenario(doc), doc, {out, 1, std::nullopt, std::nullopt});
  EXPECT_EQ(r.n_failed, 1u);
  const auto& ex = r.summary["experiments"];
  ASSERT_EQ(ex.size(), 3u);
  EXPECT_EQ(ex[0]["status"], "ok");
  EXPECT_EQ(ex[1]["status"], "error");
  EXPECT_NE(ex[1]["error"].get<std::string>().find("local minimum"), std::string::npos);
  EXPECT_EQ(ex[2]["status"], "ok");
  EXPECT_EQ(r.summary["status"], "partial");
}

TEST(ScenarioRun, SingleCellSweepMatchesSimulate) {
  const fs::path out = fresh_dir("single");
  Json doc = quartic_doc();
  doc["experiments"][1] = Json::parse(R"({"kind": "sweep", "id": "one", "alphas": [0.3]})");
  const RunResult r = run_scenario(parse_scenario(doc), doc, {out, 1, std::nullopt, std::nullopt});
  const auto& sim = r.summary["experiments"][0]["results"];
  const auto& cell = r.summary["experiments"][1]["results"]["cells"][0];
  EXPECT_EQ(sim["final_distance"], cell["final_distance"]);
  EXPECT_EQ(sim["jumps"], cell["jumps"]);
}

TEST(ScenarioRun, WorkerCountDoesNotChangeOutputs) {
  const Json doc = quartic_doc();
  const fs::path a = fresh_dir("w1"), b = fresh_dir("w4");
  run_scenario(parse_scenario(doc), doc, {a, 1, std::nullopt, std::nullopt});
  run_scenario(parse_scenario(doc), doc, {b, 4, std::nullopt, std::nullopt});
  for (const char* f : {"summary.json", "sim.csv", "sim.events.json", "grid.csv"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(ScenarioRun, SweepOutcomesOnQuartic) {
  const fs::path out = fresh_dir("sweep");
  Json doc = quartic_doc();
  doc["flow"]["horizon"] = 4 * M_PI;
  doc["flow"]["dt"] = 1e-3;
  const RunResult r = run_scenario(parse_scenario(doc), doc, {out, 2, std::nullopt, std::nullopt});
  const auto& cells = r.summary["experiments"][1]["results"]["cells"];
  ASSERT_EQ(cells.size(), 4u);
  // cell order: values outer, alphas inner
  EXPECT_EQ(cells[0]["outcome"], "tracks-h1");  // alpha 0.1, b 5
  EXPECT_EQ(cells[1]["outcome"], "tracks-h2");  // alpha 0.3, b 5
  EXPECT_EQ(cells[2]["outcome"], "tracks-h2");  // alpha 0.1, b 10
  const std::string csv = slurp(out / "grid.csv");
  EXPECT_EQ(csv.substr(0, csv.find("\r\n")), "cell,alpha,b,outcome,nearest,final_dist_local-1,final_dist_global,n_jumps,first_jump_t");
}

TEST(ScenarioRun, BasinFractionsAndSeedOverride) {
  Json doc = Json::parse(R"({
    "seed": 4,
    "problem": {"name": "quartic", "params": {"b": 0}},
    "flow": {"alpha": 0.1, "dt": 0.01, "horizon": 3},
    "experiments": [{"kind": "basin", "id": "b", "n_inits": 6, "success_time": 2.5,
      "sampler": {"reference": "global", "lo": [-0.5], "hi": [0.5]}}]
  })");
  const fs::path a = fresh_dir("basin_a"), b = fresh_dir("basin_b");
  const RunResult r1 = run_scenario(parse_scenario(doc), doc, {a, 2, std::nullopt, std::nullopt});
  const auto& res = r1.summary["experiments"][0]["results"];
  EXPECT_DOUBLE_EQ(res["fractions"]["global"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(res["fraction_tracking_start_nearest"].get<double>(), 1.0);
  const RunResult r2 = run_scenario(parse_scenario(doc), doc, {b, 2, 99, std::nullopt});
  EXPECT_NE(slurp(a / "b.csv"), slurp(b / "b.csv"));
  EXPECT_EQ(r2.summary["seed"], 99);
}

TEST(ScenarioRun, ZeroInitsGiveEmptyBasin) {
  Json doc = Json::parse(R"({
    "seed": 4,
    "problem": {"name": "quartic"},
    "experiments": [{"kind": "basin", "n_inits": 0, "sampler": {"reference": "global", "lo": [-1], "hi": [1]}}]
  })");
  const RunResult r = run_scenario(parse_scenario(doc), doc, {fresh_dir("basin0"), 1, std::nullopt, std::nullopt});
  EXPECT_EQ(r.summary["experiments"][0]["results"]["n_inits"], 0);
  EXPECT_TRUE(r.summary["experiments"][0]["results"]["fractions"]["global"].is_null());
}

TEST(ScenarioRun, LandscapeAtZeroAlphaIsObjective) {
  Json doc = Json::parse(R"({
    "problem": {"name": "quartic", "params": {"b": 5}},
    "experiments": [{"kind": "landscape", "id": "l", "alpha": 0, "times": [0.7], "grid": {"lo": -4, "hi": 1, "n": 11}}]
  })");
  const fs::path out = fresh_dir("landscape");
  run_scenario(parse_scenario(doc), doc, {out, 1, std::nullopt, std::nullopt});
  std::ifstream f(out / "l.csv");
  std::string line;
  std::getline(f, line);
  const auto p = builtin_quartic(5.0);
  std::vector<double> diff;
  while (std::getline(f, line)) {
    double t, e, v;
    ASSERT_EQ(std::sscanf(line.c_str(), "%lf,%lf,%lf", &t, &e, &v), 3);
    diff.push_back(v - p.f(Vec::Constant(1, e + 1.0 + 5.0 * std::sin(t)), t));
  }
  ASSERT_EQ(diff.size(), 11u);
  for (double d : diff) EXPECT_NEAR(d, diff.front(), 1e-9);
}

TEST(Cli, ExitCodesAndValidate) {
  const fs::path dir = fresh_dir("cli");
  write_doc(dir / "ok.json", quartic_doc());
  Json bad = quartic_doc();
  bad["flow"]["alpha"] = -1;
  write_doc(dir / "bad.json", bad);
  EXPECT_EQ(run_cli("validate --scenario " + (dir / "ok.json").string()), 0);
  EXPECT_EQ(run_cli("validate --scenario " + (dir / "bad.json").string()), 2);
  EXPECT_EQ(run_cli("run --scenario " + (dir / "bad.json").string() + " --out " + (dir / "o").string()), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("run --scenario " + (dir / "ok.json").string() + " --out " + (dir / "o").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "o" / "summary.json"));
}

TEST(Cli, KindSubcommandRunsOnlyThatKind) {
  const fs::path dir = fresh_dir("cli_kind");
  write_doc(dir / "s.json", quartic_doc());
  ASSERT_EQ(run_cli("sweep --scenario " + (dir / "s.json").string() + " --out " + (dir / "o").string() + " --workers 2"), 0);
  const Json s = load_json_file(dir / "o" / "summary.json");
  ASSERT_EQ(s["experiments"].size(), 1u);
  EXPECT_EQ(s["experiments"][0]["kind"], "sweep");
}

TEST(Cli, RerunIsByteIdentical) {
  const fs::path dir = fresh_dir("cli_det");
  write_doc(dir / "s.json", quartic_doc());
  ASSERT_EQ(run_cli("run --scenario " + (dir / "s.json").string() + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run_cli("run --scenario " + (dir / "s.json").string() + " --out " + (dir / "b").string()), 0);
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    const std::string name = entry.path().filename().string();
    if (name == "timing.json") continue;
    EXPECT_EQ(slurp(entry.path()), slurp(dir / "b" / name)) << name;
  }
}

TEST(ShippedScenarios, AllValidate) {
  for (const auto& entry : fs::directory_iterator(fs::path(TVOPT_SOURCE_DIR) / "scenarios")) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_scenario(entry.path())) << entry.path();
  }
}

TEST(ScenarioRun, TinyAlphaBasinKeepsStartingBasin) {
  Json doc = load_json_file(fs::path(TVOPT_SOURCE_DIR) / "scenarios" / "tiny-alpha.json");
  doc["experiments"][0]["n_inits"] = 12;
  const RunResult r = run_scenario(parse_scenario(doc), doc, {fresh_dir("tiny"), 1, std::nullopt, std::nullopt});
  const auto& res = r.summary["experiments"][0]["results"];
  EXPECT_DOUBLE_EQ(res["fraction_tracking_start_basin"].get<double>(), 1.0);
  EXPECT_LT(res["fractions"]["global"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(res["fractions"]["none"].get<double>(), 0.0);
}
