#include "tvopt/scenario.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Args {
  std::string scenario;
  std::string out = "out";
  int workers = 1;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Args& a, bool with_run_flags) {
  cmd->add_option("--scenario", a.scenario, "Scenario file (JSON)")->required()->check(CLI::ExistingFile);
  if (!with_run_flags) return;
  cmd->add_option("--out", a.out, "Output directory")->capture_default_str();
  cmd->add_option("--workers", a.workers, "Concurrent runs inside sweep/basin")->check(CLI::Range(1, 256));
  cmd->add_option("--seed", a.seed, "Override the scenario seed");
}

int run(const Args& a, std::optional<std::string> only_kind) {
  try {
    const tvopt::Json doc = tvopt::load_json_file(a.scenario);
    const tvopt::Scenario sc = tvopt::parse_scenario(doc);
    tvopt::RunOptions opt;
    opt.out_dir = a.out;
    opt.workers = a.workers;
    opt.seed = a.seed;
    opt.only_kind = std::move(only_kind);
    const tvopt::RunResult r = tvopt::run_scenario(sc, doc, opt);
    for (const auto& e : r.summary["experiments"]) {
      std::cout << e["id"].get<std::string>() << ": " << e["status"].get<std::string>();
      if (e.contains("error")) std::cout << " (" << e["error"].get<std::string>() << ")";
      std::cout << '\n';
    }
    std::cout << "summary: " << (opt.out_dir / "summary.json").string() << '\n';
    return r.n_failed ? 1 : 0;
  } catch (const tvopt::ScenarioError& e) {
    std::cerr << "invalid scenario: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

int validate(const Args& a) {
  try {
    const tvopt::Scenario sc = tvopt::load_scenario(a.scenario);
    std::cout << "ok: " << sc.name << ", " << sc.experiments.size() << " experiment(s)\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "invalid scenario: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-varying optimization flows: simulation, sweeps and certificates"};
  app.require_subcommand(1);
  Args a;
  std::optional<std::string> kind;
  bool lint = false;

  auto* run_cmd = app.add_subcommand("run", "Run every experiment in the scenario");
  add_common(run_cmd, a, true);
  for (const auto& k : tvopt::experiment_kinds()) {
    if (k == "shallowness") continue;
    auto* cmd = app.add_subcommand(k, "Run only the '" + k + "' experiments of the scenario");
    add_common(cmd, a, true);
    cmd->callback([&kind, k] { kind = k; });
  }
  auto* val = app.add_subcommand("validate", "Check a scenario file without running it");
  add_common(val, a, false);
  val->callback([&lint] { lint = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  return lint ? validate(a) : run(a, kind);
}
