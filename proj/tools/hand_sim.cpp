// hand-sim: run canned experiments, parameter sweeps, and offline bound checks.
//
// Exit status: 0 all checks pass, 1 a check failed, 2 usage or configuration
// error, 3 runtime error.

#include "hand/cli/commands.hpp"
#include "hand/cli/config.hpp"
#include "hand/cli/scenarios.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace hand::cli;

int cmd_run(const std::string& config, const std::optional<std::string>& out,
            const std::optional<std::uint64_t>& seed, const std::optional<double>& h, bool quiet) {
  ScenarioSpec spec = parse_config(config);
  if (out) spec.out_dir = *out;
  if (seed) {
    spec.solver.jump_policy.seed = *seed;
    spec.disturbance.signal.seed = *seed;
  }
  if (h) {
    spec.solver.h = *h;
    spec.solver.validate();
  }
  RunContext ctx{spec.out_dir, quiet, &std::cerr};
  const ScenarioResult r = run_scenario(spec, ctx);
  if (!quiet)
    std::cout << to_string(spec.scenario) << ": " << (r.passed ? "PASS" : "FAIL") << " ("
              << spec.out_dir << "/summary.json)\n";
  return r.passed ? kPass : kChecksFailed;
}

int cmd_sweep(const std::string& config, const std::string& param, const std::string& values,
              const std::optional<std::string>& out, bool quiet) {
  const std::string text = read_file(config);
  const ScenarioSpec base = parse_config_text(text, config);
  const hand::cli::fs::path root = out ? *out : base.out_dir;
  const SweepResult r =
      run_sweep(text, config, param, split_values(values), root, sweep_threads(), quiet);
  if (!quiet)
    std::cout << "sweep " << param << ": " << r.summary["runs"].size() << " runs, "
              << (r.passed ? "PASS" : "FAIL") << " (" << (root / "sweep_summary.json").string()
              << ")\n";
  return r.passed ? kPass : kChecksFailed;
}

int cmd_check(const std::string& trace, const std::string& bound, const CheckOverrides& ov) {
  const Bound b = bound == "thm1" ? Bound::Thm1 : Bound::Thm2;
  const CheckResult r = check_trace_file(trace, b, ov);
  std::cout << r.report.dump(2) << "\n";
  return r.passed ? kPass : kChecksFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid accelerated gradient dynamics: experiments and bound checks", "hand-sim"};
  app.require_subcommand(1);

  std::string config, trace, bound, param, values;
  std::optional<std::string> out, summary;
  std::optional<std::uint64_t> seed;
  std::optional<double> h, tolerance, t_min, t_max, c;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run one scenario");
  run->set_help_flag("--help", "Print this help message and exit");  // frees -h for --h
  run->add_option("config", config, "Scenario configuration (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "Output directory (overrides output.dir)");
  run->add_option("--seed", seed, "Seed for jump policy and random disturbances");
  run->add_option("--h", h, "Step size (overrides solver.h)");
  run->add_flag("--quiet", quiet, "Suppress progress output");

  auto* sweep = app.add_subcommand("sweep", "Run a scenario once per parameter value");
  sweep->add_option("config", config, "Scenario configuration (JSON)")->required()->check(CLI::ExistingFile);
  sweep->add_option("--param", param, "Dotted configuration key, e.g. hand.t_max")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--out", out, "Output root (default: output.dir)");
  sweep->add_flag("--quiet", quiet, "Suppress progress output");

  CheckOverrides ov;
  auto* check = app.add_subcommand("check", "Re-verify a rate bound on a trace CSV");
  check->add_option("trace", trace, "Trace CSV written by 'run'")->required()->check(CLI::ExistingFile);
  check->add_option("--bound", bound, "thm1 or thm2")->required()->check(CLI::IsMember({"thm1", "thm2"}));
  check->add_option("--summary", summary, "summary.json to take parameters from");
  check->add_option("--tolerance", tolerance, "Absolute tolerance (default 1e-6 + 10 L h)");
  check->add_option("--t-min", t_min, "Override hand.t_min");
  check->add_option("--t-max", t_max, "Override hand.t_max");
  check->add_option("--c", c, "Override hand.c");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (*run) return cmd_run(config, out, seed, h, quiet);
    if (*sweep) return cmd_sweep(config, param, values, out, quiet);
    ov.summary = summary;
    ov.tolerance = tolerance;
    ov.t_min = t_min;
    ov.t_max = t_max;
    ov.c = c;
    return cmd_check(trace, bound, ov);
  } catch (const hand::InvalidArgument& e) {
    std::cerr << "hand-sim: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "hand-sim: error: " << e.what() << "\n";
    return kRuntime;
  }
}
