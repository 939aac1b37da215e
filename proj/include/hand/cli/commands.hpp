#pragma once

// Parameter sweeps and offline re-verification of trace files.

#include "hand/analysis.hpp"
#include "hand/cli/artifacts.hpp"
#include "hand/cli/config.hpp"
#include "hand/cli/scenarios.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace hand::cli {

/// Exit statuses of the command-line tool.
enum ExitCode : int { kPass = 0, kChecksFailed = 1, kUsage = 2, kRuntime = 3 };

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Sets doc[a][b][c] = value for key "a.b.c", creating objects as needed.
inline void set_dotted(json& doc, const std::string& key, const json& value) {
  if (key.empty()) throw ConfigError("--param must name a configuration key");
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--param '" + key + "' has an empty path segment");
    if (!node->is_object()) throw ConfigError("--param '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

/// Numbers, booleans, and JSON arrays keep their type; anything else is a string.
inline json parse_value(const std::string& token) {
  try {
    json v = json::parse(token);
    if (v.is_number() || v.is_boolean() || v.is_array() || v.is_null()) return v;
  } catch (const json::parse_error&) {
  }
  return token;
}

/// Comma-separated list; surrounding blanks are trimmed; "" gives no values.
inline std::vector<std::string> split_values(const std::string& list) {
  std::vector<std::string> out;
  std::string cur;
  auto push = [&] {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
    cur.clear();
  };
  for (char ch : list) {
    if (ch == ',')
      push();
    else
      cur += ch;
  }
  push();
  return out;
}

/// Worker cap: HAND_SIM_THREADS if set to a positive integer, else the core count.
inline unsigned sweep_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HAND_SIM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw ConfigError(std::string("HAND_SIM_THREADS must be a positive integer, got '") + env + "'");
    n = static_cast<unsigned>(v);
  }
  return n;
}

struct SweepResult {
  bool passed = true;
  json summary;
};

/// Runs one scenario per value of `param`. Every variant is validated before
/// any run starts; results are merged in sorted-key order.
inline SweepResult run_sweep(const std::string& text, const std::string& origin,
                             const std::string& param, const std::vector<std::string>& values,
                             const fs::path& out_root, unsigned threads, bool quiet,
                             std::ostream* log = &std::cerr) {
  json base;
  try {
    base = json::parse(text);
  } catch (const json::parse_error&) {
    (void)parse_config_text(text, origin);  // rethrows with a line number
    throw;
  }
  struct Job {
    std::string token;
    ScenarioSpec spec;
    ScenarioResult result;
    std::exception_ptr error;
  };
  std::vector<Job> jobs;
  for (const auto& token : values) {
    json doc = base;
    set_dotted(doc, param, parse_value(token));
    Job job{token, parse_config_json(doc, origin + " [" + param + "=" + token + "]", text), {}, {}};
    job.spec.out_dir = (out_root / (param + "=" + token)).string();
    jobs.push_back(std::move(job));
  }

  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      Job& job = jobs[i];
      try {
        std::ostringstream buf;
        RunContext ctx{job.spec.out_dir, quiet, &buf};
        job.result = run_scenario(job.spec, ctx);
        if (!quiet && log) {
          std::lock_guard<std::mutex> lock(log_mutex);
          *log << buf.str();
        }
      } catch (...) {
        job.error = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs.size())));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < n && !jobs.empty(); ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& job : jobs)
    if (job.error) std::rethrow_exception(job.error);

  SweepResult out;
  out.summary = {{"param", param}, {"values", values}, {"runs", json::object()}};
  for (const auto& job : jobs) {
    out.passed = out.passed && job.result.passed;
    out.summary["runs"][job.token] = {{"dir", param + "=" + job.token},
                                      {"passed", job.result.passed},
                                      {"checks", job.result.summary["checks"]}};
  }
  out.summary["passed"] = out.passed;
  fs::create_directories(out_root);
  write_json_file(out_root / "sweep_summary.json", out.summary);
  return out;
}

// ---------------------------------------------------------------------------
// Offline check
// ---------------------------------------------------------------------------

enum class Bound { Thm1, Thm2 };

struct CheckOverrides {
  std::optional<std::string> summary;  // default: summary.json beside the trace
  std::optional<double> tolerance;
  std::optional<double> t_min, t_max, c;
};

struct CheckResult {
  bool passed = false;
  json report;
};

/// Re-verifies a rate bound on a written trace, reading cost and parameters
/// from the run's summary.
inline CheckResult check_trace_file(const std::string& csv_path, Bound bound,
                                    const CheckOverrides& ov = {}) {
  const fs::path summary_path =
      ov.summary ? fs::path(*ov.summary) : fs::path(csv_path).parent_path() / "summary.json";
  json summary;
  try {
    summary = json::parse(read_file(summary_path.string()));
  } catch (const json::parse_error& e) {
    throw ConfigError(summary_path.string() + ": malformed JSON: " + e.what());
  }
  if (!summary.contains("config"))
    throw ConfigError(summary_path.string() + ": no 'config' section");
  ScenarioSpec spec = parse_config_json(summary["config"], summary_path.string() + " [config]");
  if (ov.t_min) spec.hand.t_min = *ov.t_min;
  if (ov.t_max) spec.hand.t_max = *ov.t_max;
  if (ov.c) spec.hand.c = *ov.c;
  if (ov.t_max && spec.hand.t_med > spec.hand.t_max) spec.hand.t_med = spec.hand.t_max;

  const CostFunction f = spec.cost.build();
  const double h = spec.solver.h;
  const CsvTrace csv = read_trace_csv(csv_path, h);
  if (csv.dim != f.dim())
    throw InvalidArgument(csv_path + ": trace dimension " + std::to_string(csv.dim) +
                          " does not match the configured cost");
  if (csv.trace.points.empty()) throw InvalidArgument(csv_path + ": trace has no samples");

  double gap_drift = 0.0;
  for (std::size_t i = 0; i < csv.trace.points.size(); ++i)
    if (std::isfinite(csv.f_gap[i]))
      gap_drift = std::max(gap_drift, std::abs(csv.f_gap[i] - f.gap(csv.trace.points[i].state.x1())));

  const double tol = ov.tolerance ? *ov.tolerance : rate_tolerance(spec, f, h);
  CheckResult out;
  out.report = {{"trace", csv_path}, {"samples", csv.trace.points.size()},
                {"f_gap_column_drift", gap_drift}, {"tolerance", tol}};
  RateReport rep;
  if (bound == Bound::Thm1) {
    const double beta = beta_from_trace(csv.trace, f, spec.hand.c, spec.hand.t_min);
    out.report["bound"] = "thm1";
    out.report["beta"] = beta;
    rep = check_thm1_rate(csv.trace, f, beta, spec.hand, tol);
  } else {
    const Thm2Constants k = thm2_constants(f, spec.hand);
    out.report["bound"] = "thm2";
    out.report["k0"] = k.k0;
    out.report["ka"] = k.ka;
    out.report["kb"] = k.kb;
    rep = check_thm2_rate(csv.trace, f, spec.hand, tol);
  }
  out.report["result"] = detail::report_json(rep);
  out.passed = rep.satisfied;
  return out;
}

}  // namespace hand::cli
