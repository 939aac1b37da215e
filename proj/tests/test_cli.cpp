#include "hand/cli/artifacts.hpp"
#include "hand/cli/commands.hpp"
#include "hand/cli/config.hpp"
#include "hand/cli/scenarios.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace hand;
using namespace hand::cli;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hand_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) { write_text_file(p, text); }

std::string slurp(const fs::path& p) { return read_file(p.string()); }

int run_tool(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " '" HAND_SIM_PATH "' " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

template <class F>
std::string error_of(F&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

const char* kQuickHand2 = R"({
  "scenario": "hand2-rate",
  "solver": {"h": 0.001, "t_end": 12, "record_stride": 10}
})";

}  // namespace

TEST(Config, MinimalConfigTakesDefaults) {
  for (const auto& [id, name] : kScenarioNames) {
    const auto spec = parse_config_text(std::string(R"({"scenario": ")") + name + "\"}");
    EXPECT_EQ(spec, default_spec(id)) << name;
    // every default is echoed back
    const json echoed = to_json(spec);
    for (const char* key : {"cost", "initial", "hand", "ode", "solver", "disturbance", "options"})
      EXPECT_TRUE(echoed.contains(key)) << name << " " << key;
  }
}

TEST(Config, RoundTrip) {
  for (const auto& [id, name] : kScenarioNames) {
    auto spec = default_spec(id);
    spec.solver.h = 0.125;
    spec.initial.tau = spec.hand.t_min;
    spec.options.eps = 3e-7;
    EXPECT_EQ(parse_config_json(to_json(spec)), spec) << name;
    EXPECT_EQ(parse_config_text(to_json(spec).dump(2)), spec) << name;
  }
}

TEST(Config, RejectsInvertedClockWindow) {
  const auto msg = error_of([] {
    parse_config_text(R"({"scenario": "hand2-rate", "hand": {"t_min": 3, "t_max": 2}})");
  });
  EXPECT_NE(msg.find("HandParams invariant"), std::string::npos) << msg;
}

TEST(Config, RejectsUnknownKeyWithLine) {
  const std::string text = "{\n  \"scenario\": \"hand1-rate\",\n  \"solver\": {\"hh\": 0.1}\n}\n";
  const auto msg = error_of([&] { parse_config_text(text, "cfg.json"); });
  EXPECT_NE(msg.find("cfg.json:3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("hh"), std::string::npos) << msg;
}

TEST(Config, DistinctMessages) {
  const auto missing = error_of([] { parse_config_text(R"({"solver": {}})"); });
  EXPECT_NE(missing.find("scenario"), std::string::npos) << missing;
  const auto bad_id = error_of([] { parse_config_text(R"({"scenario": "nope"})"); });
  EXPECT_NE(bad_id.find("must be one of"), std::string::npos) << bad_id;
  const auto range = error_of([] { parse_config_text(R"({"scenario": "hand1-rate", "solver": {"h": -1}})"); });
  EXPECT_NE(range.find("solver.h"), std::string::npos) << range;
  const auto type = error_of([] { parse_config_text(R"({"scenario": "hand1-rate", "solver": {"h": "x"}})"); });
  EXPECT_NE(type.find("h"), std::string::npos) << type;
  const auto syntax = error_of([] { parse_config_text("{\n\"scenario\": \"hand1-rate\",\n}", "c.json"); });
  EXPECT_NE(syntax.find("c.json:3"), std::string::npos) << syntax;
  EXPECT_NE(syntax.find("malformed"), std::string::npos) << syntax;
}

// ---------------------------------------------------------------------------

TEST(Artifacts, CsvQuoting) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_split("1,\"a,b\",\"x\"\"y\""), (std::vector<std::string>{"1", "a,b", "x\"y"}));
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
}

TEST(Artifacts, TraceCsvRoundTripIsExact) {
  const auto f = make_quadratic(Matrix(Vector(vec({1.0, 4.0})).asDiagonal()), vec({1.0, 0.0}));
  const HandParams prm{1.0, 2.0, 2.0, 1.0};
  SolverConfig cfg;
  cfg.h = 1e-2;
  cfg.t_end = 5.0;
  cfg.record_stride = 3;
  const Trace tr = simulate(hand2(f, prm), HybridState(vec({2, 1}), vec({2, 1}), 1.0), cfg);
  const auto dir = scratch("csv");
  write_trace_file(dir / "t.csv", tr, f, hand::cli::hand_columns(f, prm));

  const std::string text = slurp(dir / "t.csv");
  EXPECT_EQ(text.find('\r'), std::string::npos);
  EXPECT_EQ(text.substr(0, text.find('\n')), "t,j,tau,x1_0,x1_1,x2_0,x2_1,f_gap,V,dist_A,event");

  const CsvTrace back = read_trace_csv((dir / "t.csv").string(), cfg.h);
  ASSERT_EQ(back.dim, 2);
  ASSERT_EQ(back.trace.points.size(), tr.points.size());
  for (std::size_t i = 0; i < tr.points.size(); ++i) {
    EXPECT_EQ(back.trace.points[i].state, tr.points[i].state);
    EXPECT_EQ(back.trace.points[i].time, tr.points[i].time);
    EXPECT_EQ(back.trace.points[i].kind, tr.points[i].kind);
  }
  ASSERT_EQ(back.trace.events.size(), tr.events.size());
  for (std::size_t i = 0; i < tr.events.size(); ++i) EXPECT_EQ(back.trace.events[i].post, tr.events[i].post);
}

TEST(Artifacts, ReaderRejectsForeignFiles) {
  const auto dir = scratch("foreign");
  write(dir / "a.csv", "a,b,c\n1,2,3\n");
  EXPECT_THROW(read_trace_csv((dir / "a.csv").string(), 0.1), InvalidArgument);
  write(dir / "b.csv", "t,j,tau,x1_0,x2_0,f_gap,V,dist_A,event\n0,0,1,1,1,0.5,0.5,0,teleport\n");
  EXPECT_THROW(read_trace_csv((dir / "b.csv").string(), 0.1), InvalidArgument);
}

// ---------------------------------------------------------------------------

TEST(Scenario, Hand2RateSummary) {
  const auto dir = scratch("hand2");
  auto spec = parse_config_text(kQuickHand2);
  std::ostringstream log;
  const auto r = run_scenario(spec, RunContext{dir, true, &log});
  EXPECT_TRUE(r.passed);
  const json doc = json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(doc["constants"]["k0"].get<double>(), 0.5);
  EXPECT_TRUE(doc["checks"]["thm2_rate"]["passed"].get<bool>());
  EXPECT_TRUE(doc["passed"].get<bool>());
  EXPECT_EQ(parse_config_json(doc["config"]), spec);
  EXPECT_TRUE(fs::exists(dir / "hand2.csv"));
  EXPECT_NE(slurp(dir / "plot.gp").find("hand2.csv"), std::string::npos);

  const auto chk = check_trace_file((dir / "hand2.csv").string(), Bound::Thm2);
  EXPECT_TRUE(chk.passed) << chk.report.dump();
  EXPECT_EQ(chk.report["f_gap_column_drift"].get<double>(), 0.0);
}

TEST(Scenario, RerunIsByteIdentical) {
  const auto a = scratch("rerun_a"), b = scratch("rerun_b");
  auto spec = parse_config_text(kQuickHand2);
  spec.out_dir = "ignored";
  run_scenario(spec, RunContext{a, true, nullptr});
  run_scenario(spec, RunContext{b, true, nullptr});
  for (const char* f : {"summary.json", "hand2.csv", "plot.gp"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Sweep, EmptyListRunsNothing) {
  const auto dir = scratch("sweep_empty");
  const auto r = run_sweep(kQuickHand2, "<test>", "hand.t_max", split_values(""), dir, 2, true);
  EXPECT_TRUE(r.passed);
  EXPECT_TRUE(r.summary["runs"].is_object());
  EXPECT_TRUE(r.summary["runs"].empty());
  EXPECT_TRUE(fs::exists(dir / "sweep_summary.json"));
}

TEST(Sweep, ValidatesAllBeforeRunning) {
  const auto dir = scratch("sweep_invalid");
  EXPECT_THROW(run_sweep(kQuickHand2, "<test>", "hand.t_max", {"2", "0.5"}, dir, 1, true), ConfigError);
  EXPECT_FALSE(fs::exists(dir / "hand.t_max=2"));
}

TEST(Sweep, ResultsIndependentOfThreadCount) {
  const auto a = scratch("sweep_a"), b = scratch("sweep_b");
  const std::vector<std::string> vals{"2.5", "2", "3"};
  const auto ra = run_sweep(kQuickHand2, "<test>", "hand.t_max", vals, a, 1, true);
  const auto rb = run_sweep(kQuickHand2, "<test>", "hand.t_max", vals, b, 3, true);
  EXPECT_EQ(slurp(a / "sweep_summary.json"), slurp(b / "sweep_summary.json"));
  for (const auto& v : vals)
    EXPECT_EQ(slurp(a / ("hand.t_max=" + v) / "hand2.csv"), slurp(b / ("hand.t_max=" + v) / "hand2.csv"));
  EXPECT_EQ(ra.summary["runs"].begin().key(), "2");
}

TEST(Sweep, Helpers) {
  EXPECT_EQ(split_values(" 1, 2 ,3 "), (std::vector<std::string>{"1", "2", "3"}));
  EXPECT_TRUE(split_values("").empty());
  EXPECT_TRUE(parse_value("2.5").is_number());
  EXPECT_TRUE(parse_value("rk4").is_string());
  json doc = json::object();
  set_dotted(doc, "solver.h", 0.5);
  EXPECT_EQ(doc["solver"]["h"].get<double>(), 0.5);
  EXPECT_THROW(set_dotted(doc, "solver..h", 1), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Binary, ExitCodes) {
  const auto dir = scratch("binary");
  write(dir / "ok.json", kQuickHand2);
  write(dir / "bad.json", R"({"scenario": "hand2-rate", "hand": {"t_min": 3, "t_max": 2}})");
  write(dir / "weak.json", R"({"scenario": "hand2-rate", "hand": {"t_max": 1.2},
                              "solver": {"h": 0.01, "t_end": 5}})");
  const std::string out = (dir / "out").string();

  EXPECT_EQ(run_tool("run " + (dir / "ok.json").string() + " --quiet --out " + out), 0);
  EXPECT_EQ(run_tool("check " + out + "/hand2.csv --bound thm2"), 0);
  EXPECT_EQ(run_tool("check " + out + "/hand2.csv --bound thm2 --tolerance -1"), 1);
  EXPECT_EQ(run_tool("run " + (dir / "weak.json").string() + " --quiet --out " + out + "_weak"), 1);
  EXPECT_EQ(run_tool("run " + (dir / "bad.json").string() + " --quiet --out " + out + "_bad"), 2);
  EXPECT_EQ(run_tool("run " + (dir / "ok.json").string() + " --h -1 --quiet"), 2);
  EXPECT_EQ(run_tool("frobnicate"), 2);
  EXPECT_EQ(run_tool("sweep " + (dir / "ok.json").string() + " --param hand.t_max --values '' --quiet --out " +
                     out + "_sweep"),
            0);
  EXPECT_EQ(run_tool("sweep " + (dir / "ok.json").string() + " --param hand.t_max --values 2 --quiet --out " +
                         out + "_sweep",
                     "HAND_SIM_THREADS=0"),
            2);
}
