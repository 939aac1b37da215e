#pragma once

// Canned experiments. Each scenario simulates, writes trace CSVs, and fills a
// summary whose `checks` decide the exit status.

#include "hand/analysis.hpp"
#include "hand/cli/artifacts.hpp"
#include "hand/cli/config.hpp"
#include "hand/engine.hpp"
#include "hand/hands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace hand::cli {

struct RunContext {
  fs::path out_dir;
  bool quiet = false;
  std::ostream* log = &std::cerr;

  void note(const std::string& msg) const {
    if (!quiet && log) *log << msg << '\n';
  }
};

struct ScenarioResult {
  bool passed = false;
  json summary;
};

namespace detail {

inline json time_json(const std::optional<HybridTime>& t) {
  if (!t) return nullptr;
  return json{{"t", t->t}, {"j", t->j}};
}

inline json report_json(const RateReport& r) {
  json v{{"satisfied", r.satisfied},
         {"worst_margin", std::isfinite(r.worst_margin) ? json(r.worst_margin) : json(nullptr)},
         {"tolerance", r.tolerance},
         {"samples_checked", r.checks},
         {"violations", r.violation_times.size()}};
  v["first_violation"] = r.violation_times.empty()
                             ? json(nullptr)
                             : time_json(r.violation_times.front());
  return v;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

/// Collects artifacts and checks for one scenario run.
class Collector {
 public:
  Collector(const ScenarioSpec& spec, const RunContext& ctx) : spec_(spec), ctx_(ctx) {
    doc_["scenario"] = to_string(spec.scenario);
    doc_["config"] = to_json(spec);
    doc_["checks"] = json::object();
    doc_["runs"] = json::object();
    doc_["constants"] = json::object();
    doc_["info"] = json::object();
    doc_["warnings"] = json::array();
  }

  json& constants() { return doc_["constants"]; }
  json& info() { return doc_["info"]; }

  void warn(const std::string& w) { doc_["warnings"].push_back(w); }

  void check(const std::string& name, bool passed, json detail = json::object()) {
    detail["passed"] = passed;
    doc_["checks"][name] = std::move(detail);
    ctx_.note(std::string(passed ? "  pass  " : "  FAIL  ") + name);
  }

  void check_report(const std::string& name, const RateReport& r) {
    check(name, r.satisfied, report_json(r));
  }

  /// Writes the trace CSV and records its run entry.
  json& trace(const std::string& label, const Trace& tr, const CostFunction& f,
              const TraceColumns& cols) {
    const std::string file = label + ".csv";
    write_trace_file(ctx_.out_dir / file, tr, f, cols);
    csvs_.push_back(file);
    json& run = doc_["runs"][label];
    run["trace"] = file;
    run["termination"] = to_string(tr.termination);
    run["message"] = tr.message;
    run["flow_steps"] = tr.flow_steps;
    run["jumps"] = tr.events.size();
    run["samples"] = tr.points.size();
    return run;
  }

  ScenarioResult finish() {
    bool ok = true;
    for (auto& [name, c] : doc_["checks"].items()) ok = ok && c["passed"].get<bool>();
    doc_["passed"] = ok;
    doc_["artifacts"] = csvs_;
    write_text_file(ctx_.out_dir / "plot.gp", gnuplot_script(to_string(spec_.scenario), csvs_));
    write_json_file(ctx_.out_dir / "summary.json", doc_);
    return {ok, doc_};
  }

 private:
  const ScenarioSpec& spec_;
  const RunContext& ctx_;
  json doc_;
  std::vector<std::string> csvs_;
};

inline Vector unit(int n) {
  Vector e = Vector::Zero(n);
  e(0) = 1.0;
  return e;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shared building blocks
// ---------------------------------------------------------------------------

/// Initial HAND state: x1 defaults to x* + e_0, x2 to x1, tau to T_min.
inline HybridState hand_initial_state(const ScenarioSpec& s, const CostFunction& f) {
  const Vector x1 = s.initial.x1 ? *s.initial.x1 : Vector(f.require_xstar() + detail::unit(f.dim()));
  const Vector x2 = s.initial.x2 ? *s.initial.x2 : x1;
  return HybridState(x1, x2, s.initial.tau ? *s.initial.tau : s.hand.t_min);
}

/// Initial ODE state at tau = t0, at rest: x2 = 0 (velocity form) or x2 = x1.
inline HybridState nominal_initial_state(const ScenarioSpec& s, const CostFunction& f,
                                         Representation rep) {
  const Vector x1 = s.initial.x1 ? *s.initial.x1 : Vector(f.require_xstar() + detail::unit(f.dim()));
  Vector x2 = rep == Representation::Velocity ? Vector(Vector::Zero(f.dim())) : x1;
  if (s.initial.x2) x2 = *s.initial.x2;
  return HybridState(x1, x2, s.ode.t0);
}

/// Equilibrium of the second state component: 0 (velocity) or x* (averaged).
inline Vector nominal_x2_star(const CostFunction& f, Representation rep) {
  return rep == Representation::Velocity ? Vector(Vector::Zero(f.dim())) : f.require_xstar();
}

inline TraceColumns hand_columns(const CostFunction& f, const HandParams& prm) {
  return {[f, c = prm.c](const HybridState& z) { return lyapunov(z, f, c); },
          [xs = f.require_xstar(), prm](const HybridState& z) {
            return target_distance(z, xs, prm);
          }};
}

/// Distance of (x1, x2) to (x*, x2*), ignoring the clock.
inline double nominal_distance(const HybridState& z, const Vector& xs, const Vector& x2s) {
  return std::sqrt((z.x1() - xs).squaredNorm() + (z.x2() - x2s).squaredNorm());
}

inline TraceColumns nominal_columns(const CostFunction& f, const OdeParams& ode,
                                    Representation rep) {
  TraceColumns cols;
  // In averaged form with p = 2, ell = 3 the flow coincides with the hybrid
  // flow at tau = t, so the same Lyapunov function applies.
  if (rep == Representation::Averaged && ode.p == 2.0 && ode.ell == 3.0)
    cols.lyapunov = [f, c = ode.c](const HybridState& z) { return lyapunov(z, f, c); };
  cols.distance = [xs = f.require_xstar(), x2s = nominal_x2_star(f, rep)](const HybridState& z) {
    return nominal_distance(z, xs, x2s);
  };
  return cols;
}

inline std::optional<DisturbanceSpec> gradient_noise(const ScenarioSpec& s) {
  if (s.disturbance.channel != Channel::Gradient || s.disturbance.signal.is_zero())
    return std::nullopt;
  return s.disturbance.signal;
}

inline std::optional<PerturbationSet> dynamics_noise(const ScenarioSpec& s, int n) {
  if (s.disturbance.channel != Channel::Dynamics || s.disturbance.signal.is_zero())
    return std::nullopt;
  PerturbationSet p = PerturbationSet::zero(2 * n + 1);
  p.dynamics() = s.disturbance.signal;
  return p;
}

inline Trace simulate_with(const HybridSystem& sys, const HybridState& z0, const SolverConfig& cfg,
                           const std::optional<PerturbationSet>& pert) {
  return simulate(sys, z0, cfg, pert ? &*pert : nullptr);
}

inline double rate_tolerance(const ScenarioSpec& s, const CostFunction& f, double h) {
  return 1e-6 + s.options.slack_factor * f.lipschitz_or_one() * h;
}

/// Certificate checks for one unperturbed HAND-2 run; used by hand2-rate and
/// by the step-size sweep of discretization-order.
struct Hand2Certificates {
  RateReport thm2, contraction, monotonicity, jumps;
  bool faulted = false;
  bool all() const {
    return !faulted && thm2.satisfied && contraction.satisfied && monotonicity.satisfied &&
           jumps.satisfied;
  }
};

inline Hand2Certificates hand2_certificates(const Trace& tr, const CostFunction& f,
                                            const HandParams& prm, double h,
                                            const Options& o) {
  Hand2Certificates c;
  const double L = f.lipschitz_or_one();
  c.faulted = tr.faulted();
  c.thm2 = check_thm2_rate(tr, f, prm, 1e-6 + o.slack_factor * L * h);
  c.contraction = check_period_contraction(tr, f, prm, o.period_slack);
  c.monotonicity = check_monotonicity(tr, f, prm.c, o.slack_factor * L * h);
  c.jumps = check_jump_identities(tr, f, prm.c, prm.t_min, HandVariant::Hand2, o.jump_rel_tol);
  return c;
}

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

inline void run_instability(const ScenarioSpec& s, const RunContext& ctx, detail::Collector& out) {
  const CostFunction f = s.cost.build();
  const Vector& xs = f.require_xstar();
  const auto gnoise = gradient_noise(s);
  const auto dnoise = dynamics_noise(s, f.dim());
  out.info()["disturbance_bound"] = s.disturbance.signal.bound();

  for (auto rep : {Representation::Velocity, Representation::Averaged}) {
    const std::string label = rep == Representation::Velocity ? "nominal_rep1" : "nominal_rep2";
    ctx.note("simulating " + label);
    const HybridSystem sys = nominal_system(f, s.ode, rep, gnoise);
    const HybridState z0 = nominal_initial_state(s, f, rep);
    const Trace tr = simulate_with(sys, z0, s.solver, dnoise);
    const Vector x2s = nominal_x2_star(f, rep);
    const double d0 = nominal_distance(z0, xs, x2s);
    double peak = 0.0;
    std::optional<double> crossed;
    for (const auto& p : tr.points) {
      if (!p.state.finite()) continue;
      const double d = nominal_distance(p.state, xs, x2s);
      peak = std::max(peak, d);
      if (!crossed && d >= s.options.blowup_factor * d0) crossed = p.time.t;
    }
    const bool blew_up = tr.termination == Termination::BlowUp;
    json& run = out.trace(label, tr, f, nominal_columns(f, s.ode, rep));
    run["initial_distance"] = d0;
    run["peak_distance"] = peak;
    run["peak_ratio"] = d0 > 0.0 ? peak / d0 : 0.0;
    run["threshold_crossed_at"] = crossed ? json(*crossed) : json(nullptr);
    if (rep == Representation::Averaged && s.ode.p == 2.0 && s.ode.ell == 3.0)
      run["lyapunov_monotonicity"] = detail::report_json(
          check_monotonicity(tr, f, s.ode.c, s.options.slack_factor * f.lipschitz_or_one() * s.solver.h));
    out.check(label + "_diverges", blew_up || crossed.has_value(),
              {{"blow_up", blew_up},
               {"peak_ratio", d0 > 0.0 ? peak / d0 : 0.0},
               {"required_ratio", s.options.blowup_factor}});
  }

  ctx.note("simulating hand2");
  const HybridSystem sys = hand2(f, s.hand, FlowOptions{2.0, gnoise});
  for (const auto& w : sys.warnings) out.warn(w);
  const Trace tr = simulate_with(sys, hand_initial_state(s, f), s.solver, dnoise);
  const double late = max_target_distance(tr, xs, s.hand, s.options.settle_time);
  json& run = out.trace("hand2", tr, f, hand_columns(f, s.hand));
  run["max_distance_after_settle"] = late;
  out.check("hand2_bounded", !tr.faulted() && late <= s.options.threshold,
            {{"max_distance_after_settle", late},
             {"threshold", s.options.threshold},
             {"settle_time", s.options.settle_time},
             {"faulted", tr.faulted()}});
}

inline void run_uniformity(const ScenarioSpec& s, const RunContext& ctx, detail::Collector& out) {
  const CostFunction f = s.cost.build();
  const Vector offset = s.options.x_offset ? *s.options.x_offset : detail::unit(f.dim());
  ProbeOptions po;
  po.h = s.solver.h;
  po.horizon = s.solver.t_end;
  po.integrator = s.solver.integrator;
  po.record_stride = s.solver.record_stride;
  po.hand = s.hand;
  std::vector<std::pair<std::string, Trace>> traces;
  po.on_trace = [&](const char* kind, std::size_t i, const Trace& tr) {
    traces.emplace_back(std::string(kind) + "_" + std::to_string(i), tr);
  };
  ctx.note("running uniformity probe");
  const UniformityTable table =
      uniformity_probe(f, s.ode, s.options.t0_offsets, offset, s.options.eps, po);

  for (const auto& [label, tr] : traces) {
    if (label.rfind("nominal", 0) == 0) {
      out.trace(label, tr, f, nominal_columns(f, s.ode, Representation::Velocity));
    } else {
      out.trace(label, tr, f, hand_columns(f, s.hand));
    }
  }
  auto rows = [](const std::vector<ProbeRow>& r, const char* key) {
    json a = json::array();
    for (const auto& row : r)
      a.push_back({{key, row.start}, {"time_to_eps", row.time ? json(*row.time) : json(nullptr)}});
    return a;
  };
  out.info()["nominal"] = rows(table.nominal, "t0");
  out.info()["hand1"] = rows(table.hand1, "tau0");
  out.check("nominal_time_strictly_increasing",
            UniformityTable::strictly_increasing(table.nominal),
            {{"table", rows(table.nominal, "t0")}});
  const double spread = UniformityTable::spread(table.hand1);
  out.check("hand1_phase_spread", spread <= s.options.spread_limit,
            {{"spread", std::isfinite(spread) ? json(spread) : json(nullptr)},
             {"limit", s.options.spread_limit}});

  json li = json::array();
  bool decreasing = true;
  double prev = std::numeric_limits<double>::infinity(), last = 0.0;
  for (double sk : s.options.s_k_values) {
    last = limiting_integral(s.ode.ell, sk, s.options.limiting_r);
    li.push_back({{"s_k", sk}, {"value", last}});
    decreasing = decreasing && last < prev;
    prev = last;
  }
  const double cap = s.options.limiting_factor * s.ode.ell;
  out.check("limiting_integral_vanishes",
            decreasing && !s.options.s_k_values.empty() && last <= cap,
            {{"values", li}, {"final", last}, {"cap", cap}});
}

inline void run_hand1_rate(const ScenarioSpec& s, const RunContext& ctx, detail::Collector& out) {
  const CostFunction f = s.cost.build();
  const double h = s.solver.h;
  const HybridSystem sys = hand1(f, s.hand, FlowOptions{2.0, gradient_noise(s)});
  ctx.note("simulating hand1");
  const Trace tr = simulate_with(sys, hand_initial_state(s, f), s.solver, dynamics_noise(s, f.dim()));
  json& run = out.trace("hand1", tr, f, hand_columns(f, s.hand));

  const double beta = beta_from_trace(tr, f, s.hand.c, s.hand.t_min);
  const double tol = rate_tolerance(s, f, h);
  out.constants()["beta"] = beta;
  out.constants()["tolerance"] = tol;
  out.constants()["L"] = f.lipschitz_or_one();
  // design value: the gap at the end of the first flow is at most beta / T_med^2
  out.constants()["gap_bound_at_t_med"] = beta / (s.hand.t_med * s.hand.t_med);

  out.check_report("thm1_rate", check_thm1_rate(tr, f, beta, s.hand, tol, RateTimeBase::Clock));
  out.info()["thm1_rate_elapsed_form"] =
      detail::report_json(check_thm1_rate(tr, f, beta, s.hand, tol, RateTimeBase::Elapsed));
  out.check_report("lyapunov_monotonicity",
                   check_monotonicity(tr, f, s.hand.c, s.options.slack_factor * f.lipschitz_or_one() * h));
  out.check_report("jump_identities", check_jump_identities(tr, f, s.hand.c, s.hand.t_min,
                                                            HandVariant::Hand1,
                                                            s.options.jump_rel_tol));
  if (!tr.events.empty()) run["gap_before_first_jump"] = f.gap(tr.events.front().pre.x1());
  run["time_to_eps"] = detail::time_json(time_to_epsilon(tr, f, s.options.eps));
  out.check("no_fault", !tr.faulted(), {{"termination", to_string(tr.termination)}});
}

inline void run_hand2_rate(const ScenarioSpec& s, const RunContext& ctx, detail::Collector& out) {
  const CostFunction f = s.cost.build();
  const double mu = f.require_mu();
  const HybridSystem sys = hand2(f, s.hand, FlowOptions{2.0, gradient_noise(s)});
  for (const auto& w : sys.warnings) out.warn(w);
  const bool dwell = validate_dwell(s.hand, mu);
  out.check("dwell_condition", dwell,
            {{"lhs", s.hand.t_max * s.hand.t_max - s.hand.t_min * s.hand.t_min},
             {"rhs", 1.0 / (mu * s.hand.c)}});
  ctx.note("simulating hand2");
  const Trace tr = simulate_with(sys, hand_initial_state(s, f), s.solver, dynamics_noise(s, f.dim()));
  json& run = out.trace("hand2", tr, f, hand_columns(f, s.hand));

  const Thm2Constants k = thm2_constants(f, s.hand);
  auto& c = out.constants();
  c["k0"] = k.k0;
  c["k1"] = k1_constant(s.hand.c, mu, s.hand.t_min, k.delta_t);
  c["k1_flow"] = k.k1;
  c["ka"] = k.ka;
  c["kb"] = k.kb;
  c["delta_t"] = k.delta_t;
  c["mu"] = mu;
  c["L"] = f.require_lipschitz();
  const double gap0 = f.gap(tr.points.front().state.x1());
  const RestartPlan plan = optimal_restart(s.hand.c, mu, s.hand.t_min, gap0, s.options.eps);
  c["delta_t_star"] = plan.delta_t_star;
  c["t_eps_estimate"] = plan.t_eps ? json(*plan.t_eps) : json(nullptr);
  run["time_to_eps"] = detail::time_json(time_to_epsilon(tr, f, s.options.eps));

  if (!dwell) return;  // certificates do not apply
  const Hand2Certificates cert = hand2_certificates(tr, f, s.hand, s.solver.h, s.options);
  out.check_report("thm2_rate", cert.thm2);
  out.check_report("period_contraction", cert.contraction);
  out.check_report("lyapunov_monotonicity", cert.monotonicity);
  out.check_report("jump_identities", cert.jumps);
  out.check("no_fault", !tr.faulted(), {{"termination", to_string(tr.termination)}});
}

inline void run_restart_sweep(const ScenarioSpec& s, const RunContext& ctx, detail::Collector& out) {
  const CostFunction f = s.cost.build();
  const double mu = f.require_mu();
  const HybridState z0 = hand_initial_state(s, f);
  const double gap0 = f.gap(z0.x1());
  const RestartPlan plan = optimal_restart(s.hand.c, mu, s.hand.t_min, gap0, s.options.eps);
  out.constants()["delta_t_star"] = plan.delta_t_star;
  out.constants()["t_eps_estimate"] = plan.t_eps ? json(*plan.t_eps) : json(nullptr);
  out.constants()["k1_at_delta_t_star"] = k1_constant(s.hand.c, mu, s.hand.t_min, plan.delta_t_star);

  const int m = s.options.grid_points;
  const double ratio = s.options.grid_hi / s.options.grid_lo;
  json grid = json::array();
  int best = -1, star = 0;
  double best_time = std::numeric_limits<double>::infinity();
  double star_dist = std::numeric_limits<double>::infinity();
  for (int i = 0; i < m; ++i) {
    const double dT = plan.delta_t_star * s.options.grid_lo *
                      std::pow(ratio, static_cast<double>(i) / static_cast<double>(m - 1));
    const double d = std::abs(std::log(dT / plan.delta_t_star));
    if (d < star_dist) {
      star_dist = d;
      star = i;
    }
    HandParams hp = s.hand;
    hp.t_max = hp.t_min + dT;
    hp.t_med = hp.t_max;
    const HybridSystem sys = hand2(f, hp, FlowOptions{2.0, gradient_noise(s)});
    const Trace tr = simulate_with(sys, z0, s.solver, dynamics_noise(s, f.dim()));
    std::ostringstream label;
    label << "sweep_" << std::setw(2) << std::setfill('0') << i;
    out.trace(label.str(), tr, f, hand_columns(f, hp));
    const auto hit = time_to_epsilon_at_period_ends(tr, f, s.options.eps);
    grid.push_back({{"index", i},
                    {"delta_t", dT},
                    {"t_max", hp.t_max},
                    {"dwell", validate_dwell(hp, mu)},
                    {"time_to_eps", detail::time_json(hit)}});
    if (hit && hit->t < best_time) {
      best_time = hit->t;
      best = i;
    }
    ctx.note("  dT=" + detail::fmt(dT) + " time=" + (hit ? detail::fmt(hit->t) : std::string("-")));
  }
  out.info()["grid"] = grid;
  out.info()["best_index"] = best;
  out.info()["star_index"] = star;
  out.info()["best_time"] = best >= 0 ? json(best_time) : json(nullptr);
  out.check("optimum_adjacent_to_delta_t_star", best >= 0 && std::abs(best - star) <= 1,
            {{"best_index", best}, {"star_index", star}});
  const bool within = best >= 0 && plan.t_eps && best_time >= 0.5 * *plan.t_eps &&
                      best_time <= 2.0 * *plan.t_eps;
  out.check("optimum_within_factor_2_of_estimate", within,
            {{"best_time", best >= 0 ? json(best_time) : json(nullptr)},
             {"t_eps_estimate", plan.t_eps ? json(*plan.t_eps) : json(nullptr)}});
}

/// Least-squares slope of log(err) against log(h).
inline double loglog_slope(const std::vector<double>& h, const std::vector<double>& err) {
  const std::size_t n = h.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(h[i]);
    my += std::log(err[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(h[i]) - mx;
    sxy += dx * (std::log(err[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

inline void run_discretization_order(const ScenarioSpec& s, const RunContext& ctx,
                                     detail::Collector& out) {
  const CostFunction f = s.cost.build();
  const HybridSystem sys = hand2(f, s.hand);
  const HybridState z0 = hand_initial_state(s, f);
  const double period = s.hand.delta_t();
  std::vector<double> hs = s.options.h_values;
  std::sort(hs.begin(), hs.end(), std::greater<>());
  if (hs.size() < 2) throw ConfigError("options.h_values needs at least two step sizes");
  for (double h : hs) {
    const double steps = period / h;
    if (std::abs(steps - std::round(steps)) > 1e-9 * steps)
      throw ConfigError("options.h_values: step " + detail::fmt(h) +
                        " does not divide the flow period " + detail::fmt(period));
  }

  struct Method {
    const char* name;
    IntegratorSpec spec;
    double expected;
    double tol;
  };
  const Method methods[] = {{"euler", IntegratorSpec::euler(), 1.0, s.options.order_tol_euler},
                            {"rk4", IntegratorSpec::runge_kutta("rk4"), 4.0, s.options.order_tol_rk4}};

  auto period_end = [&](const IntegratorSpec& spec, double h) {
    SolverConfig cfg = s.solver;
    cfg.h = h;
    cfg.t_end = period;
    cfg.max_jumps = 0;
    cfg.integrator = spec;
    cfg.record_stride = std::numeric_limits<int>::max();
    return simulate(sys, z0, cfg).points.back().state.flat();
  };

  for (const auto& m : methods) {
    ctx.note(std::string("order fit: ") + m.name);
    std::vector<double> errs;
    json rows = json::array();
    for (double h : hs) {
      const double e = (period_end(m.spec, h) - period_end(m.spec, h / s.options.reference_divisor)).norm();
      errs.push_back(e);
      rows.push_back({{"h", h}, {"error", e}});
    }
    bool positive = std::all_of(errs.begin(), errs.end(), [](double e) { return e > 0.0; });
    const double slope = positive ? loglog_slope(hs, errs) : std::nan("");
    out.check(std::string("order_") + m.name,
              positive && std::abs(slope - m.expected) <= m.tol,
              {{"measured", positive ? json(slope) : json(nullptr)},
               {"expected", m.expected},
               {"tolerance", m.tol},
               {"errors", rows}});
  }

  // Certificates at every step size: the passing set must be closed downwards.
  for (const auto& m : methods) {
    json rows = json::array();
    std::vector<bool> pass;
    for (std::size_t i = 0; i < hs.size(); ++i) {
      SolverConfig cfg = s.solver;
      cfg.h = hs[i];
      cfg.integrator = m.spec;
      const Trace tr = simulate(sys, z0, cfg);
      const Hand2Certificates c = hand2_certificates(tr, f, s.hand, hs[i], s.options);
      pass.push_back(c.all());
      rows.push_back({{"h", hs[i]},
                      {"passed", c.all()},
                      {"thm2_rate", c.thm2.satisfied},
                      {"period_contraction", c.contraction.satisfied},
                      {"lyapunov_monotonicity", c.monotonicity.satisfied},
                      {"jump_identities", c.jumps.satisfied}});
      if (i + 1 == hs.size()) out.trace(std::string("stability_") + m.name, tr, f, hand_columns(f, s.hand));
    }
    // hs is sorted descending: the first passing entry is the largest passing h
    const auto first_pass = std::find(pass.begin(), pass.end(), true);
    const std::optional<double> h_star =
        first_pass == pass.end() ? std::nullopt
                                 : std::optional<double>(hs[static_cast<std::size_t>(first_pass - pass.begin())]);
    const bool closed = h_star.has_value() && std::all_of(first_pass, pass.end(), [](bool b) { return b; });
    out.check(std::string("certificates_below_h_star_") + m.name, closed,
              {{"h_star", h_star ? json(*h_star) : json(nullptr)}, {"runs", rows}});
  }
}

inline void run_robustness_margin(const ScenarioSpec& s, const RunContext& ctx,
                                  detail::Collector& out) {
  const CostFunction f = s.cost.build();
  const Vector& xs = f.require_xstar();
  const HybridState z0 = hand_initial_state(s, f);
  DisturbanceConfig base = s.disturbance;
  if (base.signal.kind == SignalKind::Zero) {
    base.signal = DisturbanceSpec::uniform_random(base.signal.dim, 0.0, 1, 1e-1);
    out.warn("disturbance kind 'zero' replaced by uniform_random for the margin search");
  }
  json table = json::array();
  bool first = true;
  for (double horizon : s.options.margin_horizons) {
    for (double h : s.options.margin_h_values) {
      SolverConfig cfg = s.solver;
      cfg.h = h;
      cfg.t_end = horizon;
      auto trial = [&](double eps) {
        ScenarioSpec t = s;
        t.disturbance = base;
        t.disturbance.signal.amplitude = eps;
        if (t.disturbance.signal.kind == SignalKind::Constant)
          t.disturbance.signal.value *= eps / std::max(t.disturbance.signal.value.norm(), 1e-300);
        const HybridSystem sys = hand2(f, s.hand, FlowOptions{2.0, gradient_noise(t)});
        return simulate_with(sys, z0, cfg, dynamics_noise(t, f.dim()));
      };
      auto passes = [&](double eps) {
        const Trace tr = trial(eps);
        return !tr.faulted() && max_target_distance(tr, xs, s.hand, s.options.settle_time) <=
                                    s.options.threshold;
      };
      const MarginResult r =
          bisect_margin(passes, s.options.margin_lo, s.options.margin_hi, s.options.margin_iterations);
      ctx.note("  horizon=" + detail::fmt(horizon) + " h=" + detail::fmt(h) +
               " margin=" + detail::fmt(r.margin));
      table.push_back({{"horizon", horizon},
                       {"h", h},
                       {"margin", r.margin},
                       {"first_fail", std::isfinite(r.first_fail) ? json(r.first_fail) : json(nullptr)},
                       {"evaluations", r.evaluations}});
      if (first && r.margin > 0.0) {
        out.trace("margin_run", trial(r.margin), f, hand_columns(f, s.hand));
        first = false;
      }
    }
  }
  out.info()["margins"] = table;
  bool found = !table.empty();
  for (const auto& row : table) found = found && row["margin"].get<double>() > 0.0;
  out.check("margin_found", found, {{"threshold", s.options.threshold}});
}

/// Runs one scenario into ctx.out_dir (created if missing).
inline ScenarioResult run_scenario(const ScenarioSpec& spec, const RunContext& ctx) {
  fs::create_directories(ctx.out_dir);
  detail::Collector out(spec, ctx);
  ctx.note(std::string("scenario ") + to_string(spec.scenario) + " -> " + ctx.out_dir.string());
  switch (spec.scenario) {
    case ScenarioId::Instability: run_instability(spec, ctx, out); break;
    case ScenarioId::UniformityProbe: run_uniformity(spec, ctx, out); break;
    case ScenarioId::Hand1Rate: run_hand1_rate(spec, ctx, out); break;
    case ScenarioId::Hand2Rate: run_hand2_rate(spec, ctx, out); break;
    case ScenarioId::RestartSweep: run_restart_sweep(spec, ctx, out); break;
    case ScenarioId::DiscretizationOrder: run_discretization_order(spec, ctx, out); break;
    case ScenarioId::RobustnessMargin: run_robustness_margin(spec, ctx, out); break;
  }
  return out.finish();
}

}  // namespace hand::cli
