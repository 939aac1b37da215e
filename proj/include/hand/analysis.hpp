#pragma once

// Lyapunov monitoring and rate certificates for the HANDs, plus the
// non-uniformity probe of the time-varying ODE.

#include "hand/core.hpp"
#include "hand/dynamics.hpp"
#include "hand/engine.hpp"
#include "hand/hands.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

namespace hand {

/// Outcome of a bound check over a trace.
struct RateReport {
  bool satisfied = true;
  /// Smallest slack (bound + tolerance - observed); negative means violated.
  double worst_margin = std::numeric_limits<double>::infinity();
  std::vector<HybridTime> violation_times;
  std::vector<double> bound_curve;
  double tolerance = 0.0;
  std::size_t checks = 0;

  void observe(const HybridTime& at, double margin) {
    ++checks;
    worst_margin = std::min(worst_margin, margin);
    if (margin < -tolerance) {
      satisfied = false;
      violation_times.push_back(at);
    }
  }
};

/// Tolerance used by the rate checks on unperturbed runs: 1e-6 + 10 L h.
inline double default_rate_tolerance(const CostFunction& f, double h) {
  return 1e-6 + 10.0 * f.lipschitz_or_one() * h;
}

// ---------------------------------------------------------------------------
// Lyapunov function  V(z) = |x2 - x*|^2 / 2 + c tau^2 (f(x1) - f*)
// ---------------------------------------------------------------------------

inline double lyapunov(const HybridState& z, const CostFunction& f, double c) {
  const Vector& xs = f.require_xstar();
  const double tau = z.tau();
  return 0.5 * (z.x2() - xs).squaredNorm() + c * tau * tau * f.gap(z.x1());
}

/// Exact time derivative of V along the nominal flow:
/// u_C(z) = -2 c tau [grad f(x1)^T (x1 - x*) - (f(x1) - f*)].
inline double flow_decrease_rate(const HybridState& z, const CostFunction& f, double c) {
  const Vector& xs = f.require_xstar();
  const Vector g = f.gradient(z.x1());
  return -2.0 * c * z.tau() * (g.dot(z.x1() - xs) - f.gap(z.x1()));
}

/// V(G(z)) - V(z) for HAND-1.
inline double hand1_jump_change(const HybridState& z, const CostFunction& f, double c,
                                double t_min) {
  const double tau = z.tau();
  return -c * f.gap(z.x1()) * (tau * tau - t_min * t_min);
}

/// V(G(z)) - V(z) for HAND-2.
inline double hand2_jump_change(const HybridState& z, const CostFunction& f, double c,
                                double t_min) {
  const Vector& xs = f.require_xstar();
  const double tau = z.tau();
  return 0.5 * (z.x1() - xs).squaredNorm() - 0.5 * (z.x2() - xs).squaredNorm() -
         c * f.gap(z.x1()) * (tau * tau - t_min * t_min);
}

/// Upper bound on the HAND-2 jump change from strong convexity:
/// -c f~(x1)(tau^2 - T_min^2 - 1/(mu c)) - |x2 - x*|^2 / 2.
inline double hand2_jump_bound(const HybridState& z, const CostFunction& f, double c,
                               double t_min) {
  const Vector& xs = f.require_xstar();
  const double mu = f.require_mu();
  const double tau = z.tau();
  return -c * f.gap(z.x1()) * (tau * tau - t_min * t_min - 1.0 / (mu * c)) -
         0.5 * (z.x2() - xs).squaredNorm();
}

/// V must not increase by more than `slack_per_step` per flow step, and must
/// not increase at all across a jump.
inline RateReport check_monotonicity(const Trace& trace, const CostFunction& f, double c,
                                     double slack_per_step) {
  detail::require(slack_per_step >= 0.0, "slack_per_step must be >= 0");
  RateReport rep;
  const double h = trace.config.h;
  if (trace.points.empty()) return rep;
  double v_prev = lyapunov(trace.points.front().state, f, c);
  rep.bound_curve.push_back(v_prev);
  for (std::size_t i = 1; i < trace.points.size(); ++i) {
    const auto& a = trace.points[i - 1];
    const auto& b = trace.points[i];
    const double v = lyapunov(b.state, f, c);
    rep.bound_curve.push_back(v);
    if (b.time.j == a.time.j) {
      const double steps = std::round((b.time.t - a.time.t) / h);
      rep.observe(b.time, steps * slack_per_step - (v - v_prev));
    } else {
      rep.observe(b.time, v_prev - v);
    }
    v_prev = v;
  }
  if (rep.checks == 0) rep.worst_margin = 0.0;
  return rep;
}

enum class HandVariant { Hand1, Hand2 };

inline const char* to_string(HandVariant v) { return v == HandVariant::Hand1 ? "hand1" : "hand2"; }

/// Compares V(post) - V(pre) at every recorded jump with the closed form.
/// Margin per event: rel_tol * max(|V_pre|, |V_post|) - |simulated - closed|.
inline RateReport check_jump_identities(const Trace& trace, const CostFunction& f, double c,
                                        double t_min, HandVariant variant, double rel_tol) {
  RateReport rep;
  for (const auto& ev : trace.events) {
    const double v_pre = lyapunov(ev.pre, f, c);
    const double v_post = lyapunov(ev.post, f, c);
    const double closed = variant == HandVariant::Hand1 ? hand1_jump_change(ev.pre, f, c, t_min)
                                                        : hand2_jump_change(ev.pre, f, c, t_min);
    const double allowance = rel_tol * std::max(std::abs(v_pre), std::abs(v_post));
    rep.bound_curve.push_back(closed);
    rep.observe(ev.time, allowance - std::abs((v_post - v_pre) - closed));
  }
  if (rep.checks == 0) rep.worst_margin = 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// HAND-1 rate certificate
// ---------------------------------------------------------------------------

/// beta = r^2 / (2c) + T_min^2 f~(x1(0,0)).
inline double beta_constant(double r, double c, double t_min, double f_gap0) {
  detail::require(r >= 0.0 && t_min >= 0.0 && f_gap0 >= 0.0 && c > 0.0,
                  "beta_constant needs nonnegative inputs and c > 0");
  return r * r / (2.0 * c) + t_min * t_min * f_gap0;
}

/// Clock: bound beta / tau(t,0)^2. Elapsed: bound beta / t^2 for t > 0.
enum class RateTimeBase { Clock, Elapsed };

namespace detail {

inline void require_reset_start(const Trace& trace, double t_min, const char* what) {
  require(!trace.points.empty(), what, ": empty trace");
  const HybridState& z0 = trace.points.front().state;
  const double scale = std::max(1.0, z0.x1().norm());
  require((z0.x2() - z0.x1()).norm() <= 1e-12 * scale, what,
          ": requires x2(0,0) = x1(0,0), got |x2 - x1| = ", (z0.x2() - z0.x1()).norm());
  require(std::abs(z0.tau() - t_min) <= 1e-12 * std::max(1.0, t_min), what,
          ": requires tau(0,0) = T_min = ", t_min, ", got ", z0.tau());
  require(trace.points.front().time == HybridTime{0.0, 0}, what,
          ": trace must start at hybrid time (0,0)");
}

}  // namespace detail

/// f(x1(t,0)) - f* <= beta / tau(t,0)^2 + tolerance on the first flow interval.
inline RateReport check_thm1_rate(const Trace& trace, const CostFunction& f, double beta,
                                  const HandParams& prm, double tolerance,
                                  RateTimeBase base = RateTimeBase::Clock) {
  detail::require_reset_start(trace, prm.t_min, "check_thm1_rate");
  RateReport rep;
  rep.tolerance = tolerance;
  for (const auto& p : trace.points) {
    if (p.time.j != 0) break;
    double denom2 = 0.0;
    if (base == RateTimeBase::Clock) {
      denom2 = p.state.tau() * p.state.tau();
    } else {
      if (p.time.t <= 0.0) continue;
      denom2 = p.time.t * p.time.t;
    }
    const double bound = beta / denom2;
    rep.bound_curve.push_back(bound);
    rep.observe(p.time, bound - f.gap(p.state.x1()));
  }
  return rep;
}

/// beta computed from the trace's initial state with r = |x1(0,0) - x*|.
inline double beta_from_trace(const Trace& trace, const CostFunction& f, double c,
                              double t_min) {
  const HybridState& z0 = trace.points.front().state;
  const double r = (z0.x1() - f.require_xstar()).norm();
  return beta_constant(r, c, t_min, std::max(0.0, f.gap(z0.x1())));
}

// ---------------------------------------------------------------------------
// HAND-2 rate certificate
// ---------------------------------------------------------------------------

/// k0 = ((c mu)^-1 + T_min^2) / T_max^2: per-period contraction factor.
inline double k0_constant(double c, double mu, double t_min, double t_max) {
  detail::require(c > 0.0 && mu > 0.0 && t_min > 0.0 && t_max > 0.0,
                  "k0_constant needs positive inputs");
  return (1.0 / (c * mu) + t_min * t_min) / (t_max * t_max);
}

/// k1 = ((c mu)^-1 + T_min^2) / dT^2, the restart-frequency surrogate.
inline double k1_constant(double c, double mu, double t_min, double delta_t) {
  detail::require(c > 0.0 && mu > 0.0 && t_min >= 0.0 && delta_t > 0.0,
                  "k1_constant needs positive inputs");
  return (1.0 / (c * mu) + t_min * t_min) / (delta_t * delta_t);
}

/// ((c mu)^-1 + T_min^2) / T_min^2: growth allowance of f~ within one flow
/// period that starts from a momentum reset.
inline double k1_flow_constant(double c, double mu, double t_min) {
  detail::require(c > 0.0 && mu > 0.0 && t_min > 0.0, "k1_flow_constant needs positive inputs");
  return (1.0 / (c * mu) + t_min * t_min) / (t_min * t_min);
}

struct Thm2Constants {
  double k0 = 0.0;
  double k1 = 0.0;
  double ka = 0.0;
  double kb = 0.0;
  double delta_t = 0.0;
};

inline Thm2Constants thm2_constants(const CostFunction& f, const HandParams& prm) {
  const double mu = f.require_mu();
  const double L = f.require_lipschitz();
  Thm2Constants k;
  k.delta_t = prm.delta_t();
  k.k0 = k0_constant(prm.c, mu, prm.t_min, prm.t_max);
  k.k1 = k1_flow_constant(prm.c, mu, prm.t_min);
  k.ka = 0.5 * k.k1 * L;
  k.kb = 1.0 - k.k0;
  return k;
}

/// max(t + j - dT, 0) / (dT + 1).
inline double alpha_tilde(double t, int j, double delta_t) {
  return std::max(t + j - delta_t, 0.0) / (delta_t + 1.0);
}

/// f(x1(t,j)) - f* <= k_a exp(-k_b alpha(t+j)) |x1(0,0) - x*|^2 + tolerance at every sample.
inline RateReport check_thm2_rate(const Trace& trace, const CostFunction& f,
                                  const HandParams& prm, double tolerance) {
  prm.validate_hand2();
  detail::require_reset_start(trace, prm.t_min, "check_thm2_rate");
  const double mu = f.require_mu();
  f.require_lipschitz();
  detail::require(validate_dwell(prm, mu), "check_thm2_rate: dwell condition fails");
  const Thm2Constants k = thm2_constants(f, prm);
  const double r2 = (trace.points.front().state.x1() - f.require_xstar()).squaredNorm();
  RateReport rep;
  rep.tolerance = tolerance;
  for (const auto& p : trace.points) {
    const double bound = k.ka * std::exp(-k.kb * alpha_tilde(p.time.t, p.time.j, k.delta_t)) * r2;
    rep.bound_curve.push_back(bound);
    rep.observe(p.time, bound - f.gap(p.state.x1()));
  }
  return rep;
}

/// One complete flow period of a trace: from a reset (or the start) to the
/// next jump.
struct FlowPeriod {
  HybridTime start;
  HybridTime end;
  double gap_start = 0.0;
  double gap_end = 0.0;
  double ratio() const { return gap_start > 0.0 ? gap_end / gap_start : 0.0; }
};

inline std::vector<FlowPeriod> flow_periods(const Trace& trace, const CostFunction& f) {
  std::vector<FlowPeriod> out;
  if (trace.points.empty()) return out;
  HybridTime start = trace.points.front().time;
  double gap_start = f.gap(trace.points.front().state.x1());
  for (const auto& ev : trace.events) {
    out.push_back({start, ev.time, gap_start, f.gap(ev.pre.x1())});
    start = HybridTime{ev.time.t, ev.time.j + 1};
    gap_start = f.gap(ev.post.x1());
  }
  return out;
}

/// Per-period contraction f~(end) <= (k0 + slack) f~(start).
inline RateReport check_period_contraction(const Trace& trace, const CostFunction& f,
                                           const HandParams& prm, double slack) {
  const double k0 = k0_constant(prm.c, f.require_mu(), prm.t_min, prm.t_max);
  RateReport rep;
  for (const auto& per : flow_periods(trace, f)) {
    if (per.gap_start <= 0.0) continue;
    rep.bound_curve.push_back(per.ratio());
    rep.observe(per.end, k0 + slack - per.ratio());
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Restart frequency
// ---------------------------------------------------------------------------

struct RestartPlan {
  double delta_t_star = 0.0;
  /// (e/2) sqrt(1/(c mu) + T_min^2) ln(f~0 / eps); present when f~0 > eps.
  std::optional<double> t_eps;
};

inline RestartPlan optimal_restart(double c, double mu, double t_min,
                                   std::optional<double> f_gap0 = {},
                                   std::optional<double> eps = {}) {
  detail::require(c > 0.0 && mu > 0.0 && t_min >= 0.0, "optimal_restart needs c, mu > 0");
  const double root = std::sqrt(1.0 / (c * mu) + t_min * t_min);
  RestartPlan plan;
  plan.delta_t_star = std::numbers::e * root;
  if (f_gap0 && eps) {
    detail::require(*eps > 0.0, "eps must be > 0");
    if (*f_gap0 > *eps) plan.t_eps = 0.5 * std::numbers::e * root * std::log(*f_gap0 / *eps);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Convergence time
// ---------------------------------------------------------------------------

namespace detail {

struct Sample {
  HybridTime time;
  double gap;
};

inline std::optional<HybridTime> first_settled(const std::vector<Sample>& samples, double eps) {
  if (samples.empty()) return std::nullopt;
  std::optional<HybridTime> answer;
  for (auto it = samples.rbegin(); it != samples.rend(); ++it) {
    if (!(it->gap <= eps)) break;
    answer = it->time;
  }
  return answer;
}

}  // namespace detail

/// First recorded (t, j) after which f(x1) - f* stays <= eps. Absent for
/// traces that blew up or never settle.
inline std::optional<HybridTime> time_to_epsilon(const Trace& trace, const CostFunction& f,
                                                 double eps) {
  detail::require(eps > 0.0, "eps must be > 0");
  if (trace.termination == Termination::BlowUp) return std::nullopt;
  std::vector<detail::Sample> s;
  s.reserve(trace.points.size());
  for (const auto& p : trace.points) s.push_back({p.time, f.gap(p.state.x1())});
  return detail::first_settled(s, eps);
}

/// As time_to_epsilon, sampling only the start and the end of each flow period.
inline std::optional<HybridTime> time_to_epsilon_at_period_ends(const Trace& trace,
                                                                const CostFunction& f,
                                                                double eps) {
  detail::require(eps > 0.0, "eps must be > 0");
  if (trace.termination == Termination::BlowUp || trace.points.empty()) return std::nullopt;
  std::vector<detail::Sample> s;
  s.push_back({trace.points.front().time, f.gap(trace.points.front().state.x1())});
  for (const auto& ev : trace.events) s.push_back({ev.time, f.gap(ev.pre.x1())});
  return detail::first_settled(s, eps);
}

// ---------------------------------------------------------------------------
// Non-uniformity probe
// ---------------------------------------------------------------------------

struct ProbeOptions {
  double h = 1e-2;
  double horizon = 5000.0;
  IntegratorSpec integrator;
  int record_stride = 10;
  /// Companion HAND-1 run.
  HandParams hand{1.0, 3.0, 3.0, 0.25};
  /// Receives every simulated trace: ("nominal" | "hand1", row index, trace).
  std::function<void(const char*, std::size_t, const Trace&)> on_trace;
};

struct ProbeRow {
  double start = 0.0;  // t0 for the ODE, initial tau for HAND-1
  std::optional<double> time;
};

struct UniformityTable {
  std::vector<ProbeRow> nominal;
  std::vector<ProbeRow> hand1;

  static bool strictly_increasing(const std::vector<ProbeRow>& rows) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!rows[i].time) return false;
      if (i > 0 && !(*rows[i].time > *rows[i - 1].time)) return false;
    }
    return true;
  }

  /// max/min of the settled times; infinity if any run never settles.
  static double spread(const std::vector<ProbeRow>& rows) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& r : rows) {
      if (!r.time) return std::numeric_limits<double>::infinity();
      lo = std::min(lo, *r.time);
      hi = std::max(hi, *r.time);
    }
    if (rows.empty() || hi == 0.0) return 1.0;
    return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  }
};

/// Time to eps for the ODE started at each t0 from (x* + x_offset, 0), and
/// for HAND-1 started from (x* + x_offset, x* + x_offset) at clock phases
/// spread evenly over [T_min, T_max].
inline UniformityTable uniformity_probe(const CostFunction& f, const OdeParams& params,
                                       const std::vector<double>& offsets,
                                       const Vector& x_offset, double eps,
                                       const ProbeOptions& opt = {}) {
  detail::require(eps > 0.0, "eps must be > 0");
  for (std::size_t i = 1; i < offsets.size(); ++i)
    detail::require(offsets[i] > offsets[i - 1], "uniformity_probe offsets must increase");
  const Vector& xs = f.require_xstar();
  detail::require(x_offset.size() == f.dim(), "x_offset has wrong dimension");

  SolverConfig cfg;
  cfg.h = opt.h;
  cfg.t_end = opt.horizon;
  cfg.integrator = opt.integrator;
  cfg.record_stride = opt.record_stride;

  UniformityTable table;
  for (double t0 : offsets) {
    OdeParams prm = params;
    prm.t0 = t0;
    const HybridSystem sys = nominal_system(f, prm, Representation::Velocity);
    const Trace tr = simulate(sys, HybridState(xs + x_offset, Vector::Zero(f.dim()), t0), cfg);
    if (opt.on_trace) opt.on_trace("nominal", table.nominal.size(), tr);
    const auto hit = time_to_epsilon(tr, f, eps);
    table.nominal.push_back({t0, hit ? std::optional<double>(hit->t) : std::nullopt});
  }

  const HybridSystem h1 = hand1(f, opt.hand);
  const std::size_t m = offsets.size();
  for (std::size_t i = 0; i < m; ++i) {
    const double frac = m > 1 ? static_cast<double>(i) / static_cast<double>(m - 1) : 0.0;
    const double tau0 = opt.hand.t_min + frac * opt.hand.delta_t();
    const Trace tr = simulate(h1, HybridState(xs + x_offset, xs + x_offset, tau0), cfg);
    if (opt.on_trace) opt.on_trace("hand1", i, tr);
    const auto hit = time_to_epsilon(tr, f, eps);
    table.hand1.push_back({tau0, hit ? std::optional<double>(hit->t) : std::nullopt});
  }
  return table;
}

// ---------------------------------------------------------------------------
// Empirical robustness margin
// ---------------------------------------------------------------------------

struct MarginResult {
  double margin = 0.0;      // largest amplitude known to pass
  double first_fail = 0.0;  // smallest amplitude known to fail (inf if none)
  int evaluations = 0;
};

/// Bisection for the largest eps in [lo, hi] with `passes(eps)`, assuming
/// monotonicity. If `passes(hi)` the margin is hi; if `!passes(lo)` it is 0.
inline MarginResult bisect_margin(const std::function<bool(double)>& passes, double lo,
                                  double hi, int iterations) {
  detail::require(0.0 < lo && lo < hi && iterations >= 0, "bisect_margin needs 0 < lo < hi");
  MarginResult r;
  r.first_fail = std::numeric_limits<double>::infinity();
  ++r.evaluations;
  if (passes(hi)) {
    r.margin = hi;
    return r;
  }
  r.first_fail = hi;
  ++r.evaluations;
  if (!passes(lo)) {
    r.first_fail = lo;
    return r;
  }
  double a = lo, b = hi;
  for (int i = 0; i < iterations; ++i) {
    const double mid = std::sqrt(a * b);  // amplitudes span decades
    ++r.evaluations;
    if (passes(mid))
      a = mid;
    else
      b = mid;
  }
  r.margin = a;
  r.first_fail = b;
  return r;
}

/// Largest target distance over a trace.
inline double max_target_distance(const Trace& trace, const Vector& xstar,
                                  const HandParams& prm, double from_t = 0.0) {
  double m = 0.0;
  for (const auto& p : trace.points)
    if (p.time.t >= from_t) m = std::max(m, target_distance(p.state, xstar, prm));
  return m;
}

}  // namespace hand
