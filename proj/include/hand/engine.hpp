#pragma once

// Fixed-step simulator for hybrid systems (C, F, D, G).
//
// Flows are integrated with an explicit Runge-Kutta scheme on C; jumps are
// taken on the discretized jump set D_h = D + {F_h(y) : y in C, F_h(y) not in C}.
// D_h membership is decided by tagging each state with the step that produced it.

#include "hand/core.hpp"
#include "hand/dynamics.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace hand {

/// Clock bounds of a clock-driven system: flows on [t_min, t_max], jumps
/// allowed once tau >= t_jump.
struct ClockWindow {
  double t_min = 0.0;
  double t_jump = 0.0;
  double t_max = 0.0;
};

struct HybridSystem {
  /// dz = F(z). `t` is the continuous hybrid time, used only by
  /// time-varying perturbation channels; nominal flows ignore it.
  using FlowMap = std::function<void(double t, const HybridState& z, VectorRef dz)>;
  using JumpMap = std::function<HybridState(const HybridState& z)>;
  /// Membership of z in the set inflated by `inflation` (>= 0).
  using Membership = std::function<bool(const HybridState& z, double inflation)>;

  int dim = 1;
  FlowMap flow;
  JumpMap jump;
  Membership in_C;
  Membership in_D;
  std::optional<ClockWindow> clock;
  std::string label;
  std::vector<std::string> warnings;

  void validate() const {
    detail::require(dim >= 1, "hybrid system dimension must be >= 1");
    detail::require(flow && jump && in_C && in_D, "hybrid system '", label,
                    "' is missing one of F, G, C, D");
  }
};

// ---------------------------------------------------------------------------
// Butcher tableaus
// ---------------------------------------------------------------------------

struct ButcherTableau {
  int stages = 1;
  Matrix a;  // strictly lower triangular
  Vector b;
  Vector c;  // row sums of a
  std::string label;

  static ButcherTableau make(std::string label, Matrix a, Vector b) {
    ButcherTableau t;
    t.stages = static_cast<int>(b.size());
    t.a = std::move(a);
    t.b = std::move(b);
    t.c = t.a.rowwise().sum();
    t.label = std::move(label);
    t.validate();
    return t;
  }

  void validate() const {
    detail::require(stages >= 1 && b.size() == stages && a.rows() == stages &&
                        a.cols() == stages,
                    "tableau '", label, "' has inconsistent sizes");
    detail::require(std::abs(b.sum() - 1.0) <= 1e-14, "tableau '", label,
                    "' is not consistent: sum(b) = ", b.sum());
    for (int i = 0; i < stages; ++i)
      for (int j = i; j < stages; ++j)
        detail::require(a(i, j) == 0.0, "tableau '", label, "' is not explicit");
  }

  static ButcherTableau euler() {
    return make("euler", Matrix::Zero(1, 1), Vector::Ones(1));
  }
  static ButcherTableau midpoint() {
    Matrix a = Matrix::Zero(2, 2);
    a(1, 0) = 0.5;
    return make("midpoint", a, Eigen::Vector2d(0.0, 1.0));
  }
  static ButcherTableau heun() {
    Matrix a = Matrix::Zero(2, 2);
    a(1, 0) = 1.0;
    return make("heun", a, Eigen::Vector2d(0.5, 0.5));
  }
  static ButcherTableau ralston3() {
    Matrix a = Matrix::Zero(3, 3);
    a(1, 0) = 0.5;
    a(2, 1) = 0.75;
    return make("ralston3", a, Eigen::Vector3d(2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0));
  }
  static ButcherTableau rk4() {
    Matrix a = Matrix::Zero(4, 4);
    a(1, 0) = 0.5;
    a(2, 1) = 0.5;
    a(3, 2) = 1.0;
    return make("rk4", a, Eigen::Vector4d(1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0));
  }
  static ButcherTableau rk38() {
    Matrix a = Matrix::Zero(4, 4);
    a(1, 0) = 1.0 / 3.0;
    a(2, 0) = -1.0 / 3.0;
    a(2, 1) = 1.0;
    a(3, 0) = 1.0;
    a(3, 1) = -1.0;
    a(3, 2) = 1.0;
    return make("rk38", a, Eigen::Vector4d(1.0 / 8.0, 3.0 / 8.0, 3.0 / 8.0, 1.0 / 8.0));
  }

  static ButcherTableau by_id(const std::string& id) {
    if (id == "euler") return euler();
    if (id == "midpoint") return midpoint();
    if (id == "heun") return heun();
    if (id == "ralston3") return ralston3();
    if (id == "rk4") return rk4();
    if (id == "rk38") return rk38();
    throw InvalidArgument("unknown Runge-Kutta tableau '" + id +
                          "' (expected euler, midpoint, heun, ralston3, rk4, rk38)");
  }

  static ButcherTableau for_spec(const IntegratorSpec& spec) {
    return spec.kind == IntegratorKind::Euler ? euler() : by_id(spec.tableau);
  }
};

// ---------------------------------------------------------------------------
// Integrators
// ---------------------------------------------------------------------------

/// Raised by the free-standing step functions when F evaluates to a
/// non-finite value. Carries the state at which it happened.
class SimulationFault : public std::runtime_error {
 public:
  SimulationFault(const std::string& what, HybridState state)
      : std::runtime_error(what), state_(std::move(state)) {}
  const HybridState& state() const { return state_; }

 private:
  HybridState state_;
};

/// Explicit Runge-Kutta stepper with preallocated stage storage.
/// `field(t, z, out)` must write F(z) into `out`.
class RkStepper {
 public:
  RkStepper(ButcherTableau tab, Eigen::Index flat_size)
      : tab_(std::move(tab)),
        k_(tab_.stages, Vector::Zero(flat_size)),
        stage_(HybridState::from_flat(Vector::Zero(flat_size))) {}

  const ButcherTableau& tableau() const { return tab_; }

  /// out = z + h * sum_k b_k F(g_k). Returns false if any stage slope or the
  /// result is non-finite.
  template <class Field>
  bool step(Field&& field, double t, const HybridState& z, double h, HybridState& out) {
    bool ok = true;
    for (int s = 0; s < tab_.stages; ++s) {
      const HybridState* arg = &z;
      if (s > 0) {
        stage_.flat() = z.flat();
        for (int j = 0; j < s; ++j)
          if (tab_.a(s, j) != 0.0) stage_.flat() += (h * tab_.a(s, j)) * k_[j];
        arg = &stage_;
      }
      field(t + tab_.c(s) * h, *arg, VectorRef(k_[s]));
      ok = ok && k_[s].allFinite();
    }
    out.flat() = z.flat();
    for (int s = 0; s < tab_.stages; ++s)
      if (tab_.b(s) != 0.0) out.flat() += (h * tab_.b(s)) * k_[s];
    return ok && out.finite();
  }

 private:
  ButcherTableau tab_;
  std::vector<Vector> k_;
  HybridState stage_;
};

/// z + h F(z) for an autonomous F(z, out).
template <class F>
HybridState euler_step(F&& flow, const HybridState& z, double h) {
  detail::require(h > 0.0, "step size must be > 0");
  Vector dz(z.flat().size());
  flow(z, VectorRef(dz));
  if (!dz.allFinite()) throw SimulationFault("non-finite flow value", z);
  HybridState out = z;
  out.flat() += h * dz;
  return out;
}

/// One explicit Runge-Kutta step with tableau `tab` for an autonomous F(z, out).
template <class F>
HybridState rk_step(F&& flow, const HybridState& z, double h, const ButcherTableau& tab) {
  detail::require(h > 0.0, "step size must be > 0");
  tab.validate();
  RkStepper stepper(tab, z.flat().size());
  HybridState out = z;
  const bool ok = stepper.step(
      [&flow](double, const HybridState& s, VectorRef dz) { flow(s, dz); }, 0.0, z, h, out);
  if (!ok) throw SimulationFault("non-finite flow value", z);
  return out;
}

/// Adapter turning a HybridSystem's flow into the autonomous form used by
/// euler_step / rk_step.
inline auto autonomous(const HybridSystem& sys, double t = 0.0) {
  return [&sys, t](const HybridState& z, VectorRef dz) { sys.flow(t, z, dz); };
}

// ---------------------------------------------------------------------------
// Perturbations, provenance, jump policy
// ---------------------------------------------------------------------------

/// Six disturbance channels of the perturbed hybrid system:
///   z' = F(z + e1) + e2 on z + e3 in C,  z+ = G(z + e4) + e5 on z + e6 in D.
struct PerturbationSet {
  std::array<DisturbanceSpec, 6> e;

  static PerturbationSet zero(int flat_dim) {
    PerturbationSet p;
    for (auto& s : p.e) s = DisturbanceSpec::zero(flat_dim);
    return p;
  }

  DisturbanceSpec& state_in_flow() { return e[0]; }
  DisturbanceSpec& dynamics() { return e[1]; }
  DisturbanceSpec& flow_set() { return e[2]; }
  DisturbanceSpec& state_in_jump() { return e[3]; }
  DisturbanceSpec& jump_output() { return e[4]; }
  DisturbanceSpec& jump_set() { return e[5]; }
  const DisturbanceSpec& state_in_flow() const { return e[0]; }
  const DisturbanceSpec& dynamics() const { return e[1]; }
  const DisturbanceSpec& flow_set() const { return e[2]; }
  const DisturbanceSpec& state_in_jump() const { return e[3]; }
  const DisturbanceSpec& jump_output() const { return e[4]; }
  const DisturbanceSpec& jump_set() const { return e[5]; }

  double bound() const {
    double b = 0.0;
    for (const auto& s : e) b = std::max(b, s.bound());
    return b;
  }

  void validate(int flat_dim) const {
    for (std::size_t i = 0; i < e.size(); ++i) {
      e[i].validate();
      detail::require(e[i].dim == flat_dim, "perturbation e", i + 1, " has dim ", e[i].dim,
                      ", expected ", flat_dim);
    }
  }
};

/// Which update produced a state.
enum class Provenance { Initial, FlowStep, Jump };

/// z in D_h: either z in D, or z came out of a flow step and left C.
inline bool dh_membership(const HybridSystem& sys, const HybridState& z, Provenance from,
                          double c_inflation = 0.0, double d_inflation = 0.0) {
  if (sys.in_D(z, d_inflation)) return true;
  return from == Provenance::FlowStep && !sys.in_C(z, c_inflation);
}

/// Portable uniform [0, 1) draw.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Resolves the flow/jump ambiguity on C intersect D. A state outside C
/// must jump regardless of policy.
inline bool jump_policy_decide(const JumpPolicy& policy, const HybridState& z,
                               const HybridSystem& sys, double h, std::mt19937_64& rng,
                               double c_inflation = 0.0, double clock_tol = 0.0) {
  if (!sys.in_C(z, c_inflation)) return true;
  switch (policy.kind) {
    case JumpPolicyKind::Earliest: return true;
    case JumpPolicyKind::Latest:
      return sys.clock.has_value() && z.tau() >= sys.clock->t_max - clock_tol;
    case JumpPolicyKind::UniformRandom: {
      if (!sys.clock) return false;
      const double remaining = sys.clock->t_max - z.tau();
      if (remaining <= clock_tol) return true;
      // Sequentially uniform reset clock over the remaining window.
      const double q = h / (remaining + h);
      return uniform01(rng) < q;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

namespace detail {

inline void signal_add(const DisturbanceSpec& spec, double t, VectorRef out, Vector& scratch) {
  if (spec.is_zero()) return;
  scratch.resize(spec.dim);
  signal_eval(spec, t, scratch);
  out += scratch;
}

inline double signal_norm(const DisturbanceSpec& spec, double t, Vector& scratch) {
  if (spec.is_zero()) return 0.0;
  scratch.resize(spec.dim);
  signal_eval(spec, t, scratch);
  return scratch.norm();
}

}  // namespace detail

/// Runs the discretized hybrid system from z0 under `cfg`.
///
/// Faults (non-finite state, leaving C_h + D_h) terminate the run and are
/// reported in the returned trace rather than thrown.
inline Trace simulate(const HybridSystem& sys, const HybridState& z0, const SolverConfig& cfg,
                      const PerturbationSet* pert = nullptr) {
  sys.validate();
  cfg.validate();
  detail::require(z0.dim() == sys.dim, "initial state has dimension ", z0.dim(),
                  ", system expects ", sys.dim);
  detail::require(z0.finite(), "initial state is not finite");
  const auto flat = static_cast<int>(z0.flat().size());
  if (pert) pert->validate(flat);
  const bool perturbed = pert && pert->bound() > 0.0;

  Vector scratch;
  auto c_infl = [&](double t) {
    return perturbed ? detail::signal_norm(pert->flow_set(), t, scratch) : 0.0;
  };
  auto d_infl = [&](double t) {
    return perturbed ? detail::signal_norm(pert->jump_set(), t, scratch) : 0.0;
  };

  detail::require(sys.in_C(z0, c_infl(0.0)) || sys.in_D(z0, d_infl(0.0)),
                  "initial state lies outside C and D of '", sys.label, "'");

  Trace tr;
  tr.config = cfg;
  const double h = cfg.h;
  // Number of flow steps that fit in the horizon; guards against t_end/h
  // landing a hair above an integer.
  const auto n_steps = static_cast<long long>(std::ceil(cfg.t_end / h - 1e-9));
  // The clock is a sum of k steps of size h; clock comparisons absorb the
  // accumulated roundoff so a period of dT/h steps is not stretched by one.
  const double clock_tol = sys.clock ? 1e-6 * h : 0.0;

  HybridState z = z0;
  HybridState next = z0;
  long long k = 0;
  int j = 0;
  Provenance from = Provenance::Initial;
  bool last_recorded = false;

  auto now = [&] { return HybridTime{static_cast<double>(k) * h, j}; };
  auto record = [&](const HybridState& s, PointKind kind) {
    tr.points.push_back({now(), s, kind});
    last_recorded = true;
  };
  auto fault = [&](Termination why, const HybridState& bad, std::string msg) {
    tr.termination = why;
    tr.message = std::move(msg);
    tr.fault_state = bad;
    if (last_recorded)
      tr.points.back().kind = PointKind::Fault;
    else
      record(z, PointKind::Fault);
  };

  HybridState shifted = z0;
  auto field = [&](double t, const HybridState& s, VectorRef dz) {
    if (perturbed && !pert->state_in_flow().is_zero()) {
      shifted.flat() = s.flat();
      detail::signal_add(pert->state_in_flow(), t, shifted.flat(), scratch);
      sys.flow(t, shifted, dz);
    } else {
      sys.flow(t, s, dz);
    }
    if (perturbed) detail::signal_add(pert->dynamics(), t, dz, scratch);
  };

  RkStepper stepper(ButcherTableau::for_spec(cfg.integrator), flat);
  std::mt19937_64 rng(cfg.jump_policy.seed);

  record(z, PointKind::Flow);
  tr.termination = Termination::Horizon;

  while (true) {
    if (k >= n_steps) {
      tr.termination = Termination::Horizon;
      break;
    }
    const double t = static_cast<double>(k) * h;
    const double ci = c_infl(t);
    const double di = d_infl(t);
    const bool in_c = sys.in_C(z, ci);
    const bool in_dh = sys.in_D(z, di + clock_tol) || (from == Provenance::FlowStep && !in_c);
    if (!in_c && !in_dh) {
      fault(Termination::Escaped, z, "escaped hybrid domain");
      break;
    }
    if (in_dh && jump_policy_decide(cfg.jump_policy, z, sys, h, rng, ci, clock_tol)) {
      if (j >= cfg.max_jumps) {
        tr.termination = Termination::JumpCap;
        break;
      }
      if (!last_recorded) record(z, PointKind::Flow);
      HybridState post;
      if (perturbed && !pert->state_in_jump().is_zero()) {
        HybridState arg = z;
        detail::signal_add(pert->state_in_jump(), t, arg.flat(), scratch);
        post = sys.jump(arg);
      } else {
        post = sys.jump(z);
      }
      if (perturbed) detail::signal_add(pert->jump_output(), t, post.flat(), scratch);
      tr.events.push_back({now(), z, post});
      ++j;
      z = std::move(post);
      from = Provenance::Jump;
      record(z, PointKind::Jump);
      if (!z.finite()) {
        tr.termination = Termination::BlowUp;
        tr.message = "numerical blow-up";
        tr.fault_state = z;
        tr.points.back().kind = PointKind::Fault;
        break;
      }
      continue;
    }

    bool ok = false;
    try {
      ok = stepper.step(field, t, z, h, next);
    } catch (const InvalidArgument& e) {
      fault(Termination::Escaped, z, std::string("flow undefined: ") + e.what());
      break;
    }
    if (!ok) {
      fault(Termination::BlowUp, next, "numerical blow-up");
      break;
    }
    std::swap(z, next);
    ++k;
    from = Provenance::FlowStep;
    last_recorded = false;
    if (k % cfg.record_stride == 0) record(z, PointKind::Flow);
  }
  if (!last_recorded) record(z, PointKind::Flow);
  tr.flow_steps = k;
  return tr;
}

// ---------------------------------------------------------------------------
// The time-varying ODE as a hybrid system with an empty jump set
// ---------------------------------------------------------------------------

enum class Representation { Velocity = 1, Averaged = 2 };

/// The nominal ODE in either state-space representation, with the physical
/// time carried in the clock coordinate (tau = t0 at the start). The optional
/// `gradient_noise` (dimension n) is added to grad f and evaluated at the
/// elapsed hybrid time.
inline HybridSystem nominal_system(CostFunction f, OdeParams prm, Representation rep,
                                   std::optional<DisturbanceSpec> gradient_noise = {}) {
  prm.validate();
  if (gradient_noise) {
    gradient_noise->validate();
    detail::require(gradient_noise->dim == f.dim(), "gradient disturbance has dim ",
                    gradient_noise->dim, ", cost has dim ", f.dim());
  }
  HybridSystem sys;
  sys.dim = f.dim();
  sys.label = rep == Representation::Velocity ? "nominal-rep1" : "nominal-rep2";
  const double t0 = prm.t0;
  sys.flow = [f, prm, rep, noise = std::move(gradient_noise)](double t, const HybridState& z,
                                                              VectorRef dz) {
    const int n = z.dim();
    const double s = z.tau();
    detail::require(s > 0.0, "time-varying flow evaluated at t = ", s, " <= 0");
    auto grad = dz.segment(n, n);
    f.gradient(z.x1(), grad);
    if (noise && !noise->is_zero()) {
      // Only periodic signals hit this path in practice; a scratch vector keeps it general.
      Vector e(n);
      signal_eval(*noise, t, e);
      grad += e;
    }
    const double k = prm.c * prm.p * prm.p;
    if (rep == Representation::Velocity) {
      grad = -k * std::pow(s, prm.p - 2.0) * grad - (prm.ell / s) * z.x2();
      dz.head(n) = z.x2();
    } else {
      const double lm1 = prm.ell - 1.0;
      grad *= -k * std::pow(s, prm.p - 1.0) / lm1;
      dz.head(n) = (lm1 / s) * (z.x2() - z.x1());
    }
    dz(2 * n) = 1.0;
  };
  sys.jump = [](const HybridState&) -> HybridState {
    throw InvalidArgument("the nominal ODE has no jumps");
  };
  sys.in_C = [t0](const HybridState& z, double infl) { return z.tau() >= t0 - infl; };
  sys.in_D = [](const HybridState&, double) { return false; };
  return sys;
}

}  // namespace hand
