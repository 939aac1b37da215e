#pragma once

// Continuous-time vector fields of the accelerated gradient ODE and of the
// hybrid (clock-driven) variant, plus bounded disturbance signals.

#include "hand/core.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>

namespace hand {

// ---------------------------------------------------------------------------
// Parameters of the time-varying ODE  x'' + (ell/t) x' + c p^2 t^{p-2} grad f(x) = 0
// ---------------------------------------------------------------------------

struct OdeParams {
  double p = 2.0;
  double c = 1.0;
  double ell = 3.0;
  double t0 = 1.0;

  /// The continuous-time limit of Nesterov's method: ell = p + 1, c = 1/p^2, p = 2.
  static OdeParams nesterov() { return {2.0, 0.25, 3.0, 1.0}; }

  void validate() const {
    detail::require(p >= 2.0, "ode.p must be >= 2, got ", p);
    detail::require(c > 0.0, "ode.c must be > 0, got ", c);
    detail::require(ell > 1.0, "ode.ell must be > 1, got ", ell);
    detail::require(t0 > 0.0, "ode.t0 must be > 0, got ", t0);
  }

  friend bool operator==(const OdeParams&, const OdeParams&) = default;
};

/// First representation: x1 = x, x2 = dx/dt.
inline void nominal_flow_rep1(double t, const VectorCRef& x1, const VectorCRef& x2,
                              const VectorCRef& grad, const OdeParams& prm, VectorRef dx1,
                              VectorRef dx2) {
  detail::require(t > 0.0, "time-varying flow evaluated at t = ", t, " <= 0");
  dx1 = x2;
  dx2 = -(prm.ell / t) * x2 - prm.c * prm.p * prm.p * std::pow(t, prm.p - 2.0) * grad;
}

/// Second representation: x1 = x, x2 = x + t/(ell-1) dx/dt.
inline void nominal_flow_rep2(double t, const VectorCRef& x1, const VectorCRef& x2,
                              const VectorCRef& grad, const OdeParams& prm, VectorRef dx1,
                              VectorRef dx2) {
  detail::require(t > 0.0, "time-varying flow evaluated at t = ", t, " <= 0");
  const double lm1 = prm.ell - 1.0;
  dx1 = (lm1 / t) * (x2 - x1);
  dx2 = -(prm.c * prm.p * prm.p * std::pow(t, prm.p - 1.0) / lm1) * grad;
}

struct FlowPair {
  Vector dx1;
  Vector dx2;
};

inline FlowPair nominal_flow_rep1(double t, const Vector& x1, const Vector& x2,
                                  const OdeParams& prm, const CostFunction& f) {
  detail::require(t >= prm.t0, "t = ", t, " precedes t0 = ", prm.t0);
  FlowPair out{Vector(x1.size()), Vector(x1.size())};
  nominal_flow_rep1(t, x1, x2, f.gradient(x1), prm, out.dx1, out.dx2);
  return out;
}

inline FlowPair nominal_flow_rep2(double t, const Vector& x1, const Vector& x2,
                                  const OdeParams& prm, const CostFunction& f) {
  detail::require(t >= prm.t0, "t = ", t, " precedes t0 = ", prm.t0);
  FlowPair out{Vector(x1.size()), Vector(x1.size())};
  nominal_flow_rep2(t, x1, x2, f.gradient(x1), prm, out.dx1, out.dx2);
  return out;
}

/// Clock-driven flow with ell(p) = p + 1:
///   x1' = (p/tau)(x2 - x1),  x2' = -c p tau^{p-1} grad,  tau' = 1.
/// p = 2 gives the standard hybrid accelerated flow.
inline void hand_flow_order(const HybridState& z, double c, double p, const VectorCRef& grad,
                            VectorRef dz) {
  const double tau = z.tau();
  detail::require(tau > 0.0, "hybrid flow requires tau > 0, got ", tau);
  const int n = z.dim();
  dz.head(n) = (p / tau) * (z.x2() - z.x1());
  dz.segment(n, n) = (-c * p * std::pow(tau, p - 1.0)) * grad;
  dz(2 * n) = 1.0;
}

inline void hand_flow(const HybridState& z, double c, const VectorCRef& grad, VectorRef dz) {
  const double tau = z.tau();
  detail::require(tau > 0.0, "hybrid flow requires tau > 0, got ", tau);
  const int n = z.dim();
  dz.head(n) = (2.0 / tau) * (z.x2() - z.x1());
  dz.segment(n, n) = (-2.0 * c * tau) * grad;
  dz(2 * n) = 1.0;
}

inline Vector hand_flow(const HybridState& z, double c, const CostFunction& f) {
  detail::require(z.dim() == f.dim(), "state and cost dimensions differ");
  Vector dz(z.flat().size());
  hand_flow(z, c, f.gradient(z.x1()), dz);
  return dz;
}

// ---------------------------------------------------------------------------
// Disturbance signals
// ---------------------------------------------------------------------------

enum class SignalKind { Zero, Constant, SquareWave, Sinusoid, UniformRandom };

inline const char* to_string(SignalKind k) {
  switch (k) {
    case SignalKind::Zero: return "zero";
    case SignalKind::Constant: return "constant";
    case SignalKind::SquareWave: return "square_wave";
    case SignalKind::Sinusoid: return "sinusoid";
    case SignalKind::UniformRandom: return "uniform_random";
  }
  return "?";
}

/// A bounded measurable signal e: [0, inf) -> R^dim with sup |e(t)| <= amplitude.
///
/// Periodic signals act along one coordinate axis, so their sup norm is the
/// amplitude exactly. Random signals hold a value for `hold` seconds; each
/// held value is a pure function of (seed, floor(t / hold)).
struct DisturbanceSpec {
  SignalKind kind = SignalKind::Zero;
  int dim = 1;
  double amplitude = 0.0;
  double period = 1.0;
  int axis = 0;
  Vector value;  // Constant only
  std::uint64_t seed = 0;
  double hold = 1e-2;

  static DisturbanceSpec zero(int dim) {
    DisturbanceSpec s;
    s.dim = dim;
    return s;
  }
  static DisturbanceSpec constant(Vector v) {
    DisturbanceSpec s;
    s.kind = SignalKind::Constant;
    s.dim = static_cast<int>(v.size());
    s.amplitude = v.norm();
    s.value = std::move(v);
    return s;
  }
  static DisturbanceSpec square_wave(int dim, double eps, double period, int axis) {
    DisturbanceSpec s;
    s.kind = SignalKind::SquareWave;
    s.dim = dim;
    s.amplitude = eps;
    s.period = period;
    s.axis = axis;
    return s;
  }
  static DisturbanceSpec sinusoid(int dim, double eps, double period, int axis) {
    auto s = square_wave(dim, eps, period, axis);
    s.kind = SignalKind::Sinusoid;
    return s;
  }
  static DisturbanceSpec uniform_random(int dim, double eps, std::uint64_t seed,
                                        double hold = 1e-2) {
    DisturbanceSpec s;
    s.kind = SignalKind::UniformRandom;
    s.dim = dim;
    s.amplitude = eps;
    s.seed = seed;
    s.hold = hold;
    return s;
  }

  /// Sup-norm bound of the signal.
  double bound() const { return kind == SignalKind::Zero ? 0.0 : amplitude; }
  bool is_zero() const { return kind == SignalKind::Zero || amplitude == 0.0; }

  void validate() const {
    detail::require(dim >= 1, "disturbance dim must be >= 1");
    detail::require(std::isfinite(amplitude) && amplitude >= 0.0,
                    "disturbance amplitude must be finite and >= 0");
    switch (kind) {
      case SignalKind::Zero: break;
      case SignalKind::Constant:
        detail::require(value.size() == dim, "constant disturbance has wrong dimension");
        break;
      case SignalKind::SquareWave:
      case SignalKind::Sinusoid:
        detail::require(period > 0.0, "disturbance period must be > 0");
        detail::require(axis >= 0 && axis < dim, "disturbance axis ", axis,
                        " out of range for dim ", dim);
        break;
      case SignalKind::UniformRandom:
        detail::require(hold > 0.0, "disturbance hold interval must be > 0");
        break;
    }
  }

  friend bool operator==(const DisturbanceSpec& a, const DisturbanceSpec& b) {
    return a.kind == b.kind && a.dim == b.dim && a.amplitude == b.amplitude &&
           a.period == b.period && a.axis == b.axis && a.seed == b.seed && a.hold == b.hold &&
           a.value.size() == b.value.size() && a.value == b.value;
  }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform in [-1, 1).
inline double unit_symmetric(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-52 - 1.0;
}

}  // namespace detail

/// Writes e(t) into `out` (size spec.dim).
inline void signal_eval(const DisturbanceSpec& spec, double t, VectorRef out) {
  detail::require(t >= 0.0, "signal evaluated at negative time ", t);
  out.setZero();
  switch (spec.kind) {
    case SignalKind::Zero: return;
    case SignalKind::Constant: out = spec.value; return;
    case SignalKind::SquareWave: {
      const double phase = std::fmod(t, spec.period);
      out(spec.axis) = phase < 0.5 * spec.period ? spec.amplitude : -spec.amplitude;
      return;
    }
    case SignalKind::Sinusoid:
      out(spec.axis) = spec.amplitude * std::sin(2.0 * std::numbers::pi * t / spec.period);
      return;
    case SignalKind::UniformRandom: {
      const auto slot = static_cast<std::uint64_t>(std::floor(t / spec.hold));
      std::uint64_t key = detail::splitmix64(spec.seed ^ detail::splitmix64(slot));
      for (int i = 0; i < spec.dim; ++i) {
        key = detail::splitmix64(key);
        out(i) = detail::unit_symmetric(key);
      }
      const double radius = detail::unit_symmetric(detail::splitmix64(key + 1)) * 0.5 + 0.5;
      const double norm = out.norm();
      if (norm == 0.0) return;
      out *= spec.amplitude * radius / norm;
      // rounding can leave |out| one ulp above the amplitude
      while (out.norm() > spec.amplitude) out *= (1.0 - 0x1.0p-52);
      return;
    }
  }
}

inline Vector signal_eval(const DisturbanceSpec& spec, double t) {
  Vector out(spec.dim);
  signal_eval(spec, t, out);
  return out;
}

/// Time-varying vector field over a flat state.
using TimeVaryingField = std::function<void(double t, const VectorCRef& x, VectorRef dx)>;

/// Returns (t, x) -> F(t, x + e_s(t)) + e_a(t).
inline TimeVaryingField perturbed_flow(TimeVaryingField field, DisturbanceSpec e_s,
                                       DisturbanceSpec e_a) {
  e_s.validate();
  e_a.validate();
  detail::require(e_s.dim == e_a.dim, "e_s and e_a dimensions differ (", e_s.dim, " vs ",
                  e_a.dim, ")");
  return [field = std::move(field), e_s = std::move(e_s), e_a = std::move(e_a)](
             double t, const VectorCRef& x, VectorRef dx) {
    detail::require(x.size() == e_s.dim, "state dimension ", x.size(),
                    " does not match disturbance dimension ", e_s.dim);
    if (e_s.is_zero()) {
      field(t, x, dx);
    } else {
      Vector shifted(x.size());
      signal_eval(e_s, t, shifted);
      shifted += x;
      field(t, shifted, dx);
    }
    if (!e_a.is_zero()) {
      Vector ea(x.size());
      signal_eval(e_a, t, ea);
      dx += ea;
    }
  };
}

/// Integral of ell2 / (s + 1) over [s_k, s_k + r].
inline double limiting_integral(double ell2, double s_k, double r) {
  detail::require(s_k >= 0.0 && r >= 0.0, "limiting_integral needs s_k >= 0 and r >= 0");
  return ell2 * std::log1p(r / (s_k + 1.0));
}

}  // namespace hand
