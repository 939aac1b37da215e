#pragma once

// HAND-1 (clock reset) and HAND-2 (clock and momentum reset) hybrid systems.

#include "hand/core.hpp"
#include "hand/dynamics.hpp"
#include "hand/engine.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <string>

namespace hand {

struct HandParams {
  double t_min = 1.0;
  double t_med = 2.0 * std::numbers::e;  // HAND-1 only
  double t_max = 2.0 * std::numbers::e;
  double c = 1.0;

  double delta_t() const { return t_max - t_min; }

  void validate_hand1() const {
    detail::require(c > 0.0, "hand.c must be > 0, got ", c);
    detail::require(0.0 < t_min && t_min < t_med && t_med <= t_max && std::isfinite(t_max),
                    "HandParams invariant violated: need 0 < t_min < t_med <= t_max < inf (t_min=",
                    t_min, ", t_med=", t_med, ", t_max=", t_max, ")");
  }

  void validate_hand2() const {
    detail::require(c > 0.0, "hand.c must be > 0, got ", c);
    detail::require(0.0 < t_min && t_min < t_max && std::isfinite(t_max),
                    "HandParams invariant violated: need 0 < t_min < t_max < inf (t_min=", t_min,
                    ", t_max=", t_max, ")");
  }

  friend bool operator==(const HandParams&, const HandParams&) = default;
};

/// Flow variations shared by both HANDs.
struct FlowOptions {
  double p = 2.0;
  /// Added to grad f (dimension n), evaluated at the hybrid time t.
  std::optional<DisturbanceSpec> gradient_noise;
};

/// Dwell condition T_max^2 - T_min^2 > 1/(mu c).
inline bool validate_dwell(const HandParams& prm, double mu) {
  detail::require(mu > 0.0 && prm.c > 0.0, "validate_dwell needs mu > 0 and c > 0");
  return prm.t_max * prm.t_max - prm.t_min * prm.t_min > 1.0 / (mu * prm.c);
}

/// |z|_A for A = {x*} x {x*} x [T_min, T_max], with the clock distance added
/// in quadrature when tau leaves the window.
inline double target_distance(const HybridState& z, const VectorCRef& xstar, double t_min,
                              double t_max) {
  detail::require(xstar.size() == z.dim(), "xstar has wrong dimension");
  double d2 = (z.x1() - xstar).squaredNorm() + (z.x2() - xstar).squaredNorm();
  const double tau = z.tau();
  if (tau < t_min) d2 += (t_min - tau) * (t_min - tau);
  if (tau > t_max) d2 += (tau - t_max) * (tau - t_max);
  return std::sqrt(d2);
}

inline double target_distance(const HybridState& z, const VectorCRef& xstar,
                              const HandParams& prm) {
  return target_distance(z, xstar, prm.t_min, prm.t_max);
}

namespace detail {

inline HybridSystem::FlowMap hand_flow_map(CostFunction f, double c, FlowOptions opt) {
  detail::require(opt.p >= 2.0, "flow order p must be >= 2");
  if (opt.gradient_noise) {
    opt.gradient_noise->validate();
    detail::require(opt.gradient_noise->dim == f.dim(), "gradient disturbance has dim ",
                    opt.gradient_noise->dim, ", cost has dim ", f.dim());
  }
  return [f = std::move(f), c, opt = std::move(opt)](double t, const HybridState& z,
                                                      VectorRef dz) {
    const int n = z.dim();
    const double tau = z.tau();
    detail::require(tau > 0.0, "hybrid flow requires tau > 0, got ", tau);
    auto grad = dz.segment(n, n);
    f.gradient(z.x1(), grad);
    if (opt.gradient_noise && !opt.gradient_noise->is_zero()) {
      Vector e(n);
      signal_eval(*opt.gradient_noise, t, e);
      grad += e;
    }
    if (opt.p == 2.0) {
      grad *= -2.0 * c * tau;
      dz.head(n) = (2.0 / tau) * (z.x2() - z.x1());
    } else {
      grad *= -c * opt.p * std::pow(tau, opt.p - 1.0);
      dz.head(n) = (opt.p / tau) * (z.x2() - z.x1());
    }
    dz(2 * n) = 1.0;
  };
}

}  // namespace detail

/// HAND-1: x+ = x, tau+ = T_min; C: tau in [T_min, T_max], D: tau in [T_med, T_max].
inline HybridSystem hand1(const CostFunction& f, const HandParams& prm, FlowOptions opt = {}) {
  prm.validate_hand1();
  HybridSystem sys;
  sys.dim = f.dim();
  sys.label = "hand1";
  sys.clock = ClockWindow{prm.t_min, prm.t_med, prm.t_max};
  sys.flow = detail::hand_flow_map(f, prm.c, std::move(opt));
  const double t_min = prm.t_min, t_med = prm.t_med, t_max = prm.t_max;
  sys.jump = [t_min](const HybridState& z) {
    HybridState out = z;
    out.tau() = t_min;
    return out;
  };
  sys.in_C = [t_min, t_max](const HybridState& z, double s) {
    return z.tau() >= t_min - s && z.tau() <= t_max + s;
  };
  sys.in_D = [t_med, t_max](const HybridState& z, double s) {
    return z.tau() >= t_med - s && z.tau() <= t_max + s;
  };
  return sys;
}

/// HAND-2: x1+ = x1, x2+ = x1, tau+ = T_min; C: tau in [T_min, T_max], D: tau = T_max.
///
/// A configuration violating the dwell condition is accepted with a warning;
/// rate certificates are refused later by the analysis layer.
inline HybridSystem hand2(const CostFunction& f, const HandParams& prm, FlowOptions opt = {}) {
  prm.validate_hand2();
  HybridSystem sys;
  sys.dim = f.dim();
  sys.label = "hand2";
  sys.clock = ClockWindow{prm.t_min, prm.t_max, prm.t_max};
  if (f.mu() && *f.mu() > 0.0 && !validate_dwell(prm, *f.mu()))
    sys.warnings.push_back(detail::concat("dwell condition violated: T_max^2 - T_min^2 = ",
                                          prm.t_max * prm.t_max - prm.t_min * prm.t_min,
                                          " <= 1/(mu c) = ", 1.0 / (*f.mu() * prm.c)));
  sys.flow = detail::hand_flow_map(f, prm.c, std::move(opt));
  const double t_min = prm.t_min, t_max = prm.t_max;
  sys.jump = [t_min](const HybridState& z) {
    HybridState out = z;
    out.x2() = z.x1();
    out.tau() = t_min;
    return out;
  };
  sys.in_C = [t_min, t_max](const HybridState& z, double s) {
    return z.tau() >= t_min - s && z.tau() <= t_max + s;
  };
  sys.in_D = [t_max](const HybridState& z, double s) { return std::abs(z.tau() - t_max) <= s; };
  return sys;
}

}  // namespace hand
