#pragma once

// Domain types shared by every part of the library: vectors, cost functions,
// hybrid states and times, traces, and solver configuration.

#include <Eigen/Dense>

#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hand {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorCRef = Eigen::Ref<const Vector>;
using VectorRef = Eigen::Ref<Vector>;

/// Raised when an input violates a documented precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <class... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  os.precision(17);
  (os << ... << std::forward<Args>(args));
  return os.str();
}

template <class... Args>
inline void require(bool cond, Args&&... args) {
  if (!cond) throw InvalidArgument(concat(std::forward<Args>(args)...));
}

inline bool all_finite(const VectorCRef& v) { return v.allFinite(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Cost functions
// ---------------------------------------------------------------------------

/// Smooth cost f: R^n -> R with user-supplied gradient and optional metadata.
///
/// `mu` and `lipschitz` describe the class F_{mu,L}; `xstar`/`fstar` locate the
/// minimizer. The optional `gap_fn` computes f(x) - f* directly when a
/// cancellation-free form exists (quadratics); otherwise `gap` falls back to
/// value(x) - fstar.
class CostFunction {
 public:
  using ValueFn = std::function<double(const VectorCRef&)>;
  using GradientFn = std::function<void(const VectorCRef&, VectorRef)>;

  struct Metadata {
    std::optional<double> mu;
    std::optional<double> lipschitz;
    std::optional<Vector> xstar;
    std::optional<double> fstar;
    std::string label;
  };

  CostFunction(int dim, ValueFn value, GradientFn gradient, Metadata meta = {},
               ValueFn gap = {})
      : dim_(dim),
        value_(std::move(value)),
        gradient_(std::move(gradient)),
        gap_(std::move(gap)),
        meta_(std::move(meta)) {
    detail::require(dim_ > 0, "cost dimension must be positive, got ", dim_);
    detail::require(static_cast<bool>(value_) && static_cast<bool>(gradient_),
                    "cost requires both value and gradient providers");
    if (meta_.mu) detail::require(*meta_.mu >= 0.0, "mu must be >= 0");
    if (meta_.lipschitz)
      detail::require(*meta_.lipschitz > 0.0, "Lipschitz constant must be > 0");
    if (meta_.mu && meta_.lipschitz)
      detail::require(*meta_.mu > 0.0 && *meta_.mu <= *meta_.lipschitz,
                      "class F_{mu,L} requires 0 < mu <= L (mu=", *meta_.mu,
                      ", L=", *meta_.lipschitz, ")");
    if (meta_.xstar)
      detail::require(meta_.xstar->size() == dim_, "xstar has wrong dimension");
  }

  int dim() const { return dim_; }
  const std::optional<double>& mu() const { return meta_.mu; }
  const std::optional<double>& lipschitz() const { return meta_.lipschitz; }
  const std::optional<Vector>& xstar() const { return meta_.xstar; }
  const std::optional<double>& fstar() const { return meta_.fstar; }
  const std::string& label() const { return meta_.label; }
  const Metadata& metadata() const { return meta_; }

  double value(const VectorCRef& x) const { return value_(x); }

  void gradient(const VectorCRef& x, VectorRef out) const { gradient_(x, out); }

  Vector gradient(const VectorCRef& x) const {
    Vector g(dim_);
    gradient_(x, g);
    return g;
  }

  /// Sub-optimality f(x) - f*. Requires fstar.
  double gap(const VectorCRef& x) const {
    if (gap_) return gap_(x);
    detail::require(meta_.fstar.has_value(), "cost '", meta_.label,
                    "' has no fstar; sub-optimality is undefined");
    return value_(x) - *meta_.fstar;
  }

  const Vector& require_xstar() const {
    detail::require(meta_.xstar.has_value(), "cost '", meta_.label,
                    "' has no known minimizer");
    return *meta_.xstar;
  }

  double require_mu() const {
    detail::require(meta_.mu.has_value() && *meta_.mu > 0.0, "cost '",
                    meta_.label, "' has no strong-convexity modulus");
    return *meta_.mu;
  }

  double require_lipschitz() const {
    detail::require(meta_.lipschitz.has_value(), "cost '", meta_.label,
                    "' has no gradient Lipschitz constant");
    return *meta_.lipschitz;
  }

  /// Lipschitz constant if known, else 1.
  double lipschitz_or_one() const { return meta_.lipschitz.value_or(1.0); }

 private:
  int dim_;
  ValueFn value_;
  GradientFn gradient_;
  ValueFn gap_;
  Metadata meta_;
};

/// f(x) = 1/2 x^T Q x + b^T x.
///
/// Q must be symmetric positive semidefinite. When Q is positive definite the
/// metadata (mu, L, xstar, fstar) is filled in analytically. A singular Q is
/// accepted only if b lies in range(Q); then only L is recorded.
inline CostFunction make_quadratic(const Matrix& Q, const Vector& b,
                                   std::string label = "quadratic") {
  const auto n = Q.rows();
  detail::require(n > 0 && Q.cols() == n, "Q must be square and non-empty");
  detail::require(b.size() == n, "b has dimension ", b.size(), ", expected ", n);
  detail::require(Q.allFinite() && b.allFinite(), "Q and b must be finite");
  const double scale = std::max(1.0, Q.cwiseAbs().maxCoeff());
  detail::require((Q - Q.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale,
                  "Q is not symmetric");

  const Matrix Qs = 0.5 * (Q + Q.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(Qs);
  const Vector& lambda = eig.eigenvalues();
  const double tol = 1e-12 * scale * static_cast<double>(n);
  detail::require(lambda.minCoeff() >= -tol, "Q is not positive semidefinite (min eigenvalue ",
                  lambda.minCoeff(), ")");

  CostFunction::Metadata meta;
  meta.label = std::move(label);
  if (lambda.maxCoeff() > tol) meta.lipschitz = lambda.maxCoeff();

  CostFunction::ValueFn gap;
  if (lambda.minCoeff() > tol) {
    meta.mu = lambda.minCoeff();
    const Vector xstar = -Qs.ldlt().solve(b);
    meta.xstar = xstar;
    meta.fstar = 0.5 * b.dot(xstar);
    gap = [Qs, xstar](const VectorCRef& x) {
      const Vector d = x - xstar;
      return 0.5 * d.dot(Qs * d);
    };
  } else {
    // b must be orthogonal to the null space, else f is unbounded below.
    const Matrix& V = eig.eigenvectors();
    for (Eigen::Index k = 0; k < n; ++k) {
      if (lambda(k) <= tol) {
        detail::require(std::abs(V.col(k).dot(b)) <= 1e-10 * std::max(1.0, b.norm()),
                        "singular Q with b outside range(Q): no minimizer");
      }
    }
  }

  return CostFunction(
      static_cast<int>(n),
      [Qs, b](const VectorCRef& x) { return 0.5 * x.dot(Qs * x) + b.dot(x); },
      [Qs, b](const VectorCRef& x, VectorRef g) { g.noalias() = Qs * x + b; },
      std::move(meta), std::move(gap));
}

/// The scalar cost x^2 / (2 p^2) used in the non-uniformity example.
inline CostFunction make_example1_cost(double p = 2.0) {
  detail::require(p > 0.0, "p must be positive");
  Matrix Q(1, 1);
  Q(0, 0) = 1.0 / (p * p);
  return make_quadratic(Q, Vector::Zero(1), "example1");
}

/// f(x) = (curvature/2)|x|^2 on R^dim.
inline CostFunction make_isotropic(int dim, double curvature = 1.0) {
  detail::require(dim > 0 && curvature > 0.0, "isotropic cost needs dim > 0 and curvature > 0");
  return make_quadratic(curvature * Matrix::Identity(dim, dim), Vector::Zero(dim),
                        "isotropic");
}

/// f(x) = sum_i (mu/2) x_i^2 + log cosh(x_i). Strongly convex, non-quadratic,
/// mu-strongly convex with L = mu + 1 and minimizer 0.
inline CostFunction make_log_cosh(int dim, double mu) {
  detail::require(dim > 0 && mu > 0.0, "log-cosh cost needs dim > 0 and mu > 0");
  CostFunction::Metadata meta;
  meta.mu = mu;
  meta.lipschitz = mu + 1.0;
  meta.xstar = Vector::Zero(dim);
  meta.fstar = 0.0;
  meta.label = "log_cosh";
  // log cosh(x) = |x| + log1p(exp(-2|x|)) - log 2, stable for large |x|.
  auto value = [mu](const VectorCRef& x) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double a = std::abs(x(i));
      s += 0.5 * mu * x(i) * x(i) + a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
    }
    return s;
  };
  auto grad = [mu](const VectorCRef& x, VectorRef g) {
    for (Eigen::Index i = 0; i < x.size(); ++i) g(i) = mu * x(i) + std::tanh(x(i));
  };
  return CostFunction(dim, value, grad, std::move(meta));
}

/// f(x) = x^4 on R. Convex with unique minimizer but not strongly convex.
inline CostFunction make_quartic() {
  CostFunction::Metadata meta;
  meta.xstar = Vector::Zero(1);
  meta.fstar = 0.0;
  meta.label = "quartic";
  return CostFunction(
      1, [](const VectorCRef& x) { return std::pow(x(0), 4); },
      [](const VectorCRef& x, VectorRef g) { g(0) = 4.0 * std::pow(x(0), 3); },
      std::move(meta));
}

/// Max over coordinates of |central difference - gradient| / max(1, |gradient|).
inline double grad_check(const CostFunction& f, const Vector& x, double fd_step) {
  detail::require(fd_step > 0.0, "fd_step must be positive");
  detail::require(x.size() == f.dim(), "grad_check point has wrong dimension");
  const Vector g = f.gradient(x);
  double worst = 0.0;
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + fd_step;
    const double fp = f.value(xp);
    xp(i) = x(i) - fd_step;
    const double fm = f.value(xp);
    xp(i) = x(i);
    const double fd = (fp - fm) / (2.0 * fd_step);
    worst = std::max(worst, std::abs(fd - g(i)) / std::max(1.0, std::abs(g(i))));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Hybrid state and time
// ---------------------------------------------------------------------------

/// z = (x1, x2, tau) stored contiguously in R^{2n+1}.
class HybridState {
 public:
  HybridState() = default;

  HybridState(const Vector& x1, const Vector& x2, double tau) : z_(2 * x1.size() + 1) {
    detail::require(x1.size() == x2.size() && x1.size() > 0,
                    "x1 and x2 must have the same positive dimension");
    z_.head(x1.size()) = x1;
    z_.segment(x1.size(), x1.size()) = x2;
    z_(2 * x1.size()) = tau;
  }

  static HybridState from_flat(Vector z) {
    detail::require(z.size() >= 3 && z.size() % 2 == 1,
                    "flat hybrid state must have odd size >= 3, got ", z.size());
    HybridState s;
    s.z_ = std::move(z);
    return s;
  }

  int dim() const { return static_cast<int>((z_.size() - 1) / 2); }

  auto x1() const { return z_.head(dim()); }
  auto x1() { return z_.head(dim()); }
  auto x2() const { return z_.segment(dim(), dim()); }
  auto x2() { return z_.segment(dim(), dim()); }
  double tau() const { return z_(z_.size() - 1); }
  double& tau() { return z_(z_.size() - 1); }

  const Vector& flat() const { return z_; }
  Vector& flat() { return z_; }

  bool finite() const { return z_.allFinite(); }

  friend bool operator==(const HybridState& a, const HybridState& b) {
    return a.z_.size() == b.z_.size() && a.z_ == b.z_;
  }

 private:
  Vector z_;
};

/// Hybrid time (t, j): continuous time and jump count.
struct HybridTime {
  double t = 0.0;
  int j = 0;

  friend auto operator<=>(const HybridTime&, const HybridTime&) = default;
  friend bool operator==(const HybridTime&, const HybridTime&) = default;
};

// ---------------------------------------------------------------------------
// Solver configuration
// ---------------------------------------------------------------------------

enum class IntegratorKind { Euler, RungeKutta };

struct IntegratorSpec {
  IntegratorKind kind = IntegratorKind::RungeKutta;
  std::string tableau = "rk4";

  static IntegratorSpec euler() { return {IntegratorKind::Euler, "euler"}; }
  static IntegratorSpec runge_kutta(std::string id) {
    return {IntegratorKind::RungeKutta, std::move(id)};
  }
  friend bool operator==(const IntegratorSpec&, const IntegratorSpec&) = default;
};

enum class JumpPolicyKind { Earliest, Latest, UniformRandom };

struct JumpPolicy {
  JumpPolicyKind kind = JumpPolicyKind::Latest;
  std::uint64_t seed = 0;

  static JumpPolicy earliest() { return {JumpPolicyKind::Earliest, 0}; }
  static JumpPolicy latest() { return {JumpPolicyKind::Latest, 0}; }
  static JumpPolicy uniform_random(std::uint64_t seed) {
    return {JumpPolicyKind::UniformRandom, seed};
  }
  friend bool operator==(const JumpPolicy&, const JumpPolicy&) = default;
};

struct SolverConfig {
  double h = 1e-3;
  double t_end = 10.0;
  int max_jumps = 1'000'000;
  IntegratorSpec integrator;
  JumpPolicy jump_policy;
  int record_stride = 1;

  void validate() const {
    detail::require(std::isfinite(h) && h > 0.0, "solver.h must be > 0, got ", h);
    detail::require(std::isfinite(t_end) && t_end > 0.0, "solver.t_end must be > 0, got ", t_end);
    detail::require(max_jumps >= 0, "solver.max_jumps must be >= 0");
    detail::require(record_stride >= 1, "solver.record_stride must be >= 1");
  }

  friend bool operator==(const SolverConfig&, const SolverConfig&) = default;
};

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

enum class PointKind { Flow, Jump, Fault };

inline const char* to_string(PointKind k) {
  switch (k) {
    case PointKind::Flow: return "flow";
    case PointKind::Jump: return "jump";
    case PointKind::Fault: return "fault";
  }
  return "?";
}

struct TracePoint {
  HybridTime time;
  HybridState state;
  PointKind kind = PointKind::Flow;
};

struct JumpEvent {
  HybridTime time;  // hybrid time of the pre-jump state
  HybridState pre;
  HybridState post;
};

enum class Termination { Horizon, JumpCap, BlowUp, Escaped };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::Horizon: return "horizon";
    case Termination::JumpCap: return "jump_cap";
    case Termination::BlowUp: return "numerical blow-up";
    case Termination::Escaped: return "escaped hybrid domain";
  }
  return "?";
}

/// Sampled hybrid arc. Points are recorded every `record_stride` flow steps,
/// on both sides of every jump, and at termination.
struct Trace {
  std::vector<TracePoint> points;
  std::vector<JumpEvent> events;
  SolverConfig config;
  Termination termination = Termination::Horizon;
  std::string message;
  std::optional<HybridState> fault_state;  // offending state for faults
  long long flow_steps = 0;

  bool faulted() const {
    return termination == Termination::BlowUp || termination == Termination::Escaped;
  }
  const TracePoint& front() const { return points.front(); }
  const TracePoint& back() const { return points.back(); }
};

/// Single-pass check of the hybrid time-domain invariants. Returns a
/// description of the first violation, or nullopt when well formed.
inline std::optional<std::string> check_trace(const Trace& trace) {
  const double h = trace.config.h;
  std::size_t jumps_seen = 0;
  for (std::size_t i = 1; i < trace.points.size(); ++i) {
    const auto& a = trace.points[i - 1].time;
    const auto& b = trace.points[i].time;
    if (b < a) return detail::concat("point ", i, " goes backwards in hybrid time");
    if (b.j == a.j) {
      if (!(b.t > a.t)) return detail::concat("point ", i, ": t does not advance during flow");
      const double steps = (b.t - a.t) / h;
      if (std::abs(steps - std::round(steps)) > 1e-6 * std::max(1.0, steps))
        return detail::concat("point ", i, ": flow advance ", b.t - a.t,
                              " is not a multiple of h");
      if (trace.points[i].kind == PointKind::Jump)
        return detail::concat("point ", i, " marked jump without j increment");
    } else {
      if (b.j != a.j + 1) return detail::concat("point ", i, ": j skips from ", a.j, " to ", b.j);
      if (b.t != a.t) return detail::concat("point ", i, ": jump advances t");
      if (trace.points[i].kind != PointKind::Jump)
        return detail::concat("point ", i, ": j increments on a non-jump point");
      ++jumps_seen;
    }
  }
  if (jumps_seen != trace.events.size())
    return detail::concat("trace has ", trace.events.size(), " events but ", jumps_seen,
                          " jump points");
  return std::nullopt;
}

}  // namespace hand
