#pragma once

// Scenario configuration: JSON schema, per-scenario defaults, strict parsing.

#include "hand/analysis.hpp"
#include "hand/core.hpp"
#include "hand/dynamics.hpp"
#include "hand/hands.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace hand::cli {

using json = nlohmann::json;

/// Configuration error; `what()` is the user-facing message.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

enum class ScenarioId {
  Instability,
  UniformityProbe,
  Hand1Rate,
  Hand2Rate,
  RestartSweep,
  DiscretizationOrder,
  RobustnessMargin,
};

inline constexpr std::array<std::pair<ScenarioId, const char*>, 7> kScenarioNames{{
    {ScenarioId::Instability, "instability"},
    {ScenarioId::UniformityProbe, "uniformity-probe"},
    {ScenarioId::Hand1Rate, "hand1-rate"},
    {ScenarioId::Hand2Rate, "hand2-rate"},
    {ScenarioId::RestartSweep, "restart-sweep"},
    {ScenarioId::DiscretizationOrder, "discretization-order"},
    {ScenarioId::RobustnessMargin, "robustness-margin"},
}};

inline const char* to_string(ScenarioId id) {
  for (const auto& [k, name] : kScenarioNames)
    if (k == id) return name;
  return "?";
}

inline std::optional<ScenarioId> scenario_from_string(const std::string& s) {
  for (const auto& [k, name] : kScenarioNames)
    if (s == name) return k;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Sections
// ---------------------------------------------------------------------------

enum class CostKind { Quadratic, Example1, Isotropic, LogCosh, Quartic };

struct CostSpec {
  CostKind kind = CostKind::Quadratic;
  Matrix Q = Matrix::Identity(1, 1);  // quadratic
  Vector b = Vector::Zero(1);         // quadratic
  double p = 2.0;                     // example1
  int dim = 1;                        // isotropic, log_cosh
  double curvature = 1.0;             // isotropic
  double mu = 0.1;                    // log_cosh

  CostFunction build() const {
    switch (kind) {
      case CostKind::Quadratic: return make_quadratic(Q, b, "quadratic");
      case CostKind::Example1: return make_example1_cost(p);
      case CostKind::Isotropic: return make_isotropic(dim, curvature);
      case CostKind::LogCosh: return make_log_cosh(dim, mu);
      case CostKind::Quartic: return make_quartic();
    }
    throw ConfigError("unknown cost kind");
  }

  int dimension() const {
    switch (kind) {
      case CostKind::Quadratic: return static_cast<int>(Q.rows());
      case CostKind::Example1:
      case CostKind::Quartic: return 1;
      default: return dim;
    }
  }

  // Only the fields used by `kind` take part in equality.
  friend bool operator==(const CostSpec& a, const CostSpec& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
      case CostKind::Quadratic:
        return a.Q.rows() == b.Q.rows() && a.Q.cols() == b.Q.cols() && a.Q == b.Q &&
               a.b.size() == b.b.size() && a.b == b.b;
      case CostKind::Example1: return a.p == b.p;
      case CostKind::Isotropic: return a.dim == b.dim && a.curvature == b.curvature;
      case CostKind::LogCosh: return a.dim == b.dim && a.mu == b.mu;
      case CostKind::Quartic: return true;
    }
    return false;
  }
};

inline const char* to_string(CostKind k) {
  switch (k) {
    case CostKind::Quadratic: return "quadratic";
    case CostKind::Example1: return "example1";
    case CostKind::Isotropic: return "isotropic";
    case CostKind::LogCosh: return "log_cosh";
    case CostKind::Quartic: return "quartic";
  }
  return "?";
}

struct InitialSpec {
  std::optional<Vector> x1;   // default: x* + e_0
  std::optional<Vector> x2;   // default: x1 (HANDs, averaged ODE) or 0 (velocity ODE)
  std::optional<double> tau;  // default: T_min (HANDs) or t0 (ODE)

  friend bool operator==(const InitialSpec& a, const InitialSpec& b) {
    auto eq = [](const std::optional<Vector>& u, const std::optional<Vector>& v) {
      if (u.has_value() != v.has_value()) return false;
      return !u || (u->size() == v->size() && *u == *v);
    };
    return eq(a.x1, b.x1) && eq(a.x2, b.x2) && a.tau == b.tau;
  }
};

/// Where a configured disturbance enters: added to grad f, or added to the
/// flat flow vector (x1', x2', tau').
enum class Channel { Gradient, Dynamics };

struct DisturbanceConfig {
  DisturbanceSpec signal;  // dim is filled in from the cost
  Channel channel = Channel::Gradient;

  friend bool operator==(const DisturbanceConfig&, const DisturbanceConfig&) = default;
};

/// Scenario-specific knobs. Every scenario accepts every key; unused ones are
/// echoed but ignored.
struct Options {
  double eps = 1e-6;
  double blowup_factor = 100.0;
  double threshold = 0.1;
  double settle_time = 50.0;
  double slack_factor = 10.0;  // per-step flow slack and rate tolerance: 1e-6 + factor * L * h
  double jump_rel_tol = 1e-12;
  double period_slack = 1e-3;
  std::vector<double> t0_offsets{1.0, 10.0, 100.0, 1000.0};
  std::optional<Vector> x_offset;  // default e_0
  double spread_limit = 1.5;
  std::vector<double> s_k_values{10.0, 100.0, 1000.0, 10000.0};
  double limiting_r = 1.0;
  double limiting_factor = 3e-4;
  int grid_points = 15;
  double grid_lo = 0.5;
  double grid_hi = 2.0;
  std::vector<double> h_values{0x1p-6, 0x1p-7, 0x1p-8, 0x1p-9, 0x1p-10};
  double reference_divisor = 100.0;
  double order_tol_euler = 0.2;
  double order_tol_rk4 = 0.8;
  double margin_lo = 1e-4;
  double margin_hi = 10.0;
  int margin_iterations = 8;
  std::vector<double> margin_horizons{100.0, 200.0};
  std::vector<double> margin_h_values{1e-2, 5e-3};

  friend bool operator==(const Options& a, const Options& b) {
    const bool xo = a.x_offset.has_value() == b.x_offset.has_value() &&
                    (!a.x_offset || (a.x_offset->size() == b.x_offset->size() &&
                                     *a.x_offset == *b.x_offset));
    return xo && a.eps == b.eps && a.blowup_factor == b.blowup_factor &&
           a.threshold == b.threshold && a.settle_time == b.settle_time &&
           a.slack_factor == b.slack_factor && a.jump_rel_tol == b.jump_rel_tol &&
           a.period_slack == b.period_slack && a.t0_offsets == b.t0_offsets &&
           a.spread_limit == b.spread_limit && a.s_k_values == b.s_k_values &&
           a.limiting_r == b.limiting_r && a.limiting_factor == b.limiting_factor &&
           a.grid_points == b.grid_points && a.grid_lo == b.grid_lo && a.grid_hi == b.grid_hi &&
           a.h_values == b.h_values && a.reference_divisor == b.reference_divisor &&
           a.order_tol_euler == b.order_tol_euler && a.order_tol_rk4 == b.order_tol_rk4 &&
           a.margin_lo == b.margin_lo && a.margin_hi == b.margin_hi &&
           a.margin_iterations == b.margin_iterations && a.margin_horizons == b.margin_horizons &&
           a.margin_h_values == b.margin_h_values;
  }
};

struct ScenarioSpec {
  ScenarioId scenario = ScenarioId::Hand2Rate;
  CostSpec cost;
  InitialSpec initial;
  HandParams hand;
  OdeParams ode = OdeParams::nesterov();
  SolverConfig solver;
  DisturbanceConfig disturbance;
  Options options;
  std::string out_dir = "out";

  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

// ---------------------------------------------------------------------------
// Defaults
// ---------------------------------------------------------------------------

inline ScenarioSpec default_spec(ScenarioId id) {
  ScenarioSpec s;
  s.scenario = id;
  s.solver.h = 1e-3;
  s.solver.integrator = IntegratorSpec::runge_kutta("rk4");
  s.solver.jump_policy = JumpPolicy::latest();
  switch (id) {
    case ScenarioId::Instability:
      s.cost.kind = CostKind::Example1;
      s.hand = HandParams{1.0, 2.0 * std::numbers::e, 2.0 * std::numbers::e, 0.25};
      s.ode = OdeParams::nesterov();
      s.solver.h = 1e-2;
      s.solver.t_end = 2e5;
      s.solver.record_stride = 1000;
      s.disturbance.signal = DisturbanceSpec::square_wave(1, 1e-3, 1e4, 0);
      s.initial.x1 = Vector::Ones(1);
      break;
    case ScenarioId::UniformityProbe:
      s.cost.kind = CostKind::Example1;
      s.hand = HandParams{1.0, 3.0, 3.0, 0.25};
      s.solver.h = 1e-2;
      s.solver.t_end = 4000.0;
      s.solver.record_stride = 10;
      s.options.eps = 1e-2;
      break;
    case ScenarioId::Hand1Rate: {
      Matrix Q(2, 2);
      Q << 1.0, 0.0, 0.0, 4.0;
      Vector b(2);
      b << 1.0, 0.0;
      s.cost.Q = Q;
      s.cost.b = b;
      s.hand = HandParams{1.0, 50.0, 50.0, 1.0};
      s.solver.t_end = 60.0;
      s.solver.record_stride = 10;
      Vector x(2);
      x << 2.0, 1.0;
      s.initial.x1 = x;
      break;
    }
    case ScenarioId::Hand2Rate:
      s.hand = HandParams{1.0, 2.0, 2.0, 1.0};
      s.solver.t_end = 100.0;
      s.solver.record_stride = 10;
      s.initial.x1 = Vector::Constant(1, 5.0);
      break;
    case ScenarioId::RestartSweep:
      s.cost.kind = CostKind::Isotropic;
      s.hand = HandParams{0.1, 3.0, 3.0, 1.0};  // t_max replaced per grid point
      s.solver.t_end = 60.0;
      s.solver.record_stride = 100;
      s.initial.x1 = Vector::Constant(1, 5.0);
      break;
    case ScenarioId::DiscretizationOrder:
      s.cost.kind = CostKind::Isotropic;
      s.cost.curvature = 10.0;
      s.hand = HandParams{1.0, 2.0, 2.0, 1.0};
      s.solver.t_end = 100.0;
      s.solver.record_stride = 64;
      s.initial.x1 = Vector::Constant(1, 5.0);
      break;
    case ScenarioId::RobustnessMargin:
      s.hand = HandParams{1.0, 2.0, 2.0, 1.0};
      s.solver.h = 1e-2;
      s.solver.t_end = 200.0;
      s.solver.record_stride = 10;
      s.disturbance.signal = DisturbanceSpec::uniform_random(1, 1e-2, 1, 1e-1);
      s.initial.x1 = Vector::Ones(1);
      s.options.settle_time = 50.0;
      break;
  }
  s.disturbance.signal.dim = s.cost.dimension();
  return s;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

inline json vec_to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json opt_vec_to_json(const std::optional<Vector>& v) {
  return v ? vec_to_json(*v) : json(nullptr);
}

inline json mat_to_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    a.push_back(row);
  }
  return a;
}

inline const char* policy_name(JumpPolicyKind k) {
  switch (k) {
    case JumpPolicyKind::Earliest: return "earliest";
    case JumpPolicyKind::Latest: return "latest";
    case JumpPolicyKind::UniformRandom: return "uniform_random";
  }
  return "?";
}

}  // namespace detail

inline json to_json(const ScenarioSpec& s) {
  json cost{{"kind", to_string(s.cost.kind)}};
  switch (s.cost.kind) {
    case CostKind::Quadratic:
      cost["Q"] = detail::mat_to_json(s.cost.Q);
      cost["b"] = detail::vec_to_json(s.cost.b);
      break;
    case CostKind::Example1: cost["p"] = s.cost.p; break;
    case CostKind::Isotropic:
      cost["dim"] = s.cost.dim;
      cost["curvature"] = s.cost.curvature;
      break;
    case CostKind::LogCosh:
      cost["dim"] = s.cost.dim;
      cost["mu"] = s.cost.mu;
      break;
    case CostKind::Quartic: break;
  }
  const auto& sig = s.disturbance.signal;
  const auto& o = s.options;
  return json{
      {"scenario", to_string(s.scenario)},
      {"cost", cost},
      {"initial",
       {{"x1", detail::opt_vec_to_json(s.initial.x1)},
        {"x2", detail::opt_vec_to_json(s.initial.x2)},
        {"tau", s.initial.tau ? json(*s.initial.tau) : json(nullptr)}}},
      {"hand", {{"t_min", s.hand.t_min}, {"t_med", s.hand.t_med}, {"t_max", s.hand.t_max},
                {"c", s.hand.c}}},
      {"ode", {{"p", s.ode.p}, {"c", s.ode.c}, {"ell", s.ode.ell}, {"t0", s.ode.t0}}},
      {"solver",
       {{"h", s.solver.h},
        {"t_end", s.solver.t_end},
        {"max_jumps", s.solver.max_jumps},
        {"integrator", s.solver.integrator.kind == IntegratorKind::Euler
                           ? std::string("euler")
                           : s.solver.integrator.tableau},
        {"jump_policy", detail::policy_name(s.solver.jump_policy.kind)},
        {"seed", s.solver.jump_policy.seed},
        {"record_stride", s.solver.record_stride}}},
      {"disturbance",
       {{"kind", to_string(sig.kind)},
        {"channel", s.disturbance.channel == Channel::Gradient ? "gradient" : "dynamics"},
        {"amplitude", sig.amplitude},
        {"period", sig.period},
        {"axis", sig.axis},
        {"value", sig.value.size() ? detail::vec_to_json(sig.value) : json::array()},
        {"seed", sig.seed},
        {"hold", sig.hold}}},
      {"options",
       {{"eps", o.eps},
        {"blowup_factor", o.blowup_factor},
        {"threshold", o.threshold},
        {"settle_time", o.settle_time},
        {"slack_factor", o.slack_factor},
        {"jump_rel_tol", o.jump_rel_tol},
        {"period_slack", o.period_slack},
        {"t0_offsets", o.t0_offsets},
        {"x_offset", detail::opt_vec_to_json(o.x_offset)},
        {"spread_limit", o.spread_limit},
        {"s_k_values", o.s_k_values},
        {"limiting_r", o.limiting_r},
        {"limiting_factor", o.limiting_factor},
        {"grid_points", o.grid_points},
        {"grid_lo", o.grid_lo},
        {"grid_hi", o.grid_hi},
        {"h_values", o.h_values},
        {"reference_divisor", o.reference_divisor},
        {"order_tol_euler", o.order_tol_euler},
        {"order_tol_rk4", o.order_tol_rk4},
        {"margin_lo", o.margin_lo},
        {"margin_hi", o.margin_hi},
        {"margin_iterations", o.margin_iterations},
        {"margin_horizons", o.margin_horizons},
        {"margin_h_values", o.margin_h_values}}},
      {"output", {{"dir", s.out_dir}}},
  };
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

/// 1-based line of the first `"key"` followed by a colon, or 0.
inline int locate_key(const std::string& text, const std::string& key) {
  const std::string quoted = "\"" + key + "\"";
  std::size_t pos = 0;
  while ((pos = text.find(quoted, pos)) != std::string::npos) {
    std::size_t k = pos + quoted.size();
    while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
    if (k < text.size() && text[k] == ':')
      return 1 + static_cast<int>(std::count(text.begin(), text.begin() + pos, '\n'));
    pos += quoted.size();
  }
  return 0;
}

/// Reads one JSON object section, tracking which keys were consumed.
class Reader {
 public:
  Reader(const json& obj, std::string path, const std::string& origin, const std::string& text)
      : obj_(obj), path_(std::move(path)), origin_(origin), text_(text) {
    if (!obj_.is_object()) fail(path_.empty() ? "top level" : path_, "must be a JSON object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const std::string leaf = key.substr(key.rfind('.') + 1);
    const int line = locate_key(text_, leaf);
    std::string where = origin_;
    if (line > 0) where += ":" + std::to_string(line);
    throw ConfigError(where + ": '" + key + "' " + msg);
  }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = get(key)) {
      if (!v->is_number()) fail(full(key), "must be a number");
      out = v->get<double>();
      if (!std::isfinite(out)) fail(full(key), "must be finite");
    }
  }

  void integer(const std::string& key, int& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer()) fail(full(key), "must be an integer");
      out = v->get<int>();
    }
  }

  void seed(const std::string& key, std::uint64_t& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() &&
                                      v->get<long long>() < 0))
        fail(full(key), "must be a nonnegative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const json* v = get(key)) {
      if (!v->is_string()) fail(full(key), "must be a string");
      out = v->get<std::string>();
    }
  }

  Vector to_vector(const std::string& key, const json& v) const {
    if (!v.is_array()) fail(full(key), "must be an array of numbers");
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(full(key), "must be an array of numbers");
      out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
    }
    return out;
  }

  void vector(const std::string& key, Vector& out) {
    if (const json* v = get(key)) out = to_vector(key, *v);
  }

  void opt_vector(const std::string& key, std::optional<Vector>& out) {
    if (const json* v = get(key)) {
      if (v->is_null())
        out.reset();
      else
        out = to_vector(key, *v);
    }
  }

  void numbers(const std::string& key, std::vector<double>& out) {
    if (const json* v = get(key)) {
      Vector tmp = to_vector(key, *v);
      out.assign(tmp.data(), tmp.data() + tmp.size());
    }
  }

  void matrix(const std::string& key, Matrix& out) {
    if (const json* v = get(key)) {
      if (!v->is_array() || v->empty()) fail(full(key), "must be a non-empty array of rows");
      const std::size_t rows = v->size();
      const std::size_t cols = (*v)[0].is_array() ? (*v)[0].size() : 0;
      Matrix m(rows, cols);
      for (std::size_t i = 0; i < rows; ++i) {
        const json& row = (*v)[i];
        if (!row.is_array() || row.size() != cols) fail(full(key), "rows must have equal length");
        for (std::size_t k = 0; k < cols; ++k) {
          if (!row[k].is_number()) fail(full(key), "entries must be numbers");
          m(i, k) = row[k].get<double>();
        }
      }
      out = m;
    }
  }

  Reader section(const std::string& key) {
    const json* v = get(key);
    static const json empty = json::object();
    return Reader(v ? *v : empty, full(key), origin_, text_);
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) fail(full(it.key()), "is not a recognised key");
  }

 private:
  const json& obj_;
  std::string path_;
  const std::string& origin_;
  const std::string& text_;
  std::set<std::string> seen_;
};

template <class F>
void guarded(const Reader& r, const std::string& key, F&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    r.fail(key, std::string("is invalid: ") + e.what());
  }
}

}  // namespace detail

/// Parses a configuration document. `origin` names the source in messages.
inline ScenarioSpec parse_config_json(const json& doc, const std::string& origin = "<config>",
                                      const std::string& text = "") {
  detail::Reader top(doc, "", origin, text);
  std::string id;
  if (!top.has("scenario")) top.fail("scenario", "is required");
  top.string("scenario", id);
  const auto sid = scenario_from_string(id);
  if (!sid) {
    std::string known;
    for (const auto& [k, name] : kScenarioNames) known += std::string(known.empty() ? "" : ", ") + name;
    top.fail("scenario", "must be one of: " + known + " (got '" + id + "')");
  }
  ScenarioSpec s = default_spec(*sid);

  {
    auto r = top.section("cost");
    if (r.has("kind")) {
      std::string kind;
      r.string("kind", kind);
      CostSpec fresh;
      if (kind == "quadratic") fresh.kind = CostKind::Quadratic;
      else if (kind == "example1") fresh.kind = CostKind::Example1;
      else if (kind == "isotropic") fresh.kind = CostKind::Isotropic;
      else if (kind == "log_cosh") fresh.kind = CostKind::LogCosh;
      else if (kind == "quartic") fresh.kind = CostKind::Quartic;
      else r.fail("cost.kind", "must be one of quadratic, example1, isotropic, log_cosh, quartic");
      if (fresh.kind != s.cost.kind) s.cost = fresh;
    }
    r.matrix("Q", s.cost.Q);
    r.vector("b", s.cost.b);
    r.number("p", s.cost.p);
    r.integer("dim", s.cost.dim);
    r.number("curvature", s.cost.curvature);
    r.number("mu", s.cost.mu);
    r.finish();
    detail::guarded(r, "cost", [&] { (void)s.cost.build(); });
  }
  const int n = s.cost.dimension();
  {
    auto r = top.section("initial");
    r.opt_vector("x1", s.initial.x1);
    r.opt_vector("x2", s.initial.x2);
    if (const json* v = r.get("tau")) {
      if (v->is_null())
        s.initial.tau.reset();
      else if (v->is_number())
        s.initial.tau = v->get<double>();
      else
        r.fail("initial.tau", "must be a number or null");
    }
    r.finish();
    if (s.initial.x1 && s.initial.x1->size() != n)
      r.fail("initial.x1", "has dimension " + std::to_string(s.initial.x1->size()) +
                               ", cost has dimension " + std::to_string(n));
    if (s.initial.x2 && s.initial.x2->size() != n)
      r.fail("initial.x2", "has dimension " + std::to_string(s.initial.x2->size()) +
                               ", cost has dimension " + std::to_string(n));
  }
  {
    auto r = top.section("hand");
    r.number("t_min", s.hand.t_min);
    r.number("t_med", s.hand.t_med);
    r.number("t_max", s.hand.t_max);
    r.number("c", s.hand.c);
    r.finish();
    detail::guarded(r, "hand", [&] {
      if (s.scenario == ScenarioId::Hand1Rate || s.scenario == ScenarioId::UniformityProbe)
        s.hand.validate_hand1();
      else
        s.hand.validate_hand2();
    });
  }
  {
    auto r = top.section("ode");
    r.number("p", s.ode.p);
    r.number("c", s.ode.c);
    r.number("ell", s.ode.ell);
    r.number("t0", s.ode.t0);
    r.finish();
    detail::guarded(r, "ode", [&] { s.ode.validate(); });
  }
  {
    auto r = top.section("solver");
    r.number("h", s.solver.h);
    r.number("t_end", s.solver.t_end);
    r.integer("max_jumps", s.solver.max_jumps);
    if (r.has("integrator")) {
      std::string integ;
      r.string("integrator", integ);
      if (integ == "euler") {
        s.solver.integrator = IntegratorSpec::euler();
      } else {
        detail::guarded(r, "solver.integrator", [&] { (void)ButcherTableau::by_id(integ); });
        s.solver.integrator = IntegratorSpec::runge_kutta(integ);
      }
    }
    if (r.has("jump_policy")) {
      std::string pol;
      r.string("jump_policy", pol);
      if (pol == "earliest") s.solver.jump_policy.kind = JumpPolicyKind::Earliest;
      else if (pol == "latest") s.solver.jump_policy.kind = JumpPolicyKind::Latest;
      else if (pol == "uniform_random") s.solver.jump_policy.kind = JumpPolicyKind::UniformRandom;
      else r.fail("solver.jump_policy", "must be one of earliest, latest, uniform_random");
    }
    r.seed("seed", s.solver.jump_policy.seed);
    r.integer("record_stride", s.solver.record_stride);
    r.finish();
    detail::guarded(r, "solver", [&] { s.solver.validate(); });
  }
  {
    auto r = top.section("disturbance");
    auto& sig = s.disturbance.signal;
    if (r.has("kind")) {
      std::string kind;
      r.string("kind", kind);
      if (kind == "zero") sig.kind = SignalKind::Zero;
      else if (kind == "constant") sig.kind = SignalKind::Constant;
      else if (kind == "square_wave") sig.kind = SignalKind::SquareWave;
      else if (kind == "sinusoid") sig.kind = SignalKind::Sinusoid;
      else if (kind == "uniform_random") sig.kind = SignalKind::UniformRandom;
      else
        r.fail("disturbance.kind",
               "must be one of zero, constant, square_wave, sinusoid, uniform_random");
    }
    if (r.has("channel")) {
      std::string ch;
      r.string("channel", ch);
      if (ch == "gradient") s.disturbance.channel = Channel::Gradient;
      else if (ch == "dynamics") s.disturbance.channel = Channel::Dynamics;
      else r.fail("disturbance.channel", "must be gradient or dynamics");
    }
    r.number("amplitude", sig.amplitude);
    r.number("period", sig.period);
    r.integer("axis", sig.axis);
    r.vector("value", sig.value);
    r.seed("seed", sig.seed);
    r.number("hold", sig.hold);
    r.finish();
    const int flat = 2 * n + 1;
    sig.dim = s.disturbance.channel == Channel::Gradient ? n : flat;
    if (sig.kind == SignalKind::Constant) {
      if (sig.value.size() != sig.dim)
        r.fail("disturbance.value", "must have " + std::to_string(sig.dim) + " entries for the " +
                                        (s.disturbance.channel == Channel::Gradient ? "gradient"
                                                                                    : "dynamics") +
                                        " channel");
      sig.amplitude = sig.value.norm();
    }
    detail::guarded(r, "disturbance", [&] { sig.validate(); });
  }
  {
    auto r = top.section("options");
    auto& o = s.options;
    r.number("eps", o.eps);
    r.number("blowup_factor", o.blowup_factor);
    r.number("threshold", o.threshold);
    r.number("settle_time", o.settle_time);
    r.number("slack_factor", o.slack_factor);
    r.number("jump_rel_tol", o.jump_rel_tol);
    r.number("period_slack", o.period_slack);
    r.numbers("t0_offsets", o.t0_offsets);
    r.opt_vector("x_offset", o.x_offset);
    r.number("spread_limit", o.spread_limit);
    r.numbers("s_k_values", o.s_k_values);
    r.number("limiting_r", o.limiting_r);
    r.number("limiting_factor", o.limiting_factor);
    r.integer("grid_points", o.grid_points);
    r.number("grid_lo", o.grid_lo);
    r.number("grid_hi", o.grid_hi);
    r.numbers("h_values", o.h_values);
    r.number("reference_divisor", o.reference_divisor);
    r.number("order_tol_euler", o.order_tol_euler);
    r.number("order_tol_rk4", o.order_tol_rk4);
    r.number("margin_lo", o.margin_lo);
    r.number("margin_hi", o.margin_hi);
    r.integer("margin_iterations", o.margin_iterations);
    r.numbers("margin_horizons", o.margin_horizons);
    r.numbers("margin_h_values", o.margin_h_values);
    r.finish();
    if (!(o.eps > 0.0)) r.fail("options.eps", "must be > 0");
    if (o.grid_points < 2) r.fail("options.grid_points", "must be >= 2");
    if (!(0.0 < o.grid_lo && o.grid_lo < o.grid_hi)) r.fail("options.grid_lo", "must satisfy 0 < grid_lo < grid_hi");
    if (!(o.reference_divisor > 1.0)) r.fail("options.reference_divisor", "must be > 1");
    if (!(0.0 < o.margin_lo && o.margin_lo < o.margin_hi)) r.fail("options.margin_lo", "must satisfy 0 < margin_lo < margin_hi");
    if (o.margin_iterations < 0) r.fail("options.margin_iterations", "must be >= 0");
    for (double h : o.h_values)
      if (!(h > 0.0)) r.fail("options.h_values", "entries must be > 0");
    for (double h : o.margin_h_values)
      if (!(h > 0.0)) r.fail("options.margin_h_values", "entries must be > 0");
    for (double t : o.margin_horizons)
      if (!(t > 0.0)) r.fail("options.margin_horizons", "entries must be > 0");
    for (std::size_t i = 1; i < o.t0_offsets.size(); ++i)
      if (!(o.t0_offsets[i] > o.t0_offsets[i - 1])) r.fail("options.t0_offsets", "must be increasing");
    if (o.x_offset && o.x_offset->size() != n)
      r.fail("options.x_offset", "has dimension " + std::to_string(o.x_offset->size()) +
                                     ", cost has dimension " + std::to_string(n));
  }
  {
    auto r = top.section("output");
    r.string("dir", s.out_dir);
    r.finish();
  }
  top.finish();
  return s;
}

inline ScenarioSpec parse_config_text(const std::string& text,
                                      const std::string& origin = "<config>") {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte is 1-based; translate to a line number
    const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n');
    throw ConfigError(origin + ":" + std::to_string(line) + ": malformed JSON: " + e.what());
  }
  return parse_config_json(doc, origin, text);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ScenarioSpec parse_config(const std::string& path) {
  return parse_config_text(read_file(path), path);
}

}  // namespace hand::cli
