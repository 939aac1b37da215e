#include "hand/engine.hpp"
#include "hand/hands.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace hand;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

CostFunction half_square() { return make_quadratic(Matrix::Identity(1, 1), Vector::Zero(1)); }

SolverConfig solver(double h, double t_end, int stride = 1) {
  SolverConfig cfg;
  cfg.h = h;
  cfg.t_end = t_end;
  cfg.record_stride = stride;
  return cfg;
}

}  // namespace

TEST(Steps, EulerExample) {
  const auto f = half_square();
  auto F = [&](const HybridState& z, VectorRef dz) { hand_flow(z, 1.0, f.gradient(z.x1()), dz); };
  const HybridState z(vec({1}), vec({3}), 2.0);
  const auto out = euler_step(F, z, 0.1);
  EXPECT_NEAR(out.x1()(0), 1.2, 1e-15);
  EXPECT_NEAR(out.x2()(0), 2.6, 1e-15);
  EXPECT_NEAR(out.tau(), 2.1, 1e-15);
  auto zero = [](const HybridState&, VectorRef dz) { dz.setZero(); };
  EXPECT_EQ(euler_step(zero, z, 0.1), z);
  EXPECT_THROW(euler_step(F, z, 0.0), InvalidArgument);
}

TEST(Steps, EulerTableauMatchesEulerStep) {
  const auto f = make_log_cosh(2, 0.5);
  auto F = [&](const HybridState& z, VectorRef dz) { hand_flow(z, 0.5, f.gradient(z.x1()), dz); };
  const HybridState z(vec({1, -2}), vec({0.5, 3}), 1.3);
  EXPECT_EQ(rk_step(F, z, 0.05, ButcherTableau::euler()), euler_step(F, z, 0.05));
}

TEST(Steps, Rk4OnExponential) {
  // z = (x1, x2, tau) with x1' = x1; the other coordinates are frozen.
  auto F = [](const HybridState& z, VectorRef dz) {
    dz.setZero();
    dz(0) = z.x1()(0);
  };
  const auto out = rk_step(F, HybridState(vec({1}), vec({0}), 1.0), 0.1, ButcherTableau::rk4());
  EXPECT_NEAR(out.x1()(0), 1.1051708333333333, 1e-15);
  EXPECT_NEAR(out.x1()(0), std::exp(0.1), 1e-7);
}

TEST(Steps, TableausAreConsistent) {
  for (const char* id : {"euler", "midpoint", "heun", "ralston3", "rk4", "rk38"}) {
    const auto tab = ButcherTableau::by_id(id);
    EXPECT_NO_THROW(tab.validate()) << id;
    EXPECT_NEAR(tab.b.sum(), 1.0, 1e-15) << id;
  }
  EXPECT_THROW(ButcherTableau::by_id("rk5"), InvalidArgument);
}

TEST(Steps, NonFiniteFlowFaults) {
  auto F = [](const HybridState&, VectorRef dz) { dz.setConstant(std::nan("")); };
  const HybridState z(vec({1}), vec({0}), 1.0);
  EXPECT_THROW(euler_step(F, z, 0.1), SimulationFault);
  EXPECT_THROW(rk_step(F, z, 0.1, ButcherTableau::rk4()), SimulationFault);
}

// ---------------------------------------------------------------------------

TEST(JumpSetDh, Membership) {
  const auto f = half_square();
  const auto sys = hand2(f, HandParams{1.0, 2.0, 2.0, 1.0});
  EXPECT_TRUE(dh_membership(sys, HybridState(vec({1}), vec({1}), 2.0), Provenance::Jump));
  EXPECT_TRUE(dh_membership(sys, HybridState(vec({1}), vec({1}), 2.003), Provenance::FlowStep));
  EXPECT_FALSE(dh_membership(sys, HybridState(vec({1}), vec({1}), 1.5), Provenance::Jump));
  EXPECT_FALSE(dh_membership(sys, HybridState(vec({1}), vec({1}), 1.5), Provenance::FlowStep));
}

TEST(JumpPolicy, OutsideCAlwaysJumps) {
  const auto sys = hand1(half_square(), HandParams{1.0, 2.0, 3.0, 1.0});
  std::mt19937_64 rng(0);
  const HybridState over(vec({1}), vec({1}), 3.01);
  for (const auto& p : {JumpPolicy::earliest(), JumpPolicy::latest(), JumpPolicy::uniform_random(4)})
    EXPECT_TRUE(jump_policy_decide(p, over, sys, 1e-2, rng));
  const HybridState inside(vec({1}), vec({1}), 2.5);
  EXPECT_TRUE(jump_policy_decide(JumpPolicy::earliest(), inside, sys, 1e-2, rng));
  EXPECT_FALSE(jump_policy_decide(JumpPolicy::latest(), inside, sys, 1e-2, rng));
}

TEST(Simulate, PureFlowHasNoJumps) {
  const auto f = half_square();
  HybridSystem sys = hand2(f, HandParams{1.0, 2.0, 2.0, 1.0});
  sys.in_C = [](const HybridState&, double) { return true; };
  sys.in_D = [](const HybridState&, double) { return false; };
  const auto tr = simulate(sys, HybridState(vec({5}), vec({5}), 1.0), solver(1e-2, 5.0));
  EXPECT_EQ(tr.termination, Termination::Horizon);
  EXPECT_TRUE(tr.events.empty());
  for (const auto& p : tr.points) EXPECT_EQ(p.time.j, 0);
  EXPECT_FALSE(check_trace(tr).has_value());
}

TEST(Simulate, Hand2JumpsEveryPeriod) {
  const double h = 1e-3;
  const auto tr = simulate(hand2(half_square(), HandParams{1.0, 2.0, 2.0, 1.0}),
                           HybridState(vec({5}), vec({5}), 1.0), solver(h, 5.5, 10));
  ASSERT_EQ(tr.events.size(), 5u);
  for (std::size_t k = 0; k < tr.events.size(); ++k) {
    EXPECT_NEAR(tr.events[k].time.t, k + 1.0, h);
    EXPECT_EQ(tr.events[k].time.j, static_cast<int>(k));
    EXPECT_EQ(tr.events[k].post.tau(), 1.0);
    EXPECT_EQ(tr.events[k].post.x2(), tr.events[k].pre.x1());
  }
  EXPECT_EQ(tr.back().time.j, 5);
  EXPECT_FALSE(check_trace(tr).has_value());
}

TEST(Simulate, LatestJumpOnHand1ResetsAtTmax) {
  const double h = 1e-3;
  const auto tr = simulate(hand1(half_square(), HandParams{1.0, 2.0, 3.0, 1.0}),
                           HybridState(vec({5}), vec({5}), 1.0), solver(h, 10.0, 50));
  ASSERT_GE(tr.events.size(), 4u);
  for (const auto& ev : tr.events) {
    EXPECT_NEAR(ev.pre.tau(), 3.0, h);
    EXPECT_EQ(ev.post.tau(), 1.0);
    EXPECT_EQ(ev.post.x1(), ev.pre.x1());
    EXPECT_EQ(ev.post.x2(), ev.pre.x2());
  }
}

TEST(Simulate, PoliciesCoincideWhenTmedEqualsTmax) {
  const auto sys = hand1(half_square(), HandParams{1.0, 3.0, 3.0, 1.0});
  const HybridState z0(vec({5}), vec({5}), 1.0);
  auto cfg = solver(1e-2, 20.0, 7);
  const auto a = simulate(sys, z0, cfg);
  cfg.jump_policy = JumpPolicy::uniform_random(12);
  const auto b = simulate(sys, z0, cfg);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i].state, b.points[i].state);
}

TEST(Simulate, ZeroPerturbationIsBitwiseIdentical) {
  const auto sys = hand2(make_log_cosh(2, 0.5), HandParams{1.0, 3.0, 3.0, 1.0});
  const HybridState z0(vec({2, -1}), vec({2, -1}), 1.0);
  const auto cfg = solver(1e-2, 15.0, 3);
  const auto pert = PerturbationSet::zero(5);
  const auto a = simulate(sys, z0, cfg);
  const auto b = simulate(sys, z0, cfg, &pert);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i].state, b.points[i].state);
    EXPECT_EQ(a.points[i].time, b.points[i].time);
  }
}

TEST(Simulate, RandomPolicyIsSeedDeterministic) {
  const auto sys = hand1(half_square(), HandParams{1.0, 2.0, 4.0, 1.0});
  const HybridState z0(vec({5}), vec({5}), 1.0);
  auto cfg = solver(1e-2, 40.0, 5);
  cfg.jump_policy = JumpPolicy::uniform_random(21);
  const auto a = simulate(sys, z0, cfg);
  const auto b = simulate(sys, z0, cfg);
  ASSERT_EQ(a.events.size(), b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    EXPECT_EQ(a.events[i].time, b.events[i].time);
    EXPECT_GE(a.events[i].pre.tau(), 2.0 - 1e-2);
    EXPECT_LE(a.events[i].pre.tau(), 4.0 + 1e-2);
  }
}

TEST(Simulate, BlowUpIsRecordedNotThrown) {
  HybridSystem sys = hand2(half_square(), HandParams{1.0, 2.0, 2.0, 1.0});
  sys.flow = [](double, const HybridState& z, VectorRef dz) {
    dz.setZero();
    dz(0) = z.x1()(0) * z.x1()(0) * 1e3;
    dz(2) = 1.0;
  };
  const auto tr = simulate(sys, HybridState(vec({1}), vec({1}), 1.0), solver(1e-2, 1.0));
  EXPECT_EQ(tr.termination, Termination::BlowUp);
  EXPECT_TRUE(tr.faulted());
  ASSERT_TRUE(tr.fault_state.has_value());
  EXPECT_EQ(tr.back().kind, PointKind::Fault);
}

TEST(Simulate, JumpCap) {
  auto cfg = solver(1e-2, 50.0);
  cfg.max_jumps = 3;
  const auto tr = simulate(hand2(half_square(), HandParams{1.0, 2.0, 2.0, 1.0}),
                           HybridState(vec({5}), vec({5}), 1.0), cfg);
  EXPECT_EQ(tr.termination, Termination::JumpCap);
  EXPECT_EQ(tr.events.size(), 3u);
}

// ---------------------------------------------------------------------------

TEST(Hands, JumpMapExamples) {
  const auto f = half_square();
  const auto g1 = hand1(f, HandParams{1.0, 2.0, 3.0, 1.0}).jump;
  EXPECT_EQ(g1(HybridState(vec({5}), vec({-3}), 2.7)), HybridState(vec({5}), vec({-3}), 1.0));
  const auto g2 = hand2(f, HandParams{1.0, 2.0, 2.0, 1.0}).jump;
  EXPECT_EQ(g2(HybridState(vec({5}), vec({-3}), 2.0)), HybridState(vec({5}), vec({5}), 1.0));
  EXPECT_EQ(g2(HybridState(vec({0}), vec({7}), 2.0)), HybridState(vec({0}), vec({0}), 1.0));
}

TEST(Hands, ParameterValidation) {
  const auto f = half_square();
  EXPECT_THROW(hand1(f, HandParams{3.0, 2.0, 2.5, 1.0}), InvalidArgument);
  EXPECT_THROW(hand1(f, HandParams{1.0, 3.0, 2.0, 1.0}), InvalidArgument);
  EXPECT_THROW(hand2(f, HandParams{2.0, 2.0, 1.0, 1.0}), InvalidArgument);
  EXPECT_THROW(hand2(f, HandParams{1.0, 2.0, 2.0, 0.0}), InvalidArgument);
  const auto weak = hand2(f, HandParams{1.0, 1.2, 1.2, 1.0});
  EXPECT_FALSE(weak.warnings.empty());
}

TEST(Hands, DwellCondition) {
  EXPECT_TRUE(validate_dwell(HandParams{1.0, 2.0, 2.0, 1.0}, 1.0));
  EXPECT_FALSE(validate_dwell(HandParams{1.0, 1.2, 1.2, 1.0}, 1.0));
}

TEST(Hands, TargetDistance) {
  const HandParams prm{1.0, 2.0, 2.0, 1.0};
  EXPECT_EQ(target_distance(HybridState(vec({2}), vec({2}), 1.0), vec({2}), prm), 0.0);
  EXPECT_DOUBLE_EQ(target_distance(HybridState(vec({5}), vec({6}), 1.5), vec({2}), prm), 5.0);
  EXPECT_DOUBLE_EQ(target_distance(HybridState(vec({2}), vec({2}), 2.5), vec({2}), prm), 0.5);
}

// From a point of the attractor neither HAND moves x.
TEST(Hands, Stationarity) {
  const auto f = make_quadratic(Matrix(Vector(vec({1.0, 4.0})).asDiagonal()), vec({1.0, 0.0}));
  const Vector xs = *f.xstar();
  const HandParams prm{1.0, 2.0, 3.0, 1.0};
  const double h = 1e-2;
  for (const auto& sys : {hand1(f, prm), hand2(f, prm)}) {
    const auto tr = simulate(sys, HybridState(xs, xs, prm.t_min), solver(h, 60.0));
    for (const auto& p : tr.points)
      ASSERT_LE(target_distance(p.state, xs, prm), 10.0 * 4.0 * h) << sys.label;
  }
}

// Consecutive resets are at least one flow period minus a step apart.
TEST(Hands, NoZeno) {
  const auto f = half_square();
  const HandParams prm{0.5, 1.0, 2.0, 1.0};
  auto cfg = solver(1e-2, 50.0, 20);
  cfg.jump_policy = JumpPolicy::earliest();
  for (const auto& sys : {hand1(f, prm), hand2(f, prm)}) {
    const auto tr = simulate(sys, HybridState(vec({3}), vec({3}), prm.t_min), cfg);
    ASSERT_GT(tr.events.size(), 5u);
    const double gap = (sys.label == "hand1" ? prm.t_med : prm.t_max) - prm.t_min;
    for (std::size_t k = 1; k < tr.events.size(); ++k)
      EXPECT_GE(tr.events[k].time.t - tr.events[k - 1].time.t, gap - cfg.h) << sys.label;
  }
}

// The flow map wired into both systems is the hybrid accelerated field.
TEST(Hands, FlowMapIsHandFlow) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-2.0, 2.0), ut(1.0, 3.0);
  const auto f = make_log_cosh(2, 0.5);
  const auto sys = hand2(f, HandParams{1.0, 3.0, 3.0, 0.7});
  for (int k = 0; k < 1000; ++k) {
    HybridState z(vec({u(rng), u(rng)}), vec({u(rng), u(rng)}), ut(rng));
    Vector a(5);
    sys.flow(0.0, z, a);
    EXPECT_EQ(a, hand_flow(z, 0.7, f));
  }
}
