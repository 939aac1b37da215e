#include "hand/core.hpp"
#include "hand/dynamics.hpp"

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

}  // namespace

TEST(MakeQuadratic, ExampleOneCost) {
  Matrix Q(1, 1);
  Q << 0.25;
  const auto f = make_quadratic(Q, Vector::Zero(1));
  EXPECT_DOUBLE_EQ(f.gradient(vec({2.0}))(0), 0.5);
  EXPECT_DOUBLE_EQ((*f.xstar())(0), 0.0);
  EXPECT_DOUBLE_EQ(*f.mu(), 0.25);
  EXPECT_DOUBLE_EQ(*f.lipschitz(), 0.25);
}

TEST(MakeQuadratic, CenteredIdentity) {
  const auto f = make_quadratic(Matrix::Identity(2, 2), Vector::Zero(2));
  EXPECT_EQ(f.value(Vector::Zero(2)), 0.0);
  EXPECT_EQ(f.gradient(Vector::Zero(2)), Vector::Zero(2));
}

TEST(MakeQuadratic, ShiftedDiagonal) {
  Matrix Q = Vector(vec({1.0, 4.0})).asDiagonal();
  const auto f = make_quadratic(Q, vec({1.0, 0.0}));
  EXPECT_NEAR(((*f.xstar()) - vec({-1.0, 0.0})).norm(), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(*f.mu(), 1.0);
  EXPECT_DOUBLE_EQ(*f.lipschitz(), 4.0);
  EXPECT_NEAR(f.value(*f.xstar()), -0.5, 1e-15);
  EXPECT_LE(grad_check(f, *f.xstar(), 1e-5), 1e-8);
}

TEST(MakeQuadratic, RejectsBadInput) {
  Matrix nonsym(2, 2);
  nonsym << 1, 1, 0, 1;
  EXPECT_THROW(make_quadratic(nonsym, Vector::Zero(2)), InvalidArgument);
  Matrix singular = Matrix::Zero(2, 2);
  singular(0, 0) = 1.0;
  EXPECT_THROW(make_quadratic(singular, vec({0.0, 1.0})), InvalidArgument);
  EXPECT_NO_THROW(make_quadratic(singular, vec({1.0, 0.0})));
}

TEST(GradCheck, QuadraticIsExact) {
  const auto f = make_quadratic(Matrix::Identity(2, 2), Vector::Zero(2));
  EXPECT_LE(grad_check(f, vec({1.0, 1.0}), 1e-5), 1e-8);
}

TEST(GradCheck, Quartic) {
  const auto f = make_quartic();
  EXPECT_DOUBLE_EQ(f.gradient(vec({2.0}))(0), 32.0);
  EXPECT_LE(grad_check(f, vec({2.0}), 1e-4), 1e-6);
}

TEST(GradCheck, DetectsScaledGradient) {
  const auto good = half_square();
  CostFunction bad(
      1, [good](const VectorCRef& x) { return good.value(x); },
      [good](const VectorCRef& x, VectorRef g) {
        good.gradient(x, g);
        g *= 2.0;
      });
  EXPECT_NEAR(grad_check(bad, vec({1.0}), 1e-5), 0.5, 1e-6);
}

TEST(GradCheck, CorpusGradients) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  for (const auto& f : {make_example1_cost(), make_isotropic(3, 2.0), make_log_cosh(2, 0.5)}) {
    for (int k = 0; k < 20; ++k) {
      Vector x(f.dim());
      for (int i = 0; i < f.dim(); ++i) x(i) = n01(rng);
      EXPECT_LE(grad_check(f, x, 1e-5), 1e-7) << f.label();
    }
  }
}

TEST(HybridStateLayout, FlatRoundTrip) {
  HybridState z(vec({1.0, 2.0}), vec({3.0, 4.0}), 5.0);
  EXPECT_EQ(z.dim(), 2);
  EXPECT_EQ(z.flat(), vec({1, 2, 3, 4, 5}));
  EXPECT_EQ(HybridState::from_flat(z.flat()), z);
  EXPECT_THROW(HybridState::from_flat(vec({1, 2})), InvalidArgument);
}

// ---------------------------------------------------------------------------

TEST(NominalFlow, Rep1Examples) {
  Matrix Q(1, 1);
  Q << 0.25;
  const auto f = make_quadratic(Q, Vector::Zero(1));
  const OdeParams prm{2.0, 1.0, 3.0, 1.0};
  auto a = nominal_flow_rep1(1.0, vec({2.0}), vec({0.0}), prm, f);
  EXPECT_DOUBLE_EQ(a.dx1(0), 0.0);
  EXPECT_DOUBLE_EQ(a.dx2(0), -2.0);
  auto b = nominal_flow_rep1(10.0, vec({0.0}), vec({1.0}), prm, f);
  EXPECT_DOUBLE_EQ(b.dx1(0), 1.0);
  EXPECT_DOUBLE_EQ(b.dx2(0), -0.3);
  auto c = nominal_flow_rep1(7.0, vec({0.0}), vec({0.0}), prm, f);
  EXPECT_EQ(c.dx1(0), 0.0);
  EXPECT_EQ(c.dx2(0), 0.0);
}

TEST(NominalFlow, Rep2Examples) {
  const auto f = half_square();
  const OdeParams prm{2.0, 1.0, 3.0, 1.0};
  auto a = nominal_flow_rep2(2.0, vec({1.0}), vec({3.0}), prm, f);
  EXPECT_DOUBLE_EQ(a.dx1(0), 2.0);
  EXPECT_DOUBLE_EQ(a.dx2(0), -4.0);
  auto b = nominal_flow_rep2(2.0, vec({0.0}), vec({0.0}), prm, f);
  EXPECT_EQ(b.dx1(0), 0.0);
  EXPECT_EQ(b.dx2(0), 0.0);
}

TEST(NominalFlow, RejectsNonPositiveTime) {
  const auto f = half_square();
  Vector d1(1), d2(1);
  EXPECT_THROW(nominal_flow_rep1(0.0, vec({1}), vec({1}), vec({1}), OdeParams{}, d1, d2),
               InvalidArgument);
  EXPECT_THROW(nominal_flow_rep2(-1.0, vec({1}), vec({1}), vec({1}), OdeParams{}, d1, d2),
               InvalidArgument);
}

// Both representations describe the same second-order ODE.
TEST(NominalFlow, RepresentationsAgree) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-3.0, 3.0), ut(0.5, 20.0);
  const auto f = make_quadratic(Matrix(Vector(vec({1.0, 3.0})).asDiagonal()), vec({0.5, -1.0}));
  const OdeParams prm{2.0, 0.25, 3.0, 0.5};
  for (int k = 0; k < 1000; ++k) {
    const double t = ut(rng);
    const Vector x = vec({u(rng), u(rng)}), v = vec({u(rng), u(rng)});
    const auto r1 = nominal_flow_rep1(t, x, v, prm, f);
    const double s = t / (prm.ell - 1.0);
    const auto r2 = nominal_flow_rep2(t, x, x + s * v, prm, f);
    EXPECT_NEAR((r2.dx1 - v).norm(), 0.0, 1e-12 * (1.0 + v.norm()));
    const Vector dx2 = v + v / (prm.ell - 1.0) + s * r1.dx2;
    EXPECT_NEAR((r2.dx2 - dx2).norm(), 0.0, 1e-10 * (1.0 + dx2.norm()));
  }
}

TEST(HandFlow, Examples) {
  const auto f = half_square();
  EXPECT_EQ(hand_flow(HybridState(vec({1}), vec({3}), 2.0), 1.0, f), vec({2, -4, 1}));
  EXPECT_EQ(hand_flow(HybridState(vec({0}), vec({0}), 1.7), 1.0, f), vec({0, 0, 1}));
  EXPECT_THROW(hand_flow(HybridState(vec({1}), vec({3}), 0.0), 1.0, f), InvalidArgument);
}

// p = 2 of the general-order field is the standard field.
TEST(HandFlow, OrderTwoMatches) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0), ut(0.1, 5.0);
  const auto f = make_log_cosh(2, 0.5);
  for (int k = 0; k < 1000; ++k) {
    HybridState z(vec({u(rng), u(rng)}), vec({u(rng), u(rng)}), ut(rng));
    Vector a(5), b(5);
    const Vector g = f.gradient(z.x1());
    hand_flow(z, 0.7, g, a);
    hand_flow_order(z, 0.7, 2.0, g, b);
    EXPECT_NEAR((a - b).norm(), 0.0, 1e-14 * (1.0 + a.norm()));
  }
}

// ---------------------------------------------------------------------------

TEST(Signals, SquareWave) {
  const auto s = DisturbanceSpec::square_wave(2, 1e-3, 1e4, 1);
  EXPECT_EQ(signal_eval(s, 0.0), vec({0.0, 1e-3}));
  EXPECT_EQ(signal_eval(s, 4999.0), vec({0.0, 1e-3}));
  EXPECT_EQ(signal_eval(s, 5000.0), vec({0.0, -1e-3}));
  EXPECT_EQ(signal_eval(s, 9999.0), vec({0.0, -1e-3}));
  EXPECT_EQ(signal_eval(s, 10000.0), vec({0.0, 1e-3}));
}

TEST(Signals, ZeroAndDeterministicRandom) {
  EXPECT_EQ(signal_eval(DisturbanceSpec::zero(3), 12.5), Vector::Zero(3));
  const auto r = DisturbanceSpec::uniform_random(3, 0.1, 7);
  EXPECT_EQ(signal_eval(r, 3.14159), signal_eval(r, 3.14159));
  EXPECT_EQ(signal_eval(r, 3.141), signal_eval(r, 3.149));  // same hold slot
  EXPECT_NE(signal_eval(r, 3.14), signal_eval(DisturbanceSpec::uniform_random(3, 0.1, 8), 3.14));
}

TEST(Signals, NeverExceedBound) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ut(0.0, 1e5);
  const std::vector<DisturbanceSpec> specs{
      DisturbanceSpec::square_wave(2, 1e-3, 1e4, 0), DisturbanceSpec::sinusoid(2, 0.3, 7.0, 1),
      DisturbanceSpec::uniform_random(4, 0.05, 99, 0.01),
      DisturbanceSpec::constant(vec({0.3, -0.4}))};
  for (const auto& s : specs) {
    for (int k = 0; k < 10000; ++k)
      ASSERT_LE(signal_eval(s, ut(rng)).norm(), s.bound()) << to_string(s.kind);
  }
}

TEST(Signals, RejectsBadSpecs) {
  EXPECT_THROW(DisturbanceSpec::square_wave(2, 1e-3, 0.0, 0).validate(), InvalidArgument);
  EXPECT_THROW(DisturbanceSpec::square_wave(2, 1e-3, 1.0, 2).validate(), InvalidArgument);
  EXPECT_THROW(DisturbanceSpec::uniform_random(2, -1.0, 0).validate(), InvalidArgument);
}

TEST(PerturbedFlow, ZeroIsIdentity) {
  TimeVaryingField field = [](double t, const VectorCRef& x, VectorRef dx) { dx = -t * x; };
  const auto p = perturbed_flow(field, DisturbanceSpec::zero(2), DisturbanceSpec::zero(2));
  Vector a(2), b(2);
  field(1.5, vec({1, 2}), a);
  p(1.5, vec({1, 2}), b);
  EXPECT_EQ(a, b);
}

TEST(PerturbedFlow, AdditiveSquareWave) {
  TimeVaryingField field = [](double, const VectorCRef& x, VectorRef dx) { dx = -x; };
  const auto p = perturbed_flow(field, DisturbanceSpec::zero(2),
                                DisturbanceSpec::square_wave(2, 1e-3, 1e4, 1));
  Vector d(2);
  p(10.0, vec({1, 2}), d);
  EXPECT_EQ(d, vec({-1.0, -2.0 + 1e-3}));
  p(6000.0, vec({1, 2}), d);
  EXPECT_EQ(d, vec({-1.0, -2.0 - 1e-3}));
}

TEST(PerturbedFlow, StateShiftMovesGradientArgument) {
  const auto f = half_square();
  TimeVaryingField field = [f](double, const VectorCRef& x, VectorRef dx) {
    f.gradient(x.head(1), dx.head(1));
    dx(1) = 0.0;
  };
  const auto p =
      perturbed_flow(field, DisturbanceSpec::constant(vec({0.25, 0.0})), DisturbanceSpec::zero(2));
  Vector d(2);
  p(0.0, vec({1.0, 0.0}), d);
  EXPECT_DOUBLE_EQ(d(0), 1.25);
  EXPECT_THROW(perturbed_flow(field, DisturbanceSpec::zero(2), DisturbanceSpec::zero(3)),
               InvalidArgument);
  EXPECT_THROW(p(0.0, vec({1.0, 0.0, 0.0}), d), InvalidArgument);
}

TEST(LimitingIntegral, Examples) {
  EXPECT_EQ(limiting_integral(3.0, 10.0, 0.0), 0.0);
  EXPECT_NEAR(limiting_integral(3.0, 0.0, 1.0), 3.0 * std::log(2.0), 1e-15);
  double prev = limiting_integral(3.0, 10.0, 1.0);
  for (double s : {100.0, 1000.0, 10000.0}) {
    const double v = limiting_integral(3.0, s, 1.0);
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_LE(prev, 3e-4 * 3.0);
}

// Midpoint quadrature of ell2 / (s + 1) agrees with the closed form.
TEST(LimitingIntegral, MatchesQuadrature) {
  for (double s_k : {0.0, 2.5, 40.0}) {
    const int m = 20000;
    const double r = 1.7;
    double q = 0.0;
    for (int i = 0; i < m; ++i) q += 3.0 / (s_k + (i + 0.5) * r / m + 1.0);
    q *= r / m;
    EXPECT_NEAR(limiting_integral(3.0, s_k, r), q, 1e-8);
  }
}
