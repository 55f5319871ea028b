#include "tvopt/problem.hpp"
#include "tvopt/trajectory.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace tvopt;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

ProblemDefinition half_norm(int n) {
  ProblemDefinition p;
  p.name = "half-norm";
  p.n = n;
  p.m = 0;
  p.f = [](const Vec& x, double) { return 0.5 * x.squaredNorm(); };
  p.grad_f = [](const Vec& x, double) { return x; };
  return p;
}

std::vector<std::pair<Vec, double>> random_points(int n, std::uint64_t seed, const std::function<Vec(double)>& center,
                                                  double spread) {
  Rng rng(seed);
  std::vector<std::pair<Vec, double>> pts;
  for (int i = 0; i < 20; ++i) {
    const double t = rng.uniform(0.0, 2.0 * M_PI);
    Vec x = center(t);
    for (int j = 0; j < n; ++j) x[j] += rng.uniform(-spread, spread);
    pts.emplace_back(x, t);
  }
  return pts;
}

}  // namespace

TEST(CheckDerivatives, ExactQuadraticPasses) {
  const auto p = half_norm(3);
  const auto rep = check_derivatives(p, {{Vec::Constant(3, 0.7), 0.0}, {(Vec(3) << 1.0, 2.0, -1.0).finished(), 1.0}}, 1e-4);
  EXPECT_TRUE(rep.pass);
  EXPECT_LE(rep.find("grad_f")->max_deviation, 1e-8);
}

TEST(CheckDerivatives, QuarticAtOrigin) {
  const auto rep = check_derivatives(builtin_quartic(5.0), {{v1(0.0), 0.0}}, 1e-4);
  EXPECT_TRUE(rep.pass);
  EXPECT_LE(rep.find("grad_f")->max_deviation, 1e-6);
}

TEST(CheckDerivatives, WrongGradientFails) {
  auto p = half_norm(2);
  p.grad_f = [](const Vec& x, double) { return Vec(x.array() + 1.0); };
  const auto rep = check_derivatives(p, {{v2(0.3, -0.2), 0.5}}, 1e-4);
  EXPECT_FALSE(rep.pass);
  EXPECT_NEAR(rep.find("grad_f")->max_deviation, 1.0, 1e-6);
}

TEST(CheckDerivatives, NonFiniteNamesEvaluator) {
  auto p = half_norm(1);
  p.f = [](const Vec& x, double) { return x[0] > 0.5 ? std::nan("") : 0.0; };
  try {
    check_derivatives(p, {{v1(0.5), 0.25}}, 1e-4);
    FAIL() << "expected EvaluationError";
  } catch (const EvaluationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("f returned"), std::string::npos);
    EXPECT_NE(msg.find("t=0.25"), std::string::npos);
  }
}

TEST(CheckDerivatives, RejectsNonPositiveStep) {
  EXPECT_THROW(check_derivatives(half_norm(1), {{v1(0), 0}}, 0.0), InvalidParameter);
}

TEST(CheckDerivatives, BuiltinsPassAtRandomPoints) {
  const auto q = builtin_quartic(5.0);
  EXPECT_TRUE(check_derivatives(q, random_points(1, 11, [](double t) { return v1(5 * std::sin(t)); }, 3.0), 1e-4).pass);
  const auto a = builtin_ackley_constrained(0.01);
  const auto rep = check_derivatives(a, random_points(2, 12, ackley_z, 3.0), 1e-4);
  EXPECT_TRUE(rep.pass);
  EXPECT_NE(rep.find("hess_f"), nullptr);
  EXPECT_NE(rep.find("jac_g_prime"), nullptr);
  const auto tq = builtin_tracking_quadratic(1.0);
  EXPECT_TRUE(check_derivatives(tq, random_points(1, 13, [](double t) { return v1(std::sin(t)); }, 3.0), 1e-4).pass);
}

TEST(Quartic, StationaryPointsWithoutShift) {
  const auto p = builtin_quartic(0.0);
  for (double r : {-2.0, -1.0, 1.0}) EXPECT_LE(std::abs(p.grad_f(v1(r), 0.0)[0]), 1e-10);
  // independent scan for sign changes of the derivative
  int roots = 0;
  double prev = p.grad_f(v1(-5.0), 0.0)[0];
  for (int i = 1; i <= 100000; ++i) {
    const double x = -5.0 + 10.0 * i / 100000.0 + 1e-7;
    const double cur = p.grad_f(v1(x), 0.0)[0];
    if ((prev < 0) != (cur < 0)) ++roots;
    prev = cur;
  }
  EXPECT_EQ(roots, 3);
}

TEST(Quartic, ValueAtOne) { EXPECT_NEAR(builtin_quartic(0.0).f(v1(1.0), 0.0), -19.0 / 12.0, 1e-15); }

TEST(Quartic, ShiftedMinimizers) {
  const auto p = builtin_quartic(5.0);
  EXPECT_NEAR(p.grad_f(v1(3.0), M_PI / 2)[0], 0.0, 1e-12);
  EXPECT_NEAR(p.grad_f(v1(6.0), M_PI / 2)[0], 0.0, 1e-12);
  EXPECT_GT(p.hess_f(v1(3.0), M_PI / 2)(0, 0), 0.0);
}

TEST(Ackley, ValueAtOriginIsZero) {
  EXPECT_NEAR(ackley_fbar(v2(0, 0), 0.01), 0.0, 1e-14);
  const auto p = builtin_ackley_constrained(0.01);
  EXPECT_NEAR(p.f(ackley_z(1.3), 1.3), 0.0, 1e-12);
}

TEST(Ackley, FrozenValuesAtReferencePoint) {
  // high-precision numerical differentiation of the defining formula
  const Vec y = v2(0.3, -0.7);
  EXPECT_NEAR(ackley_fbar(y, 0.01), 9.1218687972549587648, 1e-12);
  const Vec gr = ackley_grad_fbar(y, 0.01);
  EXPECT_NEAR(gr[0], 4.3471523301168967129, 1e-12);
  EXPECT_NEAR(gr[1], -6.487402702400270099, 1e-12);
  const Mat h = ackley_hess_fbar(y, 0.01);
  EXPECT_NEAR(h(0, 0), 2.7325658702268376094, 1e-11);
  EXPECT_NEAR(h(0, 1), 2.7566504827542227966, 1e-11);
  EXPECT_NEAR(h(1, 0), 2.7566504827542227966, 1e-11);
  EXPECT_NEAR(h(1, 1), -8.7601244815131693528, 1e-11);
}

TEST(Ackley, TrajectoriesAreFeasible) {
  const auto p = builtin_ackley_constrained(0.01);
  EXPECT_LE(std::abs(1.92 - 0.5 * 1.96 * 1.96), 2e-3);
  const auto trajs = ackley_trajectories();
  for (double t : linspace(0.0, 2 * M_PI, 100))
    for (const auto& h : trajs) EXPECT_LE(std::abs(p.g(h.h(t), t)[0]), 1e-12) << h.label() << " t=" << t;
}

TEST(Ackley, LocalOffsetIsReducedMinimum) {
  const Vec y = ackley_local_offset(0.01);
  EXPECT_NEAR(y[0], 0.5 * y[1] * y[1], 1e-15);
  // independent scan of the reduced objective along the parabola
  auto phi = [](double s) { return ackley_fbar(v2(0.5 * s * s, s), 0.01); };
  double best_s = 0.0;
  for (int i = 1; i < 400000; ++i) {
    const double s = 1.8 + i * 1e-6;
    if (phi(s) < phi(s - 1e-6) && phi(s) < phi(s + 1e-6)) best_s = s;
  }
  EXPECT_NEAR(y[1], best_s, 1e-5);
  EXPECT_LE((y - v2(1.92, 1.96)).norm(), 2e-2);
}

TEST(Ackley, RejectsNonPositiveD) {
  EXPECT_THROW(builtin_ackley_constrained(0.0), InvalidParameter);
  EXPECT_THROW(builtin_ackley_constrained(-1.0), InvalidParameter);
}

TEST(TrackingQuadratic, Basics) {
  const auto p = builtin_tracking_quadratic(1.0);
  EXPECT_EQ(p.grad_f(v1(0.0), 0.0)[0], 0.0);
  const auto h = tracking_quadratic_trajectory(2.0);
  double sup = 0.0;
  for (double t : linspace(0.0, 2 * M_PI, 1001)) sup = std::max(sup, std::abs(h.hdot(t)[0]));
  EXPECT_NEAR(sup, 2.0, 1e-12);
  EXPECT_THROW(builtin_tracking_quadratic(0.0), InvalidParameter);
}

TEST(Registry, BuiltinsByName) {
  EXPECT_EQ(make_problem("quartic", {{"b", 10.0}}).name, "quartic");
  EXPECT_NEAR(make_problem("quartic", {{"b", 10.0}}).grad_f(v1(11.0), M_PI / 2)[0], 0.0, 1e-12);
  EXPECT_EQ(make_problem("ackley-constrained").m, 1);
  EXPECT_EQ(make_problem("tracking-quadratic", {{"omega", 2.0}}).n, 1);
  EXPECT_THROW(make_problem("nope"), InvalidParameter);
  register_problem("half-norm-3", [](const ParamMap&) { return half_norm(3); });
  EXPECT_TRUE(has_problem("half-norm-3"));
  EXPECT_EQ(make_problem("half-norm-3").n, 3);
}

TEST(MinTrajectory, HermiteReproducesQuadratic) {
  // node slopes from three-point differences are exact for quadratics
  std::vector<double> ts{0.0, 0.1, 0.35, 0.4, 0.8, 1.0};
  std::vector<Vec> xs;
  for (double t : ts) xs.push_back(v2(t * t + 1.0, -3.0 * t));
  const auto h = MinTrajectory::traced("q", ts, xs);
  EXPECT_EQ(h.kind(), MinTrajectory::Kind::traced);
  for (double t : linspace(0.0, 1.0, 37)) {
    EXPECT_NEAR(h.h(t)[0], t * t + 1.0, 1e-12);
    EXPECT_NEAR(h.hdot(t)[0], 2.0 * t, 1e-11);
    EXPECT_NEAR(h.hdot(t)[1], -3.0, 1e-11);
  }
  EXPECT_THROW(h.h(1.5), InvalidParameter);
}

TEST(MinTrajectory, RejectsBadGrid) {
  EXPECT_THROW(MinTrajectory::traced("x", {0.0, 0.0}, {v1(0), v1(1)}), InvalidParameter);
  EXPECT_THROW(MinTrajectory::traced("x", {0.0}, {}), InvalidParameter);
}
