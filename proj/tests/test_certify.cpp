#include "tvopt/certify.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace tvopt;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// f = 1/2 |x - c(t)|^2 with minimizer c(t)
ProblemDefinition moving_well(std::function<Vec(double)> c, int n) {
  ProblemDefinition p;
  p.name = "moving-well";
  p.n = n;
  p.f = [c](const Vec& x, double t) { return 0.5 * (x - c(t)).squaredNorm(); };
  p.grad_f = [c](const Vec& x, double t) { return Vec(x - c(t)); };
  p.hess_f = [n](const Vec&, double) { return Mat(Mat::Identity(n, n)); };
  return p;
}

MinTrajectory constant_traj(std::string label, Vec c) {
  const int n = static_cast<int>(c.size());
  return MinTrajectory::analytic(std::move(label), [c](double) { return c; },
                                 [n](double) { return Vec(Vec::Zero(n)); });
}

Region box1(double lo, double hi) { return Region::box(v1(lo), v1(hi)); }

DominanceOptions tracking_dominance(double alpha, double v, double t2) {
  DominanceOptions o;
  o.alpha = alpha;
  o.t1 = 0.0;
  o.t2 = t2;
  o.D = box1(-1.5, 1.5);
  o.v = v;
  o.r2 = 0.5;
  o.n_samples = 400;
  o.n_seeds = 100;
  return o;
}

TrajectoryRecord run(const ProblemDefinition& p, const Vec& x0, double t1, double alpha, double dt = 1e-3) {
  FlowConfig cfg;
  cfg.alpha = alpha;
  cfg.dt = dt;
  return integrate_pode(p, x0, 0.0, t1, cfg);
}

}  // namespace

// ---- convexity

TEST(Convexity, ExactForHalfNorm) {
  const auto p = moving_well([](double t) { return v2(std::sin(t), 0.0); }, 2);
  const auto h = MinTrajectory::analytic("c", [](double t) { return v2(std::sin(t), 0.0); },
                                         [](double t) { return v2(std::cos(t), 0.0); });
  for (double r : {0.1, 2.0}) {
    const auto c = estimate_one_point_convexity(p, h, r, linspace(0, 3, 7), 100, 5);
    EXPECT_NEAR(c.c_hat, 1.0, 1e-12);
    EXPECT_TRUE(c.valid);
    EXPECT_EQ(c.n_samples, 700u);
  }
}

TEST(Convexity, QuarticMatchesDenseScan) {
  const auto p = builtin_quartic(0.0);
  const auto h = constant_traj("local-1", v1(-2.0));
  double scan = kInf;
  for (int i = -5000; i <= 5000; ++i) {
    const double e = 0.5 * i / 5000.0;
    if (std::abs(e) < 1e-12) continue;
    scan = std::min(scan, p.grad_f(v1(-2.0 + e), 0.0)[0] * e / (e * e));
  }
  EXPECT_NEAR(scan, 1.25, 1e-9);
  const auto c = estimate_one_point_convexity(p, h, 0.5, linspace(0, 1, 11), 400, 3);
  EXPECT_GE(c.c_hat, scan - 1e-9);
  EXPECT_NEAR(c.c_hat, scan, 5e-3);
  EXPECT_GT(c.min_e[0], 0.45);
}

TEST(Convexity, AckleyGlobalPositive) {
  const auto p = builtin_ackley_constrained(0.01);
  const auto h = ackley_trajectories()[1];
  const auto c = estimate_one_point_convexity(p, h, 0.5, linspace(0, 2 * M_PI, 33), 200, 1);
  EXPECT_TRUE(c.valid);
  EXPECT_GT(c.c_hat, 1.0);
  EXPECT_EQ(c.n_retraction_failures, 0u);
}

TEST(Convexity, NestedRadiiMonotone) {
  const auto q = builtin_quartic(5.0);
  const auto a = builtin_ackley_constrained(0.01);
  const std::vector<double> radii{0.1, 0.3, 0.5};
  for (const auto& h : quartic_trajectories(5.0)) {
    const auto prof = convexity_profile(q, h, radii, linspace(0, 2 * M_PI, 17), 100, 9);
    EXPECT_GE(prof[0].c_hat, prof[1].c_hat);
    EXPECT_GE(prof[1].c_hat, prof[2].c_hat);
  }
  const auto prof = convexity_profile(a, ackley_trajectories()[1], radii, linspace(0, 2 * M_PI, 17), 100, 9);
  EXPECT_GE(prof[0].c_hat, prof[1].c_hat);
  EXPECT_GE(prof[1].c_hat, prof[2].c_hat);
}

TEST(Convexity, RejectsNonStationaryTrajectory) {
  const auto p = builtin_quartic(0.0);
  EXPECT_THROW(estimate_one_point_convexity(p, constant_traj("x", v1(0.0)), 0.5, {0.0}, 10, 1), PreconditionError);
  EXPECT_THROW(estimate_one_point_convexity(p, constant_traj("x", v1(-2.0)), -1.0, {0.0}, 10, 1), InvalidParameter);
}

// ---- equilibrium branch

TEST(Branch, TimeInvariantIsZero) {
  const auto p = moving_well([](double) { return v2(1.0, 2.0); }, 2);
  const auto br = equilibrium_branch(p, constant_traj("c", v2(1.0, 2.0)), 0.3, linspace(0, 1, 5), 0.5);
  EXPECT_EQ(br.rho, 0.0);
  EXPECT_TRUE(br.extra_zeros.empty());
}

TEST(Branch, TrackingQuadraticRhoIsAlpha) {
  const auto p = builtin_tracking_quadratic(1.0);
  const auto h = tracking_quadratic_trajectory(1.0);
  const auto br = equilibrium_branch(p, h, 0.1, linspace(0, 2 * M_PI, 41), 0.5);
  EXPECT_NEAR(br.rho, 0.1, 1e-10);
  for (std::size_t k = 0; k < br.t.size(); ++k) EXPECT_NEAR(br.ebar[k][0], -0.1 * std::cos(br.t[k]), 1e-10);
  EXPECT_THROW(equilibrium_branch(p, h, 0.6, linspace(0, 1, 5), 0.5), NoBranchError);
}

TEST(Branch, AveragedTrackingQuadratic) {
  const auto p = builtin_tracking_quadratic(1.0);
  const auto h = tracking_quadratic_trajectory(1.0);
  const double t2 = 1.0;
  const auto br = equilibrium_average(p, h, 0.1, linspace(0, t2, 65), 0.5);
  // U_av(e) = e + alpha * mean(cos) over [0, t2]
  EXPECT_NEAR(br.ebar[0][0], -0.1 * std::sin(t2) / t2, 1e-5);
}

TEST(Branch, AckleyBranchSmall) {
  const auto p = builtin_ackley_constrained(0.01);
  const auto br = equilibrium_branch(p, ackley_trajectories()[1], 0.2, linspace(0, M_PI / 8, 17), 0.5);
  EXPECT_LT(br.rho, 1e-3);
  EXPECT_LT(br.max_condition, 1e8);
  for (std::size_t k = 0; k < br.t.size(); ++k) {
    const Vec e = br.ebar[k];
    EXPECT_NEAR(e[0], 0.5 * e[1] * e[1], 1e-12);
  }
}

// ---- dominance

TEST(Dominance, TrackingQuadraticExactModulus) {
  const auto p = builtin_tracking_quadratic(1.0);
  const auto h = tracking_quadratic_trajectory(1.0);
  const auto dc = check_dominance(p, h, h, tracking_dominance(0.1, 0.2, 1.0));
  EXPECT_NEAR(dc.w_hat, 1.0, 1e-9);
  EXPECT_TRUE(dc.sign_test_ok);
  EXPECT_TRUE(dc.containment_ok);
  EXPECT_GE(dc.n_seeds, 100u);
  EXPECT_TRUE(dc.valid) << dc.reason;
}

TEST(Dominance, AckleyReferenceSetting) {
  const auto p = builtin_ackley_constrained(0.01);
  const auto tr = ackley_trajectories();
  DominanceOptions o;
  o.alpha = 0.2;
  o.t2 = M_PI / 8;
  o.D = Region::box(v2(-0.1, -0.1), v2(2.0, 2.0));
  o.v = 0.03;
  o.r2 = 0.5;
  for (auto mode : {DominanceMode::uniform, DominanceMode::averaged}) {
    o.mode = mode;
    const auto dc = check_dominance(p, tr[0], tr[1], o);
    EXPECT_GT(dc.w_hat, 0.5) << to_string(mode);
    EXPECT_TRUE(dc.invariance_ok) << to_string(mode);
    EXPECT_TRUE(dc.valid) << dc.reason;
    EXPECT_GT(dc.n_boundary_checks, 0u);
  }
}

TEST(Dominance, TinyBallAroundEquilibrium) {
  const auto p = builtin_ackley_constrained(0.01);
  const auto h = ackley_trajectories()[1];
  DominanceOptions o;
  o.alpha = 0.2;
  o.t2 = 0.2;
  o.D = Region::ball(v2(0, 0), 0.05);
  o.v = 0.01;
  o.r2 = 0.5;
  o.n_samples = 500;
  o.n_time_nodes = 9;
  const auto dc = check_dominance(p, h, h, o);
  EXPECT_GT(dc.w_hat, 0.0);
  EXPECT_TRUE(dc.valid) << dc.reason;
}

TEST(Dominance, QuarticSlowFlowInvalid) {
  const auto p = builtin_quartic(5.0);
  const auto tr = quartic_trajectories(5.0);
  DominanceOptions o;
  o.alpha = 0.1;
  o.t1 = -0.2;
  o.t2 = 0.2;
  o.D = box1(-3.5, 0.5);
  o.v = 0.1;
  o.r2 = 0.5;
  o.n_samples = 600;
  o.n_time_nodes = 9;
  const auto dc = check_dominance(p, tr[0], tr[1], o);
  EXPECT_LE(dc.w_hat, 0.0);
  EXPECT_FALSE(dc.valid);
}

TEST(Dominance, Preconditions) {
  const auto p = builtin_tracking_quadratic(1.0);
  const auto h = tracking_quadratic_trajectory(1.0);
  auto o = tracking_dominance(0.1, 0.2, 1.0);
  o.D.reset();
  EXPECT_THROW(check_dominance(p, h, h, o), InvalidParameter);
  o = tracking_dominance(0.1, 0.2, 1.0);
  o.mode = DominanceMode::averaged;
  o.n_time_nodes = 20;
  EXPECT_THROW(check_dominance(p, h, h, o), InvalidParameter);
  // the v-neighborhood sticks out of D
  o = tracking_dominance(0.1, 0.2, 1.0);
  o.D = box1(-0.15, 0.15);
  o.n_seeds = 100;
  const auto dc = check_dominance(p, h, h, o);
  EXPECT_FALSE(dc.region_covers);
  EXPECT_FALSE(dc.valid);
}

// ---- jumps

TEST(Jump, UniformFormulaAndLimits) {
  const auto p = builtin_tracking_quadratic(1.0);
  const auto h = tracking_quadratic_trajectory(1.0);
  auto o = tracking_dominance(0.1, 0.9, 1.0);
  const auto dc = check_dominance(p, h, h, o);
  ASSERT_TRUE(dc.valid) << dc.reason;
  const auto jc = jump_certificate(dc, dc.e1_set, 0.2);
  const double d = jc.worst_e1_distance;
  EXPECT_NEAR(d, 1.0, 0.05);
  const double gap = 0.5 - dc.rho;
  const double expect = std::max(0.1 * dc.rho / (gap * 0.2 * dc.w_hat), 0.1 * std::log(d / gap) / (0.8 * dc.w_hat));
  EXPECT_NEAR(jc.required_interval, expect, 1e-12);
  EXPECT_TRUE(jc.valid);
  // theta -> 1 blows up the log term (d > r2 - rho here), theta -> 0 the first term
  EXPECT_FALSE(jump_certificate(dc, dc.e1_set, 1.0 - 1e-9).valid);
  EXPECT_FALSE(jump_certificate(dc, dc.e1_set, 1e-9).valid);
  EXPECT_THROW(jump_certificate(dc, dc.e1_set, 1.0), InvalidParameter);
  EXPECT_THROW(jump_certificate(dc, dc.e1_set, 0.0), InvalidParameter);
}

TEST(Jump, AlreadyOnTarget) {
  const auto p = moving_well([](double) { return v1(0.0); }, 1);
  const auto h = constant_traj("c", v1(0.0));
  DominanceOptions o;
  o.alpha = 0.1;
  o.t2 = 0.5;
  o.D = box1(-1, 1);
  o.v = 0.0;
  o.r2 = 0.5;
  o.n_samples = 200;
  o.n_seeds = 100;
  const auto dc = check_dominance(p, h, h, o);
  ASSERT_TRUE(dc.valid) << dc.reason;
  EXPECT_EQ(dc.rho, 0.0);
  const auto jc = jump_certificate(dc, {v1(0.0)});
  EXPECT_EQ(jc.required_interval, 0.0);
  EXPECT_TRUE(jc.valid);
}

TEST(Jump, RefusesInvalidDominance) {
  const auto p = builtin_tracking_quadratic(1.0);
  const auto h = tracking_quadratic_trajectory(1.0);
  auto o = tracking_dominance(0.1, 0.2, 1.0);
  o.D = box1(-0.15, 0.15);
  const auto dc = check_dominance(p, h, h, o);
  ASSERT_FALSE(dc.valid);
  EXPECT_THROW(jump_certificate(dc, dc.e1_set), Refusal);
  EXPECT_THROW(jump_certificate_averaged(p, h, dc, dc.e1_set), Refusal);
}

TEST(Jump, UniformFlowsLandInTargetBall) {
  const auto p = builtin_tracking_quadratic(1.0);
  const auto h = tracking_quadratic_trajectory(1.0);
  const auto dc = check_dominance(p, h, h, tracking_dominance(0.1, 0.9, 1.0));
  const auto jc = jump_certificate(dc, dc.e1_set);
  ASSERT_TRUE(jc.valid);
  const Vec eb2 = dc.branch.at(dc.t2);
  for (const Vec& e1 : dc.e1_set) {
    const auto rec = run(p, e1 + h.h(0.0), 1.0, 0.1);
    const Vec e2 = rec.samples.back().x - h.h(rec.samples.back().t);
    EXPECT_LE((e2 - eb2).norm(), jc.r2 - jc.rho);
  }
}

TEST(JumpAveraged, TimeInvariantAgreesWithUniform) {
  const auto p = moving_well([](double) { return v1(0.0); }, 1);
  const auto h2 = constant_traj("b", v1(0.0));
  const auto h1 = constant_traj("a", v1(2.0));
  for (double t2 : {1.0, 0.05}) {
    DominanceOptions o;
    o.alpha = 0.1;
    o.t2 = t2;
    o.D = box1(-3, 3);
    o.v = 0.0;
    o.r2 = 0.5;
    o.n_samples = 300;
    o.n_seeds = 100;
    o.mode = DominanceMode::uniform;
    const auto du = check_dominance(p, h1, h2, o);
    o.mode = DominanceMode::averaged;
    const auto da = check_dominance(p, h1, h2, o);
    ASSERT_TRUE(du.valid && da.valid);
    const auto ju = jump_certificate(du, du.e1_set);
    const auto ja = jump_certificate_averaged(p, h2, da, da.e1_set);
    EXPECT_EQ(ju.valid, ja.valid) << "t2=" << t2;
    EXPECT_NEAR(ja.beta2, 1.0, 1e-12);
    EXPECT_NEAR(ja.lhs, 2.0 * std::exp(-t2 / 0.1), 1e-12);
    for (double d : ja.delta2) EXPECT_NEAR(d, 0.0, 1e-12);
  }
}

TEST(JumpAveraged, TrackingQuadraticPerturbation) {
  const auto p = builtin_tracking_quadratic(1.0);
  const auto h = tracking_quadratic_trajectory(1.0);
  auto o = tracking_dominance(0.1, 0.2, 0.6);
  o.mode = DominanceMode::averaged;
  const auto dc = check_dominance(p, h, h, o);
  ASSERT_TRUE(dc.valid) << dc.reason;
  const auto jc = jump_certificate_averaged(p, h, dc, dc.e1_set, {500, 3});
  const double avg = std::sin(0.6) / 0.6;
  for (std::size_t k = 0; k < jc.nodes.size(); ++k) {
    EXPECT_NEAR(jc.delta1[k], 0.0, 1e-9);
    EXPECT_NEAR(jc.delta2[k], std::abs(std::cos(jc.nodes[k]) - avg), 2e-5);
  }
  // int_0^T exp(-b (T - s)) |cos s - avg| ds by fine quadrature
  double ref = 0.0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    const double s = (i + 0.5) * 0.6 / N;
    ref += std::exp(-jc.beta1 * (0.6 - s)) * std::abs(std::cos(s) - avg) * 0.6 / N;
  }
  // the step envelope is an upper bound within one cell's variation
  EXPECT_GE(jc.delta2_integral, ref - 1e-9);
  EXPECT_NEAR(jc.delta2_integral, ref, 5e-4);
  EXPECT_TRUE(jc.valid);
}

TEST(JumpAveraged, GapTooLarge) {
  // curvature c(t) = 0.05 + 10 sin^20 t: mean |c - mean c| exceeds mean c, so the
  // slope fit gives eta1 > w / alpha
  auto c = [](double t) { return 0.05 + 10.0 * std::pow(std::sin(t), 20); };
  ProblemDefinition p;
  p.name = "breathing";
  p.n = 1;
  p.f = [c](const Vec& x, double t) { return 0.5 * c(t) * x[0] * x[0]; };
  p.grad_f = [c](const Vec& x, double t) { return Vec(c(t) * x); };
  const auto h = constant_traj("z", v1(0.0));
  DominanceOptions o;
  o.alpha = 0.1;
  o.t1 = 0.0;
  o.t2 = M_PI;
  o.D = box1(-1, 1);
  o.v = 0.1;
  o.r2 = 0.5;
  o.n_samples = 300;
  o.n_seeds = 100;
  o.mode = DominanceMode::averaged;
  o.n_time_nodes = 129;
  const auto dc = check_dominance(p, h, h, o);
  ASSERT_TRUE(dc.valid) << dc.reason;
  const auto jc = jump_certificate_averaged(p, h, dc, dc.e1_set, {500, 5, DeltaFit::slope});
  EXPECT_LE(jc.beta1, 0.0);
  EXPECT_FALSE(jc.valid);
  EXPECT_EQ(jc.reason, "averaging gap too large for this alpha");
  // the flat bound keeps beta1 = w / alpha
  const auto flat = jump_certificate_averaged(p, h, dc, dc.e1_set, {500, 5, DeltaFit::flat});
  EXPECT_NEAR(flat.beta1, dc.w_hat / 0.1, 1e-12);
}

// ---- tracking and escape

TEST(Tracking, ConstantTargetTracksAnyAlpha) {
  const auto p = moving_well([](double) { return v2(1.0, -1.0); }, 2);
  const auto h = constant_traj("c", v2(1.0, -1.0));
  const auto conv = estimate_one_point_convexity(p, h, 0.5, linspace(0, 1, 3), 50, 1);
  const auto tc = tracking_certificate(p, h, 100.0, conv, linspace(0, 1, 5));
  EXPECT_TRUE(std::isinf(tc.alpha_max));
  EXPECT_TRUE(tc.valid);
}

TEST(Tracking, TrackingQuadraticBoundHolds) {
  const auto p = builtin_tracking_quadratic(1.0);
  const auto h = tracking_quadratic_trajectory(1.0);
  const auto grid = linspace(0, 4 * M_PI, 401);
  const auto conv = estimate_one_point_convexity(p, h, 0.5, grid, 20, 1);
  for (double a : {0.05, 0.1, 0.2}) {
    const auto tc = tracking_certificate(p, h, a, conv, grid);
    ASSERT_TRUE(tc.valid);
    EXPECT_NEAR(tc.alpha_max, 0.5, 1e-12);
    EXPECT_NEAR(tc.ultimate_bound, a, 1e-12);
    EXPECT_EQ(tc.fit, "unconstrained");
    for (double e1 : {0.0, 0.3}) {
      const auto rec = run(p, v1(e1), 4 * M_PI, a);
      for (const auto& s : rec.samples) {
        const double err = std::abs(s.x[0] - std::sin(s.t));
        ASSERT_LE(err, tc.predicted_error(s.t, e1)) << "alpha=" << a << " t=" << s.t;
      }
    }
  }
}

TEST(Tracking, PredictedErrorBeyondGrid) {
  const auto p = builtin_tracking_quadratic(1.0);
  const auto h = tracking_quadratic_trajectory(1.0);
  const auto conv = estimate_one_point_convexity(p, h, 0.5, {0.0}, 10, 1);
  const auto tc = tracking_certificate(p, h, 0.1, conv, linspace(0, 1, 11));
  EXPECT_NEAR(tc.predicted_error(1e3, 0.0), 0.1 * tc.sup_delta2_gamma, 1e-9);
  EXPECT_THROW(tc.predicted_error(-1.0, 0.0), InvalidParameter);
}

TEST(Tracking, AckleyAlphaMax) {
  const auto p = builtin_ackley_constrained(0.01);
  const auto h = ackley_trajectories()[1];
  const auto grid = linspace(0, 2 * M_PI, 33);
  const auto conv = estimate_one_point_convexity(p, h, 0.5, grid, 200, 1);
  const auto tc = tracking_certificate(p, h, 0.2, conv, grid, {500, 2});
  EXPECT_GE(tc.alpha_max, 0.2);
  EXPECT_LE(tc.alpha_max, 0.5);
  EXPECT_NEAR(tc.gamma_sup, std::hypot(24.0, 0.0), 1e-9);
  EXPECT_TRUE(tc.valid);
}

TEST(Tracking, RefusesInvalidConvexity) {
  const auto p = builtin_tracking_quadratic(1.0);
  const auto h = tracking_quadratic_trajectory(1.0);
  ConvexityCertificate bad;
  bad.c_hat = -1.0;
  EXPECT_THROW(tracking_certificate(p, h, 0.1, bad, linspace(0, 1, 3)), Refusal);
}

TEST(Escape, ConjunctionAndRefusals) {
  const auto p = builtin_tracking_quadratic(1.0);
  const auto h = tracking_quadratic_trajectory(1.0);
  const auto dc = check_dominance(p, h, h, tracking_dominance(0.1, 0.9, 1.0));
  const auto jc = jump_certificate(dc, dc.e1_set);
  const auto grid = linspace(0, 2 * M_PI, 65);
  const auto conv = estimate_one_point_convexity(p, h, 0.5, grid, 20, 1);
  const auto ok = escape_certificate(jc, tracking_certificate(p, h, 0.1, conv, grid));
  EXPECT_TRUE(ok.valid) << ok.reason;

  const auto conv3 = estimate_one_point_convexity(p, h, 0.3, grid, 20, 1);
  EXPECT_THROW(escape_certificate(jc, tracking_certificate(p, h, 0.1, conv3, grid)), Refusal);
  EXPECT_THROW(escape_certificate(jc, tracking_certificate(p, h, 0.2, conv, grid)), Refusal);

  // valid jump, tracking at a step size above alpha_max
  JumpCertificate big = jc;
  big.alpha = 0.6;
  const auto tc = tracking_certificate(p, h, 0.6, conv, grid);
  ASSERT_FALSE(tc.valid);
  EXPECT_FALSE(escape_certificate(big, tc).valid);
}

TEST(Escape, SequentialChain) {
  auto make = [](const char* from, const char* to, Vec start, Vec target, double t1, double t2) {
    const auto p = moving_well([target](double) { return target; }, 1);
    DominanceOptions o;
    o.alpha = 0.1;
    o.t1 = t1;
    o.t2 = t2;
    o.D = box1(-3, 3);
    o.r2 = 0.5;
    o.n_samples = 200;
    o.n_seeds = 100;
    const auto h1 = constant_traj(from, start), h2 = constant_traj(to, target);
    // D is given in offsets from the target
    const auto dc = check_dominance(p, h1, h2, o);
    return jump_certificate(dc, dc.e1_set);
  };
  const auto ab = make("a", "b", v1(2.0), v1(0.0), 0.0, 1.0);
  const auto bc = make("b", "c", v1(0.0), v1(-1.5), 1.0, 2.0);
  const auto rep = sequential_jump_report({ab, bc});
  EXPECT_TRUE(rep.valid) << rep.reason;
  EXPECT_EQ(rep.chain, (std::vector<std::string>{"a", "b", "c"}));
  const auto overlap = make("b", "c", v1(0.0), v1(-1.5), 0.5, 1.5);
  EXPECT_FALSE(sequential_jump_report({ab, overlap}).chain_ok);
  EXPECT_FALSE(sequential_jump_report({bc, ab}).chain_ok);
}

// ---- shallowness

TEST(Shallowness, ConstantTrajectoryNeverShallow) {
  const auto p = builtin_quartic(0.0);
  const auto tr = std::vector<MinTrajectory>{constant_traj("local-1", v1(-2.0)), constant_traj("global", v1(1.0))};
  ShallownessOptions o;
  o.n_grid = 3;
  const auto rep = shallowness_check(p, tr[0], tr, 0.1, 0.0, 1.0, o);
  EXPECT_EQ(rep.epsilon, 0.0);
  EXPECT_FALSE(rep.shallow);
  EXPECT_TRUE(rep.reliable);
  // the basin of -2 ends at the local maximum -1 on one side and is unbounded on the other
  EXPECT_NEAR(rep.ra_radius_min, 1.0, 5e-3);
  EXPECT_EQ(rep.ra_radius, o.max_radius);
}

TEST(Shallowness, DeepWellNotShallow) {
  const auto p = moving_well([](double t) { return v1(0.01 * std::sin(t)); }, 1);
  const auto h = MinTrajectory::analytic("well", [](double t) { return v1(0.01 * std::sin(t)); },
                                         [](double t) { return v1(0.01 * std::cos(t)); });
  ShallownessOptions o;
  o.n_grid = 5;
  o.max_radius = 2.0;
  const auto rep = shallowness_check(p, h, {h}, 0.1, 0.0, 1.0, o);
  EXPECT_NEAR(rep.epsilon, 0.01, 1e-12);
  EXPECT_GT(rep.E_alpha, rep.epsilon);
  EXPECT_FALSE(rep.shallow);
}

TEST(Shallowness, QuarticFastPassRuns) {
  const auto p = builtin_quartic(10.0);
  const auto tr = quartic_trajectories(10.0);
  ShallownessOptions o;
  o.n_grid = 5;
  const auto rep = shallowness_check(p, tr[0], tr, 0.1, M_PI / 2 - 0.3, 0.6, o);
  EXPECT_TRUE(rep.reliable);
  EXPECT_NEAR(rep.epsilon, 10.0 * std::sin(0.3), 1e-9);
  EXPECT_GT(rep.ra_radius, 0.0);
}

// ---- jump detection

TEST(DetectJumps, QuarticSingleJump) {
  const auto p = builtin_quartic(5.0);
  const auto tr = quartic_trajectories(5.0);
  const auto rec = run(p, v1(-2.0), 4 * M_PI, 0.3);
  const auto ev = detect_jumps(p, rec, tr);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].from, "local-1");
  EXPECT_EQ(ev[0].to, "global");
  EXPECT_GE(ev[0].t, 0.7 * M_PI);
  EXPECT_LE(ev[0].t, 1.0 * M_PI);
  auto rev = tr;
  std::reverse(rev.begin(), rev.end());
  const auto ev2 = detect_jumps(p, rec, rev);
  ASSERT_EQ(ev2.size(), 1u);
  EXPECT_EQ(ev2[0].t, ev[0].t);
}

TEST(DetectJumps, SlowFlowStays) {
  const auto p = builtin_quartic(5.0);
  const auto rec = run(p, v1(-2.0), 4 * M_PI, 0.1);
  EXPECT_TRUE(detect_jumps(p, rec, quartic_trajectories(5.0)).empty());
}

TEST(DetectJumps, ExactTrajectoryHasNoEvents) {
  const auto p = builtin_quartic(5.0);
  const auto tr = quartic_trajectories(5.0);
  TrajectoryRecord rec;
  for (double t : linspace(0, 4 * M_PI, 2000)) rec.samples.push_back({t, tr[1].h(t), 0.0, 0.0});
  EXPECT_TRUE(detect_jumps(p, rec, tr).empty());
  EXPECT_THROW(detect_jumps(p, rec, tr, {0.5, 0, {}}), InvalidParameter);
}

// ---- regions

TEST(Region, BoxAndBall) {
  const auto b = Region::box(v2(-1, 0), v2(1, 2));
  EXPECT_TRUE(b.contains(v2(0, 1)));
  EXPECT_FALSE(b.contains(v2(0, 2.1)));
  EXPECT_TRUE(b.contains_ball(v2(0, 1), 1.0));
  EXPECT_FALSE(b.contains_ball(v2(0, 1), 1.01));
  const auto s = Region::ball(v2(0, 0), 1.0);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) EXPECT_TRUE(s.contains(s.sample(rng)));
  EXPECT_THROW(Region::box(v2(0, 0), v2(1, 0)), InvalidParameter);
  EXPECT_THROW(Region::ball(v2(0, 0), 0.0), InvalidParameter);
}
