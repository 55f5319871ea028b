#pragma once

#include "tvopt/core.hpp"
#include "tvopt/problem.hpp"
#include "tvopt/trajectory.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <functional>
#include <optional>
#include <utility>
#include <vector>

namespace tvopt {

// Above this dimension the projector is applied matrix-free.
inline constexpr int kDenseProjectorMaxDim = 200;

// Projection geometry and multipliers at (x, t, alpha).
struct GeometryEval {
  Vec x;
  double t = 0.0;
  double alpha = 0.0;
  Vec grad_f;
  Vec gprime;
  Mat J;  // m x n
  Mat P;  // n x n; empty when applied matrix-free
  Mat Q;  // n x m
  Vec lambda;
  Vec lambda_bar;
  Vec grad_L;  // P grad_f
  double sigma_min = kInf;
  Eigen::LLT<Mat> gram;

  int n() const { return static_cast<int>(x.size()); }
  int m() const { return static_cast<int>(J.rows()); }
  bool dense() const { return P.size() > 0; }

  // P v
  Vec project(const Vec& v) const {
    if (m() == 0) return v;
    if (dense()) return P * v;
    return v - J.transpose() * gram.solve(J * v);
  }

  Mat projector() const {
    if (dense()) return P;
    const int nn = n();
    if (m() == 0) return Mat::Identity(nn, nn);
    return Mat::Identity(nn, nn) - Q * J;
  }
};

inline GeometryEval evaluate_geometry(const ProblemDefinition& p, const Vec& x, double t, double alpha) {
  if (x.size() != p.n) throw InvalidParameter("evaluate_geometry: x has wrong dimension");
  if (!x.allFinite()) throw EvaluationError("evaluate_geometry: non-finite point " + point_desc(x, t));
  GeometryEval ge;
  ge.x = x;
  ge.t = t;
  ge.alpha = alpha;
  ge.grad_f = eval_grad_f(p, x, t);
  const int n = p.n, m = p.m;
  if (m == 0) {
    ge.J = Mat(0, n);
    ge.gprime = Vec(0);
    ge.Q = Mat(n, 0);
    ge.lambda = Vec(0);
    ge.lambda_bar = Vec(0);
    ge.grad_L = ge.grad_f;
    if (n <= kDenseProjectorMaxDim) ge.P = Mat::Identity(n, n);
    return ge;
  }
  ge.J = eval_jac_g(p, x, t);
  ge.gprime = eval_gprime(p, x, t);
  const Mat G = ge.J * ge.J.transpose();
  double smin, smax;
  if (m == 1) {
    smin = smax = G(0, 0);
  } else {
    Eigen::SelfAdjointEigenSolver<Mat> es(G, Eigen::EigenvaluesOnly);
    smin = es.eigenvalues()[0];
    smax = es.eigenvalues()[m - 1];
  }
  ge.sigma_min = smin;
  if (!(smax > 0.0) || smin <= 1e-10 * smax)
    throw RankDeficiencyError("constraint Jacobian does not have full row rank at " + point_desc(x, t) +
                              " (smallest eigenvalue of J J^T " + std::to_string(smin) + ")");
  ge.gram.compute(G);
  if (ge.gram.info() != Eigen::Success)
    throw RankDeficiencyError("constraint Jacobian does not have full row rank at " + point_desc(x, t));
  ge.Q = ge.J.transpose() * ge.gram.solve(Mat::Identity(m, m));
  if (n <= kDenseProjectorMaxDim) ge.P = Mat::Identity(n, n) - ge.Q * ge.J;
  ge.lambda = -ge.gram.solve(ge.J * ge.grad_f);
  ge.lambda_bar = ge.lambda;
  if (alpha != 0.0) ge.lambda_bar += alpha * ge.gram.solve(ge.gprime);
  ge.grad_L = ge.grad_f + ge.J.transpose() * ge.lambda;
  return ge;
}

// -(1/alpha)(P grad_f + alpha Q g')
inline Vec flow_field(const GeometryEval& ge) {
  if (ge.m() == 0) return -(1.0 / ge.alpha) * ge.grad_L;
  return -(1.0 / ge.alpha) * (ge.grad_L + ge.alpha * (ge.Q * ge.gprime));
}

inline void require_positive_alpha(double alpha, const char* where) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw PreconditionError(std::string(where) + ": alpha must be positive and finite");
}

inline Vec pode_rhs(const ProblemDefinition& p, const Vec& x, double t, double alpha) {
  require_positive_alpha(alpha, "pode_rhs");
  return flow_field(evaluate_geometry(p, x, t, alpha));
}

// U(e,t,alpha) = P grad_f + alpha Q g' + alpha hdot2, evaluated at x = e + h2(t).
inline Vec error_field_U(const ProblemDefinition& p, const Vec& e, double t, double alpha, const MinTrajectory& h2) {
  require_positive_alpha(alpha, "error_field_U");
  const GeometryEval ge = evaluate_geometry(p, e + h2.h(t), t, alpha);
  Vec u = ge.grad_L + alpha * h2.hdot(t);
  if (ge.m() > 0) u += alpha * (ge.Q * ge.gprime);
  return u;
}

// |<P grad_f, Q g'>|
inline double orthogonality_check(const ProblemDefinition& p, const Vec& x, double t) {
  if (p.m == 0) return 0.0;
  const GeometryEval ge = evaluate_geometry(p, x, t, 0.0);
  return std::abs(ge.grad_L.dot(ge.Q * ge.gprime));
}

struct LandscapePoint {
  Vec e;
  double value = 0.0;
};

// f(e+h2,t) + alpha hdot2' e over the grid, shifted so the grid minimum is 0.
// With constraints the Lagrangian with the inertial multiplier replaces f.
inline std::vector<LandscapePoint> reshaped_landscape(const ProblemDefinition& p, const MinTrajectory& h2, double t,
                                                      double alpha, const std::vector<Vec>& grid) {
  std::vector<LandscapePoint> out;
  out.reserve(grid.size());
  const Vec hv = h2.h(t);
  const Vec hd = h2.hdot(t);
  double lo = kInf;
  for (const Vec& e : grid) {
    const Vec x = e + hv;
    double v = eval_f(p, x, t) + alpha * hd.dot(e);
    if (p.m > 0) {
      const GeometryEval ge = evaluate_geometry(p, x, t, alpha);
      v += ge.lambda_bar.dot(eval_g(p, x, t));
    }
    lo = std::min(lo, v);
    out.push_back({e, v});
  }
  for (auto& pt : out) pt.value -= lo;
  return out;
}

// ---------------------------------------------------------------------------
// retraction onto the feasible set

struct RetractResult {
  Vec x;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Minimum-norm Newton steps x <- x - C^T (C C^T)^{-1} c(x) for a general
// constraint map c with Jacobian C.
inline RetractResult min_norm_newton(const std::function<Vec(const Vec&)>& c, const std::function<Mat(const Vec&)>& C,
                                     Vec x, double tol, int max_iters) {
  RetractResult r;
  Vec cv = c(x);
  r.residual = cv.size() ? cv.norm() : 0.0;
  while (r.residual > tol && r.iterations < max_iters) {
    const Mat Cm = C(x);
    const Mat G = Cm * Cm.transpose();
    Eigen::LDLT<Mat> ldlt(G);
    if (ldlt.info() != Eigen::Success) break;
    const Vec step = Cm.transpose() * ldlt.solve(cv);
    if (!step.allFinite()) break;
    x -= step;
    ++r.iterations;
    cv = c(x);
    r.residual = cv.norm();
    if (!std::isfinite(r.residual)) break;
  }
  r.x = std::move(x);
  r.converged = std::isfinite(r.residual) && r.residual <= tol;
  return r;
}

inline RetractResult newton_retract(const ProblemDefinition& p, const Vec& x, double t, double tol, int max_iters = 10) {
  if (p.m == 0) return {x, 0.0, 0, true};
  try {
    return min_norm_newton([&](const Vec& y) { return eval_g(p, y, t); }, [&](const Vec& y) { return eval_jac_g(p, y, t); },
                           x, tol, max_iters);
  } catch (const EvaluationError&) {
    return {x, kInf, 0, false};
  }
}

inline double feasibility(const ProblemDefinition& p, const Vec& x, double t) {
  return p.m == 0 ? 0.0 : eval_g(p, x, t).norm();
}

// Orthonormal basis of the tangent space, from the eigenvectors of P with
// eigenvalue one.
inline Mat tangent_basis(const ProblemDefinition& p, const Vec& x, double t) {
  if (p.m == 0) return Mat::Identity(p.n, p.n);
  const GeometryEval ge = evaluate_geometry(p, x, t, 0.0);
  Eigen::SelfAdjointEigenSolver<Mat> es(ge.projector());
  const int k = p.n - p.m;
  return es.eigenvectors().rightCols(k);
}

// Hessian of the Lagrangian f + lambda' g in x.
inline Mat lagrangian_hessian(const ProblemDefinition& p, const Vec& x, double t, const Vec& lambda) {
  Mat H = eval_hess_f(p, x, t);
  if (p.m > 0) {
    const auto hs = eval_hess_g(p, x, t);
    for (int k = 0; k < p.m; ++k) H += lambda[k] * hs[static_cast<std::size_t>(k)];
  }
  return H;
}

// ---------------------------------------------------------------------------
// runtime checks of the standing assumptions at sample points

struct AssumptionReport {
  int n_points = 0;
  double min_sigma = kInf;       // smallest eigenvalue of J J^T seen
  double min_objective = kInf;   // smallest f seen
  bool lower_bound_ok = true;    // f >= declared lower bound at every point
  bool full_rank_ok = true;
  std::vector<std::string> notes;
};

inline AssumptionReport check_assumptions(const ProblemDefinition& p, const std::vector<std::pair<Vec, double>>& points,
                                          double sigma_floor = 0.0) {
  AssumptionReport rep;
  for (const auto& [x, t] : points) {
    ++rep.n_points;
    const double fv = eval_f(p, x, t);
    rep.min_objective = std::min(rep.min_objective, fv);
    if (p.lower_bound && fv < *p.lower_bound - 1e-12 * (1.0 + std::abs(*p.lower_bound))) {
      rep.lower_bound_ok = false;
      rep.notes.push_back("objective below declared lower bound at " + point_desc(x, t));
    }
    if (p.m > 0) {
      try {
        const GeometryEval ge = evaluate_geometry(p, x, t, 0.0);
        rep.min_sigma = std::min(rep.min_sigma, ge.sigma_min);
        if (ge.sigma_min <= sigma_floor) {
          rep.full_rank_ok = false;
          rep.notes.push_back("J J^T below conditioning floor at " + point_desc(x, t));
        }
      } catch (const RankDeficiencyError& e) {
        rep.full_rank_ok = false;
        rep.min_sigma = 0.0;
        rep.notes.push_back(e.what());
      }
    }
  }
  return rep;
}

}  // namespace tvopt
