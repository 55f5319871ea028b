#pragma once

#include "tvopt/core.hpp"
#include "tvopt/geometry.hpp"
#include "tvopt/problem.hpp"
#include "tvopt/trajectory.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tvopt {

enum class Integrator { rk4, euler };
enum class Retraction { none, newton };

inline const char* to_string(Integrator i) { return i == Integrator::rk4 ? "rk4" : "euler"; }
inline const char* to_string(Retraction r) { return r == Retraction::newton ? "newton" : "none"; }

struct FlowConfig {
  double alpha = 0.1;
  // piecewise-constant (t_start, alpha); overrides alpha when non-empty
  std::vector<std::pair<double, double>> alpha_schedule;
  double dt = 1e-3;
  Integrator integrator = Integrator::rk4;
  double feas_tol = 1e-8;
  Retraction retraction = Retraction::none;
  double max_time = 0.0;
  std::optional<double> containment_radius;
  std::optional<MinTrajectory> containment_reference;
  int record_stride = 1;

  double alpha_at(double t) const {
    if (alpha_schedule.empty()) return alpha;
    double a = alpha_schedule.front().second;
    for (const auto& [ts, av] : alpha_schedule) {
      if (ts <= t + 1e-12 * (1.0 + std::abs(t))) a = av;
      else break;
    }
    return a;
  }

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidParameter("flow: dt must be positive");
    if (!(feas_tol > 0.0)) throw InvalidParameter("flow: feas_tol must be positive");
    if (record_stride < 1) throw InvalidParameter("flow: record_stride must be at least 1");
    if (alpha_schedule.empty()) {
      if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidParameter("flow: alpha must be positive");
    } else {
      for (std::size_t i = 0; i < alpha_schedule.size(); ++i) {
        if (!(alpha_schedule[i].second > 0.0)) throw InvalidParameter("flow: alpha_schedule values must be positive");
        if (i && !(alpha_schedule[i].first > alpha_schedule[i - 1].first))
          throw InvalidParameter("flow: alpha_schedule times must be increasing");
      }
    }
    if (containment_radius) {
      if (!(*containment_radius > 0.0)) throw InvalidParameter("flow: containment_radius must be positive");
      if (!containment_reference) throw InvalidParameter("flow: containment_radius needs a reference trajectory");
    }
  }
};

enum class EventKind { retraction, containment_violation, rank_error, retraction_failure, solver_failure, evaluation_error };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::retraction: return "retraction";
    case EventKind::containment_violation: return "containment-violation";
    case EventKind::rank_error: return "rank-error";
    case EventKind::retraction_failure: return "retraction-failure";
    case EventKind::solver_failure: return "solver-failure";
    case EventKind::evaluation_error: return "evaluation-error";
  }
  return "unknown";
}

struct FlowEvent {
  double t = 0.0;
  EventKind kind = EventKind::retraction;
  std::string detail;
};

struct Sample {
  double t = 0.0;
  Vec x;
  double feas_residual = 0.0;
  double objective = 0.0;
};

struct TrajectoryRecord {
  std::vector<Sample> samples;
  std::vector<FlowEvent> events;
  bool completed = true;
  std::string abort_reason;

  double max_feas() const {
    double m = 0.0;
    for (const auto& s : samples) m = std::max(m, s.feas_residual);
    return m;
  }

  std::size_t count(EventKind k) const {
    return static_cast<std::size_t>(
        std::count_if(events.begin(), events.end(), [k](const FlowEvent& e) { return e.kind == k; }));
  }
};

namespace detail {

inline std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

inline Sample make_sample(const ProblemDefinition& p, double t, const Vec& x) {
  return {t, x, feasibility(p, x, t), eval_f(p, x, t)};
}

inline Vec rk4_step(const std::function<Vec(const Vec&, double)>& F, const Vec& x, double t, double h) {
  const Vec k1 = F(x, t);
  const Vec k2 = F(x + 0.5 * h * k1, t + 0.5 * h);
  const Vec k3 = F(x + 0.5 * h * k2, t + 0.5 * h);
  const Vec k4 = F(x + h * k3, t + h);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

// Fixed-step integration of the projected gradient flow with inertia.
inline TrajectoryRecord integrate_pode(const ProblemDefinition& p, const Vec& x0, double t0, double t1,
                                       const FlowConfig& cfg) {
  cfg.validate();
  if (x0.size() != p.n) throw PreconditionError("integrate_pode: x0 has wrong dimension");
  if (!(t1 > t0)) throw PreconditionError("integrate_pode: t1 must exceed t0");
  const double g0 = feasibility(p, x0, t0);
  if (!(g0 <= cfg.feas_tol))
    throw PreconditionError("integrate_pode: initial point is infeasible, |g(x0,t0)| = " + detail::num(g0));

  const long N = std::max<long>(1, static_cast<long>(std::ceil((t1 - t0) / cfg.dt - 1e-9)));
  const double h = (t1 - t0) / static_cast<double>(N);
  auto F = [&](const Vec& x, double t) {
    return flow_field(evaluate_geometry(p, x, t, cfg.alpha_at(t)));
  };

  TrajectoryRecord rec;
  rec.samples.reserve(static_cast<std::size_t>(N / cfg.record_stride + 2));
  rec.samples.push_back(detail::make_sample(p, t0, x0));

  bool outside = false;
  auto monitor = [&](double t, const Vec& x) {
    if (!cfg.containment_radius) return;
    const double d = (x - cfg.containment_reference->h(t)).norm();
    const bool out = d > *cfg.containment_radius;
    if (out && !outside)
      rec.events.push_back({t, EventKind::containment_violation,
                            "distance " + detail::num(d) + " to '" + cfg.containment_reference->label() +
                                "' exceeds " + detail::num(*cfg.containment_radius)});
    outside = out;
  };
  monitor(t0, x0);

  Vec x = x0;
  for (long k = 0; k < N; ++k) {
    const double t = t0 + h * static_cast<double>(k);
    const double tn = (k + 1 == N) ? t1 : t0 + h * static_cast<double>(k + 1);
    try {
      if (cfg.integrator == Integrator::rk4) x = detail::rk4_step(F, x, t, tn - t);
      else x = x + (tn - t) * F(x, t);
      if (!x.allFinite()) throw EvaluationError("state became non-finite after step at t=" + detail::num(t));
      if (cfg.retraction == Retraction::newton && p.m > 0) {
        const double r0 = feasibility(p, x, tn);
        if (r0 > cfg.feas_tol) {
          const RetractResult rr = newton_retract(p, x, tn, 0.1 * cfg.feas_tol, 10);
          if (!rr.converged) {
            rec.events.push_back({tn, EventKind::retraction_failure,
                                  "residual " + detail::num(r0) + " -> " + detail::num(rr.residual) + " after " +
                                      std::to_string(rr.iterations) + " iterations"});
            rec.completed = false;
            rec.abort_reason = "retraction did not converge";
            break;
          }
          x = rr.x;
          rec.events.push_back({tn, EventKind::retraction,
                                "residual " + detail::num(r0) + " -> " + detail::num(rr.residual) + " in " +
                                    std::to_string(rr.iterations) + " iterations"});
        }
      }
    } catch (const RankDeficiencyError& e) {
      rec.events.push_back({t, EventKind::rank_error, e.what()});
      rec.completed = false;
      rec.abort_reason = e.what();
      break;
    } catch (const EvaluationError& e) {
      rec.events.push_back({t, EventKind::evaluation_error, e.what()});
      rec.completed = false;
      rec.abort_reason = e.what();
      break;
    }
    monitor(tn, x);
    if ((k + 1) % cfg.record_stride == 0 || k + 1 == N) rec.samples.push_back(detail::make_sample(p, tn, x));
  }
  return rec;
}

// ---------------------------------------------------------------------------
// KKT refinement

struct RefineResult {
  Vec x;
  Vec lambda;
  double reduced_hessian_min_eig = 0.0;
  bool is_minimum = false;
  int iterations = 0;
  double residual = 0.0;
};

namespace detail {

inline Vec kkt_residual(const ProblemDefinition& p, const Vec& x, const Vec& lambda, double t, const Vec& extra_grad) {
  Vec F(p.n + p.m);
  Vec gr = eval_grad_f(p, x, t) + extra_grad;
  if (p.m > 0) {
    gr += eval_jac_g(p, x, t).transpose() * lambda;
    F.tail(p.m) = eval_g(p, x, t);
  }
  F.head(p.n) = gr;
  return F;
}

inline double reduced_min_eig(const ProblemDefinition& p, const Vec& x, double t, const Vec& lambda, double shift) {
  const Mat Z = tangent_basis(p, x, t);
  Mat H = lagrangian_hessian(p, x, t, lambda);
  if (shift != 0.0) H += shift * Mat::Identity(p.n, p.n);
  const Mat Hr = Z.transpose() * H * Z;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (Hr + Hr.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues()[0];
}

// Damped Newton on [grad f + kappa (x - anchor) + J' lambda; g] = 0.
// Returns false when no damped step decreases the residual.
inline bool kkt_newton(const ProblemDefinition& p, double t, Vec& x, Vec& lambda, double kappa, const Vec* anchor,
                       double tol, int max_iters, int max_halvings, int& iters, double& residual) {
  const int n = p.n, m = p.m;
  auto extra = [&](const Vec& y) -> Vec {
    if (!anchor) return Vec::Zero(n);
    return kappa * (y - *anchor);
  };
  Vec F = kkt_residual(p, x, lambda, t, extra(x));
  residual = F.lpNorm<Eigen::Infinity>();
  iters = 0;
  while (residual > tol) {
    if (iters >= max_iters) return false;
    Mat K = Mat::Zero(n + m, n + m);
    K.topLeftCorner(n, n) = lagrangian_hessian(p, x, t, lambda);
    if (anchor) K.topLeftCorner(n, n) += kappa * Mat::Identity(n, n);
    if (m > 0) {
      const Mat J = eval_jac_g(p, x, t);
      K.topRightCorner(n, m) = J.transpose();
      K.bottomLeftCorner(m, n) = J;
    }
    const Vec dz = K.colPivHouseholderQr().solve(-F);
    if (!dz.allFinite()) return false;
    double s = 1.0;
    bool accepted = false;
    const double f0 = F.norm();
    for (int hv = 0; hv <= max_halvings; ++hv) {
      const Vec xn = x + s * dz.head(n);
      const Vec ln = lambda + s * dz.tail(m);
      Vec Fn;
      try {
        Fn = kkt_residual(p, xn, ln, t, extra(xn));
      } catch (const EvaluationError&) {
        s *= 0.5;
        continue;
      }
      if (Fn.allFinite() && Fn.norm() < f0) {
        x = xn;
        lambda = ln;
        F = Fn;
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    ++iters;
    if (!accepted) return false;
    residual = F.lpNorm<Eigen::Infinity>();
  }
  return true;
}

}  // namespace detail

// Newton on the (n+m) KKT system at frozen t.
inline RefineResult local_minimum_refine(const ProblemDefinition& p, double t, const Vec& x_guess, double tol = 1e-10,
                                         int max_iters = 100) {
  RefineResult r;
  r.x = x_guess;
  r.lambda = p.m > 0 ? evaluate_geometry(p, x_guess, t, 0.0).lambda : Vec(0);
  int iters = 0;
  double res = 0.0;
  const bool ok = detail::kkt_newton(p, t, r.x, r.lambda, 0.0, nullptr, tol, max_iters, 30, iters, res);
  r.iterations = iters;
  r.residual = res;
  if (!ok)
    throw ConvergenceError("local_minimum_refine: Newton failed from " + point_desc(x_guess, t) +
                           " (residual " + detail::num(res) + ")");
  r.reduced_hessian_min_eig = detail::reduced_min_eig(p, r.x, t, r.lambda, 0.0);
  r.is_minimum = r.reduced_hessian_min_eig > 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// frozen-time classification

struct ClassifyOptions {
  double tol = 1e-8;
  int max_iters = 20000;
  double match_radius = 1e-3;
  double initial_step = 1e-2;
  double max_step = 10.0;
  double rel_tol = 1e-7;
  double abs_tol = 1e-9;
  double feas_precondition = 1e-6;
  double polish_threshold = 1e-4;
  double polish_radius = 1e-3;
};

struct ClassifyResult {
  std::string label;
  Vec x;
  bool converged = false;
  int iterations = 0;
  double distance = kInf;  // to the matched (or nearest) candidate
};

inline const std::string kDiverged = "diverged";

// Nearest candidate at time t within the matching radius.
inline std::pair<std::string, double> match_minimum(const Vec& x, double t, const std::vector<MinTrajectory>& minima,
                                                    double radius) {
  std::string best = kDiverged;
  double bd = kInf;
  for (const auto& h : minima) {
    if (!h.covers(t)) continue;
    const double d = (x - h.h(t)).norm();
    if (d < bd) {
      bd = d;
      best = h.label();
    }
  }
  if (bd > radius) return {kDiverged, bd};
  return {best, bd};
}

// Integrates dx/ds = -P grad_f at frozen t with step-doubling RK4 and
// returns the limit point and its label.
inline ClassifyResult frozen_flow(const ProblemDefinition& p, double t, const Vec& x0,
                                  const std::vector<MinTrajectory>& minima, const ClassifyOptions& opt = {}) {
  ClassifyResult res;
  Vec x = x0;
  if (p.m > 0) {
    const double g0 = feasibility(p, x, t);
    if (g0 > opt.feas_precondition)
      throw PreconditionError("frozen_flow_classify: start point is infeasible, |g| = " + detail::num(g0));
    x = newton_retract(p, x, t, 1e-13, 20).x;
  }
  auto F = [&](const Vec& y, double) { return Vec(-evaluate_geometry(p, y, t, 0.0).grad_L); };
  double h = opt.initial_step;
  bool converged = false;
  int it = 0, next_polish = 0;
  for (; it < opt.max_iters; ++it) {
    const Vec d = F(x, t);
    if (d.norm() <= opt.tol) {
      converged = true;
      break;
    }
    // near a stationary point stiff curvature stalls explicit steps; finish with KKT Newton
    if (d.norm() <= opt.polish_threshold && it >= next_polish) {
      next_polish = it + 50;
      try {
        const RefineResult r = local_minimum_refine(p, t, x, 0.1 * opt.tol);
        if (r.is_minimum && (r.x - x).norm() <= opt.polish_radius) {
          x = r.x;
          continue;
        }
      } catch (const ConvergenceError&) {
      }
    }
    Vec xn;
    for (int tries = 0; tries < 60; ++tries) {
      const Vec full = detail::rk4_step(F, x, 0.0, h);
      const Vec half = detail::rk4_step(F, detail::rk4_step(F, x, 0.0, 0.5 * h), 0.0, 0.5 * h);
      const double err = (full - half).norm() / 15.0;
      const double scale = opt.abs_tol + opt.rel_tol * std::max(x.norm(), 1.0);
      if (full.allFinite() && half.allFinite() && err <= scale) {
        xn = half;
        const double grow = err > 0.0 ? 0.9 * std::pow(scale / err, 0.2) : 2.0;
        h = std::min(opt.max_step, h * std::clamp(grow, 1.0, 2.0));
        break;
      }
      const double shrink = (err > 0.0 && std::isfinite(err)) ? 0.9 * std::pow(scale / err, 0.2) : 0.2;
      h *= std::clamp(shrink, 0.1, 0.5);
    }
    if (xn.size() == 0) break;
    if (p.m > 0) xn = newton_retract(p, xn, t, 1e-13, 20).x;
    if (!xn.allFinite() || xn.norm() > 1e8) break;
    x = std::move(xn);
  }
  res.x = x;
  res.converged = converged;
  res.iterations = it;
  if (!converged) {
    res.label = kDiverged;
    return res;
  }
  auto [label, dist] = match_minimum(x, t, minima, opt.match_radius);
  res.label = label;
  res.distance = dist;
  return res;
}

inline std::string frozen_flow_classify(const ProblemDefinition& p, double t, const Vec& x0,
                                        const std::vector<MinTrajectory>& minima, const ClassifyOptions& opt = {}) {
  return frozen_flow(p, t, x0, minima, opt).label;
}

// ---------------------------------------------------------------------------
// discrete solvers

struct ProximalOptions {
  double kkt_tol = 1e-8;
  int max_newton = 50;
  int max_halvings = 30;
  int fallback_steps = 500;
};

namespace detail {

// Projected gradient descent on f + kappa/2 |x - anchor|^2 over the
// feasible set at t, with Armijo backtracking.
inline Vec proximal_fallback(const ProblemDefinition& p, double t, Vec x, double kappa, const Vec& anchor, int steps,
                             double tol) {
  auto phi = [&](const Vec& y) { return eval_f(p, y, t) + 0.5 * kappa * (y - anchor).squaredNorm(); };
  x = newton_retract(p, x, t, 1e-12, 20).x;
  double s = 1.0 / (1.0 + kappa);
  for (int k = 0; k < steps; ++k) {
    const GeometryEval ge = evaluate_geometry(p, x, t, 0.0);
    const Vec d = ge.project(ge.grad_f + kappa * (x - anchor));
    const double dn2 = d.squaredNorm();
    if (std::sqrt(dn2) <= tol) break;
    const double f0 = phi(x);
    bool moved = false;
    for (int hv = 0; hv < 30; ++hv) {
      const RetractResult rr = newton_retract(p, x - s * d, t, 1e-12, 20);
      if (rr.converged && phi(rr.x) <= f0 - 1e-4 * s * dn2) {
        x = rr.x;
        moved = true;
        s *= 2.0;
        break;
      }
      s *= 0.5;
    }
    if (!moved) break;
  }
  return x;
}

}  // namespace detail

// Solves the proximally regularized problems on the time grid, warm-started
// from the previous solution.
inline TrajectoryRecord sequential_proximal_solve(const ProblemDefinition& p, const Vec& x0,
                                                  const std::vector<double>& time_grid, double alpha,
                                                  const ProximalOptions& opt = {}) {
  require_positive_alpha(alpha, "sequential_proximal_solve");
  if (time_grid.size() < 2) throw InvalidParameter("sequential_proximal_solve: need at least two grid times");
  TrajectoryRecord rec;
  Vec x = local_minimum_refine(p, time_grid[0], x0).x;
  rec.samples.push_back(detail::make_sample(p, time_grid[0], x));
  for (std::size_t i = 1; i < time_grid.size(); ++i) {
    const double tau = time_grid[i];
    const double dtau = tau - time_grid[i - 1];
    if (!(dtau > 0.0)) throw InvalidParameter("sequential_proximal_solve: grid must be increasing");
    const double kappa = alpha / dtau;
    const Vec anchor = x;
    Vec xi = x;
    Vec lam = Vec(0);
    if (p.m > 0) {
      const GeometryEval ge = evaluate_geometry(p, xi, tau, 0.0);
      lam = -ge.gram.solve(ge.J * ge.grad_f);
    }
    int iters = 0;
    double res = 0.0;
    bool ok = false;
    try {
      ok = detail::kkt_newton(p, tau, xi, lam, kappa, &anchor, opt.kkt_tol, opt.max_newton, opt.max_halvings, iters,
                              res);
    } catch (const Error&) {
      ok = false;
    }
    if (!ok) {
      try {
        xi = detail::proximal_fallback(p, tau, anchor, kappa, anchor, opt.fallback_steps, opt.kkt_tol);
        lam = p.m > 0 ? Vec(-evaluate_geometry(p, xi, tau, 0.0).gram.solve(
                            eval_jac_g(p, xi, tau) * (eval_grad_f(p, xi, tau) + kappa * (xi - anchor))))
                      : Vec(0);
        ok = detail::kkt_newton(p, tau, xi, lam, kappa, &anchor, opt.kkt_tol, opt.max_newton, opt.max_halvings,
                                iters, res);
      } catch (const Error&) {
        ok = false;
      }
      if (!ok)
        rec.events.push_back({tau, EventKind::solver_failure,
                              "KKT residual " + detail::num(res) + " above " + detail::num(opt.kkt_tol)});
    }
    if (!xi.allFinite()) {
      rec.events.push_back({tau, EventKind::evaluation_error, "non-finite iterate"});
      rec.completed = false;
      rec.abort_reason = "non-finite iterate";
      break;
    }
    x = xi;
    rec.samples.push_back(detail::make_sample(p, tau, x));
  }
  return rec;
}

// Explicit Euler discretization of the flow on the time grid.
inline TrajectoryRecord forward_euler_track(const ProblemDefinition& p, const Vec& x0,
                                            const std::vector<double>& time_grid, double alpha,
                                            Retraction retraction = Retraction::none, double feas_tol = 1e-8) {
  require_positive_alpha(alpha, "forward_euler_track");
  if (time_grid.size() < 2) throw InvalidParameter("forward_euler_track: need at least two grid times");
  const double g0 = feasibility(p, x0, time_grid[0]);
  if (!(g0 <= feas_tol)) throw PreconditionError("forward_euler_track: initial point is infeasible");
  TrajectoryRecord rec;
  Vec x = x0;
  rec.samples.push_back(detail::make_sample(p, time_grid[0], x));
  for (std::size_t i = 1; i < time_grid.size(); ++i) {
    const double t = time_grid[i - 1], tn = time_grid[i];
    try {
      x = x + (tn - t) * flow_field(evaluate_geometry(p, x, t, alpha));
      if (retraction == Retraction::newton && p.m > 0) {
        const double r0 = feasibility(p, x, tn);
        if (r0 > feas_tol) {
          const RetractResult rr = newton_retract(p, x, tn, 0.1 * feas_tol, 10);
          if (!rr.converged) {
            rec.events.push_back({tn, EventKind::retraction_failure, "residual " + detail::num(rr.residual)});
            rec.completed = false;
            rec.abort_reason = "retraction did not converge";
            break;
          }
          x = rr.x;
          rec.events.push_back({tn, EventKind::retraction,
                                "residual " + detail::num(r0) + " -> " + detail::num(rr.residual)});
        }
      }
    } catch (const RankDeficiencyError& e) {
      rec.events.push_back({t, EventKind::rank_error, e.what()});
      rec.completed = false;
      rec.abort_reason = e.what();
      break;
    }
    rec.samples.push_back(detail::make_sample(p, tn, x));
  }
  return rec;
}

// ---------------------------------------------------------------------------
// dense output of a record, cubic Hermite with the flow field as slopes

class RecordInterpolant {
 public:
  RecordInterpolant(const ProblemDefinition& p, const TrajectoryRecord& rec, const FlowConfig& cfg) : rec_(&rec) {
    slopes_.reserve(rec.samples.size());
    for (const auto& s : rec.samples)
      slopes_.push_back(flow_field(evaluate_geometry(p, s.x, s.t, cfg.alpha_at(s.t))));
  }

  Vec operator()(double t) const {
    const auto& S = rec_->samples;
    if (t <= S.front().t) return S.front().x;
    if (t >= S.back().t) return S.back().x;
    auto it = std::upper_bound(S.begin(), S.end(), t, [](double v, const Sample& s) { return v < s.t; });
    const std::size_t k = static_cast<std::size_t>(it - S.begin()) - 1;
    const double dt = S[k + 1].t - S[k].t;
    const double s = (t - S[k].t) / dt;
    if (s == 0.0) return S[k].x;
    const double h00 = 2 * s * s * s - 3 * s * s + 1, h10 = s * s * s - 2 * s * s + s;
    const double h01 = -2 * s * s * s + 3 * s * s, h11 = s * s * s - s * s;
    return h00 * S[k].x + h10 * dt * slopes_[k] + h01 * S[k + 1].x + h11 * dt * slopes_[k + 1];
  }

 private:
  const TrajectoryRecord* rec_;
  std::vector<Vec> slopes_;
};

struct ConvergenceRow {
  double dtau = 0.0;
  double prox_error = 0.0;
  double euler_error = 0.0;
  std::string prox_label;
  std::string euler_label;
  std::size_t prox_failures = 0;
};

struct ConvergenceTable {
  double reference_dt = 0.0;
  std::string reference_label;
  Vec x0;
  std::vector<ConvergenceRow> rows;

  // ratios err(k)/err(k+1) for successive rows sorted by decreasing dtau
  std::vector<double> ratios(bool prox) const {
    std::vector<double> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double a = prox ? rows[i - 1].prox_error : rows[i - 1].euler_error;
      const double b = prox ? rows[i].prox_error : rows[i].euler_error;
      out.push_back(a / b);
    }
    return out;
  }
};

// Runs the proximal solver and the Euler tracker for each step size and
// compares both with a fine RK4 reference run.
inline ConvergenceTable convergence_experiment(const ProblemDefinition& p, const Vec& x0, double alpha, double T,
                                               std::vector<double> dtau_list,
                                               const std::vector<MinTrajectory>& minima = {}) {
  require_positive_alpha(alpha, "convergence_experiment");
  if (dtau_list.empty()) throw InvalidParameter("convergence_experiment: empty step list");
  if (!(T > 0.0)) throw InvalidParameter("convergence_experiment: T must be positive");
  std::sort(dtau_list.begin(), dtau_list.end(), std::greater<>());
  ConvergenceTable tab;
  tab.x0 = local_minimum_refine(p, 0.0, x0).x;
  FlowConfig ref;
  ref.alpha = alpha;
  ref.dt = dtau_list.back() / 10.0;
  tab.reference_dt = ref.dt;
  if (p.m > 0) {
    ref.retraction = Retraction::newton;
    ref.feas_tol = 1e-10;
  }
  const TrajectoryRecord rr = integrate_pode(p, tab.x0, 0.0, T, ref);
  const RecordInterpolant xref(p, rr, ref);
  if (!minima.empty()) tab.reference_label = frozen_flow_classify(p, T, rr.samples.back().x, minima);
  for (double dtau : dtau_list) {
    if (!(dtau > 0.0)) throw InvalidParameter("convergence_experiment: step sizes must be positive");
    const int N = std::max(1, static_cast<int>(std::llround(T / dtau)));
    const std::vector<double> grid = linspace(0.0, T, N + 1);
    const TrajectoryRecord pr = sequential_proximal_solve(p, tab.x0, grid, alpha);
    const TrajectoryRecord er = forward_euler_track(p, tab.x0, grid, alpha);
    ConvergenceRow row;
    row.dtau = dtau;
    for (const auto& s : pr.samples) row.prox_error = std::max(row.prox_error, (s.x - xref(s.t)).norm());
    for (const auto& s : er.samples) row.euler_error = std::max(row.euler_error, (s.x - xref(s.t)).norm());
    row.prox_failures = pr.count(EventKind::solver_failure);
    if (!minima.empty()) {
      row.prox_label = frozen_flow_classify(p, pr.samples.back().t, pr.samples.back().x, minima);
      row.euler_label = frozen_flow_classify(p, er.samples.back().t, er.samples.back().x, minima);
    }
    tab.rows.push_back(row);
  }
  return tab;
}

struct StepError {
  double dt = 0.0;
  double error = 0.0;
};

// Max error of fixed-step RK4 runs against a run with a step 16 times
// smaller than the finest one, read through its Hermite interpolant.
inline std::vector<StepError> rk4_convergence(const ProblemDefinition& p, const Vec& x0, double alpha, double T,
                                              std::vector<double> dts) {
  if (dts.empty()) throw InvalidParameter("rk4_convergence: empty step list");
  std::sort(dts.begin(), dts.end(), std::greater<>());
  FlowConfig cfg;
  cfg.alpha = alpha;
  cfg.dt = dts.back() / 16.0;
  const TrajectoryRecord ref = integrate_pode(p, x0, 0.0, T, cfg);
  const RecordInterpolant xref(p, ref, cfg);
  std::vector<StepError> out;
  for (double dt : dts) {
    if (!(dt > 0.0)) throw InvalidParameter("rk4_convergence: step sizes must be positive");
    FlowConfig c = cfg;
    c.dt = dt;
    StepError e{dt, 0.0};
    for (const auto& s : integrate_pode(p, x0, 0.0, T, c).samples) e.error = std::max(e.error, (s.x - xref(s.t)).norm());
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// continuation of a minimum trajectory

struct TraceOptions {
  double jump_guard_factor = 10.0;
  double refine_tol = 1e-10;
};

struct TraceResult {
  MinTrajectory trajectory;
  bool truncated = false;
  std::string reason;
  double min_reduced_eig = kInf;
};

// Sensitivity dh/dt of a nondegenerate KKT point.
inline Vec kkt_velocity(const ProblemDefinition& p, const Vec& x, const Vec& lambda, double t) {
  const int n = p.n, m = p.m;
  Mat K = Mat::Zero(n + m, n + m);
  K.topLeftCorner(n, n) = lagrangian_hessian(p, x, t, lambda);
  Vec rhs(n + m);
  Vec top = eval_grad_f_t(p, x, t);
  if (m > 0) {
    const Mat J = eval_jac_g(p, x, t);
    K.topRightCorner(n, m) = J.transpose();
    K.bottomLeftCorner(m, n) = J;
    top += eval_jac_g_prime(p, x, t).transpose() * lambda;
    rhs.tail(m) = -eval_gprime(p, x, t);
  }
  rhs.head(n) = -top;
  const Vec z = K.colPivHouseholderQr().solve(rhs);
  return z.head(n);
}

inline TraceResult trace_minimum_trajectory(const ProblemDefinition& p, const std::vector<double>& t_grid,
                                            const Vec& x_seed, const std::string& label = "traced",
                                            const TraceOptions& opt = {}) {
  if (t_grid.empty()) throw InvalidParameter("trace_minimum_trajectory: empty grid");
  TraceResult res;
  RefineResult r = local_minimum_refine(p, t_grid[0], x_seed, opt.refine_tol);
  if (!r.is_minimum)
    throw PreconditionError("trace_minimum_trajectory: seed does not refine to a local minimum at t=" +
                            detail::num(t_grid[0]));
  std::vector<double> ts{t_grid[0]};
  std::vector<Vec> xs{r.x};
  std::vector<Vec> vs;
  res.min_reduced_eig = r.reduced_hessian_min_eig;
  double prev_speed = 0.0;
  for (std::size_t k = 1; k < t_grid.size(); ++k) {
    const double dt = t_grid[k] - t_grid[k - 1];
    const Vec v = kkt_velocity(p, r.x, r.lambda, t_grid[k - 1]);
    vs.push_back(v);
    const Vec guess = r.x + dt * v;
    RefineResult rn;
    try {
      rn = local_minimum_refine(p, t_grid[k], guess, opt.refine_tol);
    } catch (const ConvergenceError& e) {
      throw BranchLossError("trace_minimum_trajectory: '" + label + "' lost at t=" + detail::num(t_grid[k]) + ": " +
                            e.what());
    }
    const double speed = std::max(v.norm(), prev_speed);
    const double move = (rn.x - r.x).norm();
    const double guard = opt.jump_guard_factor * dt * speed + 1e-8 * (1.0 + r.x.norm());
    if (move > guard)
      throw BranchLossError("trace_minimum_trajectory: '" + label + "' moved " + detail::num(move) + " at t=" +
                            detail::num(t_grid[k]) + " (guard " + detail::num(guard) + ")");
    if (!rn.is_minimum) {
      res.truncated = true;
      res.reason = "second-order sufficiency lost at t=" + detail::num(t_grid[k]);
      break;
    }
    prev_speed = move / dt;
    res.min_reduced_eig = std::min(res.min_reduced_eig, rn.reduced_hessian_min_eig);
    ts.push_back(t_grid[k]);
    xs.push_back(rn.x);
    r = std::move(rn);
  }
  vs.push_back(kkt_velocity(p, r.x, r.lambda, ts.back()));
  vs.resize(xs.size());
  res.trajectory = MinTrajectory::traced(label, std::move(ts), std::move(xs), std::move(vs));
  return res;
}

}  // namespace tvopt
