#pragma once

#include "tvopt/flow.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace tvopt {

// Every certificate is built from samples and grids. Serializers attach this
// label to all of them.
inline constexpr const char* kEvidenceLabel = "evidence, not proof";

// ---------------------------------------------------------------------------
// regions in offset coordinates e = x - h2(t)

struct Region {
  enum class Kind { box, ball };
  Kind kind = Kind::box;
  Vec lo, hi;
  Vec center;
  double radius = 0.0;

  static Region box(Vec lo, Vec hi) {
    if (lo.size() == 0 || lo.size() != hi.size()) throw InvalidParameter("region: box bounds must have equal size");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (!(lo[i] < hi[i])) throw InvalidParameter("region: box needs lo < hi in every coordinate");
    Region r;
    r.kind = Kind::box;
    r.lo = std::move(lo);
    r.hi = std::move(hi);
    return r;
  }

  static Region ball(Vec c, double radius) {
    if (c.size() == 0 || !(radius > 0.0)) throw InvalidParameter("region: ball needs a center and a positive radius");
    Region r;
    r.kind = Kind::ball;
    r.center = std::move(c);
    r.radius = radius;
    return r;
  }

  Eigen::Index dim() const { return kind == Kind::box ? lo.size() : center.size(); }

  double diameter() const { return kind == Kind::box ? (hi - lo).norm() : 2.0 * radius; }

  bool contains(const Vec& e, double tol = 0.0) const {
    if (e.size() != dim()) return false;
    if (kind == Kind::ball) return (e - center).norm() <= radius + tol;
    for (Eigen::Index i = 0; i < e.size(); ++i)
      if (e[i] < lo[i] - tol || e[i] > hi[i] + tol) return false;
    return true;
  }

  bool contains_ball(const Vec& c, double r) const {
    if (kind == Kind::ball) return (c - center).norm() + r <= radius;
    for (Eigen::Index i = 0; i < c.size(); ++i)
      if (c[i] - r < lo[i] || c[i] + r > hi[i]) return false;
    return true;
  }

  Vec sample(Rng& rng) const {
    const Eigen::Index n = dim();
    if (kind == Kind::box) {
      Vec e(n);
      for (Eigen::Index i = 0; i < n; ++i) e[i] = rng.uniform(lo[i], hi[i]);
      return e;
    }
    const double s = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(n));
    return center + s * rng.unit_vec(n);
  }

  // Faces as scalar constraints phi(e) = 0 with outward normal grad phi.
  int n_faces() const { return kind == Kind::box ? static_cast<int>(2 * lo.size()) : 1; }

  double face_value(int f, const Vec& e) const {
    if (kind == Kind::ball) return 0.5 * ((e - center).squaredNorm() - radius * radius);
    const Eigen::Index i = f / 2;
    return f % 2 == 0 ? lo[i] - e[i] : e[i] - hi[i];
  }

  Vec face_normal(int f, const Vec& e) const {
    if (kind == Kind::ball) return e - center;
    Vec g = Vec::Zero(dim());
    g[f / 2] = f % 2 == 0 ? -1.0 : 1.0;
    return g;
  }

  Vec face_start(int f, Rng& rng) const {
    if (kind == Kind::ball) return center + radius * rng.unit_vec(dim());
    Vec e = sample(rng);
    const Eigen::Index i = f / 2;
    e[i] = f % 2 == 0 ? lo[i] : hi[i];
    return e;
  }

  std::string describe() const {
    if (kind == Kind::ball) return "ball(center=" + fmt_vec(center) + ", radius=" + detail::num(radius) + ")";
    return "box(lo=" + fmt_vec(lo) + ", hi=" + fmt_vec(hi) + ")";
  }
};

namespace detail {

// Normalized trapezoid weights: sum_k w_k y_k approximates the mean of y.
inline std::vector<double> trapezoid_weights(const std::vector<double>& t) {
  const std::size_t n = t.size();
  std::vector<double> w(n, 0.0);
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  const double T = t.back() - t.front();
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double h = 0.5 * (t[k + 1] - t[k]) / T;
    w[k] += h;
    w[k + 1] += h;
  }
  return w;
}

// eta1 is the mean slope of the cumulative integral of d1, eta2 the smallest
// offset with int_{t0}^{t_k} d1 <= eta1 (t_k - t0) + eta2 at every node.
inline std::pair<double, double> eta_from_delta1(const std::vector<double>& t, const std::vector<double>& d1) {
  if (t.size() < 2) return {d1.empty() ? 0.0 : d1[0], 0.0};
  std::vector<double> I(t.size(), 0.0);
  for (std::size_t k = 1; k < t.size(); ++k) I[k] = I[k - 1] + 0.5 * (d1[k] + d1[k - 1]) * (t[k] - t[k - 1]);
  const double eta1 = I.back() / (t.back() - t.front());
  double eta2 = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) eta2 = std::max(eta2, I[k] - eta1 * (t[k] - t.front()));
  return {eta1, eta2};
}

// int_{t0}^{t} exp(-beta (t - tau)) s(tau) dtau with s replaced by its
// cellwise maximum over the node values, evaluated at every node.
inline std::vector<double> envelope_convolution(const std::vector<double>& t, const std::vector<double>& s,
                                                double beta) {
  std::vector<double> I(t.size(), 0.0);
  for (std::size_t k = 1; k < t.size(); ++k) {
    const double h = t[k] - t[k - 1];
    const double sk = std::max(s[k], s[k - 1]);
    const double decay = std::exp(-beta * h);
    I[k] = decay * I[k - 1] + sk * (beta > 0.0 ? -std::expm1(-beta * h) / beta : h);
  }
  return I;
}

struct LinearBound {
  double slope = 0.0;
  double offset = 0.0;
};

// Bound y <= slope d + offset at every sample. The slope comes from a
// non-negative least-squares fit, the offset is then raised to cover the
// worst sample.
inline LinearBound fit_slope_envelope(const std::vector<double>& d, const std::vector<double>& y) {
  LinearBound b;
  const double n = static_cast<double>(d.size());
  if (d.empty()) return b;
  double sd = 0, sy = 0, sdd = 0, sdy = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    sd += d[i];
    sy += y[i];
    sdd += d[i] * d[i];
    sdy += d[i] * y[i];
  }
  const double det = n * sdd - sd * sd;
  double a = 0.0;
  if (det > 1e-300) {
    a = (n * sdy - sd * sy) / det;
    const double c = (sy - a * sd) / n;
    if (c < 0.0) a = sdd > 0.0 ? sdy / sdd : 0.0;
  }
  b.slope = std::max(a, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) b.offset = std::max(b.offset, y[i] - b.slope * d[i]);
  b.offset = std::max(b.offset, 0.0);
  return b;
}

inline LinearBound fit_flat_envelope(const std::vector<double>& y) {
  LinearBound b;
  for (double v : y) b.offset = std::max(b.offset, v);
  return b;
}

struct BorderedResult {
  Vec e;
  Vec mu;
  bool converged = false;
  double residual = kInf;
  double condition = kInf;
};

// Newton on [u(e) + C(e)' mu; c(e)] = 0 with a central-difference Jacobian.
// With m = 0 this is plain Newton on u(e) = 0.
inline BorderedResult bordered_solve(const std::function<Vec(const Vec&)>& u, const std::function<Vec(const Vec&)>& c,
                                     const std::function<Mat(const Vec&)>& C, int n, int m, const Vec& e0,
                                     const Vec* mu0, double tol, int max_iters) {
  auto Phi = [&](const Vec& z) {
    const Vec e = z.head(n);
    Vec out(n + m);
    Vec ue = u(e);
    if (m > 0) {
      ue += C(e).transpose() * z.tail(m);
      out.tail(m) = c(e);
    }
    out.head(n) = ue;
    return out;
  };
  Vec z(n + m);
  z.head(n) = e0;
  if (m > 0) {
    if (mu0) {
      z.tail(m) = *mu0;
    } else {
      const Mat Cm = C(e0);
      z.tail(m) = -(Cm * Cm.transpose()).ldlt().solve(Cm * u(e0));
    }
  }
  BorderedResult r;
  Vec F = Phi(z);
  r.residual = F.lpNorm<Eigen::Infinity>();
  Mat K(n + m, n + m);
  auto jacobian = [&](const Vec& zz) {
    for (int j = 0; j < n + m; ++j) {
      const double h = 1e-7 * (1.0 + std::abs(zz[j]));
      Vec zp = zz, zm = zz;
      zp[j] += h;
      zm[j] -= h;
      K.col(j) = (Phi(zp) - Phi(zm)) / (2.0 * h);
    }
  };
  for (int it = 0; it < max_iters && r.residual > tol; ++it) {
    jacobian(z);
    const Vec dz = K.colPivHouseholderQr().solve(-F);
    if (!dz.allFinite()) break;
    double s = 1.0;
    bool moved = false;
    for (int hv = 0; hv < 30; ++hv) {
      const Vec zn = z + s * dz;
      Vec Fn;
      try {
        Fn = Phi(zn);
      } catch (const Error&) {
        s *= 0.5;
        continue;
      }
      if (Fn.allFinite() && Fn.norm() < F.norm()) {
        z = zn;
        F = Fn;
        moved = true;
        break;
      }
      s *= 0.5;
    }
    if (!moved) break;
    r.residual = F.lpNorm<Eigen::Infinity>();
  }
  jacobian(z);
  Eigen::JacobiSVD<Mat> svd(K);
  const auto& sv = svd.singularValues();
  r.condition = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1] : kInf;
  r.e = z.head(n);
  r.mu = z.tail(m);
  r.converged = r.residual <= tol;
  return r;
}

// Feasible offsets near h(t): tangent steps of length <= r, retracted, kept
// when the retracted offset still has norm <= r.
struct OffsetSample {
  std::vector<Vec> e;
  std::size_t attempts = 0;
  std::size_t failures = 0;
  std::size_t rejected = 0;
};

inline OffsetSample sample_tangent_ball(const ProblemDefinition& p, const Vec& center, double t, double r, int n,
                                        Rng& rng, double min_fraction = 0.0) {
  OffsetSample out;
  const Mat Z = tangent_basis(p, center, t);
  const Eigen::Index k = Z.cols();
  if (k == 0) return out;
  const std::size_t max_attempts = static_cast<std::size_t>(4 * n + 20);
  while (out.e.size() < static_cast<std::size_t>(n) && out.attempts < max_attempts) {
    ++out.attempts;
    const double s = r * std::pow(rng.uniform(), 1.0 / static_cast<double>(k));
    const Vec xi = rng.unit_vec(k);
    const RetractResult rr = newton_retract(p, center + s * (Z * xi), t, 1e-12, 20);
    if (!rr.converged) {
      ++out.failures;
      continue;
    }
    const Vec e = rr.x - center;
    const double en = e.norm();
    if (en > r || en < min_fraction * r) {
      ++out.rejected;
      continue;
    }
    out.e.push_back(e);
  }
  if (out.attempts >= 20 && 2 * out.failures > out.attempts)
    throw SamplingFailure("sampling: more than half of the retractions failed near " + point_desc(center, t));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// one-point strong convexity

struct ConvexityCertificate {
  std::string h_label;
  double r = 0.0;
  double t_begin = 0.0, t_end = 0.0;
  std::size_t n_time_nodes = 0;
  std::size_t n_samples = 0;
  std::size_t n_rejected = 0;
  std::size_t n_retraction_failures = 0;
  std::uint64_t seed = 0;
  double c_hat = kInf;
  Vec min_e;
  double min_t = 0.0;
  bool valid = false;
};

namespace detail {

inline void require_stationary_trajectory(const ProblemDefinition& p, const MinTrajectory& h,
                                          const std::vector<double>& t_grid, const char* where) {
  for (double t : t_grid) {
    const Vec x = h.h(t);
    const double feas = feasibility(p, x, t);
    if (feas > 1e-6)
      throw PreconditionError(std::string(where) + ": trajectory '" + h.label() + "' is infeasible at t=" + num(t));
    const GeometryEval ge = evaluate_geometry(p, x, t, 0.0);
    if (ge.grad_L.norm() > 1e-4 * (1.0 + ge.grad_f.norm()))
      throw PreconditionError(std::string(where) + ": trajectory '" + h.label() + "' is not stationary at t=" +
                              num(t) + " (|P grad f| = " + num(ge.grad_L.norm()) + ")");
  }
}

}  // namespace detail

// Estimates for several radii from one pooled sample set. The estimate for
// radius r is the minimum over every pooled sample with |e| <= r, so it can
// only grow as r shrinks. n_samples is per radius and time node.
inline std::vector<ConvexityCertificate> convexity_profile(const ProblemDefinition& p, const MinTrajectory& h,
                                                           const std::vector<double>& radii,
                                                           const std::vector<double>& t_grid, int n_samples,
                                                           std::uint64_t seed) {
  if (t_grid.empty()) throw InvalidParameter("estimate_one_point_convexity: empty time grid");
  if (n_samples < 1) throw InvalidParameter("estimate_one_point_convexity: n_samples must be positive");
  for (double r : radii)
    if (!(r > 0.0)) throw InvalidParameter("estimate_one_point_convexity: radius must be positive");
  detail::require_stationary_trajectory(p, h, t_grid, "estimate_one_point_convexity");
  struct Pt {
    double norm, ratio, t;
    Vec e;
  };
  std::vector<Pt> pool;
  std::vector<ConvexityCertificate> out(radii.size());
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    const double t = t_grid[k];
    const Vec hx = h.h(t);
    for (std::size_t j = 0; j < radii.size(); ++j) {
      const double r = radii[j];
      Rng rng(sub_seed(seed, k, j));
      std::vector<Vec> es;
      if (p.m == 0) {
        for (int i = 0; i < n_samples; ++i) {
          Vec e;
          do {
            e = r * std::pow(rng.uniform(), 1.0 / static_cast<double>(p.n)) * rng.unit_vec(p.n);
          } while (e.norm() < 1e-6 * r);
          es.push_back(e);
        }
      } else {
        auto s = detail::sample_tangent_ball(p, hx, t, r, n_samples, rng, 1e-6);
        out[j].n_rejected += s.rejected;
        out[j].n_retraction_failures += s.failures;
        es = std::move(s.e);
      }
      for (const Vec& e : es) {
        const GeometryEval ge = evaluate_geometry(p, hx + e, t, 0.0);
        pool.push_back({e.norm(), e.dot(ge.grad_L) / e.squaredNorm(), t, e});
      }
      out[j].n_samples += es.size();
    }
  }
  for (std::size_t j = 0; j < radii.size(); ++j) {
    ConvexityCertificate& c = out[j];
    c.h_label = h.label();
    c.r = radii[j];
    c.t_begin = t_grid.front();
    c.t_end = t_grid.back();
    c.n_time_nodes = t_grid.size();
    c.seed = seed;
    for (const Pt& q : pool) {
      if (q.norm > c.r) continue;
      if (q.ratio < c.c_hat) {
        c.c_hat = q.ratio;
        c.min_e = q.e;
        c.min_t = q.t;
      }
    }
    if (c.n_samples == 0) throw SamplingFailure("estimate_one_point_convexity: no admissible samples");
    c.valid = c.c_hat > 0.0;
  }
  return out;
}

inline ConvexityCertificate estimate_one_point_convexity(const ProblemDefinition& p, const MinTrajectory& h, double r,
                                                         const std::vector<double>& t_grid, int n_samples,
                                                         std::uint64_t seed) {
  return convexity_profile(p, h, {r}, t_grid, n_samples, seed).front();
}

// ---------------------------------------------------------------------------
// shallowness

struct ShallownessOptions {
  int n_grid = 21;
  double max_radius = 5.0;
  int bisection_steps = 12;
  std::uint64_t seed = 1;
  ClassifyOptions classify;
};

struct ShallownessReport {
  std::string label;
  double alpha = 0.0, t0 = 0.0, delta = 0.0;
  double epsilon = 0.0;
  double lip_hdot = 0.0;
  double ra_radius = 0.0;
  double ra_radius_min = kInf;
  double E_alpha = 0.0;
  std::size_t n_probes = 0;
  std::size_t n_diverged = 0;
  bool reliable = false;
  bool shallow = false;
  std::string reason;
};

inline ShallownessReport shallowness_check(const ProblemDefinition& p, const MinTrajectory& h1,
                                           const std::vector<MinTrajectory>& minima, double alpha, double t0,
                                           double delta, const ShallownessOptions& opt = {}) {
  require_positive_alpha(alpha, "shallowness_check");
  if (!(delta > 0.0)) throw InvalidParameter("shallowness_check: delta must be positive");
  if (opt.n_grid < 2) throw InvalidParameter("shallowness_check: n_grid must be at least 2");
  ShallownessReport rep;
  rep.label = h1.label();
  rep.alpha = alpha;
  rep.t0 = t0;
  rep.delta = delta;
  const std::vector<double> grid = linspace(t0, t0 + delta, opt.n_grid);
  std::vector<Vec> hd;
  for (double t : grid) {
    hd.push_back(h1.hdot(t));
    rep.epsilon = std::max(rep.epsilon, hd.back().norm());
  }
  for (std::size_t k = 1; k < grid.size(); ++k)
    rep.lip_hdot = std::max(rep.lip_hdot, (hd[k] - hd[k - 1]).norm() / (grid[k] - grid[k - 1]));

  auto field_norm = [&](const Vec& x, double t) {
    const GeometryEval ge = evaluate_geometry(p, x, t, alpha);
    return flow_field(ge).norm();
  };
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double t = grid[k];
    const Vec c = h1.h(t);
    const Mat Z = tangent_basis(p, c, t);
    Rng rng(sub_seed(opt.seed, k));
    std::vector<Vec> dirs;
    for (int i = 0; i < p.n; ++i) {
      const Vec u = Z * rng.unit_vec(Z.cols());
      dirs.push_back(u);
      dirs.push_back(-u);
    }
    rep.E_alpha = std::max(rep.E_alpha, field_norm(c, t));
    for (const Vec& u : dirs) {
      auto probe = [&](double s, Vec& x) {
        ++rep.n_probes;
        const RetractResult rr = newton_retract(p, c + s * u, t, 1e-12, 20);
        x = rr.x;
        if (!rr.converged) {
          ++rep.n_diverged;
          return false;
        }
        const std::string lab = frozen_flow_classify(p, t, x, minima, opt.classify);
        if (lab == kDiverged) ++rep.n_diverged;
        return lab == h1.label();
      };
      Vec x;
      double lo = 0.0, hi = opt.max_radius, reach = 0.0;
      if (probe(hi, x)) {
        lo = hi;
        reach = (x - c).norm();
        rep.E_alpha = std::max(rep.E_alpha, field_norm(x, t));
      } else {
        for (int b = 0; b < opt.bisection_steps; ++b) {
          const double mid = 0.5 * (lo + hi);
          if (probe(mid, x)) {
            lo = mid;
            reach = (x - c).norm();
            rep.E_alpha = std::max(rep.E_alpha, field_norm(x, t));
          } else {
            hi = mid;
          }
        }
      }
      rep.ra_radius = std::max(rep.ra_radius, reach);
      rep.ra_radius_min = std::min(rep.ra_radius_min, reach);
    }
  }
  rep.reliable = rep.n_diverged < rep.n_probes;
  const double margin = rep.epsilon - rep.E_alpha - rep.lip_hdot * delta;
  rep.shallow = margin > 0.0 && rep.ra_radius <= 0.5 * delta * margin;
  if (!rep.reliable) rep.reason = "every region-of-attraction probe diverged";
  else if (margin <= 0.0) rep.reason = "trajectory speed does not exceed E(alpha) + L delta";
  else if (!rep.shallow) rep.reason = "region of attraction too large for the interval";
  return rep;
}

// ---------------------------------------------------------------------------
// equilibrium branch of U

struct EquilibriumBranch {
  std::vector<double> t;
  std::vector<Vec> ebar;
  double rho = 0.0;
  double max_condition = 0.0;
  bool averaged = false;
  std::vector<std::pair<double, Vec>> extra_zeros;

  Vec at(double tq) const {
    if (ebar.size() == 1 || tq <= t.front()) return ebar.front();
    if (tq >= t.back()) return ebar.back();
    auto it = std::upper_bound(t.begin(), t.end(), tq);
    const std::size_t k = static_cast<std::size_t>(it - t.begin()) - 1;
    const double s = (tq - t[k]) / (t[k + 1] - t[k]);
    return (1.0 - s) * ebar[k] + s * ebar[k + 1];
  }
};

struct BranchOptions {
  double condition_limit = 1e8;
  int extra_zero_starts = 50;
  std::uint64_t seed = 7;
};

namespace detail {

struct OffsetMaps {
  std::function<Vec(const Vec&)> u, c;
  std::function<Mat(const Vec&)> C;
};

inline OffsetMaps offset_maps(const ProblemDefinition& p, const MinTrajectory& h2, double alpha, double t) {
  const Vec hx = h2.h(t);
  OffsetMaps m;
  m.u = [&p, &h2, alpha, t](const Vec& e) { return error_field_U(p, e, t, alpha, h2); };
  m.c = [&p, hx, t](const Vec& e) { return eval_g(p, Vec(e + hx), t); };
  m.C = [&p, hx, t](const Vec& e) { return eval_jac_g(p, Vec(e + hx), t); };
  return m;
}

// Trapezoid averages over the nodes of U, g and its Jacobian.
inline OffsetMaps averaged_maps(const ProblemDefinition& p, const MinTrajectory& h2, double alpha,
                                const std::vector<double>& nodes) {
  const auto w = trapezoid_weights(nodes);
  OffsetMaps m;
  m.u = [&p, &h2, alpha, nodes, w](const Vec& e) {
    Vec s = Vec::Zero(e.size());
    for (std::size_t k = 0; k < nodes.size(); ++k) s += w[k] * error_field_U(p, e, nodes[k], alpha, h2);
    return s;
  };
  m.c = [&p, &h2, nodes, w](const Vec& e) {
    Vec s = Vec::Zero(p.m);
    for (std::size_t k = 0; k < nodes.size(); ++k) s += w[k] * eval_g(p, Vec(e + h2.h(nodes[k])), nodes[k]);
    return s;
  };
  m.C = [&p, &h2, nodes, w](const Vec& e) {
    Mat s = Mat::Zero(p.m, p.n);
    for (std::size_t k = 0; k < nodes.size(); ++k) s += w[k] * eval_jac_g(p, Vec(e + h2.h(nodes[k])), nodes[k]);
    return s;
  };
  return m;
}

inline double bordered_tol(const OffsetMaps& m, int n) { return 1e-11 * (1.0 + m.u(Vec::Zero(n)).norm()); }

inline void probe_extra_zeros(const ProblemDefinition& p, const MinTrajectory& h2, const OffsetMaps& maps, double t,
                              const Vec& ebar, double r2, const BranchOptions& opt, std::uint64_t stream,
                              std::vector<std::pair<double, Vec>>& out) {
  Rng rng(sub_seed(opt.seed, stream));
  const Vec hx = h2.h(t);
  std::vector<Vec> starts;
  if (p.m == 0) {
    for (int i = 0; i < opt.extra_zero_starts; ++i)
      starts.push_back(r2 * std::pow(rng.uniform(), 1.0 / p.n) * rng.unit_vec(p.n));
  } else {
    starts = sample_tangent_ball(p, hx, t, r2, opt.extra_zero_starts, rng).e;
  }
  const double tol = bordered_tol(maps, p.n);
  for (const Vec& s : starts) {
    BorderedResult br;
    try {
      br = bordered_solve(maps.u, maps.c, maps.C, p.n, p.m, s, nullptr, tol, 40);
    } catch (const Error&) {
      continue;
    }
    if (!br.converged || br.e.norm() >= r2 || (br.e - ebar).norm() <= 1e-6) continue;
    bool seen = false;
    for (const auto& [tz, z] : out)
      if (tz == t && (z - br.e).norm() <= 1e-6) seen = true;
    if (!seen) out.emplace_back(t, br.e);
  }
}

}  // namespace detail

// Continuation of the zero of U from e = 0 across t_grid. With constraints
// the zero is sought on the feasible offsets, i.e. the tangential part of U
// vanishes: [U + J' mu; g] = 0.
inline EquilibriumBranch equilibrium_branch(const ProblemDefinition& p, const MinTrajectory& h2, double alpha,
                                            const std::vector<double>& t_grid, double r2,
                                            const BranchOptions& opt = {}) {
  require_positive_alpha(alpha, "equilibrium_branch");
  if (t_grid.empty()) throw InvalidParameter("equilibrium_branch: empty time grid");
  EquilibriumBranch br;
  Vec e = Vec::Zero(p.n);
  Vec mu;
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    const double t = t_grid[k];
    const auto maps = detail::offset_maps(p, h2, alpha, t);
    detail::BorderedResult r;
    try {
      r = detail::bordered_solve(maps.u, maps.c, maps.C, p.n, p.m, e, k ? &mu : nullptr, detail::bordered_tol(maps, p.n),
                                 50);
    } catch (const Error& ex) {
      throw NoBranchError("equilibrium_branch: evaluation failed at t=" + detail::num(t) + ": " + ex.what());
    }
    if (!r.converged)
      throw NoBranchError("equilibrium_branch: Newton failed at t=" + detail::num(t) + " (residual " +
                          detail::num(r.residual) + ")");
    if (r.condition > opt.condition_limit)
      throw NoBranchError("equilibrium_branch: U is numerically singular at t=" + detail::num(t) + " (condition " +
                          detail::num(r.condition) + ")");
    e = r.e;
    mu = r.mu;
    br.t.push_back(t);
    br.ebar.push_back(e);
    br.rho = std::max(br.rho, e.norm());
    br.max_condition = std::max(br.max_condition, r.condition);
    if (br.rho >= r2)
      throw NoBranchError("equilibrium_branch: |ebar| = " + detail::num(br.rho) + " reaches r2 at t=" + detail::num(t));
  }
  if (opt.extra_zero_starts > 0) {
    const std::size_t K = t_grid.size();
    std::vector<std::size_t> probe_nodes{0, K / 2, K - 1};
    probe_nodes.erase(std::unique(probe_nodes.begin(), probe_nodes.end()), probe_nodes.end());
    for (std::size_t k : probe_nodes) {
      const auto maps = detail::offset_maps(p, h2, alpha, t_grid[k]);
      detail::probe_extra_zeros(p, h2, maps, t_grid[k], br.ebar[k], r2, opt, k, br.extra_zeros);
    }
  }
  return br;
}

// Zero of the averaged field over the nodes (a single offset).
inline EquilibriumBranch equilibrium_average(const ProblemDefinition& p, const MinTrajectory& h2, double alpha,
                                             const std::vector<double>& nodes, double r2,
                                             const BranchOptions& opt = {}) {
  require_positive_alpha(alpha, "equilibrium_average");
  if (nodes.size() < 2) throw InvalidParameter("equilibrium_average: need at least two nodes");
  const auto maps = detail::averaged_maps(p, h2, alpha, nodes);
  detail::BorderedResult r;
  try {
    r = detail::bordered_solve(maps.u, maps.c, maps.C, p.n, p.m, Vec::Zero(p.n), nullptr,
                               detail::bordered_tol(maps, p.n), 50);
  } catch (const Error& ex) {
    throw NoBranchError(std::string("equilibrium_average: evaluation failed: ") + ex.what());
  }
  if (!r.converged)
    throw NoBranchError("equilibrium_average: Newton failed (residual " + detail::num(r.residual) + ")");
  if (r.condition > opt.condition_limit)
    throw NoBranchError("equilibrium_average: averaged U is numerically singular (condition " +
                        detail::num(r.condition) + ")");
  EquilibriumBranch br;
  br.averaged = true;
  br.t = {0.5 * (nodes.front() + nodes.back())};
  br.ebar = {r.e};
  br.rho = r.e.norm();
  br.max_condition = r.condition;
  if (br.rho >= r2) throw NoBranchError("equilibrium_average: |ebar| = " + detail::num(br.rho) + " reaches r2");
  if (opt.extra_zero_starts > 0)
    detail::probe_extra_zeros(p, h2, maps, nodes.front(), r.e, r2, opt, 0, br.extra_zeros);
  return br;
}

// ---------------------------------------------------------------------------
// dominance

enum class DominanceMode { uniform, averaged };

inline const char* to_string(DominanceMode m) { return m == DominanceMode::uniform ? "uniform" : "averaged"; }

struct DominanceOptions {
  double alpha = 0.2;
  double t1 = 0.0, t2 = 1.0;
  std::optional<Region> D;
  double v = 0.0;
  double r2 = 0.5;
  DominanceMode mode = DominanceMode::uniform;
  int n_samples = 2000;
  int n_time_nodes = 65;
  int n_seeds = 120;
  double containment_dt = 2.5e-4;
  int n_e1 = 200;
  int boundary_starts = 16;
  std::uint64_t seed = 1;
  BranchOptions branch;
};

struct DominanceCertificate {
  std::string h1_label, h2_label;
  DominanceMode mode = DominanceMode::uniform;
  double alpha = 0.0, t1 = 0.0, t2 = 0.0, v = 0.0, r2 = 0.0;
  Region D;
  std::vector<double> nodes;
  EquilibriumBranch branch;
  double rho = 0.0;
  double w_hat = kInf;
  Vec w_point;
  double w_t = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_boundary_checks = 0;
  std::size_t n_sign_violations = 0;
  double worst_outflow = -kInf;
  bool sign_test_ok = false;
  std::size_t n_seeds = 0;
  double containment_dt = 0.0;
  double containment_tol = 0.0;
  double worst_excursion = 0.0;
  bool containment_ok = false;
  bool invariance_ok = false;
  bool region_covers = false;
  std::vector<Vec> e1_set;
  std::uint64_t seed = 0;
  bool valid = false;
  std::string reason;
};

namespace detail {

// Offsets e in D with e + h2(t) feasible: uniform draws in D, retracted.
inline std::vector<Vec> sample_region(const ProblemDefinition& p, const MinTrajectory& h2, double t, const Region& D,
                                      int n, Rng& rng) {
  std::vector<Vec> out;
  const Vec hx = h2.h(t);
  std::size_t attempts = 0, failures = 0;
  const std::size_t max_attempts = static_cast<std::size_t>(50 * n + 100);
  while (out.size() < static_cast<std::size_t>(n) && attempts < max_attempts) {
    ++attempts;
    Vec e = D.sample(rng);
    if (p.m > 0) {
      const RetractResult rr = newton_retract(p, e + hx, t, 1e-12, 20);
      if (!rr.converged) {
        ++failures;
        continue;
      }
      e = rr.x - hx;
    }
    if (D.contains(e)) out.push_back(e);
  }
  if (attempts >= 20 && 2 * failures > attempts)
    throw SamplingFailure("dominance: more than half of the retractions into " + D.describe() + " failed at t=" +
                          num(t));
  if (out.size() < static_cast<std::size_t>(n))
    throw SamplingFailure("dominance: too few feasible offsets in " + D.describe() + " at t=" + num(t));
  return out;
}

struct BoundaryPoint {
  Vec e;
  Vec normal;
  int face = 0;
};

// Points of the boundary of D intersected with the feasible offsets at t.
inline std::vector<BoundaryPoint> boundary_points(const ProblemDefinition& p, const MinTrajectory& h2, double t,
                                                  const Region& D, int starts, Rng& rng) {
  std::vector<BoundaryPoint> out;
  const Vec hx = h2.h(t);
  const double tol = 1e-9 * (1.0 + D.diameter());
  for (int f = 0; f < D.n_faces(); ++f) {
    auto c = [&](const Vec& e) {
      Vec v(p.m + 1);
      if (p.m > 0) v.head(p.m) = eval_g(p, Vec(e + hx), t);
      v[p.m] = D.face_value(f, e);
      return v;
    };
    auto C = [&](const Vec& e) {
      Mat M(p.m + 1, p.n);
      if (p.m > 0) M.topRows(p.m) = eval_jac_g(p, Vec(e + hx), t);
      M.row(p.m) = D.face_normal(f, e).transpose();
      return M;
    };
    for (int s = 0; s < starts; ++s) {
      RetractResult rr;
      try {
        rr = min_norm_newton(c, C, D.face_start(f, rng), 1e-12, 30);
      } catch (const Error&) {
        continue;
      }
      if (!rr.converged || !D.contains(rr.x, tol)) continue;
      bool dup = false;
      for (const auto& b : out)
        if (b.face == f && (b.e - rr.x).norm() <= 1e-7) dup = true;
      if (dup) continue;
      Vec nrm = D.face_normal(f, rr.x);
      nrm /= nrm.norm();
      out.push_back({rr.x, nrm, f});
    }
  }
  return out;
}

}  // namespace detail

// Feasible offsets x - h2(t1) of points within v of h1(t1).
inline std::vector<Vec> sample_offsets_near(const ProblemDefinition& p, const MinTrajectory& h1,
                                            const MinTrajectory& h2, double t1, double v, int n, std::uint64_t seed) {
  const Vec c = h1.h(t1), hx = h2.h(t1);
  std::vector<Vec> out{c - hx};
  if (v <= 0.0 || n <= 1) return out;
  Rng rng(sub_seed(seed, 0xe1));
  if (p.m == 0) {
    for (int i = 1; i < n; ++i)
      out.push_back(c + v * std::pow(rng.uniform(), 1.0 / p.n) * rng.unit_vec(p.n) - hx);
    return out;
  }
  const auto s = detail::sample_tangent_ball(p, c, t1, v, n - 1, rng);
  for (const Vec& e : s.e) out.push_back(c + e - hx);
  return out;
}

inline DominanceCertificate check_dominance(const ProblemDefinition& p, const MinTrajectory& h1,
                                            const MinTrajectory& h2, const DominanceOptions& opt) {
  require_positive_alpha(opt.alpha, "check_dominance");
  if (!opt.D) throw InvalidParameter("check_dominance: region D is required");
  if (opt.D->dim() != p.n) throw InvalidParameter("check_dominance: region D has the wrong dimension");
  if (!(opt.t2 > opt.t1)) throw InvalidParameter("check_dominance: need t2 > t1");
  if (!(opt.r2 > 0.0)) throw InvalidParameter("check_dominance: r2 must be positive");
  if (opt.n_time_nodes < 2) throw InvalidParameter("check_dominance: need at least two time nodes");
  if (opt.mode == DominanceMode::averaged && opt.n_time_nodes < 65)
    throw InvalidParameter("check_dominance: averaged mode needs at least 64 quadrature intervals");
  const Region& D = *opt.D;
  DominanceCertificate dc;
  dc.h1_label = h1.label();
  dc.h2_label = h2.label();
  dc.mode = opt.mode;
  dc.alpha = opt.alpha;
  dc.t1 = opt.t1;
  dc.t2 = opt.t2;
  dc.v = opt.v;
  dc.r2 = opt.r2;
  dc.D = D;
  dc.seed = opt.seed;
  dc.nodes = linspace(opt.t1, opt.t2, opt.n_time_nodes);
  const auto& nodes = dc.nodes;
  const double a = opt.alpha;

  dc.branch = opt.mode == DominanceMode::uniform ? equilibrium_branch(p, h2, a, nodes, opt.r2, opt.branch)
                                                 : equilibrium_average(p, h2, a, nodes, opt.r2, opt.branch);
  dc.rho = dc.branch.rho;

  // one-point strong monotonicity of U (or its average) about ebar
  const std::size_t K = nodes.size();
  const int per_node = std::max(20, opt.n_samples / static_cast<int>(K));
  const auto wts = detail::trapezoid_weights(nodes);
  for (std::size_t k = 0; k < K; ++k) {
    Rng rng(sub_seed(opt.seed, 1, k));
    for (const Vec& e : detail::sample_region(p, h2, nodes[k], D, per_node, rng)) {
      Vec U, eb;
      double tt = nodes[k];
      if (opt.mode == DominanceMode::uniform) {
        U = error_field_U(p, e, nodes[k], a, h2);
        eb = dc.branch.ebar[k];
      } else {
        U = Vec::Zero(p.n);
        for (std::size_t j = 0; j < K; ++j) U += wts[j] * error_field_U(p, e, nodes[j], a, h2);
        eb = dc.branch.ebar[0];
        tt = dc.branch.t[0];
      }
      const Vec d = e - eb;
      const double dn2 = d.squaredNorm();
      if (dn2 < 1e-18) continue;
      ++dc.n_samples;
      const double ratio = U.dot(d) / dn2;
      if (ratio < dc.w_hat) {
        dc.w_hat = ratio;
        dc.w_point = e;
        dc.w_t = tt;
      }
    }
  }

  // invariance, part one: the flow -U/alpha does not point out of D on its boundary
  std::vector<detail::BoundaryPoint> seeds_boundary;
  for (std::size_t k = 0; k < K; ++k) {
    Rng rng(sub_seed(opt.seed, 2, k));
    const auto bps = detail::boundary_points(p, h2, nodes[k], D, opt.boundary_starts, rng);
    if (k == 0) seeds_boundary = bps;
    for (const auto& b : bps) {
      const Vec vel = -(1.0 / a) * error_field_U(p, b.e, nodes[k], a, h2);
      const double out = vel.dot(b.normal);
      ++dc.n_boundary_checks;
      dc.worst_outflow = std::max(dc.worst_outflow, out);
      if (out > 1e-9 * (1.0 + vel.norm())) ++dc.n_sign_violations;
    }
  }
  dc.sign_test_ok = dc.n_sign_violations == 0;

  // invariance, part two: boundary-seeded trajectories stay in D
  {
    Rng rng(sub_seed(opt.seed, 3));
    const Vec h0 = h2.h(opt.t1);
    std::vector<Vec> seeds;
    for (const auto& b : seeds_boundary) seeds.push_back(b.e);
    const std::size_t n_face = seeds.size();
    const double jitter = 1e-3 * D.diameter();
    for (std::size_t i = 0; n_face > 0 && i < 4 * n_face && seeds.size() < static_cast<std::size_t>(opt.n_seeds) / 2;
         ++i) {
      Vec e = seeds[i % n_face] + jitter * rng.unit_vec(p.n);
      if (p.m > 0) {
        const RetractResult rr = newton_retract(p, e + h0, opt.t1, 1e-12, 20);
        if (!rr.converged) continue;
        e = rr.x - h0;
      }
      if (D.contains(e)) seeds.push_back(e);
    }
    const int rest = std::max(0, opt.n_seeds - static_cast<int>(seeds.size()));
    if (rest > 0)
      for (const Vec& e : detail::sample_region(p, h2, opt.t1, D, rest, rng)) seeds.push_back(e);
    FlowConfig cfg;
    cfg.alpha = a;
    cfg.dt = opt.containment_dt;
    if (p.m > 0) {
      cfg.retraction = Retraction::newton;
      cfg.feas_tol = 1e-10;
    }
    dc.containment_dt = cfg.dt;
    dc.containment_tol = 1e-6 * (1.0 + D.diameter());
    bool ok = true;
    for (const Vec& e : seeds) {
      const TrajectoryRecord rec = integrate_pode(p, e + h0, opt.t1, opt.t2, cfg);
      if (!rec.completed) ok = false;
      for (const auto& s : rec.samples) {
        const Vec es = s.x - h2.h(s.t);
        if (!D.contains(es, dc.containment_tol)) {
          ok = false;
          double ex = 0.0;
          if (D.kind == Region::Kind::ball) {
            ex = (es - D.center).norm() - D.radius;
          } else {
            for (Eigen::Index i = 0; i < es.size(); ++i) ex = std::max({ex, D.lo[i] - es[i], es[i] - D.hi[i]});
          }
          dc.worst_excursion = std::max(dc.worst_excursion, ex);
        }
      }
    }
    dc.n_seeds = seeds.size();
    dc.containment_ok = ok && dc.n_seeds >= 100;
  }
  dc.invariance_ok = dc.sign_test_ok && dc.containment_ok;

  // D must hold the v-neighborhood of h1 and the rho-ball
  dc.e1_set = sample_offsets_near(p, h1, h2, opt.t1, opt.v, opt.n_e1, opt.seed);
  dc.region_covers = D.contains_ball(Vec::Zero(p.n), dc.rho);
  for (const Vec& e : dc.e1_set)
    if (!D.contains(e, 1e-9)) dc.region_covers = false;

  dc.valid = dc.w_hat > 0.0 && dc.invariance_ok && dc.rho < dc.r2 && dc.region_covers;
  if (!(dc.w_hat > 0.0)) dc.reason = "U is not one-point strongly monotone over D (w_hat = " + detail::num(dc.w_hat) + ")";
  else if (!dc.sign_test_ok) dc.reason = "flow points out of D at " + std::to_string(dc.n_sign_violations) + " boundary samples";
  else if (!dc.containment_ok) dc.reason = "boundary-seeded trajectories leave D";
  else if (!dc.region_covers) dc.reason = "D does not contain the v-neighborhood of h1 and the rho-ball";
  return dc;
}

// ---------------------------------------------------------------------------
// jumping

// Which bound |p| <= delta1 |e - ebar| + delta2 to use: the better of the two
// fits, or one of them forced.
enum class DeltaFit { best, slope, flat };

struct PerturbationProbe {
  int n_samples = 500;
  std::uint64_t seed = 11;
  DeltaFit fit = DeltaFit::best;
};

struct JumpCertificate {
  DominanceMode mode = DominanceMode::uniform;
  std::string from, to;
  double alpha = 0.0, t1 = 0.0, t2 = 0.0, r2 = 0.0, rho = 0.0, w = 0.0;
  double theta = 0.0;
  double required_interval = 0.0;
  double actual_interval = 0.0;
  double worst_e1_distance = 0.0;
  std::size_t n_e1 = 0;
  // averaged mode
  std::vector<double> nodes, delta1, delta2;
  double eta1 = 0.0, eta2 = 0.0, beta1 = 0.0, beta2 = 1.0;
  double delta2_integral = 0.0;
  double lhs = 0.0, rhs = 0.0;
  std::string fit;
  std::size_t n_probe_samples = 0;
  std::uint64_t probe_seed = 0;
  bool valid = false;
  std::string reason;
};

namespace detail {

inline void require_valid(const DominanceCertificate& dom, const char* where) {
  if (!dom.valid) throw Refusal(std::string(where) + ": dominance certificate is invalid (" + dom.reason + ")");
}

inline double worst_distance(const std::vector<Vec>& e1_set, const Vec& ebar) {
  double d = 0.0;
  for (const Vec& e : e1_set) d = std::max(d, (e - ebar).norm());
  return d;
}

}  // namespace detail

// Sufficient interval length for the jump with a uniform dominance certificate.
inline JumpCertificate jump_certificate(const DominanceCertificate& dom, const std::vector<Vec>& e1_set,
                                        double theta = 0.2) {
  detail::require_valid(dom, "jump_certificate");
  if (dom.mode != DominanceMode::uniform)
    throw PreconditionError("jump_certificate: needs a uniform-mode dominance certificate");
  if (!(theta > 0.0 && theta < 1.0)) throw InvalidParameter("jump_certificate: theta must lie in (0, 1)");
  if (e1_set.empty()) throw InvalidParameter("jump_certificate: empty set of initial offsets");
  JumpCertificate jc;
  jc.mode = DominanceMode::uniform;
  jc.from = dom.h1_label;
  jc.to = dom.h2_label;
  jc.alpha = dom.alpha;
  jc.t1 = dom.t1;
  jc.t2 = dom.t2;
  jc.r2 = dom.r2;
  jc.rho = dom.rho;
  jc.w = dom.w_hat;
  jc.theta = theta;
  jc.n_e1 = e1_set.size();
  jc.actual_interval = dom.t2 - dom.t1;
  jc.worst_e1_distance = detail::worst_distance(e1_set, dom.branch.at(dom.t1));
  const double gap = jc.r2 - jc.rho;
  const double a = jc.alpha, w = jc.w;
  const double first = a * jc.rho / (gap * theta * w);
  const double second = jc.worst_e1_distance > 0.0 ? a * std::log(jc.worst_e1_distance / gap) / ((1.0 - theta) * w) : 0.0;
  jc.required_interval = std::max({first, second, 0.0});
  jc.valid = jc.actual_interval >= jc.required_interval;
  if (!jc.valid)
    jc.reason = "interval " + detail::num(jc.actual_interval) + " is shorter than the required " +
                detail::num(jc.required_interval);
  return jc;
}

// Jump condition through the averaged field with the perturbation
// p = -(U - U_av)/alpha bounded by delta1 |e - ebar| + delta2.
inline JumpCertificate jump_certificate_averaged(const ProblemDefinition& p, const MinTrajectory& h2,
                                                 const DominanceCertificate& dom, const std::vector<Vec>& e1_set,
                                                 const PerturbationProbe& probe = {}) {
  detail::require_valid(dom, "jump_certificate_averaged");
  if (dom.mode != DominanceMode::averaged)
    throw PreconditionError("jump_certificate_averaged: needs an averaged-mode dominance certificate");
  if (e1_set.empty()) throw InvalidParameter("jump_certificate_averaged: empty set of initial offsets");
  if (probe.n_samples < 1) throw InvalidParameter("jump_certificate_averaged: n_samples must be positive");
  JumpCertificate jc;
  jc.mode = DominanceMode::averaged;
  jc.from = dom.h1_label;
  jc.to = dom.h2_label;
  jc.alpha = dom.alpha;
  jc.t1 = dom.t1;
  jc.t2 = dom.t2;
  jc.r2 = dom.r2;
  jc.rho = dom.rho;
  jc.w = dom.w_hat;
  jc.n_e1 = e1_set.size();
  jc.actual_interval = dom.t2 - dom.t1;
  jc.nodes = dom.nodes;
  jc.probe_seed = probe.seed;
  const auto& nodes = jc.nodes;
  const std::size_t K = nodes.size();
  const Vec ebar = dom.branch.ebar[0];
  jc.worst_e1_distance = detail::worst_distance(e1_set, ebar);
  const double a = jc.alpha;

  // the same offsets probe every node, so each node sees n_samples points
  std::vector<std::vector<double>> dist(K), mag(K);
  const auto wts = detail::trapezoid_weights(nodes);
  const int per_node = std::max(1, (probe.n_samples + static_cast<int>(K) - 1) / static_cast<int>(K));
  for (std::size_t k = 0; k < K; ++k) {
    Rng rng(sub_seed(probe.seed, k));
    for (const Vec& e : detail::sample_region(p, h2, nodes[k], dom.D, per_node, rng)) {
      std::vector<Vec> Us(K);
      Vec Uav = Vec::Zero(p.n);
      for (std::size_t j = 0; j < K; ++j) {
        Us[j] = error_field_U(p, e, nodes[j], a, h2);
        Uav += wts[j] * Us[j];
      }
      const double d = (e - ebar).norm();
      for (std::size_t j = 0; j < K; ++j) {
        dist[j].push_back(d);
        mag[j].push_back((Us[j] - Uav).norm() / a);
      }
      ++jc.n_probe_samples;
    }
  }
  const double gap = jc.r2 - jc.rho;
  jc.rhs = gap;

  struct Candidate {
    std::string name;
    std::vector<double> d1, d2;
    double eta1 = 0, eta2 = 0, beta1 = 0, beta2 = 1, integral = 0, lhs = kInf;
  };
  auto evaluate = [&](Candidate& c) {
    std::tie(c.eta1, c.eta2) = detail::eta_from_delta1(nodes, c.d1);
    c.beta1 = jc.w / a - c.eta1;
    c.beta2 = std::exp(c.eta2);
    if (c.beta1 <= 0.0) return;
    c.integral = detail::envelope_convolution(nodes, c.d2, c.beta1).back();
    c.lhs = c.beta2 * jc.worst_e1_distance * std::exp(-c.beta1 * jc.actual_interval) + c.beta2 * c.integral;
  };
  Candidate slope{"slope-envelope", {}, {}}, flat{"flat-envelope", {}, {}};
  for (std::size_t k = 0; k < K; ++k) {
    const auto b1 = detail::fit_slope_envelope(dist[k], mag[k]);
    slope.d1.push_back(b1.slope);
    slope.d2.push_back(b1.offset);
    const auto b2 = detail::fit_flat_envelope(mag[k]);
    flat.d1.push_back(0.0);
    flat.d2.push_back(b2.offset);
  }
  evaluate(slope);
  evaluate(flat);
  const Candidate& best = probe.fit == DeltaFit::slope  ? slope
                          : probe.fit == DeltaFit::flat ? flat
                          : flat.lhs <= slope.lhs       ? flat
                                                        : slope;
  jc.fit = best.name;
  jc.delta1 = best.d1;
  jc.delta2 = best.d2;
  jc.eta1 = best.eta1;
  jc.eta2 = best.eta2;
  jc.beta1 = best.beta1;
  jc.beta2 = best.beta2;
  jc.delta2_integral = best.integral;
  jc.lhs = best.lhs;
  if (!(best.beta1 > 0.0)) {
    jc.valid = false;
    jc.reason = "averaging gap too large for this alpha";
    return jc;
  }
  jc.valid = jc.lhs <= jc.rhs;
  if (!jc.valid) jc.reason = "bound " + detail::num(jc.lhs) + " exceeds r2 - rho = " + detail::num(jc.rhs);
  return jc;
}

// ---------------------------------------------------------------------------
// tracking

struct TrackingOptions {
  int n_samples = 500;
  std::uint64_t seed = 13;
  DeltaFit fit = DeltaFit::best;
};

struct TrackingCertificate {
  std::string h_label;
  double alpha = 0.0, c2 = 0.0, r2 = 0.0;
  std::vector<double> t, gamma, delta1, delta2;
  double gamma_sup = 0.0;
  double sup_delta2_gamma = 0.0;
  double eta1 = 0.0, eta2 = 0.0;
  double alpha_max = kInf;
  double initial_radius = 0.0;
  double ultimate_bound = 0.0;
  std::string fit;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  bool valid = false;
  std::string reason;

  double beta1() const { return c2 / alpha - eta1; }

  // Bound on |x(t) - h2(t)| for a run with initial error e1 at t.front().
  double predicted_error(double tq, double e1_norm) const {
    if (t.empty()) throw PreconditionError("predicted_error: empty certificate");
    if (tq < t.front() - 1e-12) throw InvalidParameter("predicted_error: time before the certificate start");
    const double b1 = beta1();
    if (!(b1 > 0.0)) return kInf;
    std::vector<double> s(t.size());
    for (std::size_t k = 0; k < t.size(); ++k) s[k] = delta2[k] + gamma[k];
    double I = 0.0, tk = t.front();
    for (std::size_t k = 1; k < t.size() && t[k - 1] < tq; ++k) {
      const double hi = std::min(t[k], tq);
      const double h = hi - t[k - 1];
      I = std::exp(-b1 * h) * I - std::max(s[k], s[k - 1]) * std::expm1(-b1 * h) / b1;
      tk = hi;
    }
    if (tq > tk) {
      const double h = tq - tk;
      I = std::exp(-b1 * h) * I - sup_delta2_gamma * std::expm1(-b1 * h) / b1;
    }
    const double beta2 = std::exp(eta2);
    return beta2 * e1_norm * std::exp(-b1 * (tq - t.front())) + beta2 * I;
  }
};

inline TrackingCertificate tracking_certificate(const ProblemDefinition& p, const MinTrajectory& h2, double alpha,
                                                const ConvexityCertificate& conv, const std::vector<double>& t_grid,
                                                const TrackingOptions& opt = {}) {
  require_positive_alpha(alpha, "tracking_certificate");
  if (!conv.valid) throw Refusal("tracking_certificate: convexity certificate is invalid (c_hat <= 0)");
  if (t_grid.size() < 2) throw InvalidParameter("tracking_certificate: need at least two grid times");
  TrackingCertificate tc;
  tc.h_label = h2.label();
  tc.alpha = alpha;
  tc.c2 = conv.c_hat;
  tc.r2 = conv.r;
  tc.t = t_grid;
  tc.seed = opt.seed;
  std::vector<std::vector<double>> dist(t_grid.size()), mag(t_grid.size());
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    const double t = t_grid[k];
    tc.gamma.push_back(h2.hdot(t).norm());
    if (p.m == 0) continue;
    const Vec hx = h2.h(t);
    Rng rng(sub_seed(opt.seed, k));
    std::vector<Vec> es{Vec::Zero(p.n)};
    for (Vec& e : detail::sample_tangent_ball(p, hx, t, tc.r2, opt.n_samples - 1, rng).e) es.push_back(std::move(e));
    for (const Vec& e : es) {
      const GeometryEval ge = evaluate_geometry(p, hx + e, t, alpha);
      dist[k].push_back(e.norm());
      mag[k].push_back((ge.Q * ge.gprime).norm());
    }
    tc.n_samples += es.size();
  }
  for (double g : tc.gamma) tc.gamma_sup = std::max(tc.gamma_sup, g);

  struct Candidate {
    std::string name;
    std::vector<double> d1, d2;
    double eta1 = 0, eta2 = 0, sup = 0, amax = 0;
  };
  auto evaluate = [&](Candidate& c) {
    std::tie(c.eta1, c.eta2) = detail::eta_from_delta1(t_grid, c.d1);
    c.sup = 0.0;
    for (std::size_t k = 0; k < t_grid.size(); ++k) c.sup = std::max(c.sup, c.d2[k] + tc.gamma[k]);
    const double den = std::exp(c.eta2) * c.sup + c.eta1 * tc.r2;
    c.amax = den > 0.0 ? tc.c2 * tc.r2 / den : kInf;
  };
  Candidate slope{"slope-envelope", {}, {}}, flat{"flat-envelope", {}, {}};
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    const auto b1 = detail::fit_slope_envelope(dist[k], mag[k]);
    slope.d1.push_back(b1.slope);
    slope.d2.push_back(b1.offset);
    flat.d1.push_back(0.0);
    flat.d2.push_back(detail::fit_flat_envelope(mag[k]).offset);
  }
  evaluate(slope);
  evaluate(flat);
  const Candidate& best = opt.fit == DeltaFit::slope  ? slope
                          : opt.fit == DeltaFit::flat ? flat
                          : flat.amax >= slope.amax   ? flat
                                                      : slope;
  tc.fit = p.m == 0 ? "unconstrained" : best.name;
  tc.delta1 = best.d1;
  tc.delta2 = best.d2;
  tc.eta1 = best.eta1;
  tc.eta2 = best.eta2;
  tc.sup_delta2_gamma = best.sup;
  tc.alpha_max = best.amax;
  tc.initial_radius = tc.r2 / std::exp(tc.eta2);
  const double b1 = tc.beta1();
  tc.ultimate_bound = b1 > 0.0 ? std::exp(tc.eta2) * tc.sup_delta2_gamma / b1 : kInf;
  tc.valid = alpha <= tc.alpha_max;
  if (!tc.valid) tc.reason = "alpha exceeds alpha_max = " + detail::num(tc.alpha_max);
  return tc;
}

// ---------------------------------------------------------------------------
// escaping

struct EscapeCertificate {
  JumpCertificate jump;
  TrackingCertificate tracking;
  double landing_radius = 0.0;
  bool valid = false;
  std::string reason;
};

inline EscapeCertificate escape_certificate(const JumpCertificate& jump, const TrackingCertificate& track) {
  if (jump.to != track.h_label)
    throw Refusal("escape_certificate: jump target '" + jump.to + "' differs from tracked '" + track.h_label + "'");
  if (std::abs(jump.alpha - track.alpha) > 1e-12 * (1.0 + track.alpha))
    throw Refusal("escape_certificate: jump and tracking certificates use different alpha");
  if (std::abs(jump.r2 - track.r2) > 1e-12 * (1.0 + track.r2))
    throw Refusal("escape_certificate: jump radius " + detail::num(jump.r2) + " does not match tracking radius " +
                  detail::num(track.r2));
  EscapeCertificate ec;
  ec.jump = jump;
  ec.tracking = track;
  // the jump lands within r2 - rho of ebar, hence within r2 of h2
  ec.landing_radius = jump.r2;
  const bool enters = ec.landing_radius <= track.initial_radius * (1.0 + 1e-12);
  ec.valid = jump.valid && track.valid && enters;
  if (!jump.valid) ec.reason = "jump certificate invalid: " + jump.reason;
  else if (!track.valid) ec.reason = "tracking certificate invalid: " + track.reason;
  else if (!enters) ec.reason = "landing radius exceeds the tracking entry radius r2/e^eta2";
  return ec;
}

struct SequentialJumpReport {
  std::vector<JumpCertificate> steps;
  std::vector<std::string> chain;
  bool chain_ok = false;
  bool valid = false;
  std::string reason;
};

// Chains jumps h_a -> h_b -> ... over ordered, non-overlapping intervals.
inline SequentialJumpReport sequential_jump_report(std::vector<JumpCertificate> steps) {
  SequentialJumpReport r;
  r.steps = std::move(steps);
  if (r.steps.empty()) {
    r.reason = "no jumps";
    return r;
  }
  r.chain_ok = true;
  r.chain.push_back(r.steps.front().from);
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    r.chain.push_back(r.steps[i].to);
    if (i == 0) continue;
    const auto& prev = r.steps[i - 1];
    const auto& cur = r.steps[i];
    if (cur.from != prev.to) {
      r.chain_ok = false;
      r.reason = "jump " + std::to_string(i) + " starts from '" + cur.from + "', previous ended at '" + prev.to + "'";
    } else if (cur.t1 < prev.t2) {
      r.chain_ok = false;
      r.reason = "jump intervals " + std::to_string(i - 1) + " and " + std::to_string(i) + " overlap";
    }
  }
  r.valid = r.chain_ok;
  for (std::size_t i = 0; i < r.steps.size() && r.valid; ++i)
    if (!r.steps[i].valid) {
      r.valid = false;
      r.reason = "jump " + std::to_string(i) + " invalid: " + r.steps[i].reason;
    }
  return r;
}

// ---------------------------------------------------------------------------
// empirical jump detection

struct JumpEvent {
  double t = 0.0;
  std::string from, to;
};

struct DetectOptions {
  double window = 0.5;
  int stride = 10;
  ClassifyOptions classify;
};

// Labels decimated samples by frozen-time classification and reports label
// changes that persist for at least the window.
inline std::vector<JumpEvent> detect_jumps(const ProblemDefinition& p, const TrajectoryRecord& record,
                                           const std::vector<MinTrajectory>& minima, const DetectOptions& opt = {}) {
  if (opt.stride < 1) throw InvalidParameter("detect_jumps: stride must be at least 1");
  if (!(opt.window >= 0.0)) throw InvalidParameter("detect_jumps: window must be non-negative");
  std::vector<JumpEvent> events;
  const auto& S = record.samples;
  if (S.empty()) return events;
  std::string current, candidate;
  double cand_t = 0.0;
  for (std::size_t i = 0; i < S.size(); i += static_cast<std::size_t>(opt.stride)) {
    std::string lab;
    try {
      lab = frozen_flow_classify(p, S[i].t, S[i].x, minima, opt.classify);
    } catch (const Error&) {
      lab = kDiverged;
    }
    if (lab == kDiverged || lab == current) {
      candidate.clear();
    } else if (current.empty()) {
      current = lab;
    } else {
      if (lab != candidate) {
        candidate = lab;
        cand_t = S[i].t;
      }
      if (S[i].t - cand_t >= opt.window) {
        events.push_back({cand_t, current, candidate});
        current = candidate;
        candidate.clear();
      }
    }
    if (i + static_cast<std::size_t>(opt.stride) >= S.size() && i + 1 < S.size()) i = S.size() - 1 - opt.stride;
  }
  return events;
}

}  // namespace tvopt
