#pragma once

#include "tvopt/core.hpp"

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

namespace tvopt {

using ScalarFn = std::function<double(const Vec&, double)>;
using VecFn = std::function<Vec(const Vec&, double)>;
using MatFn = std::function<Mat(const Vec&, double)>;
using MatListFn = std::function<std::vector<Mat>(const Vec&, double)>;

// A time-varying problem  min f(x,t)  s.t.  g(x,t) = 0.
// Optional evaluators are left empty when not provided.
struct ProblemDefinition {
  std::string name;
  int n = 0;
  int m = 0;
  ScalarFn f;
  VecFn grad_f;
  MatFn hess_f;
  VecFn g;
  MatFn jac_g;
  VecFn gprime;
  MatFn jac_g_prime;
  MatListFn hess_g;
  std::optional<double> lower_bound;

  bool constrained() const { return m > 0; }
};

namespace detail {

inline void require_finite(bool ok, const char* which, const Vec& x, double t) {
  if (!ok) throw EvaluationError(std::string(which) + " returned a non-finite value at " + point_desc(x, t));
}

}  // namespace detail

// Checked evaluation helpers. Each names the evaluator on failure.
inline double eval_f(const ProblemDefinition& p, const Vec& x, double t) {
  const double v = p.f(x, t);
  detail::require_finite(std::isfinite(v), "f", x, t);
  return v;
}

inline Vec eval_grad_f(const ProblemDefinition& p, const Vec& x, double t) {
  Vec v = p.grad_f(x, t);
  detail::require_finite(v.size() == p.n && v.allFinite(), "grad_f", x, t);
  return v;
}

inline Vec eval_g(const ProblemDefinition& p, const Vec& x, double t) {
  if (p.m == 0) return Vec(0);
  Vec v = p.g(x, t);
  detail::require_finite(v.size() == p.m && v.allFinite(), "g", x, t);
  return v;
}

inline Mat eval_jac_g(const ProblemDefinition& p, const Vec& x, double t) {
  if (p.m == 0) return Mat(0, p.n);
  Mat v = p.jac_g(x, t);
  detail::require_finite(v.rows() == p.m && v.cols() == p.n && v.allFinite(), "jac_g", x, t);
  return v;
}

inline Vec eval_gprime(const ProblemDefinition& p, const Vec& x, double t) {
  if (p.m == 0) return Vec(0);
  Vec v = p.gprime(x, t);
  detail::require_finite(v.size() == p.m && v.allFinite(), "gprime", x, t);
  return v;
}

// Hessian of f, by central differences of grad_f when not supplied.
inline Mat eval_hess_f(const ProblemDefinition& p, const Vec& x, double t) {
  if (p.hess_f) {
    Mat h = p.hess_f(x, t);
    detail::require_finite(h.rows() == p.n && h.cols() == p.n && h.allFinite(), "hess_f", x, t);
    return h;
  }
  Mat h(p.n, p.n);
  for (int j = 0; j < p.n; ++j) {
    const double s = 1e-6 * (1.0 + std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += s;
    xm[j] -= s;
    h.col(j) = (eval_grad_f(p, xp, t) - eval_grad_f(p, xm, t)) / (2.0 * s);
  }
  return 0.5 * (h + h.transpose());
}

// Per-constraint Hessians, by central differences of jac_g when not supplied.
inline std::vector<Mat> eval_hess_g(const ProblemDefinition& p, const Vec& x, double t) {
  if (p.m == 0) return {};
  if (p.hess_g) {
    auto hs = p.hess_g(x, t);
    bool ok = static_cast<int>(hs.size()) == p.m;
    for (const auto& h : hs) ok = ok && h.rows() == p.n && h.cols() == p.n && h.allFinite();
    detail::require_finite(ok, "hess_g", x, t);
    return hs;
  }
  std::vector<Mat> hs(static_cast<std::size_t>(p.m), Mat(p.n, p.n));
  for (int j = 0; j < p.n; ++j) {
    const double s = 1e-6 * (1.0 + std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += s;
    xm[j] -= s;
    const Mat d = (eval_jac_g(p, xp, t) - eval_jac_g(p, xm, t)) / (2.0 * s);
    for (int k = 0; k < p.m; ++k) hs[static_cast<std::size_t>(k)].col(j) = d.row(k).transpose();
  }
  for (auto& h : hs) h = 0.5 * (h + h.transpose());
  return hs;
}

// d(jac_g)/dt, by central differences in t when not supplied.
inline Mat eval_jac_g_prime(const ProblemDefinition& p, const Vec& x, double t) {
  if (p.m == 0) return Mat(0, p.n);
  if (p.jac_g_prime) {
    Mat v = p.jac_g_prime(x, t);
    detail::require_finite(v.rows() == p.m && v.cols() == p.n && v.allFinite(), "jac_g_prime", x, t);
    return v;
  }
  const double s = 1e-6 * (1.0 + std::abs(t));
  return (eval_jac_g(p, x, t + s) - eval_jac_g(p, x, t - s)) / (2.0 * s);
}

// d(grad_f)/dt by central differences in t.
inline Vec eval_grad_f_t(const ProblemDefinition& p, const Vec& x, double t) {
  const double s = 1e-6 * (1.0 + std::abs(t));
  return (eval_grad_f(p, x, t + s) - eval_grad_f(p, x, t - s)) / (2.0 * s);
}

// ---------------------------------------------------------------------------
// derivative checks

struct DerivativeCheck {
  std::string evaluator;
  double max_deviation = 0.0;
  double threshold = 0.0;
  Vec worst_x;
  double worst_t = 0.0;
  bool pass = true;
};

struct DerivativeReport {
  std::vector<DerivativeCheck> checks;
  bool pass = true;

  const DerivativeCheck* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.evaluator == name) return &c;
    return nullptr;
  }
};

namespace detail {

inline void record_check(DerivativeCheck& c, const Mat& analytic, const Mat& fd, double step, const Vec& x,
                         double t) {
  const double dev = analytic.size() ? (analytic - fd).cwiseAbs().maxCoeff() : 0.0;
  const double thr = 10.0 * step * step * (1.0 + analytic.norm());
  if (c.worst_x.size() == 0 || dev > c.max_deviation) {
    c.max_deviation = dev;
    c.worst_x = x;
    c.worst_t = t;
  }
  if (dev > thr) c.pass = false;
  c.threshold = std::max(c.threshold, thr);
}

}  // namespace detail

// Five-point central difference of a vector- or matrix-valued map along one
// coordinate.
template <class Fn>
auto central_diff(Fn&& fn, double step) {
  using R = std::decay_t<decltype(fn(step))>;
  const R a = fn(-2.0 * step), b = fn(2.0 * step), c = fn(step), d = fn(-step);
  return R(((a - b) + 8.0 * (c - d)) / (12.0 * step));
}

// Compares every supplied analytic derivative with central differences.
inline DerivativeReport check_derivatives(const ProblemDefinition& p, const std::vector<std::pair<Vec, double>>& points,
                                          double step) {
  if (!(step > 0.0)) throw InvalidParameter("check_derivatives: step must be positive");
  DerivativeCheck cg{"grad_f"}, cj{"jac_g"}, cgp{"gprime"}, ch{"hess_f"}, chg{"hess_g"}, cjp{"jac_g_prime"};
  const int n = p.n, m = p.m;
  auto along = [](const Vec& x, int j, double s) {
    Vec y = x;
    y[j] += s;
    return y;
  };
  for (const auto& [x, t] : points) {
    {
      Vec fd(n);
      for (int j = 0; j < n; ++j)
        fd[j] = central_diff([&](double s) { return eval_f(p, along(x, j, s), t); }, step);
      detail::record_check(cg, eval_grad_f(p, x, t), fd, step, x, t);
    }
    if (m > 0) {
      Mat fd(m, n);
      for (int j = 0; j < n; ++j)
        fd.col(j) = central_diff([&](double s) { return eval_g(p, along(x, j, s), t); }, step);
      detail::record_check(cj, eval_jac_g(p, x, t), fd, step, x, t);
      const Vec fdt = central_diff([&](double s) { return eval_g(p, x, t + s); }, step);
      detail::record_check(cgp, eval_gprime(p, x, t), fdt, step, x, t);
    }
    if (p.hess_f) {
      Mat fd(n, n);
      for (int j = 0; j < n; ++j)
        fd.col(j) = central_diff([&](double s) { return eval_grad_f(p, along(x, j, s), t); }, step);
      detail::record_check(ch, eval_hess_f(p, x, t), fd, step, x, t);
    }
    if (m > 0 && p.hess_g) {
      const auto hs = eval_hess_g(p, x, t);
      std::vector<Mat> dj(static_cast<std::size_t>(n));
      for (int j = 0; j < n; ++j)
        dj[static_cast<std::size_t>(j)] =
            central_diff([&](double s) { return Mat(eval_jac_g(p, along(x, j, s), t)); }, step);
      for (int k = 0; k < m; ++k) {
        Mat fd(n, n);
        for (int j = 0; j < n; ++j) fd.col(j) = dj[static_cast<std::size_t>(j)].row(k).transpose();
        detail::record_check(chg, hs[static_cast<std::size_t>(k)], fd, step, x, t);
      }
    }
    if (m > 0 && p.jac_g_prime) {
      const Mat fd = central_diff([&](double s) { return Mat(eval_jac_g(p, x, t + s)); }, step);
      detail::record_check(cjp, eval_jac_g_prime(p, x, t), fd, step, x, t);
    }
  }
  DerivativeReport rep;
  rep.checks.push_back(cg);
  if (m > 0) {
    rep.checks.push_back(cj);
    rep.checks.push_back(cgp);
  }
  if (p.hess_f) rep.checks.push_back(ch);
  if (m > 0 && p.hess_g) rep.checks.push_back(chg);
  if (m > 0 && p.jac_g_prime) rep.checks.push_back(cjp);
  for (const auto& c : rep.checks) rep.pass = rep.pass && c.pass;
  return rep;
}

// ---------------------------------------------------------------------------
// builtin problems

// Offset of the spurious Ackley minimum trajectory, placed exactly on the
// constraint parabola.
inline double quartic_fbar(double y) { return 0.25 * y * y * y * y + (2.0 / 3.0) * y * y * y - 0.5 * y * y - 2.0 * y; }
inline double quartic_dfbar(double y) { return (y - 1.0) * (y + 1.0) * (y + 2.0); }
inline double quartic_d2fbar(double y) { return 3.0 * y * y + 4.0 * y - 1.0; }

// f(x,t) = fbar(x - b sin t), one-dimensional, unconstrained.
inline ProblemDefinition builtin_quartic(double b) {
  if (!std::isfinite(b)) throw InvalidParameter("quartic: b must be finite");
  ProblemDefinition p;
  p.name = "quartic";
  p.n = 1;
  p.m = 0;
  p.f = [b](const Vec& x, double t) { return quartic_fbar(x[0] - b * std::sin(t)); };
  p.grad_f = [b](const Vec& x, double t) {
    Vec v(1);
    v[0] = quartic_dfbar(x[0] - b * std::sin(t));
    return v;
  };
  p.hess_f = [b](const Vec& x, double t) {
    Mat h(1, 1);
    h(0, 0) = quartic_d2fbar(x[0] - b * std::sin(t));
    return h;
  };
  p.lower_bound = quartic_fbar(1.0);
  return p;
}

namespace detail {

struct AckleyTerms {
  double s, es, c, ec;
};

inline AckleyTerms ackley_terms(double y1, double y2, double d) {
  AckleyTerms a;
  a.s = std::sqrt(0.5 * (y1 * y1 + y2 * y2) + d * d);
  a.es = std::exp(-a.s);
  a.c = 0.5 * (std::cos(2.0 * M_PI * y1) + std::cos(2.0 * M_PI * y2));
  a.ec = std::exp(a.c);
  return a;
}

}  // namespace detail

inline double ackley_fbar(const Vec& y, double d) {
  const auto a = detail::ackley_terms(y[0], y[1], d);
  return 0.5 * M_E + 20.0 * std::exp(-d) - 20.0 * a.es - 0.5 * a.ec;
}

inline Vec ackley_grad_fbar(const Vec& y, double d) {
  const auto a = detail::ackley_terms(y[0], y[1], d);
  Vec gr(2);
  for (int i = 0; i < 2; ++i) gr[i] = 10.0 * a.es * y[i] / a.s + 0.5 * M_PI * a.ec * std::sin(2.0 * M_PI * y[i]);
  return gr;
}

inline Mat ackley_hess_fbar(const Vec& y, double d) {
  const auto a = detail::ackley_terms(y[0], y[1], d);
  Mat h = (10.0 * a.es / a.s) * (Mat::Identity(2, 2) - (0.5 * (a.s + 1.0) / (a.s * a.s)) * (y * y.transpose()));
  const double sn[2] = {std::sin(2.0 * M_PI * y[0]), std::sin(2.0 * M_PI * y[1])};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double v = -M_PI * sn[i] * sn[j];
      if (i == j) v += 2.0 * M_PI * std::cos(2.0 * M_PI * y[i]);
      h(i, j) += 0.5 * M_PI * a.ec * v;
    }
  return h;
}

// Offset y* of the non-global local minimum on y1 = y2^2/2. The problem is a
// pure shift, so x = z(t) + y* for all t. Newton on the reduced
// derivative, started from the rounded value (1.92, 1.96).
inline Vec ackley_local_offset(double d = 0.01) {
  double s = 1.96;
  Vec y(2), w(2);
  for (int k = 0; k < 50; ++k) {
    y << 0.5 * s * s, s;
    w << s, 1.0;
    const Vec gr = ackley_grad_fbar(y, d);
    const double d1 = gr.dot(w);
    const double d2 = w.dot(ackley_hess_fbar(y, d) * w) + gr[0];
    const double step = d1 / d2;
    s -= step;
    if (std::abs(step) <= 1e-15 * (1.0 + std::abs(s))) break;
  }
  y << 0.5 * s * s, s;
  return y;
}

inline Vec ackley_z(double t) {
  Vec z(2);
  z << 24.0 * std::sin(t), std::cos(t);
  return z;
}

inline Vec ackley_zdot(double t) {
  Vec z(2);
  z << 24.0 * std::cos(t), -std::sin(t);
  return z;
}

// Smoothed Ackley function on a moving parabola,
// f = fbar(x - z(t)), g = y1 - y2^2/2 with y = x - z(t).
inline ProblemDefinition builtin_ackley_constrained(double d) {
  if (!(d > 0.0) || !std::isfinite(d)) throw InvalidParameter("ackley-constrained: d must be positive");
  ProblemDefinition p;
  p.name = "ackley-constrained";
  p.n = 2;
  p.m = 1;
  p.f = [d](const Vec& x, double t) { return ackley_fbar(x - ackley_z(t), d); };
  p.grad_f = [d](const Vec& x, double t) { return ackley_grad_fbar(x - ackley_z(t), d); };
  p.hess_f = [d](const Vec& x, double t) { return ackley_hess_fbar(x - ackley_z(t), d); };
  p.g = [](const Vec& x, double t) {
    const Vec y = x - ackley_z(t);
    Vec v(1);
    v[0] = y[0] - 0.5 * y[1] * y[1];
    return v;
  };
  p.jac_g = [](const Vec& x, double t) {
    const Vec y = x - ackley_z(t);
    Mat j(1, 2);
    j << 1.0, -y[1];
    return j;
  };
  p.gprime = [](const Vec& x, double t) {
    const Vec y = x - ackley_z(t);
    const Vec zd = ackley_zdot(t);
    Vec v(1);
    v[0] = -zd[0] + y[1] * zd[1];
    return v;
  };
  p.jac_g_prime = [](const Vec&, double t) {
    Mat j(1, 2);
    j << 0.0, -std::sin(t);
    return j;
  };
  p.hess_g = [](const Vec&, double) {
    Mat h = Mat::Zero(2, 2);
    h(1, 1) = -1.0;
    return std::vector<Mat>{h};
  };
  p.lower_bound = 0.0;
  return p;
}

// f(x,t) = (x - sin(omega t))^2 / 2.
inline ProblemDefinition builtin_tracking_quadratic(double omega) {
  if (!(omega > 0.0) || !std::isfinite(omega)) throw InvalidParameter("tracking-quadratic: omega must be positive");
  ProblemDefinition p;
  p.name = "tracking-quadratic";
  p.n = 1;
  p.m = 0;
  p.f = [omega](const Vec& x, double t) {
    const double r = x[0] - std::sin(omega * t);
    return 0.5 * r * r;
  };
  p.grad_f = [omega](const Vec& x, double t) {
    Vec v(1);
    v[0] = x[0] - std::sin(omega * t);
    return v;
  };
  p.hess_f = [](const Vec&, double) { return Mat::Identity(1, 1).eval(); };
  p.lower_bound = 0.0;
  return p;
}

// ---------------------------------------------------------------------------
// registry

using ParamMap = std::map<std::string, double>;
using ProblemFactory = std::function<ProblemDefinition(const ParamMap&)>;

namespace detail {

inline double param_or(const ParamMap& params, const std::string& key, double fallback) {
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

struct Registry {
  std::mutex mu;
  std::map<std::string, std::pair<ProblemFactory, std::vector<std::string>>> entries;

  Registry() {
    entries["quartic"] = {[](const ParamMap& pm) { return builtin_quartic(param_or(pm, "b", 5.0)); }, {"b"}};
    entries["ackley-constrained"] = {
        [](const ParamMap& pm) { return builtin_ackley_constrained(param_or(pm, "d", 0.01)); }, {"d"}};
    entries["tracking-quadratic"] = {
        [](const ParamMap& pm) { return builtin_tracking_quadratic(param_or(pm, "omega", 1.0)); }, {"omega"}};
  }
};

inline Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace detail

// Registers a named problem so scenario files can refer to it.
inline void register_problem(const std::string& name, ProblemFactory factory, std::vector<std::string> param_names = {}) {
  auto& r = detail::registry();
  std::lock_guard<std::mutex> lock(r.mu);
  r.entries[name] = {std::move(factory), std::move(param_names)};
}

inline bool has_problem(const std::string& name) {
  auto& r = detail::registry();
  std::lock_guard<std::mutex> lock(r.mu);
  return r.entries.count(name) > 0;
}

inline std::vector<std::string> problem_params(const std::string& name) {
  auto& r = detail::registry();
  std::lock_guard<std::mutex> lock(r.mu);
  auto it = r.entries.find(name);
  if (it == r.entries.end()) throw InvalidParameter("unknown problem '" + name + "'");
  return it->second.second;
}

inline ProblemDefinition make_problem(const std::string& name, const ParamMap& params = {}) {
  ProblemFactory fac;
  {
    auto& r = detail::registry();
    std::lock_guard<std::mutex> lock(r.mu);
    auto it = r.entries.find(name);
    if (it == r.entries.end()) throw InvalidParameter("unknown problem '" + name + "'");
    fac = it->second.first;
  }
  return fac(params);
}

}  // namespace tvopt
