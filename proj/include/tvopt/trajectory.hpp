#pragma once

#include "tvopt/core.hpp"
#include "tvopt/problem.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace tvopt {

// A local minimum trajectory h(t), given in closed form or as samples on a
// time grid with cubic Hermite interpolation.
class MinTrajectory {
 public:
  enum class Kind { analytic, traced };

  MinTrajectory() = default;

  static MinTrajectory analytic(std::string label, std::function<Vec(double)> h, std::function<Vec(double)> hdot) {
    MinTrajectory m;
    m.label_ = std::move(label);
    m.kind_ = Kind::analytic;
    m.h_ = std::move(h);
    m.hdot_ = std::move(hdot);
    return m;
  }

  // Node derivatives come from second-order finite differences on the grid
  // unless supplied.
  static MinTrajectory traced(std::string label, std::vector<double> times, std::vector<Vec> points,
                              std::vector<Vec> velocities = {}) {
    if (times.size() != points.size() || times.empty())
      throw InvalidParameter("traced trajectory needs matching, non-empty time and point lists");
    if (!velocities.empty() && velocities.size() != points.size())
      throw InvalidParameter("traced trajectory velocities must match the points");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1])) throw InvalidParameter("traced trajectory times must be strictly increasing");
    MinTrajectory m;
    m.label_ = std::move(label);
    m.kind_ = Kind::traced;
    auto data = std::make_shared<Samples>();
    data->t = std::move(times);
    data->x = std::move(points);
    data->v = velocities.empty() ? node_derivatives(data->t, data->x) : std::move(velocities);
    m.samples_ = std::move(data);
    return m;
  }

  const std::string& label() const { return label_; }
  Kind kind() const { return kind_; }
  bool empty() const { return kind_ == Kind::analytic ? !h_ : !samples_; }

  double t_begin() const { return samples_ ? samples_->t.front() : -kInf; }
  double t_end() const { return samples_ ? samples_->t.back() : kInf; }
  bool covers(double t) const {
    if (!samples_) return true;
    const double tol = 1e-9 * (1.0 + std::abs(t));
    return t >= t_begin() - tol && t <= t_end() + tol;
  }

  const std::vector<double>& times() const { return samples_->t; }
  const std::vector<Vec>& points() const { return samples_->x; }

  Vec h(double t) const {
    if (kind_ == Kind::analytic) return h_(t);
    return interp(t, false);
  }

  Vec hdot(double t) const {
    if (kind_ == Kind::analytic) return hdot_(t);
    return interp(t, true);
  }

  MinTrajectory relabeled(std::string label) const {
    MinTrajectory m = *this;
    m.label_ = std::move(label);
    return m;
  }

 private:
  struct Samples {
    std::vector<double> t;
    std::vector<Vec> x;
    std::vector<Vec> v;
  };

  static std::vector<Vec> node_derivatives(const std::vector<double>& t, const std::vector<Vec>& x) {
    const std::size_t n = t.size();
    std::vector<Vec> v(n);
    if (n == 1) {
      v[0] = Vec::Zero(x[0].size());
      return v;
    }
    if (n == 2) {
      v[0] = v[1] = (x[1] - x[0]) / (t[1] - t[0]);
      return v;
    }
    // derivative of the quadratic through three nodes, evaluated at node k of {a,b,c}
    auto lagrange = [&](std::size_t a, std::size_t b, std::size_t c, std::size_t at) {
      const double ta = t[a], tb = t[b], tc = t[c], s = t[at];
      const double wa = ((s - tb) + (s - tc)) / ((ta - tb) * (ta - tc));
      const double wb = ((s - ta) + (s - tc)) / ((tb - ta) * (tb - tc));
      const double wc = ((s - ta) + (s - tb)) / ((tc - ta) * (tc - tb));
      return Vec(wa * x[a] + wb * x[b] + wc * x[c]);
    };
    v[0] = lagrange(0, 1, 2, 0);
    for (std::size_t k = 1; k + 1 < n; ++k) v[k] = lagrange(k - 1, k, k + 1, k);
    v[n - 1] = lagrange(n - 3, n - 2, n - 1, n - 1);
    return v;
  }

  Vec interp(double t, bool derivative) const {
    const auto& T = samples_->t;
    if (!covers(t)) {
      std::ostringstream os;
      os.precision(17);
      os << "trajectory '" << label_ << "' evaluated at t=" << t << " outside [" << T.front() << ", " << T.back()
         << "]";
      throw InvalidParameter(os.str());
    }
    if (T.size() == 1) return derivative ? samples_->v[0] : samples_->x[0];
    const double tc = std::clamp(t, T.front(), T.back());
    auto it = std::upper_bound(T.begin(), T.end(), tc);
    std::size_t k = it == T.begin() ? 0 : static_cast<std::size_t>(it - T.begin()) - 1;
    if (k + 1 >= T.size()) k = T.size() - 2;
    const double dt = T[k + 1] - T[k];
    const double s = (tc - T[k]) / dt;
    const Vec& p0 = samples_->x[k];
    const Vec& p1 = samples_->x[k + 1];
    const Vec& m0 = samples_->v[k];
    const Vec& m1 = samples_->v[k + 1];
    if (!derivative) {
      const double h00 = 2 * s * s * s - 3 * s * s + 1, h10 = s * s * s - 2 * s * s + s;
      const double h01 = -2 * s * s * s + 3 * s * s, h11 = s * s * s - s * s;
      return h00 * p0 + h10 * dt * m0 + h01 * p1 + h11 * dt * m1;
    }
    const double d00 = 6 * s * s - 6 * s, d10 = 3 * s * s - 4 * s + 1;
    const double d01 = -6 * s * s + 6 * s, d11 = 3 * s * s - 2 * s;
    return (d00 * p0 + d01 * p1) / dt + d10 * m0 + d11 * m1;
  }

  std::string label_;
  Kind kind_ = Kind::analytic;
  std::function<Vec(double)> h_;
  std::function<Vec(double)> hdot_;
  std::shared_ptr<const Samples> samples_;
};

// Closed-form trajectories of the builtin problems.
inline std::vector<MinTrajectory> quartic_trajectories(double b) {
  auto make = [b](std::string label, double c) {
    return MinTrajectory::analytic(
        std::move(label), [b, c](double t) { return Vec::Constant(1, c + b * std::sin(t)); },
        [b](double t) { return Vec::Constant(1, b * std::cos(t)); });
  };
  return {make("local-1", -2.0), make("global", 1.0)};
}

inline MinTrajectory tracking_quadratic_trajectory(double omega) {
  return MinTrajectory::analytic(
      "global", [omega](double t) { return Vec::Constant(1, std::sin(omega * t)); },
      [omega](double t) { return Vec::Constant(1, omega * std::cos(omega * t)); });
}

// "global" is z(t); "local-1" is z(t) plus the spurious minimum's offset.
inline std::vector<MinTrajectory> ackley_trajectories(double d = 0.01) {
  const Vec off = ackley_local_offset(d);
  return {MinTrajectory::analytic("local-1", [off](double t) { return Vec(off + ackley_z(t)); }, ackley_zdot),
          MinTrajectory::analytic("global", ackley_z, ackley_zdot)};
}

}  // namespace tvopt
