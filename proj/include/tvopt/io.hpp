#pragma once

#include "tvopt/certify.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace tvopt {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// CSV (RFC 4180, 17 significant digits)

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  class Row {
   public:
    Row& operator<<(double v) {
      cells_.push_back(csv_number(v));
      return *this;
    }
    Row& operator<<(int v) {
      cells_.push_back(std::to_string(v));
      return *this;
    }
    Row& operator<<(std::size_t v) {
      cells_.push_back(std::to_string(v));
      return *this;
    }
    Row& operator<<(const std::string& s) {
      cells_.push_back(csv_field(s));
      return *this;
    }
    Row& operator<<(const char* s) { return *this << std::string(s); }
    Row& operator<<(const Vec& v) {
      for (Eigen::Index i = 0; i < v.size(); ++i) *this << v[i];
      return *this;
    }

   private:
    friend class CsvTable;
    std::vector<std::string> cells_;
  };

  Row& row() { return rows_.emplace_back(); }
  std::size_t size() const { return rows_.size(); }

  std::string str() const {
    std::string out;
    auto line = [&out](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += "\r\n";
    };
    std::vector<std::string> head;
    for (const auto& h : header_) head.push_back(csv_field(h));
    line(head);
    for (const auto& r : rows_) {
      if (r.cells_.size() != header_.size()) throw Error("csv: row width does not match the header");
      line(r.cells_);
    }
    return out;
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path.string());
    f << str();
  }

 private:
  std::vector<std::string> header_;
  std::vector<Row> rows_;
};

inline std::vector<std::string> indexed_names(const std::string& prefix, Eigen::Index n) {
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// t, x_i, feasibility, objective and the distance to each trajectory.
inline CsvTable record_table(const TrajectoryRecord& rec, Eigen::Index n, const std::vector<MinTrajectory>& minima,
                             int stride = 1) {
  std::vector<std::string> head{"t"};
  for (auto& s : indexed_names("x", n)) head.push_back(s);
  head.push_back("feas_residual");
  head.push_back("objective");
  for (const auto& h : minima) head.push_back("dist_" + h.label());
  CsvTable tab(head);
  const std::size_t N = rec.samples.size();
  for (std::size_t i = 0; i < N; ++i) {
    if (i % static_cast<std::size_t>(std::max(stride, 1)) != 0 && i + 1 != N) continue;
    const auto& s = rec.samples[i];
    auto& r = tab.row();
    r << s.t << s.x << s.feas_residual << s.objective;
    for (const auto& h : minima) r << (s.x - h.h(s.t)).norm();
  }
  return tab;
}

// ---------------------------------------------------------------------------
// JSON

// JSON has no infinities; they are written as strings.
inline Json jnum(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline Json jvec(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(jnum(v[i]));
  return a;
}

inline Json jlist(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(jnum(x));
  return a;
}

inline Vec vec_from_json(const Json& j) {
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

inline Json to_json(const FlowEvent& e) {
  return Json{{"t", jnum(e.t)}, {"kind", to_string(e.kind)}, {"detail", e.detail}};
}

inline Json events_json(const TrajectoryRecord& rec) {
  Json a = Json::array();
  for (const auto& e : rec.events) a.push_back(to_json(e));
  return a;
}

inline Json to_json(const JumpEvent& e) { return Json{{"t", jnum(e.t)}, {"from", e.from}, {"to", e.to}}; }

inline Json to_json(const Region& r) {
  if (r.kind == Region::Kind::ball)
    return Json{{"ball", {{"center", jvec(r.center)}, {"radius", jnum(r.radius)}}}};
  return Json{{"box", {{"lo", jvec(r.lo)}, {"hi", jvec(r.hi)}}}};
}

inline Json to_json(const ConvexityCertificate& c) {
  return Json{{"certificate", "one-point-convexity"},
              {"label", kEvidenceLabel},
              {"h", c.h_label},
              {"valid", c.valid},
              {"c_hat", jnum(c.c_hat)},
              {"r", jnum(c.r)},
              {"t_range", {jnum(c.t_begin), jnum(c.t_end)}},
              {"n_time_nodes", c.n_time_nodes},
              {"n_samples", c.n_samples},
              {"n_rejected", c.n_rejected},
              {"n_retraction_failures", c.n_retraction_failures},
              {"seed", c.seed},
              {"min_ratio_point", {{"e", jvec(c.min_e)}, {"t", jnum(c.min_t)}}}};
}

inline Json to_json(const EquilibriumBranch& b) {
  Json zeros = Json::array();
  for (const auto& [t, e] : b.extra_zeros) zeros.push_back({{"t", jnum(t)}, {"e", jvec(e)}});
  Json ebar = Json::array();
  for (const Vec& e : b.ebar) ebar.push_back(jvec(e));
  return Json{{"averaged", b.averaged}, {"rho", jnum(b.rho)},  {"max_condition", jnum(b.max_condition)},
              {"t", jlist(b.t)},        {"ebar", ebar},         {"extra_zeros", zeros}};
}

inline Json to_json(const DominanceCertificate& d) {
  return Json{{"certificate", "dominance"},
              {"label", kEvidenceLabel},
              {"h1", d.h1_label},
              {"h2", d.h2_label},
              {"mode", to_string(d.mode)},
              {"valid", d.valid},
              {"reason", d.reason},
              {"alpha", jnum(d.alpha)},
              {"t1", jnum(d.t1)},
              {"t2", jnum(d.t2)},
              {"v", jnum(d.v)},
              {"r2", jnum(d.r2)},
              {"region", to_json(d.D)},
              {"n_time_nodes", d.nodes.size()},
              {"rho", jnum(d.rho)},
              {"w_hat", jnum(d.w_hat)},
              {"w_point", {{"e", jvec(d.w_point)}, {"t", jnum(d.w_t)}}},
              {"n_samples", d.n_samples},
              {"seed", d.seed},
              {"invariance_ok", d.invariance_ok},
              {"sign_test", {{"ok", d.sign_test_ok},
                             {"n_boundary_checks", d.n_boundary_checks},
                             {"n_violations", d.n_sign_violations},
                             {"worst_outflow", jnum(d.worst_outflow)}}},
              {"containment", {{"ok", d.containment_ok},
                               {"n_seeds", d.n_seeds},
                               {"dt", jnum(d.containment_dt)},
                               {"tolerance", jnum(d.containment_tol)},
                               {"worst_excursion", jnum(d.worst_excursion)}}},
              {"region_covers", d.region_covers},
              {"n_e1", d.e1_set.size()},
              {"branch", to_json(d.branch)}};
}

inline Json to_json(const JumpCertificate& j) {
  Json out{{"certificate", "jump"},
           {"label", kEvidenceLabel},
           {"mode", to_string(j.mode)},
           {"from", j.from},
           {"to", j.to},
           {"valid", j.valid},
           {"reason", j.reason},
           {"alpha", jnum(j.alpha)},
           {"t1", jnum(j.t1)},
           {"t2", jnum(j.t2)},
           {"r2", jnum(j.r2)},
           {"rho", jnum(j.rho)},
           {"w", jnum(j.w)},
           {"actual_interval", jnum(j.actual_interval)},
           {"worst_e1_distance", jnum(j.worst_e1_distance)},
           {"n_e1", j.n_e1}};
  if (j.mode == DominanceMode::uniform) {
    out["theta"] = jnum(j.theta);
    out["required_interval"] = jnum(j.required_interval);
  } else {
    out["fit"] = j.fit;
    out["eta1"] = jnum(j.eta1);
    out["eta2"] = jnum(j.eta2);
    out["beta1"] = jnum(j.beta1);
    out["beta2"] = jnum(j.beta2);
    out["delta2_integral"] = jnum(j.delta2_integral);
    out["lhs"] = jnum(j.lhs);
    out["rhs"] = jnum(j.rhs);
    out["n_probe_samples"] = j.n_probe_samples;
    out["probe_seed"] = j.probe_seed;
    out["nodes"] = jlist(j.nodes);
    out["delta1"] = jlist(j.delta1);
    out["delta2"] = jlist(j.delta2);
  }
  return out;
}

inline Json to_json(const TrackingCertificate& t) {
  return Json{{"certificate", "tracking"},
              {"label", kEvidenceLabel},
              {"h2", t.h_label},
              {"valid", t.valid},
              {"reason", t.reason},
              {"alpha", jnum(t.alpha)},
              {"c2", jnum(t.c2)},
              {"r2", jnum(t.r2)},
              {"alpha_max", jnum(t.alpha_max)},
              {"gamma_sup", jnum(t.gamma_sup)},
              {"sup_delta2_gamma", jnum(t.sup_delta2_gamma)},
              {"eta1", jnum(t.eta1)},
              {"eta2", jnum(t.eta2)},
              {"initial_radius", jnum(t.initial_radius)},
              {"ultimate_bound", jnum(t.ultimate_bound)},
              {"fit", t.fit},
              {"n_samples", t.n_samples},
              {"seed", t.seed},
              {"t", jlist(t.t)},
              {"gamma", jlist(t.gamma)},
              {"delta1", jlist(t.delta1)},
              {"delta2", jlist(t.delta2)}};
}

inline Json to_json(const EscapeCertificate& e) {
  return Json{{"certificate", "escape"},      {"label", kEvidenceLabel},
              {"valid", e.valid},             {"reason", e.reason},
              {"landing_radius", jnum(e.landing_radius)}, {"jump", to_json(e.jump)},
              {"tracking", to_json(e.tracking)}};
}

inline Json to_json(const SequentialJumpReport& r) {
  Json steps = Json::array();
  for (const auto& s : r.steps) steps.push_back(to_json(s));
  return Json{{"certificate", "sequential-jumps"}, {"label", kEvidenceLabel}, {"valid", r.valid},
              {"chain_ok", r.chain_ok},           {"reason", r.reason},       {"chain", r.chain},
              {"steps", steps}};
}

inline Json to_json(const ShallownessReport& r) {
  return Json{{"report", "shallowness"},
              {"label", kEvidenceLabel},
              {"h1", r.label},
              {"alpha", jnum(r.alpha)},
              {"t0", jnum(r.t0)},
              {"delta", jnum(r.delta)},
              {"epsilon", jnum(r.epsilon)},
              {"lip_hdot", jnum(r.lip_hdot)},
              {"ra_radius", jnum(r.ra_radius)},
              {"ra_radius_min", jnum(r.ra_radius_min)},
              {"E_alpha", jnum(r.E_alpha)},
              {"n_probes", r.n_probes},
              {"n_diverged", r.n_diverged},
              {"reliable", r.reliable},
              {"shallow", r.shallow},
              {"reason", r.reason}};
}

}  // namespace tvopt
