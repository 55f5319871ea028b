#pragma once

#include "tvopt/io.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <thread>
#include <variant>

namespace tvopt {

// Scenario validation failure; the message starts with the offending field path.
class ScenarioError : public InvalidParameter {
 public:
  using InvalidParameter::InvalidParameter;
};

// ---------------------------------------------------------------------------
// typed scenario

struct ProblemSpec {
  std::string name;
  ParamMap params;
  ProblemDefinition make() const { return make_problem(name, params); }
};

struct TraceSpec {
  std::string label;
  Vec seed;
};

struct TrajectorySpec {
  std::string source = "builtin";
  std::vector<TraceSpec> trace;
  double t0 = 0.0, t1 = 0.0, step = 0.01;
};

struct FlowSpec {
  FlowConfig cfg;
  double t0 = 0.0;
  double horizon = 0.0;
};

struct DetectSpec {
  bool enabled = true;
  double window = 0.5;
  int stride = 10;
};

struct SimulateParams {
  Vec x0;
  bool retract_x0 = false;
  int csv_stride = 10;
  DetectSpec detect;
};

struct SweepParams {
  std::vector<double> alphas;
  std::string param;
  std::vector<double> values;
  Vec x0;
  double no_track_radius = 1.0;
  std::string h1, h2;
  DetectSpec detect;
};

struct SamplerSpec {
  std::string reference;
  std::vector<int> free;
  Vec lo, hi;
};

struct BasinParams {
  int n_inits = 50;
  SamplerSpec sampler;
  double success_time = 0.0;
  double success_radius = 0.5;
};

struct ConvergenceParams {
  Vec x0;
  double T = 1.0;
  std::vector<double> dtau;
  std::vector<double> rk4_dt;
};

struct GridSpec {
  double t0 = 0.0, t1 = 1.0;
  int n = 2;
  std::vector<double> points() const { return linspace(t0, t1, n); }
};

struct CertifyParams {
  std::optional<std::string> h1;
  std::string h2;
  double t1 = 0.0, t2 = 0.0;
  std::optional<Region> region;
  double v = 0.0;
  double r2 = 0.5;
  double theta = 0.2;
  std::vector<DominanceMode> modes;
  int n_samples = 2000;
  int n_time_nodes = 65;
  int n_seeds = 120;
  int n_e1 = 200;
  int convexity_samples = 200;
  GridSpec grid;
  int tracking_samples = 500;
  int probe_samples = 500;
  bool verify = true;
  int verify_runs = 4;
  Json reference;
};

struct LandscapeParams {
  std::string h2;
  std::optional<double> alpha;
  std::vector<double> times;
  std::vector<Vec> points;
};

struct DetectParams {
  Vec x0;
  DetectSpec detect;
};

struct ShallownessParams {
  std::string h1;
  double t0 = 0.0, delta = 1.0;
  int n_grid = 21;
  double max_radius = 5.0;
};

struct Experiment {
  std::size_t index = 0;
  std::string id, kind;
  ProblemSpec problem;
  FlowSpec flow;
  TrajectorySpec trajectories;
  std::optional<std::uint64_t> seed;
  std::variant<SimulateParams, SweepParams, BasinParams, ConvergenceParams, CertifyParams, LandscapeParams,
               DetectParams, ShallownessParams>
      params;
};

struct Scenario {
  std::string name;
  std::optional<std::uint64_t> seed;
  std::vector<Experiment> experiments;
};

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k{"simulate",  "sweep",     "basin",        "convergence",
                                          "certify",   "landscape", "detect-jumps", "shallowness"};
  return k;
}

inline bool stochastic_kind(const std::string& k) { return k == "basin" || k == "certify" || k == "shallowness"; }

// ---------------------------------------------------------------------------
// parsing helpers; every error names the field path

namespace detail {

[[noreturn]] inline void bad(const std::string& path, const std::string& msg) { throw ScenarioError(path + ": " + msg); }

inline std::string sub(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline const Json* opt_field(const Json& obj, const std::string& key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline void require_object(const Json& j, const std::string& path) {
  if (!j.is_object()) bad(path, "must be an object");
}

inline void allow_keys(const Json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : keys) ok = ok || it.key() == k;
    if (!ok) bad(sub(path, it.key()), "unknown field");
  }
}

inline const Json& req(const Json& obj, const std::string& key, const std::string& path) {
  const Json* f = opt_field(obj, key);
  if (!f) bad(sub(path, key), "missing required field");
  return *f;
}

enum class Range { any, positive, nonnegative };

inline double as_number(const Json& j, const std::string& path, Range r = Range::any) {
  if (!j.is_number()) bad(path, "must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) bad(path, "must be finite");
  if (r == Range::positive && !(v > 0.0)) bad(path, "must be positive");
  if (r == Range::nonnegative && !(v >= 0.0)) bad(path, "must be non-negative");
  return v;
}

inline double num(const Json& obj, const std::string& key, const std::string& path, std::optional<double> def,
                  Range r = Range::any) {
  const Json* f = opt_field(obj, key);
  if (!f) {
    if (!def) bad(sub(path, key), "missing required field");
    return *def;
  }
  return as_number(*f, sub(path, key), r);
}

inline int integer(const Json& obj, const std::string& key, const std::string& path, std::optional<int> def,
                   int min_value) {
  const Json* f = opt_field(obj, key);
  if (!f) {
    if (!def) bad(sub(path, key), "missing required field");
    return *def;
  }
  if (!f->is_number_integer()) bad(sub(path, key), "must be an integer");
  const auto v = f->get<long long>();
  if (v < min_value) bad(sub(path, key), "must be at least " + std::to_string(min_value));
  if (v > 100000000) bad(sub(path, key), "is too large");
  return static_cast<int>(v);
}

inline std::string str(const Json& obj, const std::string& key, const std::string& path,
                       std::optional<std::string> def) {
  const Json* f = opt_field(obj, key);
  if (!f) {
    if (!def) bad(sub(path, key), "missing required field");
    return *def;
  }
  if (!f->is_string()) bad(sub(path, key), "must be a string");
  return f->get<std::string>();
}

inline bool boolean(const Json& obj, const std::string& key, const std::string& path, bool def) {
  const Json* f = opt_field(obj, key);
  if (!f) return def;
  if (!f->is_boolean()) bad(sub(path, key), "must be true or false");
  return f->get<bool>();
}

inline std::vector<double> num_list(const Json& j, const std::string& path, Range r = Range::any) {
  if (!j.is_array() || j.empty()) bad(path, "must be a non-empty array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_number(j[i], path + "[" + std::to_string(i) + "]", r));
  return out;
}

inline Vec vec(const Json& j, const std::string& path, Eigen::Index n) {
  const auto v = num_list(j, path);
  if (n >= 0 && static_cast<Eigen::Index>(v.size()) != n)
    bad(path, "must have " + std::to_string(n) + " entries");
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::uint64_t seed_value(const Json& j, const std::string& path) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0))
    bad(path, "must be a non-negative integer");
  return j.get<std::uint64_t>();
}

inline ProblemSpec parse_problem(const Json& j, const std::string& path) {
  require_object(j, path);
  allow_keys(j, path, {"name", "params"});
  ProblemSpec ps;
  ps.name = str(j, "name", path, std::nullopt);
  if (!has_problem(ps.name)) bad(sub(path, "name"), "unknown problem '" + ps.name + "'");
  if (const Json* pm = opt_field(j, "params")) {
    require_object(*pm, sub(path, "params"));
    const auto known = problem_params(ps.name);
    for (auto it = pm->begin(); it != pm->end(); ++it) {
      const std::string fp = sub(sub(path, "params"), it.key());
      if (std::find(known.begin(), known.end(), it.key()) == known.end()) bad(fp, "unknown parameter");
      ps.params[it.key()] = as_number(*it, fp);
    }
  }
  try {
    ps.make();
  } catch (const InvalidParameter& e) {
    bad(sub(path, "params"), e.what());
  }
  return ps;
}

inline FlowSpec parse_flow(const Json& j, const std::string& path) {
  require_object(j, path);
  allow_keys(j, path, {"alpha", "alpha_schedule", "dt", "integrator", "retraction", "feas_tol", "horizon", "t0",
                       "record_stride", "containment_radius", "containment_reference"});
  FlowSpec fs;
  auto& c = fs.cfg;
  c.alpha = num(j, "alpha", path, 0.1, Range::positive);
  if (const Json* s = opt_field(j, "alpha_schedule")) {
    const std::string sp = sub(path, "alpha_schedule");
    if (!s->is_array() || s->empty()) bad(sp, "must be a non-empty array of [t, alpha] pairs");
    for (std::size_t i = 0; i < s->size(); ++i) {
      const auto pair = num_list((*s)[i], sp + "[" + std::to_string(i) + "]");
      if (pair.size() != 2) bad(sp + "[" + std::to_string(i) + "]", "must be a [t, alpha] pair");
      c.alpha_schedule.emplace_back(pair[0], pair[1]);
    }
  }
  c.dt = num(j, "dt", path, 1e-3, Range::positive);
  const std::string integ = str(j, "integrator", path, "rk4");
  if (integ == "rk4") c.integrator = Integrator::rk4;
  else if (integ == "euler") c.integrator = Integrator::euler;
  else bad(sub(path, "integrator"), "must be \"rk4\" or \"euler\"");
  const std::string retr = str(j, "retraction", path, "none");
  if (retr == "none") c.retraction = Retraction::none;
  else if (retr == "newton") c.retraction = Retraction::newton;
  else bad(sub(path, "retraction"), "must be \"none\" or \"newton\"");
  c.feas_tol = num(j, "feas_tol", path, 1e-8, Range::positive);
  c.record_stride = integer(j, "record_stride", path, 1, 1);
  fs.horizon = num(j, "horizon", path, 2.0 * M_PI, Range::positive);
  fs.t0 = num(j, "t0", path, 0.0);
  if (opt_field(j, "containment_radius"))
    c.containment_radius = num(j, "containment_radius", path, std::nullopt, Range::positive);
  try {
    if (!c.containment_radius) c.validate();
  } catch (const InvalidParameter& e) {
    bad(path, e.what());
  }
  return fs;
}

inline TrajectorySpec parse_trajectories(const Json& j, const std::string& path, int n, const FlowSpec& flow) {
  require_object(j, path);
  allow_keys(j, path, {"source", "trace", "t0", "t1", "step"});
  TrajectorySpec ts;
  ts.source = str(j, "source", path, "builtin");
  ts.t0 = num(j, "t0", path, flow.t0);
  ts.t1 = num(j, "t1", path, flow.t0 + flow.horizon);
  ts.step = num(j, "step", path, 0.01, Range::positive);
  if (ts.source == "builtin") {
    if (opt_field(j, "trace")) bad(sub(path, "trace"), "only allowed with source \"trace\"");
  } else if (ts.source == "trace") {
    if (!(ts.t1 > ts.t0)) bad(sub(path, "t1"), "must exceed t0");
    const Json& tr = req(j, "trace", path);
    const std::string tp = sub(path, "trace");
    if (!tr.is_array() || tr.empty()) bad(tp, "must be a non-empty array");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < tr.size(); ++i) {
      const std::string ip = tp + "[" + std::to_string(i) + "]";
      require_object(tr[i], ip);
      allow_keys(tr[i], ip, {"label", "seed"});
      TraceSpec t;
      t.label = str(tr[i], "label", ip, std::nullopt);
      if (!seen.insert(t.label).second) bad(sub(ip, "label"), "duplicate label '" + t.label + "'");
      t.seed = vec(req(tr[i], "seed", ip), sub(ip, "seed"), n);
      ts.trace.push_back(t);
    }
  } else {
    bad(sub(path, "source"), "must be \"builtin\" or \"trace\"");
  }
  return ts;
}

inline std::vector<std::string> builtin_labels(const std::string& problem) {
  if (problem == "quartic" || problem == "ackley-constrained") return {"local-1", "global"};
  if (problem == "tracking-quadratic") return {"global"};
  return {};
}

inline std::vector<std::string> trajectory_labels(const ProblemSpec& ps, const TrajectorySpec& ts) {
  if (ts.source == "builtin") return builtin_labels(ps.name);
  std::vector<std::string> out;
  for (const auto& t : ts.trace) out.push_back(t.label);
  return out;
}

inline Json merged(const Json& base, const Json* over) {
  Json out = base.is_null() ? Json::object() : base;
  if (over) {
    if (!over->is_object()) return *over;
    for (auto it = over->begin(); it != over->end(); ++it) out[it.key()] = *it;
  }
  return out;
}

inline DetectSpec parse_detect(const Json& j, const std::string& path) {
  DetectSpec d;
  d.enabled = boolean(j, "detect_jumps", path, true);
  d.window = num(j, "window", path, 0.5, Range::nonnegative);
  d.stride = integer(j, "stride", path, 10, 1);
  return d;
}

inline Region parse_region(const Json& j, const std::string& path, int n) {
  require_object(j, path);
  if (const Json* b = opt_field(j, "box")) {
    allow_keys(j, path, {"box"});
    const std::string bp = sub(path, "box");
    require_object(*b, bp);
    allow_keys(*b, bp, {"lo", "hi"});
    try {
      return Region::box(vec(req(*b, "lo", bp), sub(bp, "lo"), n), vec(req(*b, "hi", bp), sub(bp, "hi"), n));
    } catch (const ScenarioError&) {
      throw;
    } catch (const InvalidParameter& e) {
      bad(bp, e.what());
    }
  }
  if (const Json* b = opt_field(j, "ball")) {
    allow_keys(j, path, {"ball"});
    const std::string bp = sub(path, "ball");
    require_object(*b, bp);
    allow_keys(*b, bp, {"center", "radius"});
    return Region::ball(vec(req(*b, "center", bp), sub(bp, "center"), n),
                        num(*b, "radius", bp, std::nullopt, Range::positive));
  }
  bad(path, "must contain \"box\" or \"ball\"");
}

inline std::string require_label(const std::string& label, const std::vector<std::string>& labels,
                                  const std::string& path) {
  if (std::find(labels.begin(), labels.end(), label) == labels.end()) bad(path, "undefined trajectory '" + label + "'");
  return label;
}

}  // namespace detail

// Parses and validates a scenario document.
inline Scenario parse_scenario(const Json& doc) {
  using namespace detail;
  require_object(doc, "scenario");
  allow_keys(doc, "", {"name", "seed", "problem", "flow", "trajectories", "initial_conditions", "experiments"});
  Scenario sc;
  sc.name = str(doc, "name", "", "scenario");
  if (const Json* s = opt_field(doc, "seed")) sc.seed = seed_value(*s, "seed");
  const Json base_problem = opt_field(doc, "problem") ? doc["problem"] : Json();
  const Json base_flow = opt_field(doc, "flow") ? doc["flow"] : Json::object();
  const Json base_traj = opt_field(doc, "trajectories") ? doc["trajectories"] : Json::object();
  Json base_x0;
  if (const Json* ic = opt_field(doc, "initial_conditions")) {
    require_object(*ic, "initial_conditions");
    allow_keys(*ic, "initial_conditions", {"x0"});
    base_x0 = req(*ic, "x0", "initial_conditions");
  }
  if (!base_problem.is_null()) parse_problem(base_problem, "problem");
  const Json* exps = opt_field(doc, "experiments");
  if (!exps) return sc;
  if (!exps->is_array()) bad("experiments", "must be an array");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < exps->size(); ++i) {
    const std::string ep = "experiments[" + std::to_string(i) + "]";
    const Json& ej = (*exps)[i];
    require_object(ej, ep);
    Experiment ex;
    ex.index = i;
    ex.kind = str(ej, "kind", ep, std::nullopt);
    if (std::find(experiment_kinds().begin(), experiment_kinds().end(), ex.kind) == experiment_kinds().end())
      bad(sub(ep, "kind"), "unknown experiment kind '" + ex.kind + "'");
    ex.id = str(ej, "id", ep, ex.kind + "-" + std::to_string(i));
    static const std::regex id_re("[A-Za-z0-9_.-]+");
    if (!std::regex_match(ex.id, id_re) || ex.id == "summary" || ex.id == "timing")
      bad(sub(ep, "id"), "must be a file-name safe token other than summary/timing");
    if (!ids.insert(ex.id).second) bad(sub(ep, "id"), "duplicate id '" + ex.id + "'");
    if (const Json* s = opt_field(ej, "seed")) ex.seed = seed_value(*s, sub(ep, "seed"));
    if (stochastic_kind(ex.kind) && !ex.seed && !sc.seed)
      bad(sub(ep, "seed"), "required for a stochastic experiment (or set the top-level seed)");

    const Json pj = merged(base_problem, opt_field(ej, "problem"));
    if (pj.empty()) bad(sub(ep, "problem"), "missing (no scenario-level problem either)");
    ex.problem = parse_problem(pj, opt_field(ej, "problem") ? sub(ep, "problem") : "problem");
    const int n = ex.problem.make().n;
    ex.flow = parse_flow(merged(base_flow, opt_field(ej, "flow")), opt_field(ej, "flow") ? sub(ep, "flow") : "flow");
    ex.trajectories = parse_trajectories(merged(base_traj, opt_field(ej, "trajectories")),
                                         opt_field(ej, "trajectories") ? sub(ep, "trajectories") : "trajectories", n,
                                         ex.flow);
    const auto labels = trajectory_labels(ex.problem, ex.trajectories);
    if (ex.flow.cfg.containment_radius) {
      const std::string r = str(merged(base_flow, opt_field(ej, "flow")), "containment_reference", sub(ep, "flow"),
                                std::nullopt);
      require_label(r, labels, sub(sub(ep, "flow"), "containment_reference"));
    }

    auto x0_of = [&](const std::string& key) -> Vec {
      if (const Json* x = opt_field(ej, key)) return vec(*x, sub(ep, key), n);
      if (!base_x0.is_null()) return vec(base_x0, "initial_conditions.x0", n);
      bad(sub(ep, key), "missing (no initial_conditions.x0 either)");
    };
    auto label_or = [&](const char* key, std::size_t fallback) {
      const Json* f = opt_field(ej, key);
      if (!f) {
        if (labels.size() <= fallback) bad(sub(ep, key), "missing and the problem has no default trajectory");
        return labels[fallback];
      }
      return require_label(str(ej, key, ep, std::nullopt), labels, sub(ep, key));
    };
    auto common = std::initializer_list<const char*>{"kind", "id", "seed", "problem", "flow", "trajectories"};
    auto allow = [&](std::initializer_list<const char*> extra) {
      for (auto it = ej.begin(); it != ej.end(); ++it) {
        bool ok = false;
        for (const char* k : common) ok = ok || it.key() == k;
        for (const char* k : extra) ok = ok || it.key() == k;
        if (!ok) bad(sub(ep, it.key()), "unknown field for kind '" + ex.kind + "'");
      }
    };

    if (ex.kind == "simulate") {
      allow({"x0", "retract_x0", "csv_stride", "detect_jumps", "window", "stride"});
      SimulateParams sp;
      sp.x0 = x0_of("x0");
      sp.retract_x0 = boolean(ej, "retract_x0", ep, false);
      sp.csv_stride = integer(ej, "csv_stride", ep, 10, 1);
      sp.detect = parse_detect(ej, ep);
      if (sp.detect.enabled && labels.empty()) bad(sub(ep, "detect_jumps"), "needs trajectories");
      ex.params = sp;
    } else if (ex.kind == "sweep") {
      allow({"alphas", "param", "values", "x0", "no_track_radius", "h1", "h2", "detect_jumps", "window", "stride"});
      SweepParams sp;
      sp.alphas = num_list(req(ej, "alphas", ep), sub(ep, "alphas"), Range::positive);
      if (opt_field(ej, "param")) {
        sp.param = str(ej, "param", ep, std::nullopt);
        const auto known = problem_params(ex.problem.name);
        if (std::find(known.begin(), known.end(), sp.param) == known.end())
          bad(sub(ep, "param"), "problem '" + ex.problem.name + "' has no parameter '" + sp.param + "'");
        sp.values = num_list(req(ej, "values", ep), sub(ep, "values"));
        for (std::size_t k = 0; k < sp.values.size(); ++k) {
          ProblemSpec ps = ex.problem;
          ps.params[sp.param] = sp.values[k];
          try {
            ps.make();
          } catch (const InvalidParameter& e) {
            bad(sub(ep, "values") + "[" + std::to_string(k) + "]", e.what());
          }
        }
      } else if (opt_field(ej, "values")) {
        bad(sub(ep, "values"), "needs \"param\"");
      }
      sp.x0 = x0_of("x0");
      sp.no_track_radius = num(ej, "no_track_radius", ep, 1.0, Range::positive);
      sp.h1 = label_or("h1", 0);
      sp.h2 = label_or("h2", labels.size() > 1 ? 1 : 0);
      sp.detect = parse_detect(ej, ep);
      ex.params = sp;
    } else if (ex.kind == "basin") {
      allow({"n_inits", "sampler", "success_time", "success_radius"});
      BasinParams bp;
      bp.n_inits = integer(ej, "n_inits", ep, 50, 0);
      const std::string sp = sub(ep, "sampler");
      const Json& s = req(ej, "sampler", ep);
      require_object(s, sp);
      allow_keys(s, sp, {"reference", "free", "lo", "hi"});
      bp.sampler.reference = require_label(str(s, "reference", sp, std::nullopt), labels, sub(sp, "reference"));
      if (const Json* f = opt_field(s, "free")) {
        if (!f->is_array() || f->empty()) bad(sub(sp, "free"), "must be a non-empty array of coordinate indices");
        for (std::size_t k = 0; k < f->size(); ++k) {
          const std::string fp = sub(sp, "free") + "[" + std::to_string(k) + "]";
          if (!(*f)[k].is_number_integer() || (*f)[k].get<int>() < 0 || (*f)[k].get<int>() >= n)
            bad(fp, "must be a coordinate index in [0, " + std::to_string(n) + ")");
          bp.sampler.free.push_back((*f)[k].get<int>());
        }
      } else {
        for (int k = 0; k < n; ++k) bp.sampler.free.push_back(k);
      }
      const int m = ex.problem.make().m;
      if (static_cast<int>(bp.sampler.free.size()) + m != n)
        bad(sub(sp, "free"), "must leave exactly m = " + std::to_string(m) + " dependent coordinates");
      const auto nf = static_cast<Eigen::Index>(bp.sampler.free.size());
      bp.sampler.lo = vec(req(s, "lo", sp), sub(sp, "lo"), nf);
      bp.sampler.hi = vec(req(s, "hi", sp), sub(sp, "hi"), nf);
      for (Eigen::Index k = 0; k < nf; ++k)
        if (!(bp.sampler.lo[k] <= bp.sampler.hi[k])) bad(sub(sp, "hi"), "must be >= lo in every entry");
      bp.success_time = num(ej, "success_time", ep, ex.flow.t0);
      bp.success_radius = num(ej, "success_radius", ep, 0.5, Range::positive);
      if (bp.success_time > ex.flow.t0 + ex.flow.horizon) bad(sub(ep, "success_time"), "lies beyond the horizon");
      ex.params = bp;
    } else if (ex.kind == "convergence") {
      allow({"x0", "T", "dtau", "rk4_dt"});
      ConvergenceParams cp;
      cp.x0 = x0_of("x0");
      cp.T = num(ej, "T", ep, ex.flow.horizon, Range::positive);
      cp.dtau = num_list(req(ej, "dtau", ep), sub(ep, "dtau"), Range::positive);
      if (const Json* r = opt_field(ej, "rk4_dt")) cp.rk4_dt = num_list(*r, sub(ep, "rk4_dt"), Range::positive);
      ex.params = cp;
    } else if (ex.kind == "certify") {
      allow({"h1", "h2", "t1", "t2", "region", "v", "r2", "theta", "mode", "n_samples", "n_time_nodes", "n_seeds",
             "n_e1", "convexity_samples", "grid", "tracking_samples", "probe_samples", "verify", "verify_runs",
             "reference"});
      CertifyParams cp;
      if (opt_field(ej, "h1")) cp.h1 = require_label(str(ej, "h1", ep, std::nullopt), labels, sub(ep, "h1"));
      cp.h2 = label_or("h2", labels.size() > 1 ? 1 : 0);
      cp.t1 = num(ej, "t1", ep, ex.flow.t0);
      cp.t2 = num(ej, "t2", ep, cp.h1 ? std::nullopt : std::optional<double>(cp.t1 + 1.0));
      if (!(cp.t2 > cp.t1)) bad(sub(ep, "t2"), "must exceed t1");
      if (cp.h1) cp.region = parse_region(req(ej, "region", ep), sub(ep, "region"), n);
      cp.v = num(ej, "v", ep, 0.0, Range::nonnegative);
      cp.r2 = num(ej, "r2", ep, 0.5, Range::positive);
      cp.theta = num(ej, "theta", ep, 0.2);
      if (!(cp.theta > 0.0 && cp.theta < 1.0)) bad(sub(ep, "theta"), "must lie in (0, 1)");
      const std::string mode = str(ej, "mode", ep, "both");
      if (mode == "uniform") cp.modes = {DominanceMode::uniform};
      else if (mode == "averaged") cp.modes = {DominanceMode::averaged};
      else if (mode == "both") cp.modes = {DominanceMode::uniform, DominanceMode::averaged};
      else bad(sub(ep, "mode"), "must be \"uniform\", \"averaged\" or \"both\"");
      cp.n_samples = integer(ej, "n_samples", ep, 2000, 1);
      cp.n_time_nodes = integer(ej, "n_time_nodes", ep, 65, 65);
      cp.n_seeds = integer(ej, "n_seeds", ep, 120, 100);
      cp.n_e1 = integer(ej, "n_e1", ep, 200, 1);
      cp.convexity_samples = integer(ej, "convexity_samples", ep, 200, 1);
      if (const Json* g = opt_field(ej, "grid")) {
        const std::string gp = sub(ep, "grid");
        require_object(*g, gp);
        allow_keys(*g, gp, {"t0", "t1", "n"});
        cp.grid.t0 = num(*g, "t0", gp, ex.flow.t0);
        cp.grid.t1 = num(*g, "t1", gp, ex.flow.t0 + ex.flow.horizon);
        cp.grid.n = integer(*g, "n", gp, 65, 2);
        if (!(cp.grid.t1 > cp.grid.t0)) bad(sub(gp, "t1"), "must exceed t0");
      } else {
        cp.grid = {ex.flow.t0, ex.flow.t0 + ex.flow.horizon, 65};
      }
      cp.tracking_samples = integer(ej, "tracking_samples", ep, 500, 1);
      cp.probe_samples = integer(ej, "probe_samples", ep, 500, 1);
      cp.verify = boolean(ej, "verify", ep, true);
      cp.verify_runs = integer(ej, "verify_runs", ep, 4, 0);
      if (const Json* r = opt_field(ej, "reference")) {
        require_object(*r, sub(ep, "reference"));
        cp.reference = *r;
      }
      ex.params = cp;
    } else if (ex.kind == "landscape") {
      allow({"h2", "alpha", "times", "grid", "points"});
      LandscapeParams lp;
      lp.h2 = label_or("h2", labels.size() > 1 ? 1 : 0);
      if (opt_field(ej, "alpha")) lp.alpha = num(ej, "alpha", ep, std::nullopt, Range::nonnegative);
      lp.times = num_list(req(ej, "times", ep), sub(ep, "times"));
      if (const Json* g = opt_field(ej, "grid")) {
        const std::string gp = sub(ep, "grid");
        require_object(*g, gp);
        allow_keys(*g, gp, {"lo", "hi", "n"});
        if (n != 1) bad(gp, "a scalar grid needs a one-dimensional problem; use \"points\"");
        const double lo = num(*g, "lo", gp, std::nullopt), hi = num(*g, "hi", gp, std::nullopt);
        if (!(hi > lo)) bad(sub(gp, "hi"), "must exceed lo");
        for (double e : linspace(lo, hi, integer(*g, "n", gp, 501, 2))) lp.points.push_back(Vec::Constant(1, e));
      } else {
        const Json& pts = req(ej, "points", ep);
        if (!pts.is_array() || pts.empty()) bad(sub(ep, "points"), "must be a non-empty array");
        for (std::size_t k = 0; k < pts.size(); ++k)
          lp.points.push_back(vec(pts[k], sub(ep, "points") + "[" + std::to_string(k) + "]", n));
      }
      ex.params = lp;
    } else if (ex.kind == "detect-jumps") {
      allow({"x0", "window", "stride"});
      DetectParams dp;
      dp.x0 = x0_of("x0");
      dp.detect = parse_detect(ej, ep);
      if (labels.empty()) bad(sub(ep, "trajectories"), "detect-jumps needs trajectories");
      ex.params = dp;
    } else if (ex.kind == "shallowness") {
      allow({"h1", "t0", "delta", "n_grid", "max_radius"});
      ShallownessParams sp;
      sp.h1 = label_or("h1", 0);
      sp.t0 = num(ej, "t0", ep, ex.flow.t0);
      sp.delta = num(ej, "delta", ep, std::nullopt, Range::positive);
      sp.n_grid = integer(ej, "n_grid", ep, 21, 2);
      sp.max_radius = num(ej, "max_radius", ep, 5.0, Range::positive);
      ex.params = sp;
    }
    sc.experiments.push_back(std::move(ex));
  }
  return sc;
}

inline Json load_json_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ScenarioError(path.string() + ": cannot open scenario file");
  try {
    return Json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ScenarioError(path.string() + ": parse error: " + e.what());
  }
}

inline Scenario load_scenario(const std::filesystem::path& path) { return parse_scenario(load_json_file(path)); }

// ---------------------------------------------------------------------------
// execution

struct RunOptions {
  std::filesystem::path out_dir = "out";
  int workers = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> only_kind;
};

struct RunResult {
  Json summary;
  Json timing;
  std::size_t n_failed = 0;
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions are
// returned per index; results are placed by index by the caller.
inline std::vector<std::exception_ptr> parallel_for(std::size_t n, int workers,
                                                    const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errs(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errs[i] = std::current_exception();
      }
    }
  };
  const int k = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (k == 1) {
    work();
    return errs;
  }
  std::vector<std::thread> pool;
  for (int i = 0; i < k; ++i) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  return errs;
}

inline std::string what(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    return ex.what();
  } catch (...) {
    return "unknown error";
  }
}

inline std::vector<MinTrajectory> build_trajectories(const ProblemDefinition& p, const ProblemSpec& ps,
                                                     const TrajectorySpec& ts) {
  if (ts.source == "builtin") {
    auto param = [&](const char* k, double d) { return param_or(ps.params, k, d); };
    if (ps.name == "quartic") return quartic_trajectories(param("b", 5.0));
    if (ps.name == "ackley-constrained") return ackley_trajectories(param("d", 0.01));
    if (ps.name == "tracking-quadratic") return {tracking_quadratic_trajectory(param("omega", 1.0))};
    return {};
  }
  std::vector<MinTrajectory> out;
  const int N = std::max(2, static_cast<int>(std::ceil((ts.t1 - ts.t0) / ts.step)) + 1);
  for (const auto& tr : ts.trace) {
    const TraceResult r = trace_minimum_trajectory(p, linspace(ts.t0, ts.t1, N), tr.seed, tr.label);
    if (r.truncated) throw BranchLossError("trajectory '" + tr.label + "' " + r.reason);
    out.push_back(r.trajectory);
  }
  return out;
}

inline const MinTrajectory& find_traj(const std::vector<MinTrajectory>& ts, const std::string& label) {
  for (const auto& t : ts)
    if (t.label() == label) return t;
  throw InvalidParameter("undefined trajectory '" + label + "'");
}

inline FlowConfig flow_for(const Experiment& ex, const std::vector<MinTrajectory>& trajs, const Json& doc_flow) {
  FlowConfig c = ex.flow.cfg;
  if (c.containment_radius) c.containment_reference = find_traj(trajs, doc_flow.value("containment_reference", ""));
  return c;
}

struct Context {
  const Experiment& ex;
  std::filesystem::path out;
  std::uint64_t seed;
  int workers;
  Json files = Json::array();

  std::string file(const std::string& suffix) {
    const std::string name = ex.id + suffix;
    files.push_back(name);
    return (out / name).string();
  }
};

inline Json distances(const Sample& s, const std::vector<MinTrajectory>& trajs) {
  Json d = Json::object();
  for (const auto& h : trajs) d[h.label()] = jnum((s.x - h.h(s.t)).norm());
  return d;
}

inline std::string nearest_label(const Sample& s, const std::vector<MinTrajectory>& trajs, double radius,
                                 double* dist = nullptr) {
  std::string best = "no-track";
  double bd = kInf;
  for (const auto& h : trajs) {
    const double d = (s.x - h.h(s.t)).norm();
    if (d < bd) {
      bd = d;
      if (d <= radius) best = h.label();
    }
  }
  if (dist) *dist = bd;
  return best;
}

inline Vec prepare_x0(const ProblemDefinition& p, const Vec& x0, double t0, bool retract) {
  if (!retract || p.m == 0) return x0;
  const RetractResult r = newton_retract(p, x0, t0, 1e-12, 50);
  if (!r.converged) throw PreconditionError("x0 could not be retracted onto the constraint set");
  return r.x;
}

inline Json events_summary(const std::vector<JumpEvent>& ev) {
  Json a = Json::array();
  for (const auto& e : ev) a.push_back(to_json(e));
  return a;
}

inline Json run_simulate(Context& cx, const SimulateParams& sp, const FlowConfig& cfg) {
  const auto& ex = cx.ex;
  const auto p = ex.problem.make();
  const auto trajs = build_trajectories(p, ex.problem, ex.trajectories);
  const Vec x0 = prepare_x0(p, sp.x0, ex.flow.t0, sp.retract_x0);
  const TrajectoryRecord rec = integrate_pode(p, x0, ex.flow.t0, ex.flow.t0 + ex.flow.horizon, cfg);
  record_table(rec, p.n, trajs, sp.csv_stride).write(cx.file(".csv"));
  write_json(cx.file(".events.json"), events_json(rec));
  Json r{{"completed", rec.completed},
         {"abort_reason", rec.abort_reason},
         {"n_samples", rec.samples.size()},
         {"final_t", jnum(rec.samples.back().t)},
         {"final_x", jvec(rec.samples.back().x)},
         {"max_feas", jnum(rec.max_feas())},
         {"n_events", rec.events.size()},
         {"n_retractions", rec.count(EventKind::retraction)},
         {"n_containment_violations", rec.count(EventKind::containment_violation)}};
  if (!trajs.empty()) {
    r["final_distance"] = distances(rec.samples.back(), trajs);
    r["nearest"] = nearest_label(rec.samples.back(), trajs, kInf);
  }
  if (sp.detect.enabled) {
    DetectOptions d;
    d.window = sp.detect.window;
    d.stride = sp.detect.stride;
    r["jumps"] = events_summary(detect_jumps(p, rec, trajs, d));
  }
  return r;
}

inline Json run_sweep(Context& cx, const SweepParams& sp, const FlowConfig& base) {
  const auto& ex = cx.ex;
  struct Cell {
    double alpha = 0, value = 0;
    std::string outcome, nearest;
    Json dist;
    std::vector<JumpEvent> jumps;
    double final_distance = kInf;
  };
  const std::vector<double> values = sp.param.empty() ? std::vector<double>{0.0} : sp.values;
  std::vector<Cell> cells;
  for (double v : values)
    for (double a : sp.alphas) cells.push_back({a, v, "", "", Json(), {}, kInf});
  std::vector<std::string> labels;
  const auto errs = parallel_for(cells.size(), cx.workers, [&](std::size_t i) {
    Cell& c = cells[i];
    ProblemSpec ps = ex.problem;
    if (!sp.param.empty()) ps.params[sp.param] = c.value;
    const auto p = ps.make();
    const auto trajs = build_trajectories(p, ps, ex.trajectories);
    FlowConfig cfg = base;
    cfg.alpha = c.alpha;
    cfg.alpha_schedule.clear();
    const TrajectoryRecord rec = integrate_pode(p, sp.x0, ex.flow.t0, ex.flow.t0 + ex.flow.horizon, cfg);
    const Sample& last = rec.samples.back();
    c.dist = distances(last, trajs);
    c.nearest = nearest_label(last, trajs, sp.no_track_radius, &c.final_distance);
    c.outcome = c.nearest == sp.h1 ? "tracks-h1" : c.nearest == sp.h2 ? "tracks-h2" : c.nearest == "no-track" ? "no-track" : "tracks-" + c.nearest;
    if (!rec.completed) c.outcome = "aborted";
    DetectOptions d;
    d.window = sp.detect.window;
    d.stride = sp.detect.stride;
    if (sp.detect.enabled) c.jumps = detect_jumps(p, rec, trajs, d);
  });
  for (std::size_t i = 0; i < errs.size(); ++i)
    if (errs[i]) throw Error("cell " + std::to_string(i) + ": " + what(errs[i]));
  for (auto it = cells.front().dist.begin(); it != cells.front().dist.end(); ++it) labels.push_back(it.key());
  std::vector<std::string> head{"cell", "alpha", sp.param.empty() ? "param" : sp.param, "outcome", "nearest"};
  for (const auto& l : labels) head.push_back("final_dist_" + l);
  head.push_back("n_jumps");
  head.push_back("first_jump_t");
  CsvTable tab(head);
  Json jc = Json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    auto& row = tab.row();
    row << i << c.alpha << c.value << c.outcome << c.nearest;
    for (const auto& l : labels) row << c.dist[l].get<double>();
    row << c.jumps.size() << (c.jumps.empty() ? std::nan("") : c.jumps.front().t);
    jc.push_back({{"alpha", jnum(c.alpha)},
                  {"value", jnum(c.value)},
                  {"outcome", c.outcome},
                  {"nearest", c.nearest},
                  {"final_distance", c.dist},
                  {"jumps", events_summary(c.jumps)}});
  }
  tab.write(cx.file(".csv"));
  // alpha intervals where the outcome changes, per parameter value
  Json transitions = Json::array();
  for (std::size_t vi = 0; vi < values.size(); ++vi)
    for (std::size_t ai = 1; ai < sp.alphas.size(); ++ai) {
      const Cell& a = cells[vi * sp.alphas.size() + ai - 1];
      const Cell& b = cells[vi * sp.alphas.size() + ai];
      if (a.outcome != b.outcome)
        transitions.push_back({{"value", jnum(a.value)},
                               {"alpha_from", jnum(a.alpha)},
                               {"alpha_to", jnum(b.alpha)},
                               {"from", a.outcome},
                               {"to", b.outcome}});
    }
  return Json{{"param", sp.param}, {"h1", sp.h1}, {"h2", sp.h2}, {"no_track_radius", jnum(sp.no_track_radius)},
              {"n_cells", cells.size()}, {"cells", jc}, {"transitions", transitions}};
}

// Random feasible initial point: free coordinates offset from the reference
// trajectory, the others solved from the constraints.
inline Vec sample_initial(const ProblemDefinition& p, const SamplerSpec& s, const MinTrajectory& ref, double t0,
                          Rng& rng) {
  const Vec base = ref.h(t0);
  std::vector<int> dep;
  for (int k = 0; k < p.n; ++k)
    if (std::find(s.free.begin(), s.free.end(), k) == s.free.end()) dep.push_back(k);
  for (int attempt = 0; attempt < 10; ++attempt) {
    Vec x = base;
    for (std::size_t k = 0; k < s.free.size(); ++k)
      x[s.free[k]] += rng.uniform(s.lo[static_cast<Eigen::Index>(k)], s.hi[static_cast<Eigen::Index>(k)]);
    if (p.m == 0) return x;
    bool ok = false;
    for (int it = 0; it < 50; ++it) {
      const Vec g = eval_g(p, x, t0);
      if (g.norm() <= 1e-12) {
        ok = true;
        break;
      }
      const Mat J = eval_jac_g(p, x, t0);
      Mat Jd(p.m, static_cast<Eigen::Index>(dep.size()));
      for (std::size_t k = 0; k < dep.size(); ++k) Jd.col(static_cast<Eigen::Index>(k)) = J.col(dep[k]);
      const Vec d = Jd.colPivHouseholderQr().solve(-g);
      if (!d.allFinite()) break;
      for (std::size_t k = 0; k < dep.size(); ++k) x[dep[k]] += d[static_cast<Eigen::Index>(k)];
    }
    if (ok) return x;
  }
  throw SamplingFailure("basin: no feasible initial point after 10 tries");
}

inline Json run_basin(Context& cx, const BasinParams& bp, const FlowConfig& cfg) {
  const auto& ex = cx.ex;
  const auto p = ex.problem.make();
  const auto trajs = build_trajectories(p, ex.problem, ex.trajectories);
  const MinTrajectory& ref = find_traj(trajs, bp.sampler.reference);
  struct Run {
    Vec x0;
    std::string start_nearest, start_basin, outcome;
    double worst = kInf;
    bool completed = false;
  };
  std::vector<Run> runs(static_cast<std::size_t>(bp.n_inits));
  const double t0 = ex.flow.t0, t1 = ex.flow.t0 + ex.flow.horizon;
  const auto errs = parallel_for(runs.size(), cx.workers, [&](std::size_t i) {
    Run& r = runs[i];
    Rng rng(sub_seed(cx.seed, i));
    r.x0 = sample_initial(p, bp.sampler, ref, t0, rng);
    r.start_nearest = nearest_label({t0, r.x0, 0.0, 0.0}, trajs, kInf);
    r.start_basin = frozen_flow_classify(p, t0, r.x0, trajs);
    const TrajectoryRecord rec = integrate_pode(p, r.x0, t0, t1, cfg);
    r.completed = rec.completed;
    r.outcome = "none";
    for (const auto& h : trajs) {
      double worst = 0.0;
      bool seen = false;
      for (const auto& s : rec.samples)
        if (s.t >= bp.success_time - 1e-12) {
          seen = true;
          worst = std::max(worst, (s.x - h.h(s.t)).norm());
        }
      if (seen && rec.completed && worst <= bp.success_radius) {
        r.outcome = h.label();
        r.worst = worst;
        break;
      }
      if (seen) r.worst = std::min(r.worst, worst);
    }
  });
  for (std::size_t i = 0; i < errs.size(); ++i)
    if (errs[i]) throw Error("init " + std::to_string(i) + ": " + what(errs[i]));
  std::vector<std::string> head{"init"};
  for (auto& s : indexed_names("x0_", p.n)) head.push_back(s);
  for (const char* s : {"start_nearest", "start_basin", "outcome", "max_distance_after_success_time"}) head.push_back(s);
  CsvTable tab(head);
  std::map<std::string, std::size_t> counts;
  for (const auto& h : trajs) counts[h.label()] = 0;
  counts["none"] = 0;
  std::size_t kept_start = 0, kept_basin = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const Run& r = runs[i];
    tab.row() << i << r.x0 << r.start_nearest << r.start_basin << r.outcome << r.worst;
    ++counts[r.outcome];
    if (r.outcome == r.start_nearest) ++kept_start;
    if (r.outcome == r.start_basin) ++kept_basin;
  }
  tab.write(cx.file(".csv"));
  Json fr = Json::object();
  for (const auto& h : trajs) fr[h.label()] = runs.empty() ? Json() : Json(double(counts[h.label()]) / runs.size());
  fr["none"] = runs.empty() ? Json() : Json(double(counts["none"]) / runs.size());
  return Json{{"n_inits", runs.size()},
              {"seed", cx.seed},
              {"success_time", jnum(bp.success_time)},
              {"success_radius", jnum(bp.success_radius)},
              {"fractions", fr},
              {"fraction_tracking_start_nearest", runs.empty() ? Json() : Json(double(kept_start) / runs.size())},
              {"fraction_tracking_start_basin", runs.empty() ? Json() : Json(double(kept_basin) / runs.size())}};
}

inline Json run_convergence(Context& cx, const ConvergenceParams& cp, const FlowConfig& cfg) {
  const auto& ex = cx.ex;
  const auto p = ex.problem.make();
  const auto trajs = build_trajectories(p, ex.problem, ex.trajectories);
  const ConvergenceTable tab = convergence_experiment(p, cp.x0, cfg.alpha, cp.T, cp.dtau, trajs);
  CsvTable csv({"dtau", "prox_error", "euler_error", "prox_label", "euler_label", "prox_failures"});
  Json rows = Json::array();
  for (const auto& r : tab.rows) {
    csv.row() << r.dtau << r.prox_error << r.euler_error << r.prox_label << r.euler_label << r.prox_failures;
    rows.push_back({{"dtau", jnum(r.dtau)}, {"prox_error", jnum(r.prox_error)}, {"euler_error", jnum(r.euler_error)}});
  }
  csv.write(cx.file(".csv"));
  Json out{{"alpha", jnum(cfg.alpha)},
           {"T", jnum(cp.T)},
           {"reference_dt", jnum(tab.reference_dt)},
           {"reference_label", tab.reference_label},
           {"rows", rows},
           {"prox_ratios", jlist(tab.ratios(true))},
           {"euler_ratios", jlist(tab.ratios(false))}};
  if (!cp.rk4_dt.empty()) {
    const auto errs = rk4_convergence(p, tab.x0, cfg.alpha, cp.T, cp.rk4_dt);
    Json e = Json::array(), ratios = Json::array();
    for (std::size_t i = 0; i < errs.size(); ++i) {
      e.push_back({{"dt", jnum(errs[i].dt)}, {"error", jnum(errs[i].error)}});
      if (i && errs[i].error > 1e-12) ratios.push_back(jnum(errs[i - 1].error / errs[i].error));
    }
    out["rk4"] = e;
    out["rk4_ratios"] = ratios;
  }
  return out;
}

inline Json run_certify(Context& cx, const CertifyParams& cp) {
  const auto& ex = cx.ex;
  const auto p = ex.problem.make();
  const auto trajs = build_trajectories(p, ex.problem, ex.trajectories);
  const MinTrajectory& h2 = find_traj(trajs, cp.h2);
  const double alpha = ex.flow.cfg.alpha;
  Json doc{{"label", kEvidenceLabel}, {"alpha", jnum(alpha)}, {"h2", cp.h2}};
  Json res{{"alpha", jnum(alpha)}};
  if (!cp.reference.is_null()) res["reference"] = cp.reference;

  const auto grid = cp.grid.points();
  const auto conv = estimate_one_point_convexity(p, h2, cp.r2, grid, cp.convexity_samples, sub_seed(cx.seed, 1));
  doc["convexity"] = to_json(conv);
  res["convexity"] = {{"valid", conv.valid}, {"c_hat", jnum(conv.c_hat)}};

  std::optional<TrackingCertificate> track;
  try {
    TrackingOptions to;
    to.n_samples = cp.tracking_samples;
    to.seed = sub_seed(cx.seed, 2);
    track = tracking_certificate(p, h2, alpha, conv, grid, to);
    doc["tracking"] = to_json(*track);
    res["tracking"] = {{"valid", track->valid},
                       {"alpha_max", jnum(track->alpha_max)},
                       {"eta2", jnum(track->eta2)},
                       {"fit", track->fit}};
  } catch (const Error& e) {
    res["tracking"] = {{"valid", false}, {"error", e.what()}};
    doc["tracking"] = {{"error", e.what()}};
  }

  FlowConfig vcfg;
  vcfg.alpha = alpha;
  vcfg.dt = ex.flow.cfg.dt;
  if (p.m > 0) {
    vcfg.retraction = Retraction::newton;
    vcfg.feas_tol = 1e-10;
  }

  if (cp.verify && track && track->valid) {
    // runs started inside the r2/e^eta2 ball must respect the predicted bound
    const double t0 = grid.front(), t1 = grid.back();
    Rng rng(sub_seed(cx.seed, 3));
    std::vector<Vec> starts{Vec::Zero(p.n)};
    const double rad = 0.999 * track->initial_radius;
    if (p.m == 0) {
      for (int i = 0; i < cp.verify_runs; ++i) starts.push_back(rad * rng.unit_vec(p.n));
    } else {
      for (const Vec& e : detail::sample_tangent_ball(p, h2.h(t0), t0, rad, cp.verify_runs, rng).e) starts.push_back(e);
    }
    double worst = 0.0;
    bool ok = true;
    for (const Vec& e1 : starts) {
      const auto rec = integrate_pode(p, h2.h(t0) + e1, t0, t1, vcfg);
      ok = ok && rec.completed;
      for (const auto& s : rec.samples) {
        const double err = (s.x - h2.h(s.t)).norm();
        const double bound = track->predicted_error(s.t, e1.norm());
        worst = std::max(worst, err / std::max(bound, 1e-300));
        if (err > 1.05 * bound) ok = false;
      }
    }
    res["tracking_check"] = {{"runs", starts.size()}, {"worst_ratio", jnum(worst)}, {"ok", ok}};
  }

  if (cp.h1) {
    const MinTrajectory& h1 = find_traj(trajs, *cp.h1);
    Json jumps = Json::object();
    Json escapes = Json::object();
    bool any_escape = false;
    for (DominanceMode mode : cp.modes) {
      const std::string key = to_string(mode);
      Json mres;
      try {
        DominanceOptions o;
        o.alpha = alpha;
        o.t1 = cp.t1;
        o.t2 = cp.t2;
        o.D = cp.region;
        o.v = cp.v;
        o.r2 = cp.r2;
        o.mode = mode;
        o.n_samples = cp.n_samples;
        o.n_time_nodes = cp.n_time_nodes;
        o.n_seeds = cp.n_seeds;
        o.n_e1 = cp.n_e1;
        o.seed = sub_seed(cx.seed, 10, static_cast<std::uint64_t>(mode));
        o.branch.seed = sub_seed(cx.seed, 11, static_cast<std::uint64_t>(mode));
        const auto dom = check_dominance(p, h1, h2, o);
        doc["dominance_" + key] = to_json(dom);
        mres["dominance"] = {{"valid", dom.valid},     {"reason", dom.reason},
                             {"w_hat", jnum(dom.w_hat)}, {"rho", jnum(dom.rho)},
                             {"invariance_ok", dom.invariance_ok}, {"extra_zeros", dom.branch.extra_zeros.size()}};
        if (!dom.valid) {
          mres["jump"] = {{"valid", false}, {"error", "dominance invalid"}};
        } else {
          const JumpCertificate jc =
              mode == DominanceMode::uniform
                  ? jump_certificate(dom, dom.e1_set, cp.theta)
                  : jump_certificate_averaged(p, h2, dom, dom.e1_set,
                                              {cp.probe_samples, sub_seed(cx.seed, 12), DeltaFit::best});
          doc["jump_" + key] = to_json(jc);
          mres["jump"] = {{"valid", jc.valid}, {"reason", jc.reason}};
          if (mode == DominanceMode::uniform) mres["jump"]["required_interval"] = jnum(jc.required_interval);
          else mres["jump"]["lhs"] = jnum(jc.lhs), mres["jump"]["rhs"] = jnum(jc.rhs);
          mres["jump"]["actual_interval"] = jnum(jc.actual_interval);
          if (cp.verify && jc.valid) {
            // every tested start must land in the (r2 - rho)-ball of ebar(t2)
            const Vec target = dom.branch.at(cp.t2);
            double worst = 0.0;
            bool ok = true;
            for (const Vec& e1 : dom.e1_set) {
              const auto rec = integrate_pode(p, e1 + h2.h(cp.t1), cp.t1, cp.t2, vcfg);
              const Sample& s = rec.samples.back();
              const double d = (s.x - h2.h(s.t) - target).norm();
              worst = std::max(worst, d);
              if (!rec.completed || d > jc.r2 - jc.rho) ok = false;
            }
            mres["landing_check"] = {
                {"runs", dom.e1_set.size()}, {"worst_distance", jnum(worst)}, {"radius", jnum(jc.r2 - jc.rho)}, {"ok", ok}};
          }
          if (track) {
            try {
              const auto esc = escape_certificate(jc, *track);
              doc["escape_" + key] = to_json(esc);
              escapes[key] = {{"valid", esc.valid}, {"reason", esc.reason}};
              any_escape = any_escape || esc.valid;
            } catch (const Refusal& e) {
              escapes[key] = {{"valid", false}, {"error", e.what()}};
            }
          }
        }
      } catch (const Error& e) {
        mres["error"] = e.what();
      }
      jumps[key] = mres;
    }
    res["modes"] = jumps;
    res["escape"] = escapes;
    res["escape_valid"] = any_escape;
  }
  write_json(cx.file(".json"), doc);
  return res;
}

inline Json run_landscape(Context& cx, const LandscapeParams& lp) {
  const auto& ex = cx.ex;
  const auto p = ex.problem.make();
  const auto trajs = build_trajectories(p, ex.problem, ex.trajectories);
  const MinTrajectory& h2 = find_traj(trajs, lp.h2);
  const double alpha = lp.alpha.value_or(ex.flow.cfg.alpha);
  std::vector<std::string> head{"t"};
  for (auto& s : indexed_names("e", p.n)) head.push_back(s);
  head.push_back("value");
  CsvTable tab(head);
  Json slices = Json::array();
  for (double t : lp.times) {
    const auto pts = reshaped_landscape(p, h2, t, alpha, lp.points);
    std::size_t arg = 0, interior = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      tab.row() << t << pts[i].e << pts[i].value;
      if (pts[i].value < pts[arg].value) arg = i;
      if (p.n == 1 && i > 0 && i + 1 < pts.size() && pts[i].value < pts[i - 1].value &&
          pts[i].value < pts[i + 1].value)
        ++interior;
    }
    Json sl{{"t", jnum(t)}, {"argmin", jvec(pts[arg].e)}};
    if (p.n == 1) sl["interior_minima"] = interior;
    slices.push_back(sl);
  }
  tab.write(cx.file(".csv"));
  return Json{{"alpha", jnum(alpha)}, {"h2", lp.h2}, {"slices", slices}};
}

inline Json run_detect(Context& cx, const DetectParams& dp, const FlowConfig& cfg) {
  const auto& ex = cx.ex;
  const auto p = ex.problem.make();
  const auto trajs = build_trajectories(p, ex.problem, ex.trajectories);
  const TrajectoryRecord rec = integrate_pode(p, dp.x0, ex.flow.t0, ex.flow.t0 + ex.flow.horizon, cfg);
  DetectOptions d;
  d.window = dp.detect.window;
  d.stride = dp.detect.stride;
  const Json ev = events_summary(detect_jumps(p, rec, trajs, d));
  write_json(cx.file(".json"), Json{{"events", ev}});
  return Json{{"events", ev}, {"completed", rec.completed}};
}

inline Json run_shallowness(Context& cx, const ShallownessParams& sp) {
  const auto& ex = cx.ex;
  const auto p = ex.problem.make();
  const auto trajs = build_trajectories(p, ex.problem, ex.trajectories);
  ShallownessOptions o;
  o.n_grid = sp.n_grid;
  o.max_radius = sp.max_radius;
  o.seed = cx.seed;
  const auto rep = shallowness_check(p, find_traj(trajs, sp.h1), trajs, ex.flow.cfg.alpha, sp.t0, sp.delta, o);
  const Json j = to_json(rep);
  write_json(cx.file(".json"), j);
  return j;
}

}  // namespace detail

// Runs every experiment (or those of one kind) and writes per-experiment
// files plus summary.json and timing.json into the output directory.
inline RunResult run_scenario(const Scenario& sc, const Json& doc, const RunOptions& opt) {
  std::filesystem::create_directories(opt.out_dir);
  RunResult rr;
  Json exps = Json::array();
  Json times = Json::array();
  const auto start = std::chrono::steady_clock::now();
  const Json doc_flow = doc.value("flow", Json::object());
  for (const auto& ex : sc.experiments) {
    if (opt.only_kind && ex.kind != *opt.only_kind) continue;
    std::uint64_t seed = 0;
    if (opt.seed) seed = sub_seed(*opt.seed, ex.index);
    else if (ex.seed) seed = *ex.seed;
    else if (sc.seed) seed = sub_seed(*sc.seed, ex.index);
    detail::Context cx{ex, opt.out_dir, seed, opt.workers};
    Json entry{{"id", ex.id}, {"kind", ex.kind}};
    if (stochastic_kind(ex.kind)) entry["seed"] = seed;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const Json& ej = doc["experiments"][ex.index];
      const Json flow = detail::merged(doc_flow, detail::opt_field(ej, "flow"));
      Json results = std::visit(
          [&](const auto& prm) -> Json {
            using T = std::decay_t<decltype(prm)>;
            auto cfg = [&] {
              const auto p = ex.problem.make();
              const auto trajs = ex.flow.cfg.containment_radius
                                     ? detail::build_trajectories(p, ex.problem, ex.trajectories)
                                     : std::vector<MinTrajectory>{};
              return detail::flow_for(ex, trajs, flow);
            };
            if constexpr (std::is_same_v<T, SimulateParams>) return detail::run_simulate(cx, prm, cfg());
            else if constexpr (std::is_same_v<T, SweepParams>) return detail::run_sweep(cx, prm, cfg());
            else if constexpr (std::is_same_v<T, BasinParams>) return detail::run_basin(cx, prm, cfg());
            else if constexpr (std::is_same_v<T, ConvergenceParams>) return detail::run_convergence(cx, prm, cfg());
            else if constexpr (std::is_same_v<T, CertifyParams>) return detail::run_certify(cx, prm);
            else if constexpr (std::is_same_v<T, LandscapeParams>) return detail::run_landscape(cx, prm);
            else if constexpr (std::is_same_v<T, DetectParams>) return detail::run_detect(cx, prm, cfg());
            else return detail::run_shallowness(cx, prm);
          },
          ex.params);
      entry["status"] = "ok";
      entry["results"] = std::move(results);
    } catch (const std::exception& e) {
      entry["status"] = "error";
      entry["error"] = e.what();
      ++rr.n_failed;
    }
    entry["files"] = cx.files;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    times.push_back({{"id", ex.id}, {"seconds", secs}});
    exps.push_back(std::move(entry));
  }
  const std::optional<std::uint64_t> top_seed = opt.seed ? opt.seed : sc.seed;
  rr.summary = Json{{"scenario", sc.name},
                    {"label", kEvidenceLabel},
                    {"seed", top_seed ? Json(*top_seed) : Json()},
                    {"status", rr.n_failed ? "partial" : "ok"},
                    {"timing_file", "timing.json"},
                    {"n_experiments", exps.size()},
                    {"n_failed", rr.n_failed},
                    {"experiments", exps}};
  rr.timing = Json{{"scenario", sc.name},
                   {"workers", opt.workers},
                   {"total_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()},
                   {"experiments", times}};
  write_json(opt.out_dir / "summary.json", rr.summary);
  write_json(opt.out_dir / "timing.json", rr.timing);
  return rr;
}

inline RunResult run_scenario_file(const std::filesystem::path& path, const RunOptions& opt) {
  const Json doc = load_json_file(path);
  return run_scenario(parse_scenario(doc), doc, opt);
}

}  // namespace tvopt
