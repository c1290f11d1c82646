#pragma once

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "kinetrace/errors.hpp"

#include "json.hpp"

namespace kinetrace {

using nlohmann::json;

// --- strict section parsing --------------------------------------------------

// Every object is checked against its allowed key set; an unexpected key is
// a hard error naming the full path, so typos cannot silently fall back to
// defaults.
inline void check_keys(const json& j, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ConfigError("config: '" + path + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError("config: unknown key '" + path +
                        (path.empty() ? "" : ".") + it.key() + "'");
  }
}

inline const json& require_key(const json& j, const std::string& path,
                               const char* key) {
  auto it = j.find(key);
  if (it == j.end())
    throw ConfigError("config: missing key '" + path +
                      (path.empty() ? "" : ".") + key + "'");
  return *it;
}

inline double get_num(const json& j, const std::string& path, const char* key) {
  const json& v = require_key(j, path, key);
  if (!v.is_number())
    throw ConfigError("config: '" + path + "." + key + "' must be a number");
  return v.get<double>();
}

inline double get_num_or(const json& j, const std::string& path,
                         const char* key, double dflt) {
  auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_number())
    throw ConfigError("config: '" + path + "." + key + "' must be a number");
  return it->get<double>();
}

inline long long get_int(const json& j, const std::string& path,
                         const char* key) {
  const json& v = require_key(j, path, key);
  if (!v.is_number_integer())
    throw ConfigError("config: '" + path + "." + key + "' must be an integer");
  return v.get<long long>();
}

inline long long get_int_or(const json& j, const std::string& path,
                            const char* key, long long dflt) {
  auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_number_integer())
    throw ConfigError("config: '" + path + "." + key + "' must be an integer");
  return it->get<long long>();
}

inline bool get_bool_or(const json& j, const std::string& path,
                        const char* key, bool dflt) {
  auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_boolean())
    throw ConfigError("config: '" + path + "." + key + "' must be a boolean");
  return it->get<bool>();
}

inline std::string get_str(const json& j, const std::string& path,
                           const char* key) {
  const json& v = require_key(j, path, key);
  if (!v.is_string())
    throw ConfigError("config: '" + path + "." + key + "' must be a string");
  return v.get<std::string>();
}

inline std::string get_str_or(const json& j, const std::string& path,
                              const char* key, const std::string& dflt) {
  auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_string())
    throw ConfigError("config: '" + path + "." + key + "' must be a string");
  return it->get<std::string>();
}

inline std::vector<double> get_num_list(const json& j, const std::string& path,
                                        const char* key) {
  const json& v = require_key(j, path, key);
  if (!v.is_array())
    throw ConfigError("config: '" + path + "." + key + "' must be an array");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number())
      throw ConfigError("config: '" + path + "." + key +
                        "' must hold numbers only");
    out.push_back(e.get<double>());
  }
  return out;
}

// --- schema ------------------------------------------------------------------

struct DomainConfig {
  std::string kind;  // disk | ellipse | annulus | ball | star
  double radius = 1.0;
  double a = 1.0, b = 1.0;
  double r_inner = 0.5, r_outer = 1.0;
  double star_base = 1.0;
  std::vector<double> star_cos, star_sin;
};

struct MeasureConfig {
  std::string kind;  // lebesgue | single_speed | multigroup
  int dim = 2;
  double rho_min = 0.0, rho_max = 1.0;
  double rho = 1.0, mass = 1.0;
  std::vector<double> speeds, masses;
};

struct AlphaConfig {
  std::string kind;  // constant | two_patch | tabulated
  double value = 1.0;
  double v0 = 0.0, v1 = 0.0, split = 0.5;
  std::vector<double> values;
};

struct KernelConfig {
  std::string kind;  // maxwell | heavy | none
  double theta = 1.0;
  double p = 3.0, q = 2.0, cutoff = 1.0;
};

struct BoundaryConfig {
  AlphaConfig alpha;
  std::string reflection = "specular";  // specular | bounce_back
  KernelConfig kernel;
};

struct ObservableConfig {
  int phase_axis = 4;
  int speed_cells = 3;
  int angle_cells = 4;
};

struct GridsConfig {
  int boundary_cells = 72;
  int speed_cells = 12;
  int angle_cells = 32;
  int polar_cells = 0;  // d = 3 only; 0 means angle_cells / 2
  bool log_speeds = false;
  double speed_floor = 0.0;
  int phase_axis = 12;
  int phase_subgrid = 24;
  int q_sub = 8;
  ObservableConfig observable;
};

struct RunConfig {
  std::uint64_t seed = 0;
  long long particles = 10000;
  double t_end = 10.0;
  double sample_start = 2.5;
  double sample_dt = 2.5;
  double rho_freeze = 1e-6;
  bool compare_invariant = false;
  double eps = 0.1;    // low-speed threshold for occupation observables
  double big_m = 4.0;  // high-speed cap for the compact-window observable
  std::string init = "product";  // product | cells
};

// Frozen numerical defaults; every entry may be overridden per run.
struct TolerancesConfig {
  double series_tol = 1e-12;
  int max_terms = 200000;
  double eigen_tol = 1e-11;
  int eigen_max_iter = 20000;
  int uniq_starts = 4;
  double uniq_probe_tol = 1e-6;
  double quad_identity_rel = 1e-3;
  double column_sum_abs = 1e-12;
  double flow_mass_rel = 1e-10;
  double grad_fd_rel = 1e-5;
};

struct SweepConfig {
  std::string axis;  // refinement | particles | kernel_p | alpha
  std::vector<double> values;
};

struct OutputsConfig {
  std::string dir = "out";
  bool operators_csv = true;
};

struct ScenarioConfig {
  DomainConfig domain;
  MeasureConfig measure;
  BoundaryConfig boundary;
  GridsConfig grids;
  RunConfig run;
  TolerancesConfig tol;
  SweepConfig sweep;
  OutputsConfig outputs;
  std::string canonical;  // dumped form; hashed into the manifest
};

// --- parsers -----------------------------------------------------------------

inline DomainConfig parse_domain(const json& j) {
  DomainConfig d;
  d.kind = get_str(j, "domain", "kind");
  if (d.kind == "disk" || d.kind == "ball") {
    check_keys(j, "domain", {"kind", "radius"});
    d.radius = get_num_or(j, "domain", "radius", 1.0);
  } else if (d.kind == "ellipse") {
    check_keys(j, "domain", {"kind", "a", "b"});
    d.a = get_num(j, "domain", "a");
    d.b = get_num(j, "domain", "b");
  } else if (d.kind == "annulus") {
    check_keys(j, "domain", {"kind", "r_inner", "r_outer"});
    d.r_inner = get_num(j, "domain", "r_inner");
    d.r_outer = get_num(j, "domain", "r_outer");
  } else if (d.kind == "star") {
    check_keys(j, "domain", {"kind", "base", "cos", "sin"});
    d.star_base = get_num(j, "domain", "base");
    d.star_cos = get_num_list(j, "domain", "cos");
    d.star_sin = get_num_list(j, "domain", "sin");
  } else {
    throw ConfigError("config: domain.kind '" + d.kind + "' not recognized");
  }
  return d;
}

inline MeasureConfig parse_measure(const json& j) {
  MeasureConfig m;
  m.kind = get_str(j, "measure", "kind");
  m.dim = static_cast<int>(get_int(j, "measure", "dim"));
  if (m.dim != 2 && m.dim != 3)
    throw ConfigError("config: measure.dim must be 2 or 3");
  if (m.kind == "lebesgue") {
    check_keys(j, "measure", {"kind", "dim", "rho_min", "rho_max"});
    m.rho_min = get_num_or(j, "measure", "rho_min", 0.0);
    m.rho_max = get_num(j, "measure", "rho_max");
  } else if (m.kind == "single_speed") {
    check_keys(j, "measure", {"kind", "dim", "rho", "mass"});
    m.rho = get_num(j, "measure", "rho");
    m.mass = get_num_or(j, "measure", "mass", 1.0);
  } else if (m.kind == "multigroup") {
    check_keys(j, "measure", {"kind", "dim", "speeds", "masses"});
    m.speeds = get_num_list(j, "measure", "speeds");
    m.masses = get_num_list(j, "measure", "masses");
    if (m.speeds.size() != m.masses.size())
      throw ConfigError("config: measure.speeds and measure.masses differ");
  } else {
    throw ConfigError("config: measure.kind '" + m.kind + "' not recognized");
  }
  return m;
}

inline AlphaConfig parse_alpha(const json& j) {
  AlphaConfig a;
  a.kind = get_str(j, "boundary.alpha", "kind");
  if (a.kind == "constant") {
    check_keys(j, "boundary.alpha", {"kind", "value"});
    a.value = get_num(j, "boundary.alpha", "value");
  } else if (a.kind == "two_patch") {
    check_keys(j, "boundary.alpha", {"kind", "v0", "v1", "split"});
    a.v0 = get_num(j, "boundary.alpha", "v0");
    a.v1 = get_num(j, "boundary.alpha", "v1");
    a.split = get_num_or(j, "boundary.alpha", "split", 0.5);
  } else if (a.kind == "tabulated") {
    check_keys(j, "boundary.alpha", {"kind", "values"});
    a.values = get_num_list(j, "boundary.alpha", "values");
  } else {
    throw ConfigError("config: boundary.alpha.kind '" + a.kind +
                      "' not recognized");
  }
  return a;
}

inline KernelConfig parse_kernel(const json& j) {
  KernelConfig k;
  k.kind = get_str(j, "boundary.kernel", "kind");
  if (k.kind == "maxwell") {
    check_keys(j, "boundary.kernel", {"kind", "theta"});
    k.theta = get_num(j, "boundary.kernel", "theta");
  } else if (k.kind == "heavy") {
    check_keys(j, "boundary.kernel", {"kind", "p", "q", "cutoff"});
    k.p = get_num(j, "boundary.kernel", "p");
    k.q = get_num(j, "boundary.kernel", "q");
    k.cutoff = get_num_or(j, "boundary.kernel", "cutoff", 1.0);
  } else if (k.kind == "none") {
    check_keys(j, "boundary.kernel", {"kind"});
  } else {
    throw ConfigError("config: boundary.kernel.kind '" + k.kind +
                      "' not recognized");
  }
  return k;
}

inline BoundaryConfig parse_boundary(const json& j) {
  check_keys(j, "boundary", {"alpha", "reflection", "kernel"});
  BoundaryConfig b;
  b.alpha = parse_alpha(require_key(j, "boundary", "alpha"));
  b.reflection = get_str_or(j, "boundary", "reflection", "specular");
  if (b.reflection != "specular" && b.reflection != "bounce_back")
    throw ConfigError("config: boundary.reflection '" + b.reflection +
                      "' not recognized");
  b.kernel = parse_kernel(require_key(j, "boundary", "kernel"));
  return b;
}

inline ObservableConfig parse_observable(const json& j) {
  check_keys(j, "grids.observable", {"phase_axis", "speed_cells",
                                     "angle_cells"});
  ObservableConfig o;
  o.phase_axis =
      static_cast<int>(get_int_or(j, "grids.observable", "phase_axis", 4));
  o.speed_cells =
      static_cast<int>(get_int_or(j, "grids.observable", "speed_cells", 3));
  o.angle_cells =
      static_cast<int>(get_int_or(j, "grids.observable", "angle_cells", 4));
  return o;
}

inline GridsConfig parse_grids(const json& j) {
  check_keys(j, "grids",
             {"boundary_cells", "speed_cells", "angle_cells", "polar_cells",
              "log_speeds", "speed_floor", "phase_axis", "phase_subgrid",
              "q_sub", "observable"});
  GridsConfig g;
  g.boundary_cells =
      static_cast<int>(get_int_or(j, "grids", "boundary_cells", 72));
  g.speed_cells = static_cast<int>(get_int_or(j, "grids", "speed_cells", 12));
  g.angle_cells = static_cast<int>(get_int_or(j, "grids", "angle_cells", 32));
  g.polar_cells = static_cast<int>(get_int_or(j, "grids", "polar_cells", 0));
  g.log_speeds = get_bool_or(j, "grids", "log_speeds", false);
  g.speed_floor = get_num_or(j, "grids", "speed_floor", 0.0);
  g.phase_axis = static_cast<int>(get_int_or(j, "grids", "phase_axis", 12));
  g.phase_subgrid =
      static_cast<int>(get_int_or(j, "grids", "phase_subgrid", 24));
  g.q_sub = static_cast<int>(get_int_or(j, "grids", "q_sub", 8));
  auto it = j.find("observable");
  if (it != j.end()) g.observable = parse_observable(*it);
  if (g.boundary_cells < 4 || g.speed_cells < 1 || g.angle_cells < 2 ||
      g.phase_axis < 2 || g.phase_subgrid < 2 || g.q_sub < 1)
    throw ConfigError("config: grids: cell counts out of range");
  return g;
}

inline RunConfig parse_run(const json& j) {
  check_keys(j, "run",
             {"seed", "particles", "t_end", "sample_start", "sample_dt",
              "rho_freeze", "compare_invariant", "eps", "big_m", "init"});
  RunConfig r;
  // Every random draw is tied to this value; there is no fallback.
  long long seed = get_int(j, "run", "seed");
  if (seed < 0) throw ConfigError("config: run.seed must be >= 0");
  r.seed = static_cast<std::uint64_t>(seed);
  r.particles = get_int_or(j, "run", "particles", 10000);
  r.t_end = get_num_or(j, "run", "t_end", 10.0);
  r.sample_start = get_num_or(j, "run", "sample_start", 2.5);
  r.sample_dt = get_num_or(j, "run", "sample_dt", 2.5);
  r.rho_freeze = get_num_or(j, "run", "rho_freeze", 1e-6);
  r.compare_invariant = get_bool_or(j, "run", "compare_invariant", false);
  r.eps = get_num_or(j, "run", "eps", 0.1);
  r.big_m = get_num_or(j, "run", "big_m", 4.0);
  r.init = get_str_or(j, "run", "init", "product");
  if (r.particles < 1) throw ConfigError("config: run.particles must be >= 1");
  if (r.t_end <= 0.0) throw ConfigError("config: run.t_end must be > 0");
  if (r.sample_dt <= 0.0)
    throw ConfigError("config: run.sample_dt must be > 0");
  if (!(r.eps < r.big_m))
    throw ConfigError("config: run.eps must be < run.big_m");
  if (r.init != "product" && r.init != "cells")
    throw ConfigError("config: run.init '" + r.init + "' not recognized");
  return r;
}

inline TolerancesConfig parse_tolerances(const json& j) {
  check_keys(j, "tolerances",
             {"series_tol", "max_terms", "eigen_tol", "eigen_max_iter",
              "uniq_starts", "uniq_probe_tol", "quad_identity_rel",
              "column_sum_abs", "flow_mass_rel", "grad_fd_rel"});
  TolerancesConfig t;
  t.series_tol = get_num_or(j, "tolerances", "series_tol", t.series_tol);
  t.max_terms =
      static_cast<int>(get_int_or(j, "tolerances", "max_terms", t.max_terms));
  t.eigen_tol = get_num_or(j, "tolerances", "eigen_tol", t.eigen_tol);
  t.eigen_max_iter = static_cast<int>(
      get_int_or(j, "tolerances", "eigen_max_iter", t.eigen_max_iter));
  t.uniq_starts = static_cast<int>(
      get_int_or(j, "tolerances", "uniq_starts", t.uniq_starts));
  t.uniq_probe_tol =
      get_num_or(j, "tolerances", "uniq_probe_tol", t.uniq_probe_tol);
  t.quad_identity_rel =
      get_num_or(j, "tolerances", "quad_identity_rel", t.quad_identity_rel);
  t.column_sum_abs =
      get_num_or(j, "tolerances", "column_sum_abs", t.column_sum_abs);
  t.flow_mass_rel =
      get_num_or(j, "tolerances", "flow_mass_rel", t.flow_mass_rel);
  t.grad_fd_rel = get_num_or(j, "tolerances", "grad_fd_rel", t.grad_fd_rel);
  return t;
}

inline SweepConfig parse_sweep(const json& j) {
  check_keys(j, "sweep", {"axis", "values"});
  SweepConfig s;
  s.axis = get_str(j, "sweep", "axis");
  s.values = get_num_list(j, "sweep", "values");
  if (s.axis != "refinement" && s.axis != "particles" &&
      s.axis != "kernel_p" && s.axis != "alpha")
    throw ConfigError("config: sweep.axis '" + s.axis + "' not recognized");
  if (s.values.empty())
    throw ConfigError("config: sweep.values must not be empty");
  return s;
}

inline ScenarioConfig parse_config_json(const json& j) {
  check_keys(j, "", {"domain", "measure", "boundary", "grids", "run",
                     "tolerances", "sweep", "outputs"});
  ScenarioConfig c;
  c.domain = parse_domain(require_key(j, "", "domain"));
  c.measure = parse_measure(require_key(j, "", "measure"));
  c.boundary = parse_boundary(require_key(j, "", "boundary"));
  c.grids = parse_grids(require_key(j, "", "grids"));
  c.run = parse_run(require_key(j, "", "run"));
  if (auto it = j.find("tolerances"); it != j.end())
    c.tol = parse_tolerances(*it);
  if (auto it = j.find("sweep"); it != j.end()) c.sweep = parse_sweep(*it);
  if (auto it = j.find("outputs"); it != j.end()) {
    check_keys(*it, "outputs", {"dir", "operators"});
    c.outputs.dir = get_str_or(*it, "outputs", "dir", "out");
    c.outputs.operators_csv = get_bool_or(*it, "outputs", "operators", true);
  }
  // Keys sort alphabetically in dumped objects, so the canonical form and
  // its hash do not depend on the ordering in the source file.
  c.canonical = j.dump();
  return c;
}

inline ScenarioConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: JSON parse failed: ") + e.what());
  }
  return parse_config_json(j);
}

inline ScenarioConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace kinetrace
