#pragma once

// Batch experiment drivers behind the command-line tool. Every command takes a
// flat key=value config and returns a text report whose first section is the
// complete config, so a report file can be fed back in as a config.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "depin/construction.hpp"
#include "depin/parallel.hpp"
#include "depin/sim.hpp"

namespace depin {

inline constexpr int kConfigSchema = 1;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Optional real: empty means "auto" (derived from the construction).
using AutoReal = std::optional<double>;

struct ExperimentConfig {
  int schema = kConfigSchema;
  std::string model = "qew";
  int n = 1;
  std::uint64_t seed = 1;
  std::string field = "poisson";  // poisson | none
  double lambda = 1.0;
  std::string distribution = "constant:10";
  double r0 = 0.25;
  double r1 = 0.4;
  double smoothness = 0.5;
  int columns = 8;
  int height_cap = 24;
  double headroom = 4.0;
  double cell_side = 1.0;
  double side = 64.0;  // torus side when field = none
  double strength_scale = 1.0;  // multiplies sampled strengths in the dynamics

  double recipe_p_target = 0.0;
  double recipe_f_in_fraction = 0.9;
  double recipe_margin = 1.1;
  double recipe_safety = 0.95;
  double recipe_h_min = 0.05;
  double recipe_h_max = 5.0;
  int recipe_h_steps = 41;
  double recipe_d_min = 0.5;
  double recipe_d_max = 400.0;
  int recipe_d_steps = 121;
  double recipe_C = 1.0;
  double recipe_psi_in = 0.7;
  double recipe_glue_factor = 4.0;

  int grid_points = 0;  // 0: 4096 (n = 1) or 256 (n = 2)
  double sim_cfl = 0.9;
  double sim_gradient_cap = 10.0;
  AutoReal sim_force;  // auto: force_factor * F_star, or 1 without a field
  double sim_force_factor = 0.5;
  double sim_init = 0.0;

  double stop_T_max = 200.0;
  double stop_tau = 10.0;
  double stop_v_tol = 0.0;
  double stop_trace_every = 0.0;
  double stop_H_esc = 0.0;

  AutoReal certify_force;  // auto: force_factor * F_star
  double certify_force_factor = 1.0;
  double certify_spacing = 0.02;
  double certify_tol_smooth = 1e-8;
  double certify_tol_strip = 1e-4;
  double certify_tol_jump = 1e-6;
  int certify_top = 10;

  double critical_F_lo = 0.0;
  AutoReal critical_F_hi;       // auto: 1.01 M, or 1 when M = 0
  AutoReal critical_resolution;  // auto: 0.02 (F_hi - F_lo)
  int critical_probes = 3;
  int critical_max_rounds = 40;

  AutoReal hysteresis_F_max;  // auto: 0.5 F_star, or 0.5 without a field
  int hysteresis_levels = 4;
  double hysteresis_T_plateau = 50.0;
  AutoReal hysteresis_start;  // auto: middle of the field window, 0 without a field
  double hysteresis_tol = 0.1;

  double percolation_p = 0.95;
  long percolation_trials = 10000;
  int percolation_height_cap = 16;
  int percolation_torus_side = 0;
  long percolation_min_survivors = 20;

  double sample_side = 10.0;
  AutoReal sample_y_lo;  // auto: r1
  double sample_y_hi = 10.0;
  int sample_periodic = 1;

  // Runtime only; never echoed because results must not depend on them.
  int threads = 1;
  std::string out_dir;
};

namespace detail {

inline std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_real(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError("config key '" + key + "': not a finite number: '" + s + "'");
  return v;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& s) {
  Int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("config key '" + key + "': not an integer: '" + s + "'");
  return v;
}

struct KeyVisitor {
  std::function<void(const char*, std::string&, const char*)> on_string;
  std::function<void(const char*, double&, const char*)> on_real;
  std::function<void(const char*, AutoReal&, const char*)> on_auto;
  std::function<void(const char*, int&, const char*)> on_int;
  std::function<void(const char*, long&, const char*)> on_long;
  std::function<void(const char*, std::uint64_t&, const char*)> on_u64;

  void operator()(const char* k, std::string& v, const char* h) const { on_string(k, v, h); }
  void operator()(const char* k, double& v, const char* h) const { on_real(k, v, h); }
  void operator()(const char* k, AutoReal& v, const char* h) const { on_auto(k, v, h); }
  void operator()(const char* k, int& v, const char* h) const { on_int(k, v, h); }
  void operator()(const char* k, long& v, const char* h) const { on_long(k, v, h); }
  void operator()(const char* k, std::uint64_t& v, const char* h) const { on_u64(k, v, h); }
};

template <class V>
void visit_keys(ExperimentConfig& c, V&& v) {
  v("schema", c.schema, "config schema version (must be 1)");
  v("model", c.model, "qew | mcf");
  v("n", c.n, "interface dimension (1 or 2)");
  v("seed", c.seed, "field seed");
  v("field", c.field, "poisson | none (f = 0)");
  v("lambda", c.lambda, "Poisson intensity of obstacle centers");
  v("distribution", c.distribution, "strength law: constant:c | uniform:lo:hi | exponential:rate");
  v("r0", c.r0, "inner obstacle radius (bump <= -1 on the r0 box)");
  v("r1", c.r1, "obstacle support radius");
  v("smoothness", c.smoothness, "obstacle bump smoothness parameter");
  v("columns", c.columns, "torus columns per side of the construction");
  v("height_cap", c.height_cap, "maximal Lipschitz surface height in boxes");
  v("headroom", c.headroom, "field height above the top box row");
  v("cell_side", c.cell_side, "side of the sampling cell lattice");
  v("side", c.side, "torus side when field = none");
  v("strength_scale", c.strength_scale, "dynamics only: multiply every sampled strength (barrier unchanged)");
  v("recipe.p_target", c.recipe_p_target, "target box openness (0: dimension default)");
  v("recipe.f_in_fraction", c.recipe_f_in_fraction, "F_in as a fraction of fbar/2");
  v("recipe.margin", c.recipe_margin, "safety factor on jump / slope inequalities");
  v("recipe.safety", c.recipe_safety, "F_star as a fraction of its bound");
  v("recipe.h_min", c.recipe_h_min, "box height search lower end");
  v("recipe.h_max", c.recipe_h_max, "box height search upper end");
  v("recipe.h_steps", c.recipe_h_steps, "box height log-grid size");
  v("recipe.d_min", c.recipe_d_min, "gap search lower end");
  v("recipe.d_max", c.recipe_d_max, "gap search upper end");
  v("recipe.d_steps", c.recipe_d_steps, "gap log-grid size");
  v("recipe.C", c.recipe_C, "mcf: -F_out > C h/d");
  v("recipe.psi_in", c.recipe_psi_in, "mcf: r_in / cap radius");
  v("recipe.glue_factor", c.recipe_glue_factor, "mcf: |F_out| >= factor C1 h/d^2");
  v("grid.points", c.grid_points, "simulation points per side (0: 4096 for n = 1, 256 for n = 2)");
  v("sim.cfl", c.sim_cfl, "fraction of the stable time step");
  v("sim.gradient_cap", c.sim_gradient_cap, "mcf: abort when |grad u| exceeds this");
  v("sim.force", c.sim_force, "driving force F (auto: force_factor F_star, 1 without a field)");
  v("sim.force_factor", c.sim_force_factor, "F / F_star when sim.force = auto");
  v("sim.init", c.sim_init, "initial flat height");
  v("stop.T_max", c.stop_T_max, "time limit per run");
  v("stop.tau", c.stop_tau, "quiet time before declaring Pinned");
  v("stop.v_tol", c.stop_v_tol, "quiet velocity (0: 1e-8 max(|F|, 1))");
  v("stop.trace_every", c.stop_trace_every, "trace interval (0: T_max/200)");
  v("stop.H_esc", c.stop_H_esc, "escape height (0: top of the field)");
  v("certify.force", c.certify_force, "force of the certificate (auto: force_factor F_star)");
  v("certify.force_factor", c.certify_force_factor, "F / F_star when certify.force = auto");
  v("certify.spacing", c.certify_spacing, "certificate grid spacing");
  v("certify.tol_smooth", c.certify_tol_smooth, "residual tolerance away from glue strips");
  v("certify.tol_strip", c.certify_tol_strip, "residual tolerance in glue strips");
  v("certify.tol_jump", c.certify_tol_jump, "tolerance on downward kink jumps");
  v("certify.top", c.certify_top, "worst residuals listed");
  v("critical.F_lo", c.critical_F_lo, "lower bracket end");
  v("critical.F_hi", c.critical_F_hi, "upper bracket end (auto: 1.01 M, or 1 if M = 0)");
  v("critical.resolution", c.critical_resolution, "target interval width (auto: 0.02 of the bracket)");
  v("critical.probes", c.critical_probes, "probes per round (fixed, independent of threads)");
  v("critical.max_rounds", c.critical_max_rounds, "round limit");
  v("hysteresis.F_max", c.hysteresis_F_max, "ramp amplitude (auto: F_star/2, or 1/2 without a field)");
  v("hysteresis.levels", c.hysteresis_levels, "plateaus per quarter ramp");
  v("hysteresis.T_plateau", c.hysteresis_T_plateau, "plateau duration T (also run at 2T)");
  v("hysteresis.start", c.hysteresis_start, "initial flat height (auto: middle of the field)");
  v("hysteresis.tol", c.hysteresis_tol, "allowed |area(2T) - area(T)| / area(T)");
  v("percolation.p", c.percolation_p, "site openness");
  v("percolation.trials", c.percolation_trials, "independent tori");
  v("percolation.height_cap", c.percolation_height_cap, "column height");
  v("percolation.torus_side", c.percolation_torus_side, "torus side (0: 4 height_cap)");
  v("percolation.min_survivors", c.percolation_min_survivors, "levels used by the decay fit");
  v("sample.side", c.sample_side, "sample-field: horizontal side");
  v("sample.y_lo", c.sample_y_lo, "sample-field: lower height (auto: r1)");
  v("sample.y_hi", c.sample_y_hi, "sample-field: upper height");
  v("sample.periodic", c.sample_periodic, "sample-field: periodic in x (0/1)");
}

}  // namespace detail

/// One line per key: "key=default  # help".
inline std::string config_help() {
  ExperimentConfig c;
  std::ostringstream os;
  auto line = [&](const char* k, const std::string& v, const char* h) { os << "  " << k << "=" << v << "  # " << h << "\n"; };
  detail::KeyVisitor v;
  v.on_string = [&](const char* k, std::string& x, const char* h) { line(k, x, h); };
  v.on_real = [&](const char* k, double& x, const char* h) { line(k, detail::format_real(x), h); };
  v.on_auto = [&](const char* k, AutoReal& x, const char* h) { line(k, x ? detail::format_real(*x) : "auto", h); };
  v.on_int = [&](const char* k, int& x, const char* h) { line(k, std::to_string(x), h); };
  v.on_long = [&](const char* k, long& x, const char* h) { line(k, std::to_string(x), h); };
  v.on_u64 = [&](const char* k, std::uint64_t& x, const char* h) { line(k, std::to_string(x), h); };
  detail::visit_keys(c, v);
  return os.str();
}

/// Canonical text of every echoed key, in schema order.
inline std::string echo_config(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  std::ostringstream os;
  auto line = [&](const char* k, const std::string& v) { os << k << "=" << v << "\n"; };
  detail::KeyVisitor v;
  v.on_string = [&](const char* k, std::string& x, const char*) { line(k, x); };
  v.on_real = [&](const char* k, double& x, const char*) { line(k, detail::format_real(x)); };
  v.on_auto = [&](const char* k, AutoReal& x, const char*) { line(k, x ? detail::format_real(*x) : "auto"); };
  v.on_int = [&](const char* k, int& x, const char*) { line(k, std::to_string(x)); };
  v.on_long = [&](const char* k, long& x, const char*) { line(k, std::to_string(x)); };
  v.on_u64 = [&](const char* k, std::uint64_t& x, const char*) { line(k, std::to_string(x)); };
  detail::visit_keys(c, v);
  return os.str();
}

inline void set_config_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
  bool found = false;
  detail::KeyVisitor v;
  v.on_string = [&](const char* k, std::string& x, const char*) {
    if (key == k) { x = value; found = true; }
  };
  v.on_real = [&](const char* k, double& x, const char*) {
    if (key == k) { x = detail::parse_real(key, value); found = true; }
  };
  v.on_auto = [&](const char* k, AutoReal& x, const char*) {
    if (key != k) return;
    found = true;
    if (value == "auto") x.reset();
    else x = detail::parse_real(key, value);
  };
  v.on_int = [&](const char* k, int& x, const char*) {
    if (key == k) { x = detail::parse_int<int>(key, value); found = true; }
  };
  v.on_long = [&](const char* k, long& x, const char*) {
    if (key == k) { x = detail::parse_int<long>(key, value); found = true; }
  };
  v.on_u64 = [&](const char* k, std::uint64_t& x, const char*) {
    if (key == k) { x = detail::parse_int<std::uint64_t>(key, value); found = true; }
  };
  detail::visit_keys(c, v);
  if (!found) throw ConfigError("unknown config key '" + key + "'");
}

/// Reads key=value lines into `c`. Blank lines and '#' comments are skipped;
/// reading stops at a "[results]" line so reports can be re-used as configs.
inline void parse_config(std::istream& is, ExperimentConfig& c) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    std::size_t b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    line = line.substr(b);
    if (line == "[results]") break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    set_config_key(c, line.substr(0, eq), line.substr(eq + 1));
  }
  if (c.schema != kConfigSchema)
    throw ConfigError("config schema " + std::to_string(c.schema) + " is not supported (expected " +
                      std::to_string(kConfigSchema) + ")");
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  ExperimentConfig c;
  parse_config(in, c);
  return c;
}

inline void validate_config(const ExperimentConfig& c) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  need(c.schema == kConfigSchema, "schema must be 1");
  need(c.model == "qew" || c.model == "mcf", "model must be qew or mcf");
  need(c.n == 1 || c.n == 2, "n must be 1 or 2");
  need(c.field == "poisson" || c.field == "none", "field must be poisson or none");
  need(c.lambda >= 0.0, "lambda >= 0");
  need(c.r0 > 0.0 && c.r1 > std::sqrt(c.n + 1.0) * c.r0, "0 < r0 and r1 > sqrt(n+1) r0");
  need(c.smoothness > 0.0, "smoothness > 0");
  need(c.columns >= 2, "columns >= 2");
  need(c.height_cap >= 1, "height_cap >= 1");
  need(c.headroom >= 0.0 && c.cell_side > 0.0, "headroom >= 0 and cell_side > 0");
  need(c.side > 0.0, "side > 0");
  need(c.strength_scale >= 1.0, "strength_scale >= 1 (stronger obstacles keep the barrier valid)");
  need(c.grid_points == 0 || c.grid_points >= 3, "grid.points >= 3");
  need(c.sim_cfl > 0.0 && c.sim_cfl <= 1.0, "0 < sim.cfl <= 1");
  need(c.sim_gradient_cap > 0.0, "sim.gradient_cap > 0");
  need(c.stop_T_max > 0.0 && c.stop_tau > 0.0, "stop.T_max > 0 and stop.tau > 0");
  need(c.stop_v_tol >= 0.0 && c.stop_trace_every >= 0.0, "stop.v_tol, stop.trace_every >= 0");
  need(c.certify_spacing > 0.0 && c.certify_top >= 0, "certify.spacing > 0 and certify.top >= 0");
  need(c.critical_F_lo >= 0.0, "critical.F_lo >= 0");
  need(!c.critical_F_hi || *c.critical_F_hi > c.critical_F_lo, "critical.F_hi > critical.F_lo");
  need(!c.critical_resolution || *c.critical_resolution > 0.0, "critical.resolution > 0");
  need(c.critical_probes >= 1 && c.critical_max_rounds >= 1, "critical.probes, critical.max_rounds >= 1");
  need(!c.hysteresis_F_max || *c.hysteresis_F_max >= 0.0, "hysteresis.F_max >= 0");
  need(c.hysteresis_levels >= 1 && c.hysteresis_T_plateau > 0.0, "hysteresis.levels >= 1, T_plateau > 0");
  need(c.percolation_p >= 0.0 && c.percolation_p <= 1.0, "0 <= percolation.p <= 1");
  need(c.percolation_trials >= 1 && c.percolation_height_cap >= 1, "percolation.trials, height_cap >= 1");
  need(c.percolation_torus_side >= 0, "percolation.torus_side >= 0");
  need(c.sample_side > 0.0 && c.sample_y_hi > c.sample_y_lo.value_or(c.r1), "sample window non-empty");
  need(c.threads >= 1, "threads >= 1");
}

struct ExperimentOutput {
  int exit_code = 0;  // 0 pass, 1 experiment failed, 2 infeasible / config error
  std::string report;
  std::vector<std::pair<std::string, std::string>> files;
  double wall_seconds = 0.0;
};

/// Writes report.txt, the data files and timing.txt into `dir`.
inline void write_outputs(const ExperimentOutput& out, const std::string& dir, const std::string& experiment) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto put = [&](const std::string& name, const std::string& text) {
    std::ofstream f(fs::path(dir) / name, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + (fs::path(dir) / name).string());
    f << text;
  };
  put("report.txt", out.report);
  for (const auto& [name, text] : out.files) put(name, text);
  std::ostringstream t;
  t << "experiment=" << experiment << "\nwall_seconds=" << std::setprecision(6) << out.wall_seconds << "\n";
  put("timing.txt", t.str());
}


namespace detail {

inline ConstructionConfig construction_config(const ExperimentConfig& c) {
  ConstructionConfig cc;
  cc.r0 = c.r0;
  cc.r1 = c.r1;
  cc.smoothness = c.smoothness;
  cc.lambda = c.lambda;
  cc.distribution = c.distribution;
  cc.seed = c.seed;
  cc.columns = c.columns;
  cc.height_cap = c.height_cap;
  cc.headroom = c.headroom;
  cc.cell_side = c.cell_side;
  cc.threads = c.threads;
  cc.recipe.p_target = c.recipe_p_target;
  cc.recipe.f_in_fraction = c.recipe_f_in_fraction;
  cc.recipe.margin = c.recipe_margin;
  cc.recipe.safety = c.recipe_safety;
  cc.recipe.h_min = c.recipe_h_min;
  cc.recipe.h_max = c.recipe_h_max;
  cc.recipe.h_steps = c.recipe_h_steps;
  cc.recipe.d_min = c.recipe_d_min;
  cc.recipe.d_max = c.recipe_d_max;
  cc.recipe.d_steps = c.recipe_d_steps;
  cc.recipe.C = c.recipe_C;
  cc.recipe.psi_in = c.recipe_psi_in;
  cc.recipe.glue_factor = c.recipe_glue_factor;
  return cc;
}

template <int Dim>
CertificateReport certify_any(const QewConstruction<Dim>& c, double F, const CertifyOptions& o) {
  return certify<Dim>(c.sup, c.params, F, o);
}

template <int Dim>
CertificateReport certify_any(const McfConstruction<Dim>& c, double F, const CertifyOptions& o) {
  return certify_mcf<Dim>(c.sup, c.params, F, o);
}

/// Everything a dynamic experiment needs from the barrier construction; for
/// field = none only the grid and an empty field.
template <int Dim>
struct Setup {
  bool ok = true;
  std::string stage;
  std::string message;
  bool has_field = false;
  std::shared_ptr<const ObstacleField<Dim>> field;
  double side = 0.0;
  double F_star = 0.0;
  double M = 0.0;
  std::string params_text;
  std::function<double(const Vec<Dim>&)> barrier;  // constructed v, empty without a field
  std::function<CertificateReport(double, const CertifyOptions&)> certify_at;
};

template <int Dim, class C>
void fill_setup(Setup<Dim>& s, std::shared_ptr<C> c) {
  if (!c->ok) {
    s.ok = false;
    s.stage = c->stage;
    s.message = c->message;
    return;
  }
  s.has_field = true;
  s.field = c->field;
  s.side = c->geo.side();
  s.F_star = c->params.F_star;
  s.M = c->field->shape().max_abs() * c->field->max_local_strength_sum();
  std::ostringstream os;
  write_params(os, c->params);
  s.params_text = os.str();
  s.barrier = [c](const Vec<Dim>& x) { return c->sup.value(x); };
  s.certify_at = [c](double F, const CertifyOptions& o) { return certify_any<Dim>(*c, F, o); };
}

template <int Dim>
Setup<Dim> make_setup(const ExperimentConfig& cfg) {
  Setup<Dim> s;
  if (cfg.field == "none") {
    s.side = cfg.side;
    return s;
  }
  const auto cc = construction_config(cfg);
  try {
    if (cfg.model == "qew")
      fill_setup<Dim>(s, std::make_shared<QewConstruction<Dim>>(build_qew<Dim>(cc)));
    else
      fill_setup<Dim>(s, std::make_shared<McfConstruction<Dim>>(build_mcf<Dim>(cc)));
  } catch (const DepinError& e) {
    s.ok = false;
    s.stage = "parameters";
    s.message = e.what();
  }
  if (s.ok && cfg.strength_scale != 1.0) {
    auto obs = s.field->obstacles();
    for (auto& ob : obs) ob.strength *= cfg.strength_scale;
    const auto& f = *s.field;
    s.field = std::make_shared<const ObstacleField<Dim>>(f.shape(), f.distribution(), f.lambda(), f.seed(), f.window(),
                                                         f.periodic(), std::move(obs));
    s.M = s.field->shape().max_abs() * s.field->max_local_strength_sum();
  }
  return s;
}

inline int grid_points(const ExperimentConfig& c) { return c.grid_points > 0 ? c.grid_points : (c.n == 1 ? 4096 : 256); }

inline SimConfig sim_config(const ExperimentConfig& c, double F) {
  SimConfig sc;
  sc.model = parse_model(c.model);
  sc.F = F;
  sc.cfl = c.sim_cfl;
  sc.gradient_cap = c.sim_gradient_cap;
  return sc;
}

inline StopSpec stop_spec(const ExperimentConfig& c) {
  StopSpec sp;
  sp.T_max = c.stop_T_max;
  sp.tau = c.stop_tau;
  sp.v_tol = c.stop_v_tol;
  sp.trace_every = c.stop_trace_every;
  sp.H_esc = c.stop_H_esc;
  return sp;
}

template <int Dim>
Simulator<Dim> make_simulator(const ExperimentConfig& c, const Setup<Dim>& s, double F, double init) {
  Simulator<Dim> sim(Grid<Dim>(grid_points(c), s.side), s.has_field ? s.field : nullptr, sim_config(c, F));
  std::fill(sim.u().begin(), sim.u().end(), init);
  return sim;
}

inline std::string real(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

struct ReportBuilder {
  std::ostringstream os;
  ReportBuilder(const std::string& experiment, const ExperimentConfig& cfg) {
    os << "# depin " << experiment << "\n" << echo_config(cfg) << "[results]\n";
  }
  template <class T>
  ReportBuilder& kv(const std::string& k, const T& v) {
    os << k << "=" << v << "\n";
    return *this;
  }
  ReportBuilder& kv(const std::string& k, double v) { return kv(k, real(v)); }
};

inline ExperimentOutput infeasible(ReportBuilder& rb, const std::string& stage, const std::string& message) {
  rb.kv("stage", stage).kv("message", message).kv("summary", "infeasible");
  ExperimentOutput out;
  out.exit_code = 2;
  out.report = rb.os.str();
  return out;
}

inline CertifyOptions certify_options(const ExperimentConfig& c) {
  CertifyOptions o;
  o.spacing = c.certify_spacing;
  o.tol_smooth = c.certify_tol_smooth;
  o.tol_strip = c.certify_tol_strip;
  o.tol_jump = c.certify_tol_jump;
  o.top = c.certify_top;
  o.threads = c.threads;
  return o;
}

template <int Dim>
std::string barrier_gap_text(const Simulator<Dim>& sim, const Setup<Dim>& s, double& gap) {
  gap = -kInf;
  for (long i = 0; i < sim.grid().size(); ++i)
    gap = std::max(gap, sim.u()[static_cast<std::size_t>(i)] - s.barrier(sim.grid().position(i)));
  return real(gap);
}

// ---------------------------------------------------------------------------

template <int Dim>
ExperimentOutput verify_certificate(const ExperimentConfig& cfg) {
  ReportBuilder rb("verify-certificate", cfg);
  if (cfg.field == "none") return infeasible(rb, "percolation", "empty field (field = none): no open sites");
  const auto s = make_setup<Dim>(cfg);
  if (!s.ok) return infeasible(rb, s.stage, s.message);
  const double F = cfg.certify_force.value_or(cfg.certify_force_factor * s.F_star);
  const auto rep = s.certify_at(F, certify_options(cfg));
  rb.kv("stage", "certified");
  rb.os << s.params_text;
  rb.kv("field_obstacles", s.field->obstacles().size());
  rb.kv("field_bound_M", s.M);
  write_report(rb.os, rep);
  rb.kv("summary", rep.pass ? "pass" : "fail");
  ExperimentOutput out;
  out.exit_code = rep.pass ? 0 : 1;
  out.report = rb.os.str();
  return out;
}

template <int Dim>
ExperimentOutput simulate(const ExperimentConfig& cfg) {
  ReportBuilder rb("simulate", cfg);
  const auto s = make_setup<Dim>(cfg);
  if (!s.ok) return infeasible(rb, s.stage, s.message);
  const double F = cfg.sim_force.value_or(s.has_field ? cfg.sim_force_factor * s.F_star : 1.0);
  auto sim = make_simulator<Dim>(cfg, s, F, cfg.sim_init);
  const auto run = sim.run_until(stop_spec(cfg));
  if (s.has_field) rb.os << s.params_text;
  rb.kv("F", F);
  rb.kv("grid_points", sim.grid().points).kv("grid_side", sim.grid().side).kv("dt_last", run.dt_last);
  rb.kv("outcome", outcome_name(run.outcome));
  if (!run.note.empty()) rb.kv("note", run.note);
  rb.kv("t_end", run.t_end).kv("steps", run.steps);
  const auto& last = run.trace.back();
  rb.kv("final_mean", last.mean_u).kv("final_max", last.max_u).kv("final_min", last.min_u);
  rb.kv("min_update", run.min_update);
  if (s.has_field) {
    double gap = 0.0;
    rb.kv("max_u_minus_barrier", barrier_gap_text(sim, s, gap));
    rb.kv("below_barrier", gap <= 0.0 ? 1 : 0);
  }
  rb.kv("summary", run.outcome == Outcome::Aborted ? "fail" : "done");
  ExperimentOutput out;
  out.exit_code = run.outcome == Outcome::Aborted ? 1 : 0;
  out.report = rb.os.str();
  std::ostringstream trace, snap;
  write_trace_csv(trace, run.trace);
  write_snapshot(snap, sim);
  out.files.emplace_back("trace.csv", trace.str());
  out.files.emplace_back("final_state.txt", snap.str());
  return out;
}

struct Probe {
  double F = 0.0;
  Outcome outcome = Outcome::Timeout;
  bool simulated = false;
  double t_end = 0.0;
  double final_mean = 0.0;
  std::vector<TraceRow> trace;
};

inline const char* probe_class(const Probe& p) { return p.simulated ? outcome_name(p.outcome) : "Escaped(F>M)"; }

template <int Dim>
ExperimentOutput critical_force(const ExperimentConfig& cfg) {
  ReportBuilder rb("critical-force", cfg);
  const auto s = make_setup<Dim>(cfg);
  if (!s.ok) return infeasible(rb, s.stage, s.message);
  const StopSpec spec = stop_spec(cfg);
  // Above M the velocity is at least F - M everywhere, so escape is certain.
  auto run_probe = [&](double F) {
    Probe p;
    p.F = F;
    if (F > s.M) {
      p.outcome = Outcome::Escaped;
      return p;
    }
    auto sim = make_simulator<Dim>(cfg, s, F, cfg.sim_init);
    auto r = sim.run_until(spec);
    p.simulated = true;
    p.outcome = r.outcome;
    p.t_end = r.t_end;
    p.final_mean = r.trace.back().mean_u;
    p.trace = std::move(r.trace);
    return p;
  };
  std::vector<Probe> log;
  Probe lo = run_probe(cfg.critical_F_lo);
  log.push_back(lo);
  for (int k = 0; k < 30 && lo.outcome != Outcome::Pinned && lo.F > 0.0; ++k) {
    lo = run_probe(k == 29 ? 0.0 : lo.F / 2.0);
    log.push_back(lo);
  }
  double F_hi = cfg.critical_F_hi.value_or(s.M > 0.0 ? 1.01 * s.M : 1.0);
  Probe hi = run_probe(F_hi);
  log.push_back(hi);
  while (hi.outcome == Outcome::Pinned) {
    F_hi = std::max(2.0 * F_hi, 1.01 * s.M);
    hi = run_probe(F_hi);
    log.push_back(hi);
  }
  bool inconclusive = lo.outcome != Outcome::Pinned || hi.outcome != Outcome::Escaped;
  bool non_monotone = false;
  const double resolution = cfg.critical_resolution.value_or(0.02 * (hi.F - lo.F));
  const int k = cfg.critical_probes;
  int rounds = 0;
  while (hi.F - lo.F > resolution && rounds < cfg.critical_max_rounds && lo.outcome == Outcome::Pinned) {
    ++rounds;
    std::vector<Probe> probes(static_cast<std::size_t>(k));
    const double a = lo.F, b = hi.F;
    parallel_for(probes.size(), cfg.threads, [&](std::size_t j) {
      probes[j] = run_probe(a + (b - a) * static_cast<double>(j + 1) / (k + 1));
    });
    log.insert(log.end(), probes.begin(), probes.end());
    std::size_t first_up = probes.size();
    for (std::size_t j = 0; j < probes.size(); ++j)
      if (probes[j].outcome != Outcome::Pinned) {
        first_up = j;
        break;
      }
    for (std::size_t j = first_up; j < probes.size(); ++j)
      if (probes[j].outcome == Outcome::Pinned) non_monotone = true;
    for (const auto& p : probes)
      if (p.outcome == Outcome::Timeout) inconclusive = true;
    if (first_up > 0) lo = probes[first_up - 1];
    if (first_up < probes.size()) hi = probes[first_up];
  }
  if (s.has_field) rb.os << s.params_text;
  rb.kv("field_bound_M", s.M);
  rb.kv("grid_points", grid_points(cfg)).kv("grid_side", s.side);
  rb.kv("resolution", resolution).kv("rounds", rounds).kv("probes_run", log.size());
  rb.kv("F_crit_lo", lo.F).kv("F_crit_hi", hi.F).kv("interval_width", hi.F - lo.F);
  rb.kv("lo_outcome", probe_class(lo)).kv("hi_outcome", probe_class(hi));
  if (s.has_field) {
    const auto rep = s.certify_at(s.F_star, certify_options(cfg));
    rb.kv("F_star", s.F_star).kv("F_star_certified", rep.pass ? 1 : 0);
    rb.kv("lo_at_least_F_star", lo.F >= s.F_star ? 1 : 0);
  }
  rb.kv("non_monotone", non_monotone ? 1 : 0).kv("inconclusive", inconclusive ? 1 : 0);
  rb.os << "# probes in evaluation order\nF,outcome,t_end,final_mean\n";
  for (const auto& p : log) rb.os << real(p.F) << ',' << probe_class(p) << ',' << real(p.t_end) << ',' << real(p.final_mean) << "\n";
  rb.kv("summary", inconclusive ? "inconclusive" : "done");
  ExperimentOutput out;
  out.exit_code = inconclusive ? 1 : 0;
  out.report = rb.os.str();
  auto trace_file = [](const Probe& p) {
    std::ostringstream os;
    os << "# F=" << real(p.F) << " outcome=" << probe_class(p) << "\n";
    if (p.simulated) write_trace_csv(os, p.trace);
    else os << "# not simulated: F > M forces escape\n";
    return os.str();
  };
  out.files.emplace_back("trace_lo.csv", trace_file(lo));
  out.files.emplace_back("trace_hi.csv", trace_file(hi));
  return out;
}

struct LoopPoint {
  double F = 0.0;
  double mean = 0.0;
  std::string phase;
  std::string outcome;
  double t = 0.0;
};

struct Loop {
  std::vector<LoopPoint> points;
  bool truncated = false;
  double area = 0.0;
};

/// Enclosed area of the closed polygon (F_i, mean_i).
inline double loop_area(const std::vector<LoopPoint>& pts) {
  if (pts.size() < 3) return 0.0;
  double a = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    const auto& q = pts[(i + 1) % pts.size()];
    a += p.F * q.mean - q.F * p.mean;
  }
  return 0.5 * std::abs(a);
}

/// Ramp 0 -> F_max -> -F_max -> 0 in plateaus of duration T. While the load
/// increases the update is clamped at >= 0 with force +f; while it decreases it
/// is clamped at <= 0 with force -f. A plateau ends early once pinned.
template <int Dim>
Loop hysteresis_loop(const ExperimentConfig& cfg, const Setup<Dim>& s, double F_max, double start, double T) {
  Loop loop;
  auto sim = make_simulator<Dim>(cfg, s, 0.0, start);
  loop.points.push_back({0.0, sim.mean(), "start", "-", 0.0});
  if (F_max == 0.0) return loop;
  const int m = cfg.hysteresis_levels;
  std::vector<std::pair<double, bool>> schedule;  // (F, increasing)
  for (int k = 1; k <= m; ++k) schedule.emplace_back(F_max * k / m, true);
  for (int k = 1; k <= 2 * m; ++k) schedule.emplace_back(F_max - F_max * k / m, false);
  for (int k = 1; k <= m; ++k) schedule.emplace_back(-F_max + F_max * k / m, true);
  StopSpec spec = stop_spec(cfg);
  spec.T_max = T;
  if (s.has_field) spec.H_low = s.field->window().y_lo - s.field->shape().r1();
  for (const auto& [F, up] : schedule) {
    auto& sc = sim.config();
    sc.F = F;
    sc.clamp = up ? Clamp::nonnegative : Clamp::nonpositive;
    sc.force_sign = up ? 1.0 : -1.0;
    const auto r = sim.run_until(spec);
    loop.points.push_back({F, sim.mean(), up ? "up" : "down", outcome_name(r.outcome), sim.time()});
    if (r.outcome == Outcome::Escaped || r.outcome == Outcome::Aborted) {
      loop.truncated = true;
      break;
    }
  }
  loop.area = loop.truncated ? 0.0 : loop_area(loop.points);
  return loop;
}

template <int Dim>
ExperimentOutput hysteresis(const ExperimentConfig& cfg) {
  ReportBuilder rb("hysteresis", cfg);
  const auto s = make_setup<Dim>(cfg);
  if (!s.ok) return infeasible(rb, s.stage, s.message);
  const double F_max = cfg.hysteresis_F_max.value_or(s.has_field ? 0.5 * s.F_star : 0.5);
  double start = 0.0;
  if (s.has_field) start = 0.5 * (s.field->window().y_lo + s.field->window().y_hi);
  start = cfg.hysteresis_start.value_or(start);
  const double T = cfg.hysteresis_T_plateau;
  std::vector<Loop> loops(2);
  parallel_for(2, cfg.threads, [&](std::size_t j) { loops[j] = hysteresis_loop<Dim>(cfg, s, F_max, start, (j + 1) * T); });
  const double a1 = loops[0].area, a2 = loops[1].area;
  const bool truncated = loops[0].truncated || loops[1].truncated;
  const double rel = a1 > 0.0 ? std::abs(a2 - a1) / a1 : (a2 == 0.0 ? 0.0 : kInf);
  bool pass = false;
  std::string rule;
  if (truncated) {
    rule = "loop truncated by escape";
  } else if (F_max == 0.0) {
    pass = a1 == 0.0 && a2 == 0.0;
    rule = "degenerate ramp: area 0";
  } else if (s.has_field) {
    pass = a1 > 0.0 && rel < cfg.hysteresis_tol;
    rule = "area(T) > 0 and |area(2T) - area(T)|/area(T) < tol";
  } else {
    pass = a2 < a1;
    rule = "obstacle-free control: area(2T) < area(T)";
  }
  if (s.has_field) rb.os << s.params_text;
  rb.kv("F_max", F_max).kv("start_height", start);
  rb.kv("grid_points", grid_points(cfg)).kv("grid_side", s.side);
  rb.kv("T_plateau", T);
  rb.kv("area_T", a1).kv("area_2T", a2).kv("relative_change", rel);
  rb.kv("truncated", truncated ? 1 : 0);
  rb.kv("rule", rule);
  rb.kv("summary", pass ? "pass" : "fail");
  ExperimentOutput out;
  out.exit_code = pass ? 0 : 1;
  out.report = rb.os.str();
  for (std::size_t j = 0; j < 2; ++j) {
    std::ostringstream os;
    os << "step,phase,F,mean_u,outcome,t\n";
    for (std::size_t i = 0; i < loops[j].points.size(); ++i) {
      const auto& p = loops[j].points[i];
      os << i << ',' << p.phase << ',' << real(p.F) << ',' << real(p.mean) << ',' << p.outcome << ',' << real(p.t) << "\n";
    }
    out.files.emplace_back(j == 0 ? "loop_T.csv" : "loop_2T.csv", os.str());
  }
  return out;
}

template <int Dim>
ExperimentOutput percolation_stats(const ExperimentConfig& cfg) {
  ReportBuilder rb("percolation-stats", cfg);
  TailOptions opt;
  opt.height_cap = cfg.percolation_height_cap;
  opt.torus_side = cfg.percolation_torus_side;
  opt.min_survivors = cfg.percolation_min_survivors;
  opt.threads = cfg.threads;
  const auto st = tail_statistics<Dim>(cfg.percolation_p, cfg.percolation_trials, cfg.seed, opt);
  rb.kv("p", st.p).kv("p_c", st.p_c).kv("nu", st.nu).kv("trials", st.trials);
  rb.kv("height_cap", st.height_cap).kv("torus_side", st.torus_side).kv("cap_failures", st.cap_failures);
  rb.kv("supercritical", st.supercritical ? 1 : 0);
  rb.kv("fit_k_max", st.fit_k_max).kv("fitted_ratio", st.fitted_ratio);
  rb.kv("fitted_ratio_lo", st.fitted_ratio_lo).kv("fitted_ratio_hi", st.fitted_ratio_hi);
  rb.kv("envelope_ok", st.envelope_ok ? 1 : 0);
  if (!st.note.empty()) rb.kv("note", st.note);
  const char* summary = st.supercritical ? (st.pass ? "pass" : "fail") : "informational";
  rb.kv("summary", summary);
  ExperimentOutput out;
  out.exit_code = st.supercritical && !st.pass ? 1 : 0;
  out.report = rb.os.str();
  std::ostringstream csv;
  write_survival_csv(csv, st);
  out.files.emplace_back("survival.csv", csv.str());
  return out;
}

template <int Dim>
ExperimentOutput sample_field_cmd(const ExperimentConfig& cfg) {
  ReportBuilder rb("sample-field", cfg);
  Window<Dim> w;
  for (int i = 0; i < Dim; ++i) {
    w.lo[i] = 0.0;
    w.hi[i] = cfg.sample_side;
  }
  w.y_lo = cfg.sample_y_lo.value_or(cfg.r1);
  w.y_hi = cfg.sample_y_hi;
  SamplingOptions so;
  so.periodic = cfg.sample_periodic != 0;
  so.cell_side = cfg.cell_side;
  so.threads = cfg.threads;
  ObstacleField<Dim> field;
  try {
    const ObstacleShape shape(Dim, cfg.r0, cfg.r1, cfg.smoothness);
    field = sample_field<Dim>(w, cfg.lambda, StrengthDistribution::parse(cfg.distribution), shape, cfg.seed, so);
  } catch (const DepinError& e) {
    return infeasible(rb, "sampling", e.what());
  }
  double volume = w.y_hi - w.y_lo;
  for (int i = 0; i < Dim; ++i) volume *= w.hi[i] - w.lo[i];
  rb.kv("obstacles", field.obstacles().size()).kv("expected_obstacles", cfg.lambda * volume);
  rb.kv("field_bound_M", field.shape().max_abs() * field.max_local_strength_sum());
  rb.kv("lipschitz_y", field.lipschitz_y());
  rb.kv("summary", "done");
  ExperimentOutput out;
  out.report = rb.os.str();
  std::ostringstream os;
  write_field(os, field);
  out.files.emplace_back("field.txt", os.str());
  return out;
}

}  // namespace detail

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"simulate",   "verify-certificate", "critical-force",
                                                 "hysteresis", "percolation-stats",  "sample-field"};
  return names;
}

/// Runs one experiment. Config problems come back as exit code 2 with the
/// message in the report rather than as exceptions.
inline ExperimentOutput run_experiment(const std::string& name, const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentOutput out;
  try {
    validate_config(cfg);
    auto pick = [&](auto one, auto two) { return cfg.n == 1 ? one(cfg) : two(cfg); };
    if (name == "verify-certificate")
      out = pick(detail::verify_certificate<1>, detail::verify_certificate<2>);
    else if (name == "simulate")
      out = pick(detail::simulate<1>, detail::simulate<2>);
    else if (name == "critical-force")
      out = pick(detail::critical_force<1>, detail::critical_force<2>);
    else if (name == "hysteresis")
      out = pick(detail::hysteresis<1>, detail::hysteresis<2>);
    else if (name == "percolation-stats")
      out = pick(detail::percolation_stats<1>, detail::percolation_stats<2>);
    else if (name == "sample-field")
      out = pick(detail::sample_field_cmd<1>, detail::sample_field_cmd<2>);
    else
      throw ConfigError("unknown experiment '" + name + "'");
  } catch (const ConfigError& e) {
    out = ExperimentOutput{};
    out.exit_code = 2;
    out.report = "# depin " + name + "\n[results]\nstage=config\nmessage=" + std::string(e.what()) + "\nsummary=infeasible\n";
  } catch (const DepinError& e) {
    detail::ReportBuilder rb(name, cfg);
    out = detail::infeasible(rb, "run", e.what());
  }
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace depin
