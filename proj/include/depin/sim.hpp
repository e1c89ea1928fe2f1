#pragma once

// Explicit Euler integration of
//   qew: u_t = Lap u + s f(x, u) + F
//   mcf: u_t = sqrt(1 + |grad u|^2) (kappa(u) + s f(x, u) + F)
// on a periodic grid of n = 1, 2 dimensions, with optional one-sided clamping
// of the update (s = +1 normally, -1 for the receding phase of hysteresis).

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "depin/geometry.hpp"
#include "depin/obstacle_field.hpp"

namespace depin {

enum class Model { qew, mcf };

inline const char* model_name(Model m) { return m == Model::qew ? "qew" : "mcf"; }

inline Model parse_model(const std::string& s) {
  if (s == "qew") return Model::qew;
  if (s == "mcf") return Model::mcf;
  throw DepinError("unknown model '" + s + "' (expected qew or mcf)");
}

template <int Dim>
struct Grid {
  int points = 0;  // per side
  double side = 0.0;

  Grid() = default;
  Grid(int pts, double s) : points(pts), side(s) {
    if (pts < 3) throw DepinError("grid needs at least 3 points per side");
    if (!(s > 0.0)) throw DepinError("grid side must be positive");
  }
  double dx() const { return side / points; }
  long size() const {
    long s = 1;
    for (int i = 0; i < Dim; ++i) s *= points;
    return s;
  }
  Vec<Dim> position(long idx) const {
    Vec<Dim> x{};
    for (int i = Dim - 1; i >= 0; --i) {
      x[i] = static_cast<double>(idx % points) * dx();
      idx /= points;
    }
    return x;
  }
};

/// Per grid point, the obstacles within horizontal distance r1 sorted by height,
/// so that f(x_i, y) costs a binary search plus a few bump evaluations.
template <int Dim>
class ColumnField {
 public:
  ColumnField() = default;

  ColumnField(const ObstacleField<Dim>& field, const Grid<Dim>& grid) : shape_(field.shape()) {
    const long n = grid.size();
    start_.assign(static_cast<std::size_t>(n) + 1, 0);
    std::vector<std::vector<Entry>> lists(static_cast<std::size_t>(n));
    const double r1 = shape_.r1();
    const double dx = grid.dx();
    const int reach = static_cast<int>(std::ceil(r1 / dx)) + 1;
    for (const auto& ob : field.obstacles()) {
      std::array<long, Dim> c{};
      for (int i = 0; i < Dim; ++i) c[i] = static_cast<long>(std::floor(ob.x[i] / dx));
      long span = 2 * reach + 1, total = 1;
      for (int i = 0; i < Dim; ++i) total *= span;
      for (long t = 0; t < total; ++t) {
        long rem = t, flat = 0;
        bool ok = true;
        std::array<long, Dim> g{};
        for (int i = 0; i < Dim; ++i) {
          g[i] = c[i] + rem % span - reach;
          rem /= span;
        }
        double h2 = 0.0;
        for (int i = 0; i < Dim; ++i) {
          double dxi = static_cast<double>(g[i]) * dx - ob.x[i];
          if (field.periodic()) dxi = min_image(dxi, grid.side);
          else if (g[i] < 0 || g[i] >= grid.points) ok = false;
          h2 += dxi * dxi;
        }
        if (!ok || h2 >= r1 * r1) continue;
        for (int i = 0; i < Dim; ++i) flat = flat * grid.points + floor_mod(g[i], grid.points);
        auto& list = lists[static_cast<std::size_t>(flat)];
        Entry e{ob.y, h2, ob.strength};
        // periodic wrapping of a short torus can visit the same point twice
        bool dup = false;
        for (const auto& o : list)
          if (o.y == e.y && o.h2 == e.h2 && o.strength == e.strength) dup = true;
        if (!dup) list.push_back(e);
      }
    }
    for (long i = 0; i < n; ++i) {
      auto& l = lists[static_cast<std::size_t>(i)];
      std::sort(l.begin(), l.end(), [](const Entry& a, const Entry& b) {
        if (a.y != b.y) return a.y < b.y;
        if (a.h2 != b.h2) return a.h2 < b.h2;
        return a.strength < b.strength;
      });
      start_[static_cast<std::size_t>(i) + 1] = start_[static_cast<std::size_t>(i)] + l.size();
    }
    entries_.reserve(start_.back());
    for (auto& l : lists) entries_.insert(entries_.end(), l.begin(), l.end());
    cursor_.assign(start_.begin(), start_.end() - 1);
  }

  double eval(long idx, double y) const {
    const double r1 = shape_.r1();
    const std::size_t b = start_[static_cast<std::size_t>(idx)], e = start_[static_cast<std::size_t>(idx) + 1];
    // The interface moves slowly, so walk from the previous position instead of
    // searching; the result does not depend on the cursor.
    std::size_t c = std::clamp<std::size_t>(cursor_[static_cast<std::size_t>(idx)], b, e);
    while (c > b && entries_[c - 1].y >= y - r1) --c;
    while (c < e && entries_[c].y < y - r1) ++c;
    cursor_[static_cast<std::size_t>(idx)] = static_cast<std::uint32_t>(c);
    auto it = entries_.begin() + static_cast<long>(c);
    const auto end = entries_.begin() + static_cast<long>(e);
    double sum = 0.0;
    for (; it != end && it->y < y + r1; ++it) {
      const double dy = y - it->y;
      sum += it->strength * shape_.eval_dist(std::sqrt(it->h2 + dy * dy));
    }
    return sum;
  }

 private:
  struct Entry {
    double y;
    double h2;
    double strength;
  };
  ObstacleShape shape_;
  std::vector<std::size_t> start_;
  std::vector<Entry> entries_;
  mutable std::vector<std::uint32_t> cursor_;
};

enum class Clamp { none, nonnegative, nonpositive };

struct SimConfig {
  Model model = Model::qew;
  double F = 0.0;
  double force_sign = 1.0;  // multiplies f
  Clamp clamp = Clamp::none;
  double cfl = 0.9;
  double dt = 0.0;  // 0: automatic
  double gradient_cap = 10.0;
};

struct StepInfo {
  double dt = 0.0;
  double max_update = 0.0;  // max |u_new - u|
  double min_update = 0.0;  // most negative u_new - u
  double max_grad = 0.0;
  double max_u = 0.0;  // after the step
  double min_u = 0.0;
};

enum class Outcome { Pinned, Escaped, Timeout, Aborted };

inline const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Pinned: return "Pinned";
    case Outcome::Escaped: return "Escaped";
    case Outcome::Timeout: return "Timeout";
    case Outcome::Aborted: return "Aborted";
  }
  return "?";
}

struct StopSpec {
  double v_tol = 0.0;    // 0: 1e-8 max(|F|, 1)
  double tau = 10.0;
  double H_esc = 0.0;    // 0: field top minus r1 (infinite without a field)
  double T_max = 100.0;
  double trace_every = 0.0;  // 0: T_max / 200
  double H_low = -std::numeric_limits<double>::infinity();  // optional lower escape
  long max_steps = 0;    // 0: unlimited
};

struct TraceRow {
  double t = 0.0;
  double mean_u = 0.0;
  double max_u = 0.0;
  double min_u = 0.0;
  double max_step_update = 0.0;
  double max_grad = 0.0;
};

struct RunResult {
  Outcome outcome = Outcome::Timeout;
  std::vector<TraceRow> trace;
  double t_end = 0.0;
  long steps = 0;
  double min_update = 0.0;  // over the whole run
  double dt_last = 0.0;
  std::string note;
};

template <int Dim>
class Simulator {
 public:
  Simulator(Grid<Dim> grid, std::shared_ptr<const ObstacleField<Dim>> field, SimConfig cfg)
      : grid_(grid), field_(std::move(field)), cfg_(cfg) {
    static_assert(Dim == 1 || Dim == 2, "simulation supports n = 1, 2");
    u_.assign(static_cast<std::size_t>(grid_.size()), 0.0);
    next_.assign(u_.size(), 0.0);
    if (field_) {
      for (int i = 0; i < Dim; ++i) {
        const double period = field_->window().hi[i] - field_->window().lo[i];
        if (!field_->periodic() || std::abs(period - grid_.side) > 1e-9 * grid_.side || field_->window().lo[i] != 0.0)
          throw DepinError("simulation needs a periodic field on [0, side)^n matching the grid");
      }
      columns_ = ColumnField<Dim>(*field_, grid_);
      L_f_ = field_->lipschitz_y();
      M_ = field_->shape().max_abs() * field_->max_local_strength_sum();
    }
  }

  const Grid<Dim>& grid() const { return grid_; }
  const SimConfig& config() const { return cfg_; }
  SimConfig& config() { return cfg_; }
  std::vector<double>& u() { return u_; }
  const std::vector<double>& u() const { return u_; }
  double time() const { return t_; }
  void set_time(double t) { t_ = t; }
  double lipschitz_f() const { return L_f_; }
  bool has_field() const { return static_cast<bool>(field_); }
  const ObstacleField<Dim>* field() const { return field_.get(); }

  double f_at(long idx, double y) const { return field_ ? columns_.eval(idx, y) : 0.0; }

  /// Largest dt for which the scheme is monotone at the current state.
  double stable_dt() const {
    const double dx = grid_.dx();
    if (cfg_.model == Model::qew) return cfg_.cfl / (2.0 * Dim / (dx * dx) + L_f_);
    const double g = max_gradient();
    const double nu = std::sqrt(1.0 + g * g);
    const double cn = Dim == 1 ? 1.0 : 1.5;
    return cfg_.cfl / (2.0 * cn / (dx * dx) + nu * L_f_ + (M_ + std::abs(cfg_.F)) / dx);
  }

  double max_gradient() const {
    double g = 0.0;
    for (long i = 0; i < grid_.size(); ++i) g = std::max(g, norm<Dim>(gradient(i)));
    return g;
  }

  /// Right-hand side at grid point i.
  double velocity(long i) const {
    const double f = cfg_.force_sign * f_at(i, u_[static_cast<std::size_t>(i)]) + cfg_.F;
    const double dx2 = grid_.dx() * grid_.dx();
    const double ui = u_[static_cast<std::size_t>(i)];
    if constexpr (Dim == 1) {
      const double ul = u_[wrap_index(i - 1)], ur = u_[wrap_index(i + 1)];
      const double lap = (ul - 2.0 * ui + ur) / dx2;
      if (cfg_.model == Model::qew) return lap + f;
      const double ux = (ur - ul) / (2.0 * grid_.dx());
      const double nu2 = 1.0 + ux * ux;
      return lap / nu2 + std::sqrt(nu2) * f;
    } else {
      const long p = grid_.points;
      const long r = i / p, c = i - r * p;
      const long rm = r == 0 ? p - 1 : r - 1, rp = r == p - 1 ? 0 : r + 1;
      const long cm = c == 0 ? p - 1 : c - 1, cp = c == p - 1 ? 0 : c + 1;
      auto U = [&](long a, long b) { return u_[static_cast<std::size_t>(a * p + b)]; };
      const double uw = U(rm, c), ue = U(rp, c), us = U(r, cm), un = U(r, cp);
      const double uxx = (uw - 2.0 * ui + ue) / dx2;
      const double uyy = (us - 2.0 * ui + un) / dx2;
      if (cfg_.model == Model::qew) return uxx + uyy + f;
      const double ux = (ue - uw) / (2.0 * grid_.dx());
      const double uy = (un - us) / (2.0 * grid_.dx());
      const double uxy = (U(rp, cp) - U(rp, cm) - U(rm, cp) + U(rm, cm)) / (4.0 * dx2);
      const double nu2 = 1.0 + ux * ux + uy * uy;
      const double k = 0.5 * (uxx + uyy - (ux * ux * uxx + 2.0 * ux * uy * uxy + uy * uy * uyy) / nu2);
      return k + std::sqrt(nu2) * f;
    }
  }

  /// One explicit Euler step; dt = 0 picks the stable step.
  StepInfo step(double dt = 0.0) {
    StepInfo info;
    const double bound = stable_dt();
    if (dt <= 0.0) dt = cfg_.dt > 0.0 ? cfg_.dt : bound;
    if (dt > bound * (1.0 + 1e-12)) {
      std::ostringstream os;
      os << std::setprecision(6) << "time step " << dt << " violates the stability bound " << bound;
      throw DepinError(os.str());
    }
    info.dt = dt;
    info.max_u = -std::numeric_limits<double>::infinity();
    info.min_u = std::numeric_limits<double>::infinity();
    for (long i = 0; i < grid_.size(); ++i) {
      double du = dt * velocity(i);
      if (cfg_.clamp == Clamp::nonnegative) du = std::max(du, 0.0);
      else if (cfg_.clamp == Clamp::nonpositive) du = std::min(du, 0.0);
      const double v = u_[static_cast<std::size_t>(i)] + du;
      next_[static_cast<std::size_t>(i)] = v;
      info.max_update = std::max(info.max_update, std::abs(du));
      info.min_update = std::min(info.min_update, du);
      info.max_u = std::max(info.max_u, v);
      info.min_u = std::min(info.min_u, v);
    }
    u_.swap(next_);
    t_ += dt;
    if (cfg_.model == Model::mcf) info.max_grad = max_gradient();
    return info;
  }

  TraceRow snapshot_row(double last_update) const {
    TraceRow r;
    r.t = t_;
    double s = 0.0;
    r.max_u = -std::numeric_limits<double>::infinity();
    r.min_u = std::numeric_limits<double>::infinity();
    for (double v : u_) {
      s += v;
      r.max_u = std::max(r.max_u, v);
      r.min_u = std::min(r.min_u, v);
    }
    r.mean_u = s / static_cast<double>(u_.size());
    r.max_step_update = last_update;
    r.max_grad = max_gradient();
    return r;
  }

  double mean() const {
    double s = 0.0;
    for (double v : u_) s += v;
    return s / static_cast<double>(u_.size());
  }

  /// Integrates until pinned, escaped, timed out or (mcf) the gradient cap is hit.
  /// A step with an exactly zero update everywhere counts as pinned.
  RunResult run_until(const StopSpec& spec) {
    RunResult res;
    const double v_tol = spec.v_tol > 0.0 ? spec.v_tol : 1e-8 * std::max(std::abs(cfg_.F), 1.0);
    double H_esc = spec.H_esc;
    if (H_esc == 0.0)
      H_esc = field_ ? field_->window().y_hi - field_->shape().r1() : std::numeric_limits<double>::infinity();
    const double t0 = t_;
    const double every = spec.trace_every > 0.0 ? spec.trace_every : spec.T_max / 200.0;
    double next_trace = t0 + every;
    double quiet_since = -1.0;
    double last_update = 0.0;
    res.trace.push_back(snapshot_row(0.0));
    while (true) {
      if (t_ - t0 >= spec.T_max - 1e-12) {
        res.outcome = Outcome::Timeout;
        break;
      }
      if (spec.max_steps > 0 && res.steps >= spec.max_steps) {
        res.outcome = Outcome::Timeout;
        break;
      }
      double dt = cfg_.dt > 0.0 ? cfg_.dt : stable_dt();
      dt = std::min(dt, spec.T_max - (t_ - t0));
      const auto info = step(dt);
      ++res.steps;
      res.dt_last = info.dt;
      last_update = info.max_update;
      res.min_update = std::min(res.min_update, info.min_update);
      const double vmax = info.max_update / info.dt;
      if (cfg_.model == Model::mcf && info.max_grad > cfg_.gradient_cap) {
        res.outcome = Outcome::Aborted;
        std::ostringstream os;
        os << "gradient " << info.max_grad << " exceeded cap " << cfg_.gradient_cap << " at t = " << t_;
        res.note = os.str();
        break;
      }
      if (info.max_u >= H_esc || info.min_u <= spec.H_low) {
        res.outcome = Outcome::Escaped;
        break;
      }
      if (info.max_update == 0.0) {
        res.outcome = Outcome::Pinned;
        res.note = "zero update";
        break;
      }
      if (vmax < v_tol) {
        if (quiet_since < 0.0) quiet_since = t_ - info.dt;
        if (t_ - quiet_since >= spec.tau) {
          res.outcome = Outcome::Pinned;
          break;
        }
      } else {
        quiet_since = -1.0;
      }
      if (t_ >= next_trace) {
        res.trace.push_back(snapshot_row(info.max_update));
        while (next_trace <= t_) next_trace += every;
      }
    }
    if (res.trace.back().t < t_) res.trace.push_back(snapshot_row(last_update));
    res.t_end = t_;
    return res;
  }

 private:
  std::size_t wrap_index(long j) const {
    const long p = grid_.points;
    return static_cast<std::size_t>(j < 0 ? j + p : (j >= p ? j - p : j));
  }

  Vec<Dim> gradient(long i) const {
    Vec<Dim> g{};
    const double h2 = 2.0 * grid_.dx();
    if constexpr (Dim == 1) {
      g[0] = (u_[wrap_index(i + 1)] - u_[wrap_index(i - 1)]) / h2;
    } else {
      const long p = grid_.points;
      const long r = i / p, c = i - r * p;
      const long rm = r == 0 ? p - 1 : r - 1, rp = r == p - 1 ? 0 : r + 1;
      const long cm = c == 0 ? p - 1 : c - 1, cp = c == p - 1 ? 0 : c + 1;
      g[0] = (u_[static_cast<std::size_t>(rp * p + c)] - u_[static_cast<std::size_t>(rm * p + c)]) / h2;
      g[1] = (u_[static_cast<std::size_t>(r * p + cp)] - u_[static_cast<std::size_t>(r * p + cm)]) / h2;
    }
    return g;
  }

  Grid<Dim> grid_;
  std::shared_ptr<const ObstacleField<Dim>> field_;
  SimConfig cfg_;
  ColumnField<Dim> columns_;
  std::vector<double> u_;
  std::vector<double> next_;
  double t_ = 0.0;
  double L_f_ = 0.0;
  double M_ = 0.0;
};

struct ComparisonResult {
  bool preserved = true;
  long first_violation_step = -1;
  double worst_gap = 0.0;  // min over steps and points of u_high - u_low
};

/// Steps two states with a common dt and reports whether u_low <= u_high holds
/// at every step.
template <int Dim>
ComparisonResult comparison_check(Simulator<Dim>& low, Simulator<Dim>& high, long steps) {
  ComparisonResult r;
  auto gap = [&] {
    double g = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < low.u().size(); ++i) g = std::min(g, high.u()[i] - low.u()[i]);
    return g;
  };
  r.worst_gap = gap();
  if (r.worst_gap < 0.0) {
    r.preserved = false;
    r.first_violation_step = 0;
    return r;
  }
  for (long s = 1; s <= steps; ++s) {
    const double dt = std::min(low.stable_dt(), high.stable_dt());
    low.step(dt);
    high.step(dt);
    const double g = gap();
    r.worst_gap = std::min(r.worst_gap, g);
    if (g < 0.0 && r.preserved) {
      r.preserved = false;
      r.first_violation_step = s;
    }
  }
  return r;
}

/// True when no per-step update fell below -tol during the run.
inline bool monotone_check(const RunResult& run, double tol) { return run.min_update >= -tol; }

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace) {
  os << std::setprecision(12);
  os << "t,mean_u,max_u,min_u,max_step_update,max_grad\n";
  for (const auto& r : trace)
    os << r.t << ',' << r.mean_u << ',' << r.max_u << ',' << r.min_u << ',' << r.max_step_update << ',' << r.max_grad
       << "\n";
}

template <int Dim>
void write_snapshot(std::ostream& os, const Simulator<Dim>& sim) {
  os << std::setprecision(12);
  os << "# t=" << sim.time() << " points=" << sim.grid().points << " side=" << sim.grid().side << "\n";
  for (long i = 0; i < sim.grid().size(); ++i) {
    const auto x = sim.grid().position(i);
    for (int k = 0; k < Dim; ++k) os << x[k] << ' ';
    os << sim.u()[static_cast<std::size_t>(i)] << "\n";
  }
}

}  // namespace depin
