#pragma once

// Lipschitz site percolation on a periodic torus of columns: openness fields,
// the minimal 1-Lipschitz open surface, survival statistics of its height, and
// the per-column obstacle selection used by the supersolution builders.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "depin/geometry.hpp"
#include "depin/obstacle_field.hpp"
#include "depin/parallel.hpp"
#include "depin/rng.hpp"

namespace depin {

/// Box decomposition of the torus [0, K P)^n with period P = l + d: closed boxes
/// [k P, k P + l], reduced boxes shrunk by r1, gaps of width d, and height
/// slabs of thickness h starting at y = r1.
template <int Dim>
struct BoxGeometry {
  double l = 0.0;
  double d = 0.0;
  double h = 0.0;
  double r1 = 0.0;
  int columns = 1;  // K, per axis
  int height_cap = 1;

  double period() const { return l + d; }
  double side() const { return period() * columns; }

  long column_count() const {
    long c = 1;
    for (int i = 0; i < Dim; ++i) c *= columns;
    return c;
  }

  std::array<int, Dim> unflatten(long flat) const {
    std::array<int, Dim> k{};
    for (int i = Dim - 1; i >= 0; --i) {
      k[i] = static_cast<int>(flat % columns);
      flat /= columns;
    }
    return k;
  }

  long flatten(const std::array<int, Dim>& k) const {
    long flat = 0;
    for (int i = 0; i < Dim; ++i) flat = flat * columns + floor_mod(k[i], columns);
    return flat;
  }

  /// Column and slab of a center if it lies in some reduced cuboid, else -1.
  std::pair<long, int> cuboid_of(const Vec<Dim>& x, double y) const {
    std::array<int, Dim> k{};
    for (int i = 0; i < Dim; ++i) {
      const double xi = wrap(x[i], side());
      const long ki = static_cast<long>(std::floor(xi / period()));
      const double t = xi - static_cast<double>(ki) * period();
      if (t < r1 || t > l - r1) return {-1, -1};
      k[i] = static_cast<int>(std::min<long>(ki, columns - 1));
    }
    if (y < r1) return {-1, -1};
    const int j = static_cast<int>(std::floor((y - r1) / h)) + 1;
    if (j < 1 || j > height_cap) return {-1, -1};
    return {flatten(k), j};
  }

  /// Center of the reduced box of column k.
  Vec<Dim> box_center(long flat) const {
    auto k = unflatten(flat);
    Vec<Dim> c{};
    for (int i = 0; i < Dim; ++i) c[i] = k[i] * period() + 0.5 * l;
    return c;
  }
};

template <int Dim>
struct SiteField {
  int columns = 1;
  int height_cap = 1;
  std::vector<std::uint8_t> open;  // [column * height_cap + (j - 1)]
  std::string origin;
  double empirical_open_fraction = 0.0;
  double theoretical_marginal = 0.0;

  long column_count() const {
    long c = 1;
    for (int i = 0; i < Dim; ++i) c *= columns;
    return c;
  }
  bool is_open(long col, int j) const {
    return open[static_cast<std::size_t>(col) * height_cap + static_cast<std::size_t>(j - 1)] != 0;
  }
  void set_open(long col, int j, bool v) {
    open[static_cast<std::size_t>(col) * height_cap + static_cast<std::size_t>(j - 1)] = v ? 1 : 0;
  }

  static SiteField closed(int columns, int height_cap) {
    SiteField s;
    s.columns = columns;
    s.height_cap = height_cap;
    s.open.assign(static_cast<std::size_t>(s.column_count()) * height_cap, 0);
    return s;
  }
};

inline bool bernoulli_open(double p, std::uint64_t seed, std::uint64_t trial, long col, int j) {
  return to_unit(hash_key({seed, trial, static_cast<std::uint64_t>(col), static_cast<std::uint64_t>(j)})) < p;
}

/// iid Bernoulli(p) sites; site (col, j) is open iff its keyed uniform is < p,
/// which couples fields with different p monotonically.
template <int Dim>
SiteField<Dim> bernoulli_sites(int columns, int height_cap, double p, std::uint64_t seed, std::uint64_t trial = 0) {
  auto s = SiteField<Dim>::closed(columns, height_cap);
  std::ostringstream os;
  os << "bernoulli(p=" << p << ", seed=" << seed << ")";
  s.origin = os.str();
  std::size_t opened = 0;
  for (long c = 0; c < s.column_count(); ++c)
    for (int j = 1; j <= height_cap; ++j)
      if (bernoulli_open(p, seed, trial, c, j)) {
        s.set_open(c, j, true);
        ++opened;
      }
  s.empirical_open_fraction = static_cast<double>(opened) / static_cast<double>(s.open.size());
  s.theoretical_marginal = p;
  return s;
}

/// Site (k, j) is open iff an obstacle of strength >= fbar has its center in the
/// reduced cuboid of column k and slab j.
template <int Dim>
SiteField<Dim> openness_from_field(const ObstacleField<Dim>& field, const BoxGeometry<Dim>& geo, double fbar) {
  if (!(geo.l > 2.0 * geo.r1)) throw DepinError("openness_from_field: need l > 2 r1");
  const auto& w = field.window();
  std::vector<std::string> missing;
  for (int i = 0; i < Dim; ++i) {
    if (w.lo[i] > geo.r1 || w.hi[i] < geo.side() - geo.d - geo.r1) {
      std::ostringstream os;
      os << "x-axis " << i << " covers [" << w.lo[i] << ", " << w.hi[i] << "), cuboids need [" << geo.r1 << ", "
         << geo.side() - geo.d - geo.r1 << "]";
      missing.push_back(os.str());
    }
  }
  const double top = geo.height_cap * geo.h + geo.r1;
  if (w.y_lo > geo.r1 || w.y_hi < top) {
    std::ostringstream os;
    os << "y covers [" << w.y_lo << ", " << w.y_hi << "), slabs 1.." << geo.height_cap << " need [" << geo.r1 << ", "
       << top << "]";
    missing.push_back(os.str());
  }
  if (!missing.empty()) {
    std::string msg = "openness_from_field: window too small:";
    for (auto& m : missing) msg += " " + m + ";";
    throw DepinError(msg);
  }
  auto s = SiteField<Dim>::closed(geo.columns, geo.height_cap);
  std::ostringstream os;
  os << "obstacles(l=" << geo.l << ", d=" << geo.d << ", h=" << geo.h << ", fbar=" << fbar << ")";
  s.origin = os.str();
  for (const auto& ob : field.obstacles()) {
    if (ob.strength < fbar) continue;
    auto [col, j] = geo.cuboid_of(ob.x, ob.y);
    if (col >= 0) s.set_open(col, j, true);
  }
  std::size_t opened = 0;
  for (auto v : s.open) opened += v;
  s.empirical_open_fraction = s.open.empty() ? 0.0 : static_cast<double>(opened) / static_cast<double>(s.open.size());
  const double area = std::pow(geo.l - 2.0 * geo.r1, Dim) * geo.h;
  s.theoretical_marginal = 1.0 - std::exp(-field.lambda() * area * field.distribution().tail(fbar));
  return s;
}

// ---------------------------------------------------------------------------
// Minimal Lipschitz surface

template <int Dim>
struct LipschitzSurface {
  int columns = 1;
  std::vector<int> height;  // per flattened column
  long iterations = 0;

  int at(long col) const { return height[static_cast<std::size_t>(col)]; }
  int max_height() const { return height.empty() ? 0 : *std::max_element(height.begin(), height.end()); }
};

template <int Dim>
struct SurfaceResult {
  bool ok = false;
  LipschitzSurface<Dim> surface;
  long failed_column = -1;  // when the cap was exceeded
  int attained_height = 0;  // largest height reached before failing

  explicit operator bool() const { return ok; }
};

template <int Dim>
std::vector<long> torus_neighbors(long col, int columns) {
  std::vector<long> out;
  std::array<int, Dim> k{};
  long rem = col;
  for (int i = Dim - 1; i >= 0; --i) {
    k[i] = static_cast<int>(rem % columns);
    rem /= columns;
  }
  for (int i = 0; i < Dim; ++i)
    for (int s : {-1, 1}) {
      auto m = k;
      m[i] = static_cast<int>(floor_mod(m[i] + s, columns));
      long flat = 0;
      for (int a = 0; a < Dim; ++a) flat = flat * columns + m[a];
      out.push_back(flat);
    }
  return out;
}

namespace detail {

// next_open[col][j] = smallest open height >= j, or cap + 1.
template <int Dim>
std::vector<int> next_open_table(const SiteField<Dim>& sites) {
  const int cap = sites.height_cap;
  std::vector<int> next(static_cast<std::size_t>(sites.column_count()) * (cap + 2), cap + 1);
  for (long c = 0; c < sites.column_count(); ++c) {
    int nxt = cap + 1;
    for (int j = cap; j >= 1; --j) {
      if (sites.is_open(c, j)) nxt = j;
      next[static_cast<std::size_t>(c) * (cap + 2) + j] = nxt;
    }
  }
  return next;
}

}  // namespace detail

/// Monotone value iteration from L = 1: raise L(k) to the smallest open height
/// not below max(L(k), max_neighbors L - 1) until nothing changes. Every open
/// Lipschitz surface dominates each iterate, so the fixed point is the minimal one.
template <int Dim>
SurfaceResult<Dim> minimal_lipschitz_surface(const SiteField<Dim>& sites) {
  const int cap = sites.height_cap;
  const long ncol = sites.column_count();
  const auto next = detail::next_open_table(sites);
  auto lookup = [&](long c, int j) { return next[static_cast<std::size_t>(c) * (cap + 2) + j]; };

  std::vector<std::vector<long>> nbrs(static_cast<std::size_t>(ncol));
  for (long c = 0; c < ncol; ++c) nbrs[static_cast<std::size_t>(c)] = torus_neighbors<Dim>(c, sites.columns);

  SurfaceResult<Dim> result;
  std::vector<int> L(static_cast<std::size_t>(ncol), 1);
  std::deque<long> queue;
  std::vector<std::uint8_t> queued(static_cast<std::size_t>(ncol), 1);
  for (long c = 0; c < ncol; ++c) queue.push_back(c);
  long iterations = 0;
  while (!queue.empty()) {
    const long c = queue.front();
    queue.pop_front();
    queued[static_cast<std::size_t>(c)] = 0;
    ++iterations;
    int target = L[static_cast<std::size_t>(c)];
    for (long m : nbrs[static_cast<std::size_t>(c)]) target = std::max(target, L[static_cast<std::size_t>(m)] - 1);
    const int h = target > cap ? cap + 1 : lookup(c, target);
    if (h > cap) {
      result.failed_column = c;
      result.attained_height = *std::max_element(L.begin(), L.end());
      result.surface.columns = sites.columns;
      result.surface.height = L;
      result.surface.iterations = iterations;
      return result;
    }
    if (h != L[static_cast<std::size_t>(c)]) {
      L[static_cast<std::size_t>(c)] = h;
      for (long m : nbrs[static_cast<std::size_t>(c)]) {
        if (!queued[static_cast<std::size_t>(m)]) {
          queued[static_cast<std::size_t>(m)] = 1;
          queue.push_back(m);
        }
      }
    }
  }
  result.ok = true;
  result.surface.columns = sites.columns;
  result.surface.height = std::move(L);
  result.surface.iterations = iterations;
  result.attained_height = result.surface.max_height();
  return result;
}

/// Same fixed point computed by Gauss-Seidel sweeps in a caller-given order.
template <int Dim>
SurfaceResult<Dim> minimal_lipschitz_surface_sweeps(const SiteField<Dim>& sites, const std::vector<long>& order) {
  const int cap = sites.height_cap;
  const auto next = detail::next_open_table(sites);
  std::vector<int> L(static_cast<std::size_t>(sites.column_count()), 1);
  SurfaceResult<Dim> result;
  result.surface.columns = sites.columns;
  bool changed = true;
  long iterations = 0;
  while (changed) {
    changed = false;
    for (long c : order) {
      ++iterations;
      int target = L[static_cast<std::size_t>(c)];
      for (long m : torus_neighbors<Dim>(c, sites.columns)) target = std::max(target, L[static_cast<std::size_t>(m)] - 1);
      const int h = target > cap ? cap + 1 : next[static_cast<std::size_t>(c) * (cap + 2) + target];
      if (h > cap) {
        result.failed_column = c;
        result.surface.height = L;
        result.attained_height = *std::max_element(L.begin(), L.end());
        return result;
      }
      if (h != L[static_cast<std::size_t>(c)]) {
        L[static_cast<std::size_t>(c)] = h;
        changed = true;
      }
    }
  }
  result.ok = true;
  result.surface.height = std::move(L);
  result.surface.iterations = iterations;
  result.attained_height = result.surface.max_height();
  return result;
}

/// Checks openness and the Lipschitz-1 condition on the torus.
template <int Dim>
bool is_open_lipschitz(const SiteField<Dim>& sites, const std::vector<int>& L) {
  for (long c = 0; c < sites.column_count(); ++c) {
    const int h = L[static_cast<std::size_t>(c)];
    if (h < 1 || h > sites.height_cap || !sites.is_open(c, h)) return false;
    for (long m : torus_neighbors<Dim>(c, sites.columns))
      if (std::abs(h - L[static_cast<std::size_t>(m)]) > 1) return false;
  }
  return true;
}

template <int Dim>
void write_surface(std::ostream& os, const LipschitzSurface<Dim>& s) {
  BoxGeometry<Dim> g;
  g.columns = s.columns;
  for (long c = 0; c < static_cast<long>(s.height.size()); ++c) {
    auto k = g.unflatten(c);
    for (int i = 0; i < Dim; ++i) os << k[i] << ' ';
    os << s.at(c) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Survival statistics of L(0)

struct SurvivalPoint {
  int k = 0;
  long survivors = 0;
  long trials = 0;
  double p_hat = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

/// Wilson score interval at z = 1.96.
inline std::pair<double, double> wilson_interval(long successes, long trials, double z = 1.959963984540054) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  const double lo = successes == 0 ? 0.0 : std::max(0.0, centre - half);
  const double hi = successes == trials ? 1.0 : std::min(1.0, centre + half);
  return {lo, hi};
}

struct TailStatistics {
  int n = 1;
  double p = 1.0;
  double p_c = 0.0;
  double nu = 0.0;
  long trials = 0;
  int height_cap = 0;
  int torus_side = 0;
  long cap_failures = 0;
  bool supercritical = true;
  std::vector<SurvivalPoint> curve;  // k = 0 .. height_cap
  // Log-linear fit of survival over well-sampled k >= 1.
  int fit_k_max = 0;
  double fitted_ratio = 0.0;
  double fitted_ratio_lo = 0.0;
  double fitted_ratio_hi = 0.0;
  bool envelope_ok = false;
  bool pass = false;
  std::string note;
};

inline double critical_probability(int n) {
  const double q = 2.0 * n + 2.0;
  return 1.0 - 1.0 / (q * q);
}

struct TailOptions {
  int height_cap = 16;
  int torus_side = 0;  // 0: 4 * height_cap
  long min_survivors = 20;
  int threads = 1;
};

namespace detail {

inline void fit_survival(TailStatistics& st, long min_survivors) {
  // Weighted least squares of log p_hat(k) on k; var(log p_hat) ~ (1 - p)/(N p).
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  int used = 0;
  for (const auto& pt : st.curve) {
    if (pt.k < 1 || pt.survivors < min_survivors || pt.p_hat <= 0.0) continue;
    const double var = (1.0 - pt.p_hat) / (static_cast<double>(pt.trials) * pt.p_hat);
    const double w = 1.0 / std::max(var, 1e-300);
    const double x = pt.k, y = std::log(pt.p_hat);
    sw += w; sx += w * x; sy += w * y; sxx += w * x * x; sxy += w * x * y;
    ++used;
    st.fit_k_max = pt.k;
  }
  if (used >= 2) {
    const double det = sw * sxx - sx * sx;
    const double slope = (sw * sxy - sx * sy) / det;
    const double se = std::sqrt(sw / det);
    st.fitted_ratio = std::exp(slope);
    st.fitted_ratio_lo = std::exp(slope - 1.959963984540054 * se);
    st.fitted_ratio_hi = std::exp(slope + 1.959963984540054 * se);
  } else if (used == 1) {
    st.note = "only one well-sampled level; no decay fit";
  } else {
    st.note = "no survivors beyond k = 0";
  }
  // Envelope anchored at k = 1: the lower CI of every level must lie below
  // ci_hi(1) * nu^(k - 1).
  st.envelope_ok = true;
  double anchor = -1.0;
  for (const auto& pt : st.curve) {
    if (pt.k == 1) anchor = pt.ci_hi;
    if (pt.k < 2 || anchor < 0.0) continue;
    if (pt.ci_lo > anchor * std::pow(st.nu, pt.k - 1)) st.envelope_ok = false;
  }
}

}  // namespace detail

/// Monte Carlo estimate of P(L(0) > k) over independent Bernoulli tori.
template <int Dim>
TailStatistics tail_statistics(double p, long trials, std::uint64_t seed, const TailOptions& opt = {}) {
  TailStatistics st;
  st.n = Dim;
  st.p = p;
  st.p_c = critical_probability(Dim);
  st.nu = (2.0 * Dim + 2.0) * (1.0 - p);
  st.trials = trials;
  st.height_cap = opt.height_cap;
  st.torus_side = opt.torus_side > 0 ? opt.torus_side : 4 * opt.height_cap;
  st.supercritical = p > st.p_c;
  std::vector<int> l0(static_cast<std::size_t>(trials), 0);
  parallel_for(static_cast<std::size_t>(trials), opt.threads, [&](std::size_t t) {
    auto sites = bernoulli_sites<Dim>(st.torus_side, opt.height_cap, p, seed, static_cast<std::uint64_t>(t));
    auto res = minimal_lipschitz_surface(sites);
    l0[t] = res.ok ? res.surface.at(0) : opt.height_cap + 1;
  });
  for (int v : l0)
    if (v > opt.height_cap) ++st.cap_failures;
  for (int k = 0; k <= opt.height_cap; ++k) {
    SurvivalPoint pt;
    pt.k = k;
    pt.trials = trials;
    for (int v : l0)
      if (v > k) ++pt.survivors;
    pt.p_hat = trials > 0 ? static_cast<double>(pt.survivors) / static_cast<double>(trials) : 0.0;
    std::tie(pt.ci_lo, pt.ci_hi) = wilson_interval(pt.survivors, trials);
    st.curve.push_back(pt);
  }
  detail::fit_survival(st, opt.min_survivors);
  if (st.supercritical) {
    const bool consistent = st.fitted_ratio_hi == 0.0 ? true : st.fitted_ratio_lo <= st.nu;
    st.pass = st.envelope_ok && consistent;
  } else {
    st.pass = false;
    std::ostringstream os;
    os << "p <= p_c: decay bound not claimed; fitted ratio " << st.fitted_ratio;
    st.note = os.str();
  }
  return st;
}

inline void write_survival_csv(std::ostream& os, const TailStatistics& st) {
  os << std::setprecision(10);
  os << "k,survivors,trials,p_hat,ci_lo,ci_hi\n";
  for (const auto& pt : st.curve)
    os << pt.k << ',' << pt.survivors << ',' << pt.trials << ',' << pt.p_hat << ',' << pt.ci_lo << ',' << pt.ci_hi << "\n";
}

// ---------------------------------------------------------------------------
// Obstacle selection

template <int Dim>
struct SelectedObstacles {
  std::vector<long> index;             // per column: index into field.obstacles()
  std::vector<Obstacle<Dim>> obstacle;  // per column: copy of the obstacle
};

namespace detail {

template <int Dim>
bool lower_obstacle(const Obstacle<Dim>& a, const Obstacle<Dim>& b) {
  if (a.y != b.y) return a.y < b.y;
  for (int i = 0; i < Dim; ++i)
    if (a.x[i] != b.x[i]) return a.x[i] < b.x[i];
  return a.strength > b.strength;
}

}  // namespace detail

/// For each column k picks the qualifying obstacle in cuboid (k, L(k)) with the
/// lowest center, ties broken lexicographically by position.
template <int Dim>
SelectedObstacles<Dim> select_obstacles(const ObstacleField<Dim>& field, const SiteField<Dim>& sites,
                                        const LipschitzSurface<Dim>& surface, const BoxGeometry<Dim>& geo,
                                        double fbar) {
  const long ncol = sites.column_count();
  SelectedObstacles<Dim> sel;
  sel.index.assign(static_cast<std::size_t>(ncol), -1);
  sel.obstacle.resize(static_cast<std::size_t>(ncol));
  const auto& obs = field.obstacles();
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (obs[i].strength < fbar) continue;
    auto [col, j] = geo.cuboid_of(obs[i].x, obs[i].y);
    if (col < 0 || j != surface.at(col)) continue;
    auto& cur = sel.index[static_cast<std::size_t>(col)];
    if (cur < 0 || detail::lower_obstacle(obs[i], obs[static_cast<std::size_t>(cur)])) cur = static_cast<long>(i);
  }
  for (long c = 0; c < ncol; ++c) {
    const long i = sel.index[static_cast<std::size_t>(c)];
    if (i < 0) {
      std::ostringstream os;
      os << "select_obstacles: column " << c << " has open site " << surface.at(c)
         << " but no qualifying obstacle (inconsistent site field)";
      throw DepinError(os.str());
    }
    sel.obstacle[static_cast<std::size_t>(c)] = obs[static_cast<std::size_t>(i)];
  }
  return sel;
}

}  // namespace depin
