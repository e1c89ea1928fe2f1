#pragma once

// Random obstacle fields f(x, y) = sum_i f_i phi(x - x_i, y - y_i) with a
// compactly supported radial bump phi, Poisson-distributed centers and iid
// strengths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "depin/geometry.hpp"
#include "depin/parallel.hpp"
#include "depin/rng.hpp"

namespace depin {

// ---------------------------------------------------------------------------
// Obstacle shape

/// Radial bump phi(z) = -A * exp(s - s / (1 - |z|^2/r1^2)) inside the r1-ball.
/// A is fixed so that phi equals -1 at the corners of the inf-ball of radius
/// r0 in R^{n+1}, where the bump is least negative on that ball.
class ObstacleShape {
 public:
  ObstacleShape() = default;

  ObstacleShape(int n, double r0, double r1, double smoothness = 0.5)
      : n_(n), r0_(r0), r1_(r1), s_(smoothness) {
    if (n < 1) throw DepinError("obstacle shape: dimension n must be >= 1");
    if (!(r0 > 0.0)) throw DepinError("obstacle shape: r0 must be positive");
    if (!(smoothness > 0.0)) throw DepinError("obstacle shape: smoothness must be positive");
    const double corner = std::sqrt(static_cast<double>(n + 1)) * r0;
    if (!(r1 > corner)) {
      std::ostringstream msg;
      msg << "obstacle shape: need r1 > sqrt(n+1)*r0 = " << corner << ", got r1 = " << r1;
      throw DepinError(msg.str());
    }
    amplitude_ = 1.0 / bump(corner / r1);
    // sup |d phi / d dist| by a dense scan; the bump derivative is unimodal.
    double best = 0.0;
    const int samples = 20000;
    for (int i = 1; i < samples; ++i) {
      double rho = static_cast<double>(i) / samples;
      best = std::max(best, std::abs(bump_derivative(rho)));
    }
    max_slope_ = 1.02 * amplitude_ * best / r1_;
  }

  int n() const { return n_; }
  double r0() const { return r0_; }
  double r1() const { return r1_; }
  double smoothness() const { return s_; }
  double amplitude() const { return amplitude_; }

  /// phi as a function of the Euclidean distance to the obstacle center.
  double eval_dist(double dist) const {
    const double rho = dist / r1_;
    if (rho >= 1.0) return 0.0;
    return -amplitude_ * bump(rho);
  }

  /// d phi / d dist.
  double slope_dist(double dist) const {
    const double rho = dist / r1_;
    if (rho >= 1.0) return 0.0;
    return -amplitude_ * bump_derivative(rho) / r1_;
  }

  template <int Dim>
  double eval(const Vec<Dim>& dx, double dy) const {
    return eval_dist(std::sqrt(dot<Dim>(dx, dx) + dy * dy));
  }

  /// d phi / d y at offset (dx, dy).
  template <int Dim>
  double eval_dy(const Vec<Dim>& dx, double dy) const {
    const double dist = std::sqrt(dot<Dim>(dx, dx) + dy * dy);
    if (dist == 0.0) return 0.0;
    return slope_dist(dist) * dy / dist;
  }

  /// sup |phi| (attained at the center).
  double max_abs() const { return amplitude_; }

  /// Upper bound on sup |d phi / d y|.
  double max_abs_dy() const { return max_slope_; }

 private:
  double bump(double rho) const {
    if (rho >= 1.0) return 0.0;
    return std::exp(s_ - s_ / (1.0 - rho * rho));
  }

  double bump_derivative(double rho) const {
    if (rho >= 1.0) return 0.0;
    const double q = 1.0 - rho * rho;
    return bump(rho) * (-2.0 * s_ * rho / (q * q));
  }

  int n_ = 1;
  double r0_ = 0.25;
  double r1_ = 0.4;
  double s_ = 0.5;
  double amplitude_ = 1.0;
  double max_slope_ = 0.0;
};

// ---------------------------------------------------------------------------
// Strength distribution

class StrengthDistribution {
 public:
  enum class Kind { constant, uniform, exponential };

  static StrengthDistribution constant(double c) {
    if (!(c > 0.0)) throw DepinError("constant strength must be positive");
    return StrengthDistribution(Kind::constant, c, c);
  }
  static StrengthDistribution uniform(double lo, double hi) {
    if (!(lo > 0.0) || !(hi > lo)) throw DepinError("uniform strength needs 0 < lo < hi");
    return StrengthDistribution(Kind::uniform, lo, hi);
  }
  /// Exponential with the given rate (mean 1/rate).
  static StrengthDistribution exponential(double rate) {
    if (!(rate > 0.0)) throw DepinError("exponential rate must be positive");
    return StrengthDistribution(Kind::exponential, rate, 0.0);
  }

  /// Parses "constant:c", "uniform:lo:hi" or "exponential:rate".
  static StrengthDistribution parse(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(item);
    auto num = [&](std::size_t i) {
      if (i >= parts.size()) throw DepinError("strength distribution '" + text + "': missing parameter");
      return std::stod(parts[i]);
    };
    if (parts.empty()) throw DepinError("empty strength distribution");
    if (parts[0] == "constant") return constant(num(1));
    if (parts[0] == "uniform") return uniform(num(1), num(2));
    if (parts[0] == "exponential") return exponential(num(1));
    throw DepinError("unknown strength distribution '" + parts[0] + "'");
  }

  std::string to_string() const {
    std::ostringstream os;
    os << std::setprecision(17);
    switch (kind_) {
      case Kind::constant: os << "constant:" << a_; break;
      case Kind::uniform: os << "uniform:" << a_ << ':' << b_; break;
      case Kind::exponential: os << "exponential:" << a_; break;
    }
    return os.str();
  }

  Kind kind() const { return kind_; }

  /// Inverse CDF; u in (0, 1).
  double quantile(double u) const {
    switch (kind_) {
      case Kind::constant: return a_;
      case Kind::uniform: return a_ + (b_ - a_) * u;
      case Kind::exponential: return -std::log1p(-u) / a_;
    }
    return a_;
  }

  /// P(f >= fbar).
  double tail(double fbar) const {
    switch (kind_) {
      case Kind::constant: return fbar <= a_ ? 1.0 : 0.0;
      case Kind::uniform:
        if (fbar <= a_) return 1.0;
        if (fbar >= b_) return 0.0;
        return (b_ - fbar) / (b_ - a_);
      case Kind::exponential: return fbar <= 0.0 ? 1.0 : std::exp(-a_ * fbar);
    }
    return 0.0;
  }

  /// Largest fbar with tail(fbar) >= floor.
  double threshold_for_tail(double floor) const {
    if (!(floor > 0.0 && floor <= 1.0)) throw DepinError("tail floor must be in (0, 1]");
    switch (kind_) {
      case Kind::constant: return a_;
      case Kind::uniform: return floor >= 1.0 ? a_ : b_ - floor * (b_ - a_);
      case Kind::exponential: return -std::log(floor) / a_;
    }
    return a_;
  }

  /// Same family with all strengths multiplied by factor.
  StrengthDistribution scaled(double factor) const {
    switch (kind_) {
      case Kind::constant: return constant(a_ * factor);
      case Kind::uniform: return uniform(a_ * factor, b_ * factor);
      case Kind::exponential: return exponential(a_ / factor);
    }
    return *this;
  }

 private:
  StrengthDistribution(Kind k, double a, double b) : kind_(k), a_(a), b_(b) {}

  Kind kind_ = Kind::constant;
  double a_ = 1.0;
  double b_ = 1.0;
};

// ---------------------------------------------------------------------------
// Field

template <int Dim>
struct Obstacle {
  Vec<Dim> x{};
  double y = 0.0;
  double strength = 0.0;
};

/// Axis-aligned sampling window x in [lo, hi), y in [y_lo, y_hi).
template <int Dim>
struct Window {
  Vec<Dim> lo{};
  Vec<Dim> hi{};
  double y_lo = 0.0;
  double y_hi = 0.0;

  double volume() const {
    double v = y_hi - y_lo;
    for (int i = 0; i < Dim; ++i) v *= hi[i] - lo[i];
    return v;
  }

  bool contains(const Vec<Dim>& x, double y) const {
    for (int i = 0; i < Dim; ++i)
      if (x[i] < lo[i] || x[i] >= hi[i]) return false;
    return y >= y_lo && y < y_hi;
  }
};

struct FieldValue {
  double value = 0.0;
  bool complete = true;  // false when unsampled obstacles could contribute
};

template <int Dim>
class ObstacleField {
 public:
  ObstacleField() = default;

  ObstacleField(ObstacleShape shape, StrengthDistribution dist, double lambda,
                std::uint64_t seed, Window<Dim> window, bool periodic,
                std::vector<Obstacle<Dim>> obstacles)
      : shape_(shape),
        dist_(dist),
        lambda_(lambda),
        seed_(seed),
        window_(window),
        periodic_(periodic),
        obstacles_(std::move(obstacles)) {
    if (shape_.n() != Dim) throw DepinError("obstacle shape dimension does not match field");
    build_index();
  }

  const ObstacleShape& shape() const { return shape_; }
  const StrengthDistribution& distribution() const { return dist_; }
  double lambda() const { return lambda_; }
  std::uint64_t seed() const { return seed_; }
  const Window<Dim>& window() const { return window_; }
  bool periodic() const { return periodic_; }
  const std::vector<Obstacle<Dim>>& obstacles() const { return obstacles_; }

  double period(int axis) const { return window_.hi[axis] - window_.lo[axis]; }

  /// Displacement from the obstacle center to (x, y), minimum image when periodic.
  Vec<Dim> offset(const Vec<Dim>& x, const Obstacle<Dim>& ob) const {
    Vec<Dim> dx{};
    for (int i = 0; i < Dim; ++i) {
      dx[i] = x[i] - ob.x[i];
      if (periodic_) dx[i] = min_image(dx[i], period(i));
    }
    return dx;
  }

  /// f(x, y).
  double eval(const Vec<Dim>& x, double y) const {
    double sum = 0.0;
    const double r1 = shape_.r1();
    for_each_near(x, y, [&](const Obstacle<Dim>& ob) {
      const double dy = y - ob.y;
      if (std::abs(dy) >= r1) return;
      sum += ob.strength * shape_.template eval<Dim>(offset(x, ob), dy);
    });
    return sum;
  }

  /// d f / d y.
  double eval_dy(const Vec<Dim>& x, double y) const {
    double sum = 0.0;
    for_each_near(x, y, [&](const Obstacle<Dim>& ob) {
      sum += ob.strength * shape_.template eval_dy<Dim>(offset(x, ob), y - ob.y);
    });
    return sum;
  }

  /// f(x, y) with a completeness flag for points near unsampled regions.
  FieldValue eval_checked(const Vec<Dim>& x, double y) const {
    return {eval(x, y), complete(x, y)};
  }

  /// True when every obstacle that can reach (x, y) lies inside the window.
  bool complete(const Vec<Dim>& x, double y) const {
    const double r1 = shape_.r1();
    if (y + r1 <= r1) return true;  // centers have y >= r1, support radius r1
    const double lo_needed = std::max(y - r1, r1);
    if (lo_needed < window_.y_lo) return false;
    if (y + r1 > window_.y_hi) return false;
    if (!periodic_) {
      for (int i = 0; i < Dim; ++i)
        if (x[i] - r1 < window_.lo[i] || x[i] + r1 > window_.hi[i]) return false;
    }
    return true;
  }

  /// Upper bound on the summed strengths of the obstacles reaching any single
  /// point. Strengths are accumulated on a lattice of spacing <= r1/2 over balls
  /// of radius r1 + delta (delta = half the cell diagonal), so every point's set
  /// is covered by the ball of its nearest lattice node.
  double max_local_strength_sum() const {
    if (obstacles_.empty()) return 0.0;
    const double r1 = shape_.r1();
    std::array<double, Dim + 1> a{};
    std::array<long, Dim + 1> count{};
    for (int i = 0; i < Dim; ++i) {
      const double len = window_.hi[i] - window_.lo[i];
      count[i] = std::max(1L, static_cast<long>(std::ceil(len / (0.5 * r1))));
      a[i] = len / static_cast<double>(count[i]);
    }
    a[Dim] = 0.5 * r1;
    count[Dim] = static_cast<long>(std::ceil((window_.y_hi - window_.y_lo + 4.0 * r1) / a[Dim])) + 1;
    double diag2 = 0.0;
    for (double v : a) diag2 += v * v;
    const double R = r1 + 0.5 * std::sqrt(diag2);
    const double y0 = window_.y_lo - 2.0 * r1;
    std::unordered_map<std::uint64_t, double> acc;
    for (const auto& ob : obstacles_) {
      std::array<double, Dim + 1> c{};
      for (int i = 0; i < Dim; ++i) c[i] = ob.x[i] - window_.lo[i];
      c[Dim] = ob.y - y0;
      std::array<long, Dim + 1> lo{}, span{};
      long total = 1;
      for (int i = 0; i <= Dim; ++i) {
        lo[i] = static_cast<long>(std::floor((c[i] - R) / a[i]));
        span[i] = static_cast<long>(std::ceil((c[i] + R) / a[i])) - lo[i] + 1;
        total *= span[i];
      }
      for (long t = 0; t < total; ++t) {
        long rem = t;
        double d2 = 0.0;
        std::uint64_t key = 0;
        bool ok = true;
        for (int i = 0; i <= Dim; ++i) {
          const long g = lo[i] + rem % span[i];
          rem /= span[i];
          const double dd = static_cast<double>(g) * a[i] - c[i];
          d2 += dd * dd;
          long gi = g;
          if (i < Dim && periodic_) gi = floor_mod(g, count[i]);
          else if (gi < -count[i] || gi > 2 * count[i]) ok = false;
          key = key * 4000003ULL + static_cast<std::uint64_t>(gi + count[i]);
        }
        if (ok && d2 <= R * R) acc[key] += ob.strength;
      }
    }
    double best = 0.0;
    for (const auto& kv : acc) best = std::max(best, kv.second);
    return best;
  }

  /// Lipschitz bound of f in y: sup |d phi/dy| times the local strength bound.
  double lipschitz_y() const { return shape_.max_abs_dy() * max_local_strength_sum(); }

  /// Visits every obstacle whose index cell is within `reach` cells of (x, y).
  template <class Fn>
  void for_each_near(const Vec<Dim>& x, double y, Fn&& fn, int reach = 1) const {
    static_assert(Dim <= 2, "index supports n <= 2");
    if (obstacles_.empty()) return;
    reach = std::clamp(reach, 1, 2);
    long cy = static_cast<long>(std::floor((y - window_.y_lo) / cell_y_));
    std::array<long, Dim> cx{};
    for (int i = 0; i < Dim; ++i) {
      double xi = x[i] - window_.lo[i];
      if (periodic_) xi = wrap(xi, period(i));
      cx[i] = static_cast<long>(std::floor(xi / cell_x_[i]));
    }
    const long span = 2 * reach + 1;
    long total = span;
    for (int i = 0; i < Dim; ++i) total *= span;
    // Neighbor cells, deduplicated after periodic wrapping.
    std::array<long, 125> seen{};
    int seen_count = 0;
    for (long t = 0; t < total; ++t) {
      long rem = t;
      long oy = rem % span - reach;
      rem /= span;
      long iy = cy + oy;
      if (iy < 0 || iy >= ny_) continue;
      long flat = iy;
      bool ok = true;
      for (int i = 0; i < Dim; ++i) {
        long o = rem % span - reach;
        rem /= span;
        long c = cx[i] + o;
        if (periodic_) {
          c = floor_mod(c, nx_[i]);
        } else if (c < 0 || c >= nx_[i]) {
          ok = false;
          break;
        }
        flat = flat * nx_[i] + c;
      }
      if (!ok) continue;
      bool dup = false;
      for (int s = 0; s < seen_count; ++s)
        if (seen[s] == flat) dup = true;
      if (dup) continue;
      seen[seen_count++] = flat;
      for (std::size_t k = cell_start_[flat]; k < cell_start_[flat + 1]; ++k) fn(obstacles_[cell_items_[k]]);
    }
  }

 private:
  long cell_index(const Obstacle<Dim>& ob) const {
    long iy = static_cast<long>(std::floor((ob.y - window_.y_lo) / cell_y_));
    iy = std::clamp(iy, 0L, ny_ - 1);
    long flat = iy;
    for (int i = 0; i < Dim; ++i) {
      long c = static_cast<long>(std::floor((ob.x[i] - window_.lo[i]) / cell_x_[i]));
      c = std::clamp(c, 0L, nx_[i] - 1);
      flat = flat * nx_[i] + c;
    }
    return flat;
  }

  void build_index() {
    const double cs = 2.0 * shape_.r1();
    long cells = 1;
    for (int i = 0; i < Dim; ++i) {
      const double len = window_.hi[i] - window_.lo[i];
      if (!(len > 0.0)) throw DepinError("field window has empty x-extent");
      if (periodic_ && !(len > 2.0 * shape_.r1()))
        throw DepinError("periodic field period must exceed 2 r1");
      nx_[i] = std::max(1L, static_cast<long>(std::floor(len / cs)));
      cell_x_[i] = len / static_cast<double>(nx_[i]);
      cells *= nx_[i];
    }
    const double hy = window_.y_hi - window_.y_lo;
    if (!(hy > 0.0)) throw DepinError("field window has empty y-extent");
    ny_ = std::max(1L, static_cast<long>(std::floor(hy / cs)));
    cell_y_ = hy / static_cast<double>(ny_);
    cells *= ny_;
    std::vector<std::size_t> counts(static_cast<std::size_t>(cells) + 1, 0);
    std::vector<long> idx(obstacles_.size());
    for (std::size_t k = 0; k < obstacles_.size(); ++k) {
      idx[k] = cell_index(obstacles_[k]);
      ++counts[static_cast<std::size_t>(idx[k]) + 1];
    }
    for (std::size_t c = 1; c < counts.size(); ++c) counts[c] += counts[c - 1];
    cell_start_ = counts;
    cell_items_.assign(obstacles_.size(), 0);
    std::vector<std::size_t> fill(cell_start_.begin(), cell_start_.end() - 1);
    for (std::size_t k = 0; k < obstacles_.size(); ++k) cell_items_[fill[static_cast<std::size_t>(idx[k])]++] = k;
  }

  ObstacleShape shape_;
  StrengthDistribution dist_ = StrengthDistribution::constant(1.0);
  double lambda_ = 0.0;
  std::uint64_t seed_ = 0;
  Window<Dim> window_{};
  bool periodic_ = false;
  std::vector<Obstacle<Dim>> obstacles_;

  std::array<long, Dim> nx_{};
  std::array<double, Dim> cell_x_{};
  long ny_ = 1;
  double cell_y_ = 1.0;
  std::vector<std::size_t> cell_start_{0, 0};
  std::vector<std::size_t> cell_items_;
};

// ---------------------------------------------------------------------------
// Sampling

struct SamplingOptions {
  bool periodic = false;
  double cell_side = 1.0;  // side of the fixed global RNG cell lattice
  int threads = 1;
};

/// Poisson process of intensity lambda restricted to the window. Each cell of a
/// fixed global lattice draws its points from a stream keyed on (seed, cell).
template <int Dim>
ObstacleField<Dim> sample_field(const Window<Dim>& window, double lambda,
                                const StrengthDistribution& dist, const ObstacleShape& shape,
                                std::uint64_t seed, const SamplingOptions& opt = {}) {
  if (!(lambda > 0.0)) throw DepinError("sample_field: intensity must be positive");
  if (window.y_lo < shape.r1()) {
    std::ostringstream msg;
    msg << "sample_field: window starts at y = " << window.y_lo << " below r1 = " << shape.r1()
        << "; obstacles must not cross y = 0";
    throw DepinError(msg.str());
  }
  if (!(window.y_hi > window.y_lo)) throw DepinError("sample_field: empty window");
  const double c = opt.cell_side;
  std::array<long, Dim + 1> first{}, count{};
  for (int i = 0; i < Dim; ++i) {
    first[i] = static_cast<long>(std::floor(window.lo[i] / c));
    long last = static_cast<long>(std::ceil(window.hi[i] / c));
    count[i] = std::max(0L, last - first[i]);
  }
  first[Dim] = static_cast<long>(std::floor(window.y_lo / c));
  count[Dim] = std::max(0L, static_cast<long>(std::ceil(window.y_hi / c)) - first[Dim]);
  long total = 1;
  for (int i = 0; i <= Dim; ++i) total *= count[i];

  const double mean = lambda * std::pow(c, Dim + 1);
  std::vector<std::vector<Obstacle<Dim>>> per_cell(static_cast<std::size_t>(total));
  parallel_for(static_cast<std::size_t>(total), opt.threads, [&](std::size_t t) {
    std::array<long, Dim + 1> cell{};
    long rem = static_cast<long>(t);
    for (int i = Dim; i >= 0; --i) {
      cell[i] = first[i] + rem % count[i];
      rem /= count[i];
    }
    std::uint64_t key = hash_key({seed, 0x0B57ull, static_cast<std::uint64_t>(Dim)});
    for (int i = 0; i <= Dim; ++i) key = hash_key({key, to_word(cell[i])});
    KeyedStream rng(key);
    const std::uint64_t k = rng.poisson(mean);
    for (std::uint64_t j = 0; j < k; ++j) {
      Obstacle<Dim> ob;
      for (int i = 0; i < Dim; ++i) ob.x[i] = (static_cast<double>(cell[i]) + rng.uniform()) * c;
      ob.y = (static_cast<double>(cell[Dim]) + rng.uniform()) * c;
      ob.strength = dist.quantile((static_cast<double>(rng.next_bits() >> 11) + 0.5) * 0x1.0p-53);
      if (window.contains(ob.x, ob.y) && ob.y >= shape.r1()) per_cell[t].push_back(ob);
    }
  });
  std::vector<Obstacle<Dim>> all;
  for (auto& v : per_cell) all.insert(all.end(), v.begin(), v.end());
  return ObstacleField<Dim>(shape, dist, lambda, seed, window, opt.periodic, std::move(all));
}

/// Obstacles at (i, j + 1/2) * spacing on a regular lattice with iid strengths.
template <int Dim>
ObstacleField<Dim> sample_lattice_field(double spacing, const StrengthDistribution& dist,
                                        const ObstacleShape& shape, std::uint64_t seed,
                                        const Window<Dim>& window, bool periodic = false) {
  if (!(spacing > 2.0 * shape.r1())) {
    std::ostringstream msg;
    msg << "sample_lattice_field: spacing " << spacing << " must exceed 2 r1 = " << 2.0 * shape.r1();
    throw DepinError(msg.str());
  }
  std::array<long, Dim> lo{}, hi{};
  for (int i = 0; i < Dim; ++i) {
    lo[i] = static_cast<long>(std::ceil(window.lo[i] / spacing));
    hi[i] = static_cast<long>(std::ceil(window.hi[i] / spacing));  // exclusive
  }
  long jlo = static_cast<long>(std::ceil(window.y_lo / spacing - 0.5));
  long jhi = static_cast<long>(std::ceil(window.y_hi / spacing - 0.5));
  std::vector<Obstacle<Dim>> obs;
  std::array<long, Dim> idx = lo;
  bool empty = false;
  for (int i = 0; i < Dim; ++i) empty = empty || hi[i] <= lo[i];
  if (!empty) {
    while (true) {
      for (long j = jlo; j < jhi; ++j) {
        Obstacle<Dim> ob;
        for (int i = 0; i < Dim; ++i) ob.x[i] = static_cast<double>(idx[i]) * spacing;
        ob.y = (static_cast<double>(j) + 0.5) * spacing;
        std::uint64_t key = hash_key({seed, 0x1A7Cull, to_word(j)});
        for (int i = 0; i < Dim; ++i) key = hash_key({key, to_word(idx[i])});
        ob.strength = dist.quantile((static_cast<double>(splitmix64(key) >> 11) + 0.5) * 0x1.0p-53);
        if (window.contains(ob.x, ob.y) && ob.y >= shape.r1()) obs.push_back(ob);
      }
      int a = Dim - 1;
      while (a >= 0 && ++idx[a] >= hi[a]) {
        idx[a] = lo[a];
        --a;
      }
      if (a < 0) break;
    }
  }
  return ObstacleField<Dim>(shape, dist, 0.0, seed, window, periodic, std::move(obs));
}

/// Largest |f| over a grid of the given spacing anchored at the region's lower
/// corner, x in [lo, hi], y in [y_lo, y_hi]. Only grid points inside some
/// obstacle support are visited, since f vanishes elsewhere.
template <int Dim>
double eval_f_max_local_sum(const ObstacleField<Dim>& field, const Window<Dim>& region, double spacing) {
  if (!(spacing > 0.0)) throw DepinError("eval_f_max_local_sum: spacing must be positive");
  const double r1 = field.shape().r1();
  double best = 0.0;
  std::array<double, Dim + 1> rlo{}, rhi{};
  for (int i = 0; i < Dim; ++i) {
    rlo[i] = region.lo[i];
    rhi[i] = region.hi[i];
  }
  rlo[Dim] = region.y_lo;
  rhi[Dim] = region.y_hi;
  std::array<long, Dim + 1> gmax{};
  for (int i = 0; i <= Dim; ++i) gmax[i] = static_cast<long>(std::floor((rhi[i] - rlo[i]) / spacing + 1e-9));

  // Periodic images of each obstacle are visited explicitly.
  const int images = field.periodic() ? 3 : 1;
  long image_total = 1;
  for (int i = 0; i < Dim; ++i) image_total *= images;

  for (const auto& ob : field.obstacles()) {
    for (long im = 0; im < image_total; ++im) {
      std::array<double, Dim + 1> c{};
      long rem = im;
      for (int i = 0; i < Dim; ++i) {
        double shift = 0.0;
        if (field.periodic()) {
          shift = static_cast<double>(rem % 3 - 1) * field.period(i);
          rem /= 3;
        }
        c[i] = ob.x[i] + shift;
      }
      c[Dim] = ob.y;
      std::array<long, Dim + 1> lo{}, hi{};
      bool skip = false;
      for (int i = 0; i <= Dim; ++i) {
        lo[i] = std::max(0L, static_cast<long>(std::ceil((c[i] - r1 - rlo[i]) / spacing)));
        hi[i] = std::min(gmax[i], static_cast<long>(std::floor((c[i] + r1 - rlo[i]) / spacing)));
        if (hi[i] < lo[i]) skip = true;
      }
      if (skip) continue;
      std::array<long, Dim + 1> g = lo;
      while (true) {
        Vec<Dim> x{};
        for (int i = 0; i < Dim; ++i) x[i] = rlo[i] + static_cast<double>(g[i]) * spacing;
        const double y = rlo[Dim] + static_cast<double>(g[Dim]) * spacing;
        best = std::max(best, std::abs(field.eval(x, y)));
        int a = Dim;
        while (a >= 0 && ++g[a] > hi[a]) {
          g[a] = lo[a];
          --a;
        }
        if (a < 0) break;
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Serialization

template <int Dim>
void write_field(std::ostream& os, const ObstacleField<Dim>& field) {
  os << std::setprecision(17);
  os << "# depin obstacle field\n";
  os << "n " << Dim << "\n";
  os << "r0 " << field.shape().r0() << "\n";
  os << "r1 " << field.shape().r1() << "\n";
  os << "smoothness " << field.shape().smoothness() << "\n";
  os << "seed " << field.seed() << "\n";
  os << "lambda " << field.lambda() << "\n";
  os << "distribution " << field.distribution().to_string() << "\n";
  os << "periodic " << (field.periodic() ? 1 : 0) << "\n";
  os << "window_x";
  for (int i = 0; i < Dim; ++i) os << ' ' << field.window().lo[i] << ' ' << field.window().hi[i];
  os << "\n";
  os << "window_y " << field.window().y_lo << ' ' << field.window().y_hi << "\n";
  os << "count " << field.obstacles().size() << "\n";
  for (const auto& ob : field.obstacles()) {
    for (int i = 0; i < Dim; ++i) os << ob.x[i] << ' ';
    os << ob.y << ' ' << ob.strength << "\n";
  }
}

template <int Dim>
ObstacleField<Dim> read_field(std::istream& is) {
  std::string line, key;
  double r0 = 0, r1 = 0, s = 0.5, lambda = 0;
  std::uint64_t seed = 0;
  std::string dist = "constant:1";
  bool periodic = false;
  Window<Dim> w{};
  std::size_t count = 0;
  int n = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ls >> key;
    if (key == "n") ls >> n;
    else if (key == "r0") ls >> r0;
    else if (key == "r1") ls >> r1;
    else if (key == "smoothness") ls >> s;
    else if (key == "seed") ls >> seed;
    else if (key == "lambda") ls >> lambda;
    else if (key == "distribution") ls >> dist;
    else if (key == "periodic") { int p = 0; ls >> p; periodic = p != 0; }
    else if (key == "window_x") { for (int i = 0; i < Dim; ++i) ls >> w.lo[i] >> w.hi[i]; }
    else if (key == "window_y") ls >> w.y_lo >> w.y_hi;
    else if (key == "count") { ls >> count; break; }
    else throw DepinError("read_field: unknown key '" + key + "'");
  }
  if (n != Dim) throw DepinError("read_field: dimension mismatch");
  std::vector<Obstacle<Dim>> obs(count);
  for (auto& ob : obs) {
    for (int i = 0; i < Dim; ++i) is >> ob.x[i];
    is >> ob.y >> ob.strength;
  }
  if (!is) throw DepinError("read_field: truncated obstacle table");
  return ObstacleField<Dim>(ObstacleShape(n, r0, r1, s), StrengthDistribution::parse(dist), lambda, seed, w,
                            periodic, std::move(obs));
}

}  // namespace depin
