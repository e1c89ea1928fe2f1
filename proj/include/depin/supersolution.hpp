#pragma once

// Composite barrier v(x) = min_i p(|x - x_i|) + glue(x) over the selected
// obstacle centers, for a radial profile p, and its grid certificate.

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
#include "depin/glue.hpp"
#include "depin/obstacle_field.hpp"
#include "depin/parallel.hpp"
#include "depin/percolation.hpp"

namespace depin {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Piece { inner = 0, outer = 1, outside = 2 };

inline const char* piece_name(Piece p) {
  switch (p) {
    case Piece::inner: return "inner";
    case Piece::outer: return "annulus";
    case Piece::outside: return "outside";
  }
  return "?";
}

/// Value, first and second radial derivative of a radial profile at r.
struct RadialSample {
  double value = kInf;
  double slope = 0.0;
  double slope_dr = 0.0;
  Piece piece = Piece::outside;
};

template <int Dim>
struct CompositeEval {
  double value = kInf;       // flat + glue
  double flat = kInf;
  long branch = -1;          // column of the active center
  double second = kInf;      // next-best flat value from a different column
  long second_branch = -1;
  Piece piece = Piece::outside;
  double radius = 0.0;       // distance to the active center
  Vec<Dim> offset{};         // x - active center (minimum image)
  GlueSample<Dim> glue;
};

template <int Dim, class Profile>
class Supersolution {
 public:
  Supersolution() = default;

  Supersolution(std::shared_ptr<const ObstacleField<Dim>> field, BoxGeometry<Dim> geo,
                SelectedObstacles<Dim> selected, GlueFunction<Dim> glue, Profile profile)
      : field_(std::move(field)),
        geo_(geo),
        selected_(std::move(selected)),
        glue_(std::move(glue)),
        profile_(profile) {
    reach_ = static_cast<int>(std::ceil(profile_.r_out / geo_.period())) + 1;
  }

  const ObstacleField<Dim>& field() const { return *field_; }
  std::shared_ptr<const ObstacleField<Dim>> field_ptr() const { return field_; }
  const BoxGeometry<Dim>& geometry() const { return geo_; }
  const SelectedObstacles<Dim>& selected() const { return selected_; }
  const GlueFunction<Dim>& glue() const { return glue_; }
  const Profile& profile() const { return profile_; }
  int reach() const { return reach_; }

  Vec<Dim> center(long col) const { return selected_.obstacle[static_cast<std::size_t>(col)].x; }

  Vec<Dim> offset_to(const Vec<Dim>& x, long col) const {
    Vec<Dim> z{};
    const auto c = center(col);
    for (int i = 0; i < Dim; ++i) z[i] = min_image(x[i] - c[i], geo_.side());
    return z;
  }

  /// Profile of column `col` evaluated at x (flat part only).
  double branch_value(const Vec<Dim>& x, long col) const {
    const auto z = offset_to(x, col);
    return profile_.sample(norm<Dim>(z)).value;
  }

  CompositeEval<Dim> eval(const Vec<Dim>& x) const {
    CompositeEval<Dim> out;
    visit_candidates(x, [&](long col) {
      const auto z = offset_to(x, col);
      const double r = norm<Dim>(z);
      const auto s = profile_.sample(r);
      if (s.value < out.flat || (s.value == out.flat && col < out.branch)) {
        if (out.branch != col) {
          out.second = out.flat;
          out.second_branch = out.branch;
        }
        out.flat = s.value;
        out.branch = col;
        out.piece = s.piece;
        out.radius = r;
        out.offset = z;
      } else if (col != out.branch && s.value < out.second) {
        out.second = s.value;
        out.second_branch = col;
      }
    });
    out.glue = glue_.sample(x);
    out.value = out.flat + out.glue.value;
    return out;
  }

  double value(const Vec<Dim>& x) const { return eval(x).value; }

  /// Minimum over every selected center; used to validate the neighbourhood search.
  double brute_force_flat(const Vec<Dim>& x) const {
    double best = kInf;
    for (long c = 0; c < static_cast<long>(selected_.obstacle.size()); ++c) best = std::min(best, branch_value(x, c));
    return best;
  }

  /// Gradient and Hessian of the active smooth piece plus the glue.
  void derivatives(const CompositeEval<Dim>& e, Vec<Dim>& grad, Mat<Dim>& hess) const {
    const auto s = profile_.sample(e.radius);
    grad = e.glue.grad;
    hess = e.glue.hess;
    if (e.radius == 0.0) {
      for (int i = 0; i < Dim; ++i) hess[i][i] += s.slope_dr;
      return;
    }
    Vec<Dim> u = scale<Dim>(e.offset, 1.0 / e.radius);
    const double tang = s.slope / e.radius;
    for (int i = 0; i < Dim; ++i) {
      grad[i] += s.slope * u[i];
      for (int j = 0; j < Dim; ++j) hess[i][j] += (s.slope_dr - tang) * u[i] * u[j] + (i == j ? tang : 0.0);
    }
  }

 private:
  template <class Fn>
  void visit_candidates(const Vec<Dim>& x, Fn&& fn) const {
    const int K = geo_.columns;
    const int span = std::min(2 * reach_ + 1, K);
    std::array<int, Dim> base{};
    for (int i = 0; i < Dim; ++i) {
      int k = static_cast<int>(std::floor(wrap(x[i], geo_.side()) / geo_.period()));
      k = std::min(k, K - 1);
      base[i] = span == K ? 0 : k - reach_;
    }
    long total = 1;
    for (int i = 0; i < Dim; ++i) total *= span;
    for (long t = 0; t < total; ++t) {
      std::array<int, Dim> k{};
      long rem = t;
      for (int i = Dim - 1; i >= 0; --i) {
        k[i] = base[i] + static_cast<int>(rem % span);
        rem /= span;
      }
      fn(geo_.flatten(k));
    }
  }

  std::shared_ptr<const ObstacleField<Dim>> field_;
  BoxGeometry<Dim> geo_;
  SelectedObstacles<Dim> selected_;
  GlueFunction<Dim> glue_;
  Profile profile_;
  int reach_ = 1;
};

// ---------------------------------------------------------------------------
// Certificate report

struct ParamCheck {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;  // lhs <= rhs
  bool advisory = false;
};

inline ParamCheck leq(std::string name, double lhs, double rhs, bool advisory = false) {
  return {std::move(name), lhs, rhs, lhs <= rhs, advisory};
}

struct Offender {
  long index = -1;
  std::vector<double> x;
  double value = 0.0;
  double residual = -kInf;
  std::string piece;
  bool strip = false;
};

struct CertificateReport {
  std::string model;
  int n = 1;
  double F = 0.0;
  double F_star = 0.0;
  double spacing = 0.0;
  long points = 0;
  double tol_smooth = 1e-8;
  double tol_strip = 1e-4;
  double tol_jump = 1e-6;
  Offender worst_smooth;
  Offender worst_strip;
  long ridge_checks = 0;
  long ridge_failures = 0;
  double worst_ridge_jump = kInf;  // min over ridges of D- minus D+
  std::vector<double> worst_ridge_x;
  long ring_checks = 0;
  long ring_failures = 0;
  double worst_ring_jump = kInf;
  bool covered = true;
  double min_value = kInf;
  bool nonnegative = true;
  std::vector<ParamCheck> params;
  std::vector<Offender> top;
  bool pass = false;
  std::vector<std::string> failures;
};

inline void write_report(std::ostream& os, const CertificateReport& r) {
  os << std::setprecision(12);
  auto xs = [](const std::vector<double>& x) {
    std::ostringstream s;
    s << std::setprecision(12);
    for (std::size_t i = 0; i < x.size(); ++i) s << (i ? " " : "") << x[i];
    return s.str();
  };
  os << "model=" << r.model << "\n";
  os << "n=" << r.n << "\n";
  os << "F=" << r.F << "\n";
  os << "F_star=" << r.F_star << "\n";
  os << "grid_spacing=" << r.spacing << "\n";
  os << "grid_points=" << r.points << "\n";
  os << "tol_smooth=" << r.tol_smooth << "\n";
  os << "tol_strip=" << r.tol_strip << "\n";
  os << "tol_jump=" << r.tol_jump << "\n";
  os << "max_residual_smooth=" << r.worst_smooth.residual << "\n";
  os << "max_residual_smooth_at=" << xs(r.worst_smooth.x) << "\n";
  os << "max_residual_smooth_piece=" << r.worst_smooth.piece << "\n";
  os << "max_residual_strip=" << r.worst_strip.residual << "\n";
  os << "max_residual_strip_at=" << xs(r.worst_strip.x) << "\n";
  os << "ridge_checks=" << r.ridge_checks << "\n";
  os << "ridge_failures=" << r.ridge_failures << "\n";
  os << "worst_ridge_jump=" << r.worst_ridge_jump << "\n";
  os << "ring_checks=" << r.ring_checks << "\n";
  os << "ring_failures=" << r.ring_failures << "\n";
  os << "worst_ring_jump=" << r.worst_ring_jump << "\n";
  os << "covered=" << (r.covered ? 1 : 0) << "\n";
  os << "min_value=" << r.min_value << "\n";
  os << "nonnegative=" << (r.nonnegative ? 1 : 0) << "\n";
  for (const auto& p : r.params)
    os << "check." << p.name << "=" << (p.holds ? "ok" : "VIOLATED") << (p.advisory ? " (advisory)" : "") << " lhs="
       << p.lhs << " rhs=" << p.rhs << "\n";
  for (const auto& f : r.failures) os << "failure=" << f << "\n";
  os << "pass=" << (r.pass ? 1 : 0) << "\n";
  os << "# worst residuals\n";
  os << "rank,index,x,value,residual,piece,strip\n";
  for (std::size_t i = 0; i < r.top.size(); ++i) {
    const auto& o = r.top[i];
    os << i + 1 << ',' << o.index << ',' << xs(o.x) << ',' << o.value << ',' << o.residual << ',' << o.piece << ','
       << (o.strip ? 1 : 0) << "\n";
  }
}

struct CertifyOptions {
  double spacing = 0.02;
  double tol_smooth = 1e-8;
  double tol_strip = 1e-4;
  double tol_jump = 1e-6;
  double fd_step = 1e-4;
  int ring_directions = 16;  // n = 2 only
  int top = 10;
  int threads = 1;
};

namespace detail {

// Third-order one-sided derivative from f(0), f(-h), f(-2h), f(-3h) along dir.
template <int Dim, class V>
double one_sided(const V& value, const Vec<Dim>& x, const Vec<Dim>& dir, double h) {
  double f[4];
  for (int k = 0; k < 4; ++k) f[k] = value(add<Dim>(x, scale<Dim>(dir, -k * h)));
  return (11.0 * f[0] - 18.0 * f[1] + 9.0 * f[2] - 2.0 * f[3]) / (6.0 * h);
}

}  // namespace detail

/// Grid certificate of op(grad v, D^2 v) + f(x, v) + F <= 0 on smooth pieces and
/// of downward derivative jumps across Voronoi ridges and inner spheres.
template <int Dim, class Profile, class Op>
CertificateReport certify_composite(const Supersolution<Dim, Profile>& sup, double F, double F_star,
                                    const std::string& model, Op&& op, const CertifyOptions& opt) {
  CertificateReport rep;
  rep.model = model;
  rep.n = Dim;
  rep.F = F;
  rep.F_star = F_star;
  rep.tol_smooth = opt.tol_smooth;
  rep.tol_strip = opt.tol_strip;
  rep.tol_jump = opt.tol_jump;
  const auto& geo = sup.geometry();
  const long per_axis = std::max(4L, static_cast<long>(std::ceil(geo.side() / opt.spacing)));
  const double hx = geo.side() / static_cast<double>(per_axis);
  rep.spacing = hx;
  long total = 1;
  for (int i = 0; i < Dim; ++i) total *= per_axis;
  rep.points = total;

  auto point = [&](long t) {
    Vec<Dim> x{};
    long rem = t;
    for (int i = Dim - 1; i >= 0; --i) {
      x[i] = static_cast<double>(rem % per_axis) * hx;
      rem /= per_axis;
    }
    return x;
  };
  auto to_vec = [](const Vec<Dim>& x) { return std::vector<double>(x.begin(), x.end()); };

  std::vector<double> residual(static_cast<std::size_t>(total), -kInf);
  std::vector<double> values(static_cast<std::size_t>(total), kInf);
  std::vector<long> branch(static_cast<std::size_t>(total), -1);
  std::vector<std::uint8_t> strip(static_cast<std::size_t>(total), 0), piece(static_cast<std::size_t>(total), 2);
  const auto& field = sup.field();
  parallel_for(static_cast<std::size_t>(total), opt.threads, [&](std::size_t t) {
    const Vec<Dim> x = point(static_cast<long>(t));
    const auto e = sup.eval(x);
    values[t] = e.value;
    branch[t] = e.branch;
    strip[t] = e.glue.in_strip ? 1 : 0;
    piece[t] = static_cast<std::uint8_t>(e.piece);
    if (!std::isfinite(e.value)) return;
    Vec<Dim> g{};
    Mat<Dim> H{};
    sup.derivatives(e, g, H);
    residual[t] = op(g, H) + field.eval(x, e.value) + F;
  });

  auto make_offender = [&](long t) {
    Offender o;
    o.index = t;
    o.x = to_vec(point(t));
    o.value = values[static_cast<std::size_t>(t)];
    o.residual = residual[static_cast<std::size_t>(t)];
    o.piece = piece_name(static_cast<Piece>(piece[static_cast<std::size_t>(t)]));
    o.strip = strip[static_cast<std::size_t>(t)] != 0;
    return o;
  };

  long ws = -1, wg = -1;
  for (long t = 0; t < total; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    if (!std::isfinite(values[ti])) {
      if (rep.covered) rep.failures.push_back("not covered at index " + std::to_string(t));
      rep.covered = false;
      continue;
    }
    rep.min_value = std::min(rep.min_value, values[ti]);
    if (strip[ti]) {
      if (wg < 0 || residual[ti] > residual[static_cast<std::size_t>(wg)]) wg = t;
    } else {
      if (ws < 0 || residual[ti] > residual[static_cast<std::size_t>(ws)]) ws = t;
    }
  }
  if (ws >= 0) rep.worst_smooth = make_offender(ws);
  if (wg >= 0) rep.worst_strip = make_offender(wg);
  rep.nonnegative = rep.min_value >= 0.0;

  {
    std::vector<long> order;
    for (long t = 0; t < total; ++t)
      if (std::isfinite(values[static_cast<std::size_t>(t)])) order.push_back(t);
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(opt.top), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(keep), order.end(), [&](long a, long b) {
      const double ra = residual[static_cast<std::size_t>(a)], rb = residual[static_cast<std::size_t>(b)];
      return ra != rb ? ra > rb : a < b;
    });
    for (std::size_t i = 0; i < keep; ++i) rep.top.push_back(make_offender(order[i]));
  }

  // Voronoi ridges: grid edges whose endpoints have different active columns.
  auto composite = [&](const Vec<Dim>& x) { return sup.value(x); };
  const double h = std::min(opt.fd_step, 0.1 * hx);
  struct Ridge {
    double jump;
    Vec<Dim> x;
  };
  std::vector<std::vector<Ridge>> ridges(static_cast<std::size_t>(total));
  parallel_for(static_cast<std::size_t>(total), opt.threads, [&](std::size_t t) {
    const long a = branch[t];
    if (a < 0) return;
    const Vec<Dim> x0 = point(static_cast<long>(t));
    for (int axis = 0; axis < Dim; ++axis) {
      Vec<Dim> dir{};
      dir[axis] = 1.0;
      const Vec<Dim> x1 = add<Dim>(x0, scale<Dim>(dir, hx));
      const auto e1 = sup.eval(x1);
      if (e1.branch == a || e1.branch < 0) continue;
      double lo = 0.0, hi = hx;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (sup.eval(add<Dim>(x0, scale<Dim>(dir, mid))).branch == a) lo = mid;
        else hi = mid;
      }
      const Vec<Dim> xs = add<Dim>(x0, scale<Dim>(dir, 0.5 * (lo + hi)));
      Vec<Dim> back = scale<Dim>(dir, -1.0);
      const double left = detail::one_sided<Dim>(composite, xs, dir, h);
      const double right = -detail::one_sided<Dim>(composite, xs, back, h);
      ridges[t].push_back({left - right, xs});
    }
  });
  for (const auto& list : ridges)
    for (const auto& rg : list) {
      ++rep.ridge_checks;
      if (rg.jump < rep.worst_ridge_jump) {
        rep.worst_ridge_jump = rg.jump;
        rep.worst_ridge_x = to_vec(rg.x);
      }
      if (rg.jump < -opt.tol_jump) ++rep.ridge_failures;
    }

  // Inner spheres: radial one-sided derivatives at |x - x_i| = r_in.
  const double r_in = sup.profile().r_in;
  const long ncol = static_cast<long>(sup.selected().obstacle.size());
  std::vector<Vec<Dim>> dirs;
  if constexpr (Dim == 1) {
    dirs = {Vec<Dim>{1.0}, Vec<Dim>{-1.0}};
  } else {
    for (int k = 0; k < opt.ring_directions; ++k) {
      const double th = 2.0 * M_PI * k / opt.ring_directions;
      dirs.push_back(Vec<Dim>{std::cos(th), std::sin(th)});
    }
  }
  for (long c = 0; c < ncol; ++c)
    for (const auto& u : dirs) {
      const Vec<Dim> p = add<Dim>(sup.center(c), scale<Dim>(u, r_in));
      if (sup.eval(p).branch != c) continue;
      const double inner = detail::one_sided<Dim>(composite, p, u, h);
      const double outer = -detail::one_sided<Dim>(composite, p, scale<Dim>(u, -1.0), h);
      const double jump = inner - outer;
      ++rep.ring_checks;
      rep.worst_ring_jump = std::min(rep.worst_ring_jump, jump);
      if (jump < -opt.tol_jump) ++rep.ring_failures;
    }

  std::ostringstream os;
  os << std::setprecision(6);
  if (rep.worst_smooth.index >= 0 && rep.worst_smooth.residual > opt.tol_smooth) {
    os.str("");
    os << "residual " << rep.worst_smooth.residual << " > " << opt.tol_smooth << " on " << rep.worst_smooth.piece;
    rep.failures.push_back(os.str());
  }
  if (rep.worst_strip.index >= 0 && rep.worst_strip.residual > opt.tol_strip) {
    os.str("");
    os << "residual " << rep.worst_strip.residual << " > " << opt.tol_strip << " in glue strip";
    rep.failures.push_back(os.str());
  }
  if (rep.ridge_failures > 0) rep.failures.push_back(std::to_string(rep.ridge_failures) + " upward ridge jumps");
  if (rep.ring_failures > 0) rep.failures.push_back(std::to_string(rep.ring_failures) + " upward jumps at inner spheres");
  if (!rep.nonnegative) rep.failures.push_back("barrier takes negative values");
  return rep;
}

/// Adds the parameter checklist and settles pass/fail.
inline void finalize_report(CertificateReport& rep, std::vector<ParamCheck> params) {
  rep.params = std::move(params);
  for (const auto& p : rep.params)
    if (!p.holds && !p.advisory) rep.failures.push_back("parameter check " + p.name + " violated");
  rep.pass = rep.failures.empty();
}

}  // namespace depin
