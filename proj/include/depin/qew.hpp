#pragma once

// Stationary barrier for the semilinear model u_t = Lap u + f(x, u) + F:
// a parabola over the obstacle core, a Neumann annulus around it, minimized over
// the percolating obstacle centers and lifted by the glue function.

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "depin/geometry.hpp"
#include "depin/glue.hpp"
#include "depin/obstacle_field.hpp"
#include "depin/percolation.hpp"
#include "depin/supersolution.hpp"

namespace depin {

/// Radial profile: v_in(r) = F_in/(2n)(r^2 - r_in^2) on [0, r_in], v_out with
/// Lap v_out = F_out, v_out(r_in) = 0 and v_out'(r_out) = 0 on [r_in, r_out],
/// +inf beyond r_out.
struct QewProfile {
  int n = 1;
  double r_in = 0.0;
  double r_out = 0.0;
  double F_in = 0.0;
  double F_out = 0.0;

  RadialSample sample(double r) const {
    RadialSample s;
    if (r < 0.0) throw DepinError("QewProfile: negative radius");
    if (r <= r_in) {
      s.piece = Piece::inner;
      s.value = F_in / (2.0 * n) * (r * r - r_in * r_in);
      s.slope = F_in * r / n;
      s.slope_dr = F_in / n;
      return s;
    }
    if (r > r_out) return s;
    s.piece = Piece::outer;
    s.value = out_value(r);
    s.slope = out_slope(r);
    s.slope_dr = F_out / n * (1.0 + (n - 1) * std::pow(r_out / r, n));
    return s;
  }

  /// (F_out/n)(r - r_out^n / r^(n-1)).
  double out_slope(double r) const { return F_out / n * (r - std::pow(r_out, n) / std::pow(r, n - 1)); }

  double out_value(double r) const {
    const double quad = 0.5 * (r * r - r_in * r_in);
    const double Rn = std::pow(r_out, n);
    double tail;
    if (n == 1) tail = Rn * (r - r_in);
    else if (n == 2) tail = Rn * std::log(r / r_in);
    else tail = Rn * (std::pow(r, 2 - n) - std::pow(r_in, 2 - n)) / (2.0 - n);
    return F_out / n * (quad - tail);
  }

  double value(double r) const { return sample(r).value; }
  double depth() const { return F_in * r_in * r_in / (2.0 * n); }
};

/// value (or derivative) of the inner piece; throws outside [0, r_in].
inline std::pair<double, double> v_in_eval(double r, const QewProfile& p) {
  if (r < 0.0 || r > p.r_in) throw DepinError("v_in_eval: r outside [0, r_in]");
  auto s = p.sample(r);
  return {s.value, s.slope};
}

inline std::pair<double, double> v_out_eval(double r, const QewProfile& p) {
  if (r < p.r_in || r > p.r_out) throw DepinError("v_out_eval: r outside [r_in, r_out]");
  return {p.out_value(r), p.out_slope(r)};
}

/// +inf outside the closed r_out ball.
template <int Dim>
double v_local_eval(const Vec<Dim>& x, const QewProfile& p) {
  return p.sample(norm<Dim>(x)).value;
}

struct JumpCheck {
  bool holds = false;
  double slack = 0.0;        // F_in r_in - |F_out| (r_out^n / r_in^(n-1) - r_in)
  double inner_slope = 0.0;  // v_in'(r_in)
  double outer_slope = 0.0;  // v_out'(r_in)
};

inline JumpCheck check_jump_condition(const QewProfile& p) {
  JumpCheck j;
  const int n = p.n;
  j.slack = p.F_in * p.r_in - std::abs(p.F_out) * (-p.r_in + std::pow(p.r_out, n) / std::pow(p.r_in, n - 1));
  j.holds = j.slack >= 0.0;
  j.inner_slope = p.F_in * p.r_in / n;
  j.outer_slope = p.out_slope(p.r_in);
  return j;
}

struct QewParams {
  int n = 1;
  double r0 = 0.0;
  double r1 = 0.0;
  double fbar = 0.0;
  double tail = 0.0;
  double r_in = 0.0;
  double r_out = 0.0;
  double F_in = 0.0;
  double F_out = 0.0;
  double h = 0.0;
  double d = 0.0;
  double l = 0.0;
  double C0 = 0.0;
  double C1 = 0.0;
  double p_target = 0.0;
  double F_star = 0.0;

  QewProfile profile() const { return {n, r_in, r_out, F_in, F_out}; }
};

struct RecipeOptions {
  double tail_floor = 0.5;
  double p_target = 0.0;       // 0: max(0.97, 1 - (1 - p_c)/2)
  double f_in_fraction = 0.9;  // F_in = fraction * fbar / 2
  double margin = 1.1;          // safety factor on the jump / slope inequalities
  double safety = 0.95;         // F_star = safety * (bound)
  double h_min = 0.05, h_max = 5.0;
  int h_steps = 41;
  double d_min = 0.5, d_max = 400.0;
  int d_steps = 121;
  double C = 1.0;              // MCF: required -F_out > C h / d
  double psi_in = 0.7;         // MCF: r_in / F_in
  double glue_factor = 4.0;    // MCF: |F_out| >= factor * C1 h / d^2
};

template <class Params>
struct Recipe {
  bool ok = false;
  Params params;
  std::string message;  // violated inequality when infeasible
};

inline std::vector<double> log_grid(double lo, double hi, int steps) {
  std::vector<double> g;
  for (int i = 0; i < steps; ++i)
    g.push_back(steps == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(i) / (steps - 1)));
  return g;
}

inline double resolve_p_target(int n, double requested) {
  if (requested > 0.0) return requested;
  return std::max(0.97, 1.0 - 0.5 * (1.0 - critical_probability(n)));
}

inline double percolation_C0(int n, double lambda, double tail, double p_target) {
  if (!(p_target > critical_probability(n) && p_target < 1.0))
    throw DepinError("p_target must lie in (p_c, 1)");
  return std::pow(-std::log(1.0 - p_target) / (lambda * tail), 1.0 / n);
}

/// Parameter recipe: fbar from the tail floor, F_in = 0.9 fbar/2, r_in maximal
/// with max(r_in, F_in r_in^2/(2n)) <= r0, C0 from the percolation target, then
/// a log-grid search over (h, d) maximizing F_star subject to the jump
/// condition with margin and F_out = -2 C1 h / d^2.
inline Recipe<QewParams> choose_parameters(const ObstacleShape& shape, double lambda,
                                           const StrengthDistribution& dist, const RecipeOptions& opt = {}) {
  Recipe<QewParams> out;
  QewParams p;
  p.n = shape.n();
  p.r0 = shape.r0();
  p.r1 = shape.r1();
  p.p_target = resolve_p_target(shape.n(), opt.p_target);
  const int n = p.n;
  if (!(lambda > 0.0)) {
    out.message = "intensity must be positive";
    return out;
  }
  p.fbar = dist.threshold_for_tail(opt.tail_floor);
  p.tail = dist.tail(p.fbar);
  if (!(p.tail > 0.0)) {
    out.message = "tail(fbar) = 0";
    return out;
  }
  p.F_in = opt.f_in_fraction * p.fbar / 2.0;
  p.r_in = std::min(p.r0, std::sqrt(2.0 * n * p.r0 / p.F_in));
  p.C0 = percolation_C0(n, lambda, p.tail, p.p_target);
  p.C1 = glue_constants(n).C1;

  double best_ratio = kInf;
  std::string best_msg;
  bool found = false;
  for (double h : log_grid(opt.h_min, opt.h_max, opt.h_steps))
    for (double d : log_grid(opt.d_min, opt.d_max, opt.d_steps)) {
      QewParams q = p;
      q.h = h;
      q.d = d;
      q.l = q.C0 * std::pow(h, -1.0 / n) + 2.0 * q.r1;
      q.r_out = std::sqrt(static_cast<double>(n)) * (q.l + 0.5 * d - q.r1);
      q.F_out = -2.0 * q.C1 * h / (d * d);
      const double need = opt.margin * std::abs(q.F_out) * (std::pow(q.r_out, n) / std::pow(q.r_in, n - 1) - q.r_in);
      const double have = q.F_in * q.r_in;
      if (have < need) {
        const double ratio = need / have;
        if (ratio < best_ratio) {
          best_ratio = ratio;
          std::ostringstream os;
          os << "jump condition: F_in r_in = " << have << " < " << opt.margin
             << " |F_out| (r_out^n/r_in^(n-1) - r_in) = " << need << " (closest at h=" << h << ", d=" << d << ")";
          best_msg = os.str();
        }
        continue;
      }
      q.F_star = opt.safety * std::min(-q.F_out / 2.0, q.fbar / 2.0);
      if (!found || q.F_star > out.params.F_star) {
        out.params = q;
        found = true;
      }
    }
  out.ok = found;
  if (!found) out.message = best_msg.empty() ? "empty search grid" : best_msg;
  return out;
}

inline std::vector<ParamCheck> qew_param_checks(const QewParams& p) {
  const int n = p.n;
  std::vector<ParamCheck> c;
  c.push_back(leq("core_fit", std::max(p.r_in, p.F_in * p.r_in * p.r_in / (2.0 * n)), p.r0));
  c.push_back(leq("F_in_below_half_fbar", p.F_in, p.fbar / 2.0));
  c.push_back(leq("jump_condition", std::abs(p.F_out) * (std::pow(p.r_out, n) / std::pow(p.r_in, n - 1) - p.r_in),
                  p.F_in * p.r_in));
  c.push_back(leq("gluing_bound", 2.0 * p.C1 * p.h / (p.d * p.d), std::abs(p.F_out) * (1.0 + 1e-12)));
  c.push_back(leq("covering_radius", std::sqrt(static_cast<double>(n)) * (p.l + 0.5 * p.d - p.r1),
                  p.r_out * (1.0 + 1e-12)));
  c.push_back(leq("F_star_bound", p.F_star, std::min(-p.F_out / 2.0, p.fbar / 2.0)));
  c.push_back(leq("F_star_positive", 0.0, p.F_star));
  c.push_back(leq("box_exceeds_reduction", 2.0 * p.r1, p.l));
  return c;
}

template <int Dim>
using QewSupersolution = Supersolution<Dim, QewProfile>;

/// Grid certificate of Lap v + f(x, v) + F <= 0.
template <int Dim>
CertificateReport certify(const QewSupersolution<Dim>& sup, const QewParams& p, double F,
                          const CertifyOptions& opt = {}) {
  auto op = [](const Vec<Dim>&, const Mat<Dim>& H) { return trace<Dim>(H); };
  auto rep = certify_composite(sup, F, p.F_star, "qew", op, opt);
  auto checks = qew_param_checks(p);
  checks.push_back(leq("F_within_F_star", F, p.F_star, true));
  finalize_report(rep, checks);
  return rep;
}

inline void write_params(std::ostream& os, const QewParams& p) {
  os << std::setprecision(12);
  os << "param.fbar=" << p.fbar << "\n"
     << "param.tail=" << p.tail << "\n"
     << "param.r_in=" << p.r_in << "\n"
     << "param.r_out=" << p.r_out << "\n"
     << "param.F_in=" << p.F_in << "\n"
     << "param.F_out=" << p.F_out << "\n"
     << "param.h=" << p.h << "\n"
     << "param.d=" << p.d << "\n"
     << "param.l=" << p.l << "\n"
     << "param.C0=" << p.C0 << "\n"
     << "param.C1=" << p.C1 << "\n"
     << "param.p_target=" << p.p_target << "\n"
     << "param.F_star=" << p.F_star << "\n";
}

}  // namespace depin
