#pragma once

// Stationary barrier for graph mean curvature flow: a spherical cap over the
// obstacle core and a constant-mean-curvature (Delaunay) annulus around it.
//
// Curvature normalization: kappa(u) = div(grad u / (n sqrt(1 + |grad u|^2))), so a
// sphere of radius R has kappa = 1/R.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "depin/geometry.hpp"
#include "depin/glue.hpp"
#include "depin/obstacle_field.hpp"
#include "depin/percolation.hpp"
#include "depin/qew.hpp"
#include "depin/supersolution.hpp"

namespace depin {

/// kappa for a graph with gradient g and Hessian H.
template <int Dim>
double mean_curvature(const Vec<Dim>& g, const Mat<Dim>& H) {
  const double nu2 = 1.0 + dot<Dim>(g, g);
  const double nu = std::sqrt(nu2);
  const double gHg = dot<Dim>(g, mat_vec<Dim>(H, g));
  return (trace<Dim>(H) / nu - gHg / (nu2 * nu)) / Dim;
}

/// Radial profile. Inner piece: lower spherical cap of radius F_in shifted to
/// vanish at r_in. Outer piece: w_out(r) = int_{r_in}^r s(rho) d rho with
/// s = psi / sqrt(1 - psi^2), psi(r) = |F_out| (r_out^n - r^n) / r^(n-1), which
/// has kappa = F_out and zero slope at r_out.
class McfProfile {
 public:
  int n = 1;
  double r_in = 0.0;
  double r_out = 0.0;
  double F_in = 0.0;
  double F_out = 0.0;
  double quad_tol = 1e-10;

  McfProfile() = default;

  McfProfile(int n_, double r_in_, double r_out_, double F_in_, double F_out_, double tol = 1e-10, int nodes = 64)
      : n(n_), r_in(r_in_), r_out(r_out_), F_in(F_in_), F_out(F_out_), quad_tol(tol) {
    if (!(r_in > 0.0 && r_in <= F_in)) throw DepinError("McfProfile: need 0 < r_in <= F_in");
    if (!(r_out > r_in)) throw DepinError("McfProfile: need r_out > r_in");
    if (!(F_out < 0.0)) throw DepinError("McfProfile: need F_out < 0");
    if (!(psi(r_in) < 1.0)) {
      std::ostringstream os;
      os << "McfProfile: annulus slope undefined, |F_out| (r_out^n - r_in^n)/r_in^(n-1) = " << psi(r_in) << " >= 1";
      throw DepinError(os.str());
    }
    node_.resize(static_cast<std::size_t>(nodes) + 1);
    cum_.assign(static_cast<std::size_t>(nodes) + 1, 0.0);
    for (int k = 0; k <= nodes; ++k) node_[static_cast<std::size_t>(k)] = r_in + (r_out - r_in) * k / nodes;
    for (int k = 1; k <= nodes; ++k)
      cum_[static_cast<std::size_t>(k)] =
          cum_[static_cast<std::size_t>(k) - 1] + integrate(node_[static_cast<std::size_t>(k) - 1], node_[static_cast<std::size_t>(k)]);
  }

  double psi(double r) const { return std::abs(F_out) * (std::pow(r_out, n) - std::pow(r, n)) / std::pow(r, n - 1); }

  double psi_dr(double r) const {
    return std::abs(F_out) * (-n + (1.0 - n) * (std::pow(r_out, n) - std::pow(r, n)) / std::pow(r, n));
  }

  /// Annulus slope psi / sqrt(1 - psi^2).
  double out_slope(double r) const {
    const double p = psi(r);
    if (!(p < 1.0)) throw DepinError("w_out_slope: radicand <= 0");
    return p / std::sqrt(1.0 - p * p);
  }

  double out_slope_dr(double r) const {
    const double p = psi(r);
    return psi_dr(r) / std::pow(1.0 - p * p, 1.5);
  }

  double out_value(double r) const {
    if (r <= r_in) return 0.0;
    const double t = std::clamp((r - r_in) / (r_out - r_in), 0.0, 1.0);
    const int nodes = static_cast<int>(node_.size()) - 1;
    int k = std::min(static_cast<int>(std::floor(t * nodes)), nodes - 1);
    return cum_[static_cast<std::size_t>(k)] + integrate(node_[static_cast<std::size_t>(k)], r);
  }

  double cap_slope(double r) const { return r / std::sqrt(F_in * F_in - r * r); }
  double cap_depth() const { return F_in - std::sqrt(F_in * F_in - r_in * r_in); }

  RadialSample sample(double r) const {
    RadialSample s;
    if (r < 0.0) throw DepinError("McfProfile: negative radius");
    if (r <= r_in) {
      const double q = F_in * F_in - r * r;
      s.piece = Piece::inner;
      s.value = -std::sqrt(q) + std::sqrt(F_in * F_in - r_in * r_in);
      s.slope = r / std::sqrt(q);
      s.slope_dr = F_in * F_in / (q * std::sqrt(q));
      return s;
    }
    if (r > r_out) return s;
    s.piece = Piece::outer;
    s.value = out_value(r);
    s.slope = out_slope(r);
    s.slope_dr = out_slope_dr(r);
    return s;
  }

  double value(double r) const { return sample(r).value; }

 private:
  double integrate(double a, double b) const {
    if (b <= a) return 0.0;
    double err = 0.0;
    auto f = [this](double r) {
      const double p = psi(r);
      return p / std::sqrt(1.0 - p * p);
    };
    const double v = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 8, 1e-12, &err);
    if (err > quad_tol) {
      std::ostringstream os;
      os << "w_out quadrature did not converge on [" << a << ", " << b << "]: error bound " << err;
      throw DepinError(os.str());
    }
    return v;
  }

  std::vector<double> node_;
  std::vector<double> cum_;
};

inline std::pair<double, double> w_in_eval(double r, const McfProfile& p) {
  if (r < 0.0 || r > p.r_in) throw DepinError("w_in_eval: r outside [0, r_in]");
  auto s = p.sample(r);
  return {s.value, s.slope};
}

inline double w_out_slope(double r, const McfProfile& p) {
  if (r < p.r_in || r > p.r_out) throw DepinError("w_out_slope: r outside [r_in, r_out]");
  return p.out_slope(r);
}

inline double w_out_eval(double r, const McfProfile& p) {
  if (r < p.r_in || r > p.r_out) throw DepinError("w_out_eval: r outside [r_in, r_out]");
  return p.out_value(r);
}

/// Annulus slope at r_in when F_out = -c r_in^(n-1) / r_out^n.
inline double g_scaling(double r_out, double c, double r_in, int n) {
  const double Rn = std::pow(r_out, n);
  const double diff = Rn - std::pow(r_in, n);
  const double rad = Rn * Rn / (diff * diff * c * c) - 1.0;
  if (!(rad > 0.0)) throw DepinError("g_scaling: radicand <= 0");
  return 1.0 / std::sqrt(rad);
}

struct GScalingSweep {
  double c_max = 0.0;
  double C2 = 0.0;        // sup of g / c over the sweep
  double C2_bound = 0.0;  // 1 / sqrt(1 - c_max^2)
  bool holds = false;     // g < C2_bound c at every sampled point
};

/// Samples g(r_out, c) / c over r_out in [r_lo, r_hi] and c in (0, c_max].
inline GScalingSweep g_scaling_sweep(double r_in, int n, double r_lo, double r_hi, double c_max, int samples = 200) {
  GScalingSweep s;
  s.c_max = c_max;
  s.C2_bound = 1.0 / std::sqrt(1.0 - c_max * c_max);
  s.holds = true;
  for (int i = 0; i < samples; ++i) {
    const double ro = r_lo + (r_hi - r_lo) * i / (samples - 1);
    for (int j = 1; j <= samples; ++j) {
      const double c = c_max * j / samples;
      const double ratio = g_scaling(ro, c, r_in, n) / c;
      s.C2 = std::max(s.C2, ratio);
      if (!(ratio < s.C2_bound)) s.holds = false;
    }
  }
  return s;
}

struct McfParams {
  int n = 1;
  double r0 = 0.0;
  double r1 = 0.0;
  double fbar = 0.0;
  double tail = 0.0;
  double r_in = 0.0;
  double r_out = 0.0;
  double F_in = 0.0;
  double F_out = 0.0;
  double c = 0.0;
  double C = 1.0;
  double C2 = 0.0;
  double G = 0.0;  // cap slope at r_in
  double h = 0.0;
  double d = 0.0;
  double l = 0.0;
  double C0 = 0.0;
  double C1 = 0.0;
  double p_target = 0.0;
  double F_star = 0.0;
  double quad_tol = 1e-10;

  McfProfile profile() const { return McfProfile(n, r_in, r_out, F_in, F_out, quad_tol); }
};

/// Conditions on the cap / annulus local solution. The cap force condition is
/// reported with the cap radius in place of its curvature (advisory) and with
/// the curvature 1/F_in itself.
inline std::vector<ParamCheck> check_mcf_conditions(const McfParams& p, double fbar, double F) {
  const int n = p.n;
  std::vector<ParamCheck> c;
  c.push_back(leq("cap_radius_form", p.F_in - fbar + F, 0.0, true));
  c.push_back(leq("cap_curvature", 1.0 / p.F_in - fbar + F, 0.0));
  c.push_back(leq("annulus_force", p.F_out + F, 0.0));
  c.push_back(leq("r_in_below_cap_radius", p.r_in, p.F_in));
  c.push_back(leq("cap_depth", p.F_in - std::sqrt(p.F_in * p.F_in - p.r_in * p.r_in), p.r0));
  c.push_back(leq("r_in_below_r0", p.r_in, p.r0));
  const double psi_in = std::abs(p.F_out) * (std::pow(p.r_out, n) - std::pow(p.r_in, n)) / std::pow(p.r_in, n - 1);
  c.push_back(leq("well_defined", psi_in, 1.0 - 1e-15));
  const double out_slope = psi_in < 1.0 ? psi_in / std::sqrt(1.0 - psi_in * psi_in) : kInf;
  const double in_slope = p.r_in / std::sqrt(p.F_in * p.F_in - p.r_in * p.r_in);
  c.push_back(leq("slope_order", out_slope, in_slope));
  return c;
}

inline std::vector<ParamCheck> mcf_param_checks(const McfParams& p, double F) {
  auto c = check_mcf_conditions(p, p.fbar, F);
  c.push_back(leq("gluing_slope", 1.1 * p.C * p.h / p.d, std::abs(p.F_out) * (1.0 + 1e-12)));
  c.push_back(leq("covering_radius", std::sqrt(static_cast<double>(p.n)) * (p.l + 0.5 * p.d - p.r1),
                  p.r_out * (1.0 + 1e-12)));
  c.push_back(leq("F_star_bound", p.F_star, std::min(p.fbar / 2.0, std::abs(p.F_out) / 2.0)));
  c.push_back(leq("F_star_positive", 0.0, p.F_star));
  c.push_back(leq("box_exceeds_reduction", 2.0 * p.r1, p.l));
  return c;
}

/// Recipe: r_in = r0, cap radius F_in = r_in / psi_in (raised to 2/fbar if the cap
/// curvature would exceed fbar/2), G = cap slope at r_in; then a log-grid search
/// over (h, d) with F_out = -max(glue_factor C1 h/d^2, 1.1 C h/d) requiring the
/// annulus slope at r_in below G / margin.
inline Recipe<McfParams> choose_parameters_mcf(const ObstacleShape& shape, double lambda,
                                               const StrengthDistribution& dist, const RecipeOptions& opt = {}) {
  Recipe<McfParams> out;
  McfParams p;
  p.n = shape.n();
  p.r0 = shape.r0();
  p.r1 = shape.r1();
  p.p_target = resolve_p_target(shape.n(), opt.p_target);
  p.C = opt.C;
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
  p.r_in = p.r0;
  p.F_in = std::max(p.r_in / opt.psi_in, 2.0 / p.fbar);
  p.G = p.r_in / std::sqrt(p.F_in * p.F_in - p.r_in * p.r_in);
  if (p.F_in - std::sqrt(p.F_in * p.F_in - p.r_in * p.r_in) > p.r0) {
    out.message = "cap deeper than r0";
    return out;
  }
  p.C0 = percolation_C0(n, lambda, p.tail, p.p_target);
  p.C1 = glue_constants(n).C1;
  const double strength_room = p.fbar - std::max(p.F_in, 1.0 / p.F_in);
  if (!(strength_room > 0.0)) {
    std::ostringstream os;
    os << "strength too small for the cap: fbar = " << p.fbar << " <= max(F_in, 1/F_in) = " << std::max(p.F_in, 1.0 / p.F_in);
    out.message = os.str();
    return out;
  }

  double best_ratio = kInf;
  std::string best_msg;
  bool found = false;
  for (double h : log_grid(opt.h_min, opt.h_max, opt.h_steps))
    for (double d : log_grid(opt.d_min, opt.d_max, opt.d_steps)) {
      McfParams q = p;
      q.h = h;
      q.d = d;
      q.l = q.C0 * std::pow(h, -1.0 / n) + 2.0 * q.r1;
      q.r_out = std::sqrt(static_cast<double>(n)) * (q.l + 0.5 * d - q.r1);
      q.F_out = -std::max(opt.glue_factor * q.C1 * h / (d * d), opt.margin * q.C * h / d);
      const double psi_in =
          std::abs(q.F_out) * (std::pow(q.r_out, n) - std::pow(q.r_in, n)) / std::pow(q.r_in, n - 1);
      const double slope = psi_in < 1.0 ? psi_in / std::sqrt(1.0 - psi_in * psi_in) : kInf;
      const double need = opt.margin * slope;
      if (!(need < q.G)) {
        const double ratio = psi_in < 1.0 ? need / q.G : 1e300 * psi_in;
        if (ratio < best_ratio) {
          best_ratio = ratio;
          std::ostringstream os;
          if (psi_in >= 1.0)
            os << "annulus slope undefined: |F_out| (r_out^n - r_in^n)/r_in^(n-1) = " << psi_in << " >= 1";
          else
            os << "slope compatibility: " << opt.margin << " * annulus slope " << slope << " >= cap slope " << q.G
             << " (closest at h=" << h << ", d=" << d << ")";
          best_msg = os.str();
        }
        continue;
      }
      q.c = std::abs(q.F_out) * std::pow(q.r_out, n) / std::pow(q.r_in, n - 1);
      q.F_star = opt.safety * std::min({q.fbar / 2.0, strength_room, std::abs(q.F_out) / 4.0});
      if (!found || q.F_star > out.params.F_star) {
        out.params = q;
        found = true;
      }
    }
  out.ok = found;
  if (!found) {
    out.message = best_msg.empty() ? "empty search grid" : best_msg;
    return out;
  }
  // Exhibit C2 for c up to the chosen c with g(r_out, c) < C2 c.
  auto& q = out.params;
  const double cmax = std::min(q.c * 1.05, 0.999);
  const auto sweep = g_scaling_sweep(q.r_in, n, q.r_out * 0.5, q.r_out * 2.0, cmax, 60);
  q.C2 = sweep.C2_bound;
  return out;
}

template <int Dim>
using McfSupersolution = Supersolution<Dim, McfProfile>;

/// The seven term groups of n kappa(w + glue), expanded about kappa(w): a, A are
/// the gradient / Hessian of the radial piece, b, B those of the glue.
template <int Dim>
std::array<double, 7> kappa_expansion(const Vec<Dim>& a, const Mat<Dim>& A, const Vec<Dim>& b, const Mat<Dim>& B) {
  const double nuw = std::sqrt(1.0 + dot<Dim>(a, a));
  const Vec<Dim> ab = add<Dim>(a, b);
  const double nu = std::sqrt(1.0 + dot<Dim>(ab, ab));
  const double nu3 = nu * nu * nu, nuw3 = nuw * nuw * nuw;
  const Vec<Dim> Aa = mat_vec<Dim>(A, a), Ab = mat_vec<Dim>(A, b), Bab = mat_vec<Dim>(B, ab);
  std::array<double, 7> t{};
  t[0] = trace<Dim>(A) / nuw - dot<Dim>(a, Aa) / nuw3;
  t[1] = trace<Dim>(A) * (1.0 / nu - 1.0 / nuw);
  t[2] = trace<Dim>(B) / nu;
  t[3] = -dot<Dim>(a, Aa) * (1.0 / nu3 - 1.0 / nuw3);
  t[4] = -2.0 * dot<Dim>(a, Ab) / nu3;
  t[5] = -dot<Dim>(b, Ab) / nu3;
  t[6] = -dot<Dim>(ab, Bab) / nu3;
  for (auto& x : t) x /= Dim;
  return t;
}

/// Grid certificate of kappa(w) + f(x, w) + F <= 0.
template <int Dim>
CertificateReport certify_mcf(const McfSupersolution<Dim>& sup, const McfParams& p, double F,
                              const CertifyOptions& opt = {}) {
  auto op = [](const Vec<Dim>& g, const Mat<Dim>& H) { return mean_curvature<Dim>(g, H); };
  auto rep = certify_composite(sup, F, p.F_star, "mcf", op, opt);
  auto checks = mcf_param_checks(p, F);
  checks.push_back(leq("F_within_F_star", F, p.F_star, true));
  finalize_report(rep, checks);
  return rep;
}

inline void write_params(std::ostream& os, const McfParams& p) {
  os << std::setprecision(12);
  os << "param.fbar=" << p.fbar << "\n"
     << "param.tail=" << p.tail << "\n"
     << "param.r_in=" << p.r_in << "\n"
     << "param.r_out=" << p.r_out << "\n"
     << "param.F_in=" << p.F_in << "\n"
     << "param.F_out=" << p.F_out << "\n"
     << "param.c=" << p.c << "\n"
     << "param.C=" << p.C << "\n"
     << "param.C2=" << p.C2 << "\n"
     << "param.G=" << p.G << "\n"
     << "param.h=" << p.h << "\n"
     << "param.d=" << p.d << "\n"
     << "param.l=" << p.l << "\n"
     << "param.C0=" << p.C0 << "\n"
     << "param.C1=" << p.C1 << "\n"
     << "param.p_target=" << p.p_target << "\n"
     << "param.F_star=" << p.F_star << "\n";
}

}  // namespace depin
