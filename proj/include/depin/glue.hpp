#pragma once

// Smooth interpolation of per-column target heights: constant on every closed
// box, blended across the gaps with a tensor product of quintic smoothsteps.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "depin/geometry.hpp"
#include "depin/percolation.hpp"

namespace depin {

// S(t) = 10 t^3 - 15 t^4 + 6 t^5, with S(0) = 0, S(1) = 1 and vanishing first
// and second derivatives at both ends.
inline double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}
inline double smoothstep_d1(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  const double a = t * (1.0 - t);
  return 30.0 * a * a;
}
inline double smoothstep_d2(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
}

/// Sup-norm constants of the blend in units of h/d (gradient) and h/d^2
/// (Laplacian, Hessian operator norm), for neighbouring values that differ by
/// at most 2h along an axis. C1 is the largest of them plus a 10% margin.
struct GlueConstants {
  double grad = 0.0;
  double laplacian = 0.0;
  double hessian = 0.0;
  double C1 = 0.0;
};

inline GlueConstants glue_constants(int n, int samples = 1001) {
  double s1 = 0.0, s2 = 0.0;
  std::vector<double> d1(static_cast<std::size_t>(samples)), d2(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    const double t = static_cast<double>(i) / (samples - 1);
    d1[static_cast<std::size_t>(i)] = smoothstep_d1(t);
    d2[static_cast<std::size_t>(i)] = std::abs(smoothstep_d2(t));
    s1 = std::max(s1, d1[static_cast<std::size_t>(i)]);
    s2 = std::max(s2, d2[static_cast<std::size_t>(i)]);
  }
  GlueConstants c;
  if (n == 1) {
    c.grad = 2.0 * s1;
    c.laplacian = 2.0 * s2;
    c.hessian = c.laplacian;
  } else if (n == 2) {
    // Diagonal entries <= 2h |S''(t_i)|, mixed entry <= 4h S'(t1) S'(t2). The
    // scan also covers points where one axis sits inside a box (t = 0).
    c.grad = 2.0 * s1;
    for (int i = 0; i < samples; ++i)
      for (int j = 0; j < samples; ++j) {
        const double a = 2.0 * d2[static_cast<std::size_t>(i)];
        const double b = 2.0 * d2[static_cast<std::size_t>(j)];
        const double m = 4.0 * d1[static_cast<std::size_t>(i)] * d1[static_cast<std::size_t>(j)];
        c.laplacian = std::max(c.laplacian, a + b);
        const double op = 0.5 * (a + b) + std::sqrt(0.25 * (a - b) * (a - b) + m * m);
        c.hessian = std::max(c.hessian, op);
      }
  } else {
    throw DepinError("glue_constants: only n = 1, 2 supported");
  }
  c.C1 = 1.1 * std::max({c.grad, c.laplacian, c.hessian});
  return c;
}

template <int Dim>
struct GlueSample {
  double value = 0.0;
  Vec<Dim> grad{};
  Mat<Dim> hess{};
  bool in_strip = false;  // inside some gap, where the gradient may be nonzero
};

template <int Dim>
class GlueFunction {
 public:
  GlueFunction() = default;

  GlueFunction(BoxGeometry<Dim> geo, std::vector<double> cell_value)
      : geo_(geo), cell_(std::move(cell_value)) {
    if (static_cast<long>(cell_.size()) != geo_.column_count())
      throw DepinError("GlueFunction: one value per column required");
  }

  const BoxGeometry<Dim>& geometry() const { return geo_; }
  const std::vector<double>& cell_values() const { return cell_; }
  double cell_value(long col) const { return cell_[static_cast<std::size_t>(col)]; }

  GlueSample<Dim> sample(const Vec<Dim>& x) const {
    // Per axis: up to two columns with weights, first and second derivatives.
    std::array<std::array<int, 2>, Dim> col{};
    std::array<std::array<double, 2>, Dim> w{}, w1{}, w2{};
    std::array<int, Dim> m{};
    GlueSample<Dim> out;
    const double P = geo_.period();
    for (int i = 0; i < Dim; ++i) {
      const double xi = wrap(x[i], geo_.side());
      int k = static_cast<int>(std::floor(xi / P));
      k = std::min(k, geo_.columns - 1);
      const double t = xi - k * P;
      col[i][0] = k;
      if (t <= geo_.l) {
        m[i] = 1;
        w[i][0] = 1.0;
      } else {
        out.in_strip = true;
        m[i] = 2;
        const double s = (t - geo_.l) / geo_.d;
        col[i][1] = static_cast<int>(floor_mod(k + 1, geo_.columns));
        const double S = smoothstep(s), S1 = smoothstep_d1(s) / geo_.d, S2 = smoothstep_d2(s) / (geo_.d * geo_.d);
        w[i] = {1.0 - S, S};
        w1[i] = {-S1, S1};
        w2[i] = {-S2, S2};
      }
    }
    long combos = 1;
    for (int i = 0; i < Dim; ++i) combos *= m[i];
    for (long c = 0; c < combos; ++c) {
      std::array<int, Dim> pick{};
      long rem = c;
      std::array<int, Dim> k{};
      for (int i = 0; i < Dim; ++i) {
        pick[i] = static_cast<int>(rem % m[i]);
        rem /= m[i];
        k[i] = col[i][pick[i]];
      }
      const double cv = cell_[static_cast<std::size_t>(geo_.flatten(k))];
      double prod = 1.0;
      for (int i = 0; i < Dim; ++i) prod *= w[i][pick[i]];
      out.value += prod * cv;
      for (int i = 0; i < Dim; ++i) {
        double g = w1[i][pick[i]];
        double hii = w2[i][pick[i]];
        for (int j = 0; j < Dim; ++j)
          if (j != i) {
            g *= w[j][pick[j]];
            hii *= w[j][pick[j]];
          }
        out.grad[i] += g * cv;
        out.hess[i][i] += hii * cv;
        for (int j = i + 1; j < Dim; ++j) {
          double hij = w1[i][pick[i]] * w1[j][pick[j]];
          for (int a = 0; a < Dim; ++a)
            if (a != i && a != j) hij *= w[a][pick[a]];
          out.hess[i][j] += hij * cv;
          out.hess[j][i] += hij * cv;
        }
      }
    }
    return out;
  }

  double value(const Vec<Dim>& x) const { return sample(x).value; }

 private:
  BoxGeometry<Dim> geo_;
  std::vector<double> cell_;
};

/// Glue with value y_k + r0 on the box of column k, where y_k is the height of
/// the obstacle selected in that column.
template <int Dim>
GlueFunction<Dim> build_glue(const SelectedObstacles<Dim>& selected, const BoxGeometry<Dim>& geo, double r0) {
  std::vector<double> values;
  values.reserve(selected.obstacle.size());
  for (const auto& ob : selected.obstacle) values.push_back(ob.y + r0);
  const double limit = 2.0 * geo.h * (1.0 + 1e-12);
  for (long c = 0; c < static_cast<long>(values.size()); ++c)
    for (long m : torus_neighbors<Dim>(c, geo.columns))
      if (std::abs(values[static_cast<std::size_t>(c)] - values[static_cast<std::size_t>(m)]) > limit) {
        std::ostringstream os;
        os << "build_glue: columns " << c << " and " << m << " differ by "
           << std::abs(values[static_cast<std::size_t>(c)] - values[static_cast<std::size_t>(m)]) << " > 2h = " << 2.0 * geo.h;
        throw DepinError(os.str());
      }
  return GlueFunction<Dim>(geo, std::move(values));
}

/// Measured sup norms of a glue function over a grid of the given spacing.
struct GlueMeasurement {
  double grad = 0.0;       // sup |grad|
  double hessian = 0.0;    // sup operator norm of the Hessian
  double laplacian = 0.0;  // sup |Laplacian|
};

template <int Dim>
double hessian_op_norm(const Mat<Dim>& H) {
  if constexpr (Dim == 1) {
    return std::abs(H[0][0]);
  } else {
    double a = H[0][0], b = H[1][1], c = 0.5 * (H[0][1] + H[1][0]);
    const double mid = 0.5 * (a + b);
    const double rad = std::sqrt(0.25 * (a - b) * (a - b) + c * c);
    return std::max(std::abs(mid + rad), std::abs(mid - rad));
  }
}

template <int Dim>
GlueMeasurement measure_glue(const GlueFunction<Dim>& glue, double spacing) {
  const auto& geo = glue.geometry();
  const long per_axis = std::max(1L, static_cast<long>(std::ceil(geo.side() / spacing)));
  long total = 1;
  for (int i = 0; i < Dim; ++i) total *= per_axis;
  const double hstep = geo.side() / static_cast<double>(per_axis);
  GlueMeasurement m;
  for (long t = 0; t < total; ++t) {
    Vec<Dim> x{};
    long rem = t;
    for (int i = 0; i < Dim; ++i) {
      x[i] = static_cast<double>(rem % per_axis) * hstep;
      rem /= per_axis;
    }
    auto s = glue.sample(x);
    m.grad = std::max(m.grad, norm<Dim>(s.grad));
    m.hessian = std::max(m.hessian, hessian_op_norm<Dim>(s.hess));
    m.laplacian = std::max(m.laplacian, std::abs(trace<Dim>(s.hess)));
  }
  return m;
}

}  // namespace depin
