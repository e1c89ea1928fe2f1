#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace depin {

template <int Dim>
using Vec = std::array<double, Dim>;

template <int Dim>
using Mat = std::array<std::array<double, Dim>, Dim>;

template <int Dim>
double dot(const Vec<Dim>& a, const Vec<Dim>& b) {
  double s = 0.0;
  for (int i = 0; i < Dim; ++i) s += a[i] * b[i];
  return s;
}

template <int Dim>
double norm(const Vec<Dim>& a) {
  return std::sqrt(dot<Dim>(a, a));
}

template <int Dim>
double norm_inf(const Vec<Dim>& a) {
  double m = 0.0;
  for (int i = 0; i < Dim; ++i) m = std::max(m, std::abs(a[i]));
  return m;
}

template <int Dim>
Vec<Dim> add(const Vec<Dim>& a, const Vec<Dim>& b) {
  Vec<Dim> r{};
  for (int i = 0; i < Dim; ++i) r[i] = a[i] + b[i];
  return r;
}

template <int Dim>
Vec<Dim> sub(const Vec<Dim>& a, const Vec<Dim>& b) {
  Vec<Dim> r{};
  for (int i = 0; i < Dim; ++i) r[i] = a[i] - b[i];
  return r;
}

template <int Dim>
Vec<Dim> scale(const Vec<Dim>& a, double s) {
  Vec<Dim> r{};
  for (int i = 0; i < Dim; ++i) r[i] = a[i] * s;
  return r;
}

template <int Dim>
Vec<Dim> mat_vec(const Mat<Dim>& m, const Vec<Dim>& v) {
  Vec<Dim> r{};
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j) r[i] += m[i][j] * v[j];
  return r;
}

template <int Dim>
double trace(const Mat<Dim>& m) {
  double s = 0.0;
  for (int i = 0; i < Dim; ++i) s += m[i][i];
  return s;
}

/// Wraps a coordinate into [0, period).
inline double wrap(double x, double period) {
  double r = std::fmod(x, period);
  if (r < 0.0) r += period;
  if (r >= period) r = 0.0;
  return r;
}

/// Minimum-image displacement on a circle of the given period.
inline double min_image(double dx, double period) {
  return dx - period * std::round(dx / period);
}

inline long floor_mod(long a, long m) {
  long r = a % m;
  return r < 0 ? r + m : r;
}

struct DepinError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace depin
