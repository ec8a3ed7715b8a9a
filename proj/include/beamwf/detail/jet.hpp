#pragma once

// Truncated bivariate Taylor arithmetic ("jets") up to total degree P.
// Used to carry exact derivatives of the conformal factor through the
// curvature formulas: K and its first two derivatives need four clean
// derivatives of the factor, which finite differences cannot deliver at
// the tolerances the beam coefficients require.
//
// Convention: f(x0+u, y0+v) = sum c_{ij} u^i v^j over i+j <= P, so the
// mixed partial d^{i+j} f / du^i dv^j equals c_{ij} * i! * j!.

#include <array>
#include <cmath>
#include <stdexcept>

#include "beamwf/detail/algebra.hpp"

namespace beamwf::detail {

template <int P>
struct Jet2 {
  static constexpr int kCount = (P + 1) * (P + 2) / 2;
  std::array<double, kCount> c{};  // zero-initialized

  // Index of the u^i v^j coefficient (i+j <= P), rows by total degree.
  static constexpr int idx(int i, int j) {
    const int d = i + j;
    return d * (d + 1) / 2 + j;
  }

  double& at(int i, int j) { return c[idx(i, j)]; }
  double at(int i, int j) const { return c[idx(i, j)]; }

  static Jet2 constant(double v) {
    Jet2 r;
    r.c[0] = v;
    return r;
  }
  // The coordinate offsets u, v as jets.
  static Jet2 var_u(double base) {
    Jet2 r;
    r.c[0] = base;
    if constexpr (P >= 1) r.at(1, 0) = 1.0;
    return r;
  }
  static Jet2 var_v(double base) {
    Jet2 r;
    r.c[0] = base;
    if constexpr (P >= 1) r.at(0, 1) = 1.0;
    return r;
  }

  Jet2 operator+(const Jet2& o) const {
    Jet2 r;
    for (int k = 0; k < kCount; ++k) r.c[k] = c[k] + o.c[k];
    return r;
  }
  Jet2 operator-(const Jet2& o) const {
    Jet2 r;
    for (int k = 0; k < kCount; ++k) r.c[k] = c[k] - o.c[k];
    return r;
  }
  Jet2 operator-() const {
    Jet2 r;
    for (int k = 0; k < kCount; ++k) r.c[k] = -c[k];
    return r;
  }
  Jet2 operator*(double s) const {
    Jet2 r;
    for (int k = 0; k < kCount; ++k) r.c[k] = c[k] * s;
    return r;
  }
  Jet2 operator+(double s) const {
    Jet2 r = *this;
    r.c[0] += s;
    return r;
  }
  Jet2 operator-(double s) const {
    Jet2 r = *this;
    r.c[0] -= s;
    return r;
  }

  Jet2 operator*(const Jet2& o) const {
    Jet2 r;
    for (int i = 0; i <= P; ++i)
      for (int j = 0; i + j <= P; ++j) {
        const double a = at(i, j);
        if (a == 0.0) continue;
        for (int k = 0; i + j + k <= P; ++k)
          for (int l = 0; i + j + k + l <= P; ++l) {
            const double b = o.at(k, l);
            if (b == 0.0) continue;
            r.at(i + k, j + l) += a * b;
          }
      }
    return r;
  }

  // exp(f) = exp(c0) * sum_n (f - c0)^n / n!   (nilpotent tail, P terms)
  Jet2 exp() const {
    Jet2 tail = *this;
    tail.c[0] = 0.0;
    Jet2 r = constant(1.0);
    Jet2 pow = constant(1.0);
    double fact = 1.0;
    for (int n = 1; n <= P; ++n) {
      pow = pow * tail;
      fact *= n;
      r = r + pow * (1.0 / fact);
    }
    return r * std::exp(c[0]);
  }

  // log(f), requires c0 > 0: log(c0) + log(1 + tail/c0).
  Jet2 log() const {
    if (c[0] <= 0.0) throw std::domain_error("Jet2::log: nonpositive base value");
    Jet2 t = *this * (1.0 / c[0]);
    t.c[0] = 0.0;
    Jet2 r = constant(std::log(c[0]));
    Jet2 pow = constant(1.0);
    for (int n = 1; n <= P; ++n) {
      pow = pow * t;
      r = r + pow * ((n % 2 ? 1.0 : -1.0) / n);
    }
    return r;
  }

  // Partial derivative; result is a jet of the same order with the top
  // degree invalid (coefficients shift down one degree).
  Jet2 d_u() const {
    Jet2 r;
    for (int i = 1; i <= P; ++i)
      for (int j = 0; i + j <= P; ++j) r.at(i - 1, j) = at(i, j) * i;
    return r;
  }
  Jet2 d_v() const {
    Jet2 r;
    for (int i = 0; i <= P; ++i)
      for (int j = 1; i + j <= P; ++j) r.at(i, j - 1) = at(i, j) * j;
    return r;
  }

  double value() const { return c[0]; }
  Vec2 gradient() const { return {at(1, 0), at(0, 1)}; }
  // Hessian from the quadratic coefficients.
  Mat2 hessian() const { return {2.0 * at(2, 0), at(1, 1), at(1, 1), 2.0 * at(0, 2)}; }
  // Third partials {f_uuu, f_uuv, f_uvv, f_vvv} from the cubic coefficients.
  std::array<double, 4> third() const {
    static_assert(P >= 3, "third() needs a jet of degree >= 3");
    return {6.0 * at(3, 0), 2.0 * at(2, 1), 2.0 * at(1, 2), 6.0 * at(0, 3)};
  }
};

template <int P>
inline Jet2<P> operator*(double s, const Jet2<P>& j) { return j * s; }
template <int P>
inline Jet2<P> operator+(double s, const Jet2<P>& j) { return j + s; }
template <int P>
inline Jet2<P> operator-(double s, const Jet2<P>& j) { return (-j) + s; }

}  // namespace beamwf::detail
