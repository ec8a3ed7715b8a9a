#pragma once

// Small fixed-size real/complex helpers for 2D chart computations.
// Everything is a value type; no dynamic allocation anywhere.

#include <array>
#include <cmath>
#include <complex>
#include <ostream>

namespace beamwf {

using cplx = std::complex<double>;
inline constexpr cplx I{0.0, 1.0};

struct Vec2 {
  double x = 0.0, y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator/(double s) const { return {x / s, y / s}; }
  Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
  Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }
  double& operator[](int i) { return i == 0 ? x : y; }
  double operator[](int i) const { return i == 0 ? x : y; }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }
inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
// z-component of the 3D cross product; sign gives chart orientation.
inline double cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
inline double norm(const Vec2& v) { return std::hypot(v.x, v.y); }
// Counterclockwise rotation in chart coordinates.
inline Vec2 rot(const Vec2& v, double ang) {
  const double c = std::cos(ang), s = std::sin(ang);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}
inline Vec2 perp(const Vec2& v) { return {-v.y, v.x}; }

inline std::ostream& operator<<(std::ostream& os, const Vec2& v) {
  return os << "(" << v.x << ", " << v.y << ")";
}

// Row-major symmetric-friendly 2x2 matrix.
struct Mat2 {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;  // [[a b];[c d]]

  static Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
  static Mat2 scale(double s) { return {s, 0.0, 0.0, s}; }

  Mat2 operator+(const Mat2& o) const { return {a + o.a, b + o.b, c + o.c, d + o.d}; }
  Mat2 operator-(const Mat2& o) const { return {a - o.a, b - o.b, c - o.c, d - o.d}; }
  Mat2 operator*(double s) const { return {a * s, b * s, c * s, d * s}; }
  Mat2 operator*(const Mat2& o) const {
    return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
  }
  Vec2 operator*(const Vec2& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }

  double det() const { return a * d - b * c; }
  double trace() const { return a + d; }
  Mat2 inverse() const {
    const double dt = det();
    return {d / dt, -b / dt, -c / dt, a / dt};
  }
  Mat2 transpose() const { return {a, c, b, d}; }
};

inline Mat2 operator*(double s, const Mat2& m) { return m * s; }

// Eigenvalues of a symmetric 2x2 (ascending).
inline std::array<double, 2> sym_eigenvalues(const Mat2& m) {
  const double tr = m.trace();
  const double disc = std::sqrt(std::max(0.0, 0.25 * tr * tr - m.det()));
  return {0.5 * tr - disc, 0.5 * tr + disc};
}

// Metric-aware helpers. g is the metric matrix at a point; covectors use g^{-1}.
inline double co_inner(const Mat2& g_inv, const Vec2& xi, const Vec2& eta) {
  return dot(xi, g_inv * eta);
}
inline double co_norm(const Mat2& g_inv, const Vec2& xi) {
  return std::sqrt(std::max(0.0, co_inner(g_inv, xi, xi)));
}

}  // namespace beamwf
