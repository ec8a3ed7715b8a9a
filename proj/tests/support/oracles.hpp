#pragma once
// Reference arithmetic the test suite trusts instead of the library.
//
// Everything here is written directly from formulas on the euclidean disk:
// closed-form Riccati solutions, the order-zero beam in cartesian
// coordinates, and a plain tensor Gauss-Legendre quadrature over a rotated
// box. None of it calls into the library's solvers, charts, or quadrature,
// so agreement is a two-route check, not a tautology.
//
// The chain of trust for the transform values:
//   1. freeze the beam Hessian at i and drop cutoff and amplitudes; that
//      integrand has an exact Gaussian closed form, which pins down this
//      file's quadrature machinery to ~1e-8;
//   2. the validated quadrature then integrates the true order-zero
//      product integrand, giving reference transform values;
//   3. for the half-plane jump probed in the conormal direction,
//      integrating by parts across the edge leaves a Laplace integral with
//      limit sqrt(pi), an analytic anchor independent of both quadratures.

#include <cmath>
#include <complex>
#include <vector>

#include "beamwf/detail/algebra.hpp"

namespace oracle {

using beamwf::cplx;
using beamwf::Vec2;
using beamwf::I;

// --- closed forms ---------------------------------------------------------------

// Riccati solutions via the linear reduction Y'' = F Y, H = Y'/Y, Y(0) = 1,
// Y'(0) = H0.
inline cplx riccati_free(cplx H0, double t) { return H0 / (1.0 + H0 * t); }

inline cplx riccati_const(cplx H0, double F, double t) {
  if (F < 0.0) {  // Y = cos(kt) + (H0/k) sin(kt), k = sqrt(-F)
    const double k = std::sqrt(-F);
    const cplx Y = std::cos(k * t) + H0 / k * std::sin(k * t);
    const cplx dY = -k * std::sin(k * t) + H0 * std::cos(k * t);
    return dY / Y;
  }
  if (F > 0.0) {
    const double k = std::sqrt(F);
    const cplx Y = std::cosh(k * t) + H0 / k * std::sinh(k * t);
    const cplx dY = k * std::sinh(k * t) + H0 * std::cosh(k * t);
    return dY / Y;
  }
  return riccati_free(H0, t);
}

// Exit time of a straight chord from z in unit direction d out of the
// radius-R disk.
inline double chord_exit(const Vec2& z, const Vec2& d, double R) {
  const double b = beamwf::dot(z, d);
  return -b + std::sqrt(std::max(0.0, b * b + R * R - beamwf::dot(z, z)));
}

// Christoffel symbols of a conformal metric e^{2 phi} I by central
// differences of phi: Gamma^k_ij = d_i phi delta_jk + d_j phi delta_ik
// - d_k phi delta_ij.
struct Christoffel {
  double g[2][2][2];  // g[k][i][j] = Gamma^k_ij
};

template <class Phi>
Christoffel fd_christoffel(Phi&& phi, const Vec2& x, double h = 1e-5) {
  const double px = (phi({x.x + h, x.y}) - phi({x.x - h, x.y})) / (2.0 * h);
  const double py = (phi({x.x, x.y + h}) - phi({x.x, x.y - h})) / (2.0 * h);
  const double d[2] = {px, py};
  Christoffel c;
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        c.g[k][i][j] = d[i] * (j == k) + d[j] * (i == k) - d[k] * (i == j);
  return c;
}

// Gauss curvature of e^{2 phi} I: K = -e^{-2 phi} laplace(phi), by finite
// differences.
template <class Phi>
double fd_curvature(Phi&& phi, const Vec2& x, double h = 1e-4) {
  const double lap = (phi({x.x + h, x.y}) + phi({x.x - h, x.y}) + phi({x.x, x.y + h}) +
                      phi({x.x, x.y - h}) - 4.0 * phi(x)) /
                     (h * h);
  return -std::exp(-2.0 * phi(x)) * lap;
}

// --- the order-zero euclidean beam ------------------------------------------------

// The infinitely flat plateau: 1 on |r| <= 1/2, 0 at |r| >= 1, glued by
// 1/(1+e^g) with g = 1/(1-w) - 1/w, w = 2|r| - 1.
inline double plateau(double r) {
  const double a = std::abs(r);
  if (a <= 0.5) return 1.0;
  if (a >= 1.0) return 0.0;
  const double w = 2.0 * a - 1.0;
  const double g = 1.0 / (1.0 - w) - 1.0 / w;
  if (g > 500.0) return 0.0;
  if (g < -500.0) return 1.0;
  return 1.0 / (1.0 + std::exp(g));
}

// Beam through z0 along the unit direction at chart angle `ang`, H0 = i,
// unit frequency covector, truncation order zero:
//   v_s(x) = (Re s)^{1/4} e^{i s Theta(t,y)} (1+it)^{-1/2} chi(y/delta),
//   Theta = t + y^2 i / (2 (1+it)),  (t, y) = ((x-z0).d, (x-z0).n).
struct Beam0 {
  Vec2 z0;
  double ang = 0.0;
  double delta = 0.45;
};

inline cplx beam0_value(const Beam0& b, cplx s, const Vec2& x) {
  const Vec2 d{std::cos(b.ang), std::sin(b.ang)};
  const Vec2 r = x - b.z0;
  const double t = beamwf::dot(r, d);
  const double y = beamwf::cross(d, r);  // component along perp(d)
  const double chi = plateau(y / b.delta);
  if (chi == 0.0) return {};
  const cplx den = 1.0 + I * t;
  const cplx theta = t + 0.5 * I * y * y / den;
  return std::pow(s.real(), 0.25) * std::exp(I * s * theta) * chi / std::sqrt(den);
}

// The probe's product kernel at |xi| = 1: beams at +-45 degrees around the
// covector angle, k_tau = tau * v_{s1} v_{s2} (the m = 2 scaling).
struct Pair0 {
  Vec2 z0;
  double xi_ang = 0.0;
  double delta = 0.45;
  double lambda1 = 0.0, lambda2 = 0.0;
};

inline cplx kernel0(const Pair0& p, double tau, const Vec2& x) {
  const Beam0 b1{p.z0, p.xi_ang + M_PI / 4.0, p.delta};
  const Beam0 b2{p.z0, p.xi_ang - M_PI / 4.0, p.delta};
  const cplx v1 = beam0_value(b1, {tau, p.lambda1}, x);
  if (v1 == cplx{}) return {};
  const cplx v2 = beam0_value(b2, {tau, p.lambda2}, x);
  return tau * v1 * v2;
}

// --- quadrature -------------------------------------------------------------------

// 16-point Gauss-Legendre on [-1, 1], tabulated.
inline constexpr double gl16_x[8] = {
    0.0950125098376374, 0.2816035507792589, 0.4580167776572274, 0.6178762444026438,
    0.7554044083550030, 0.8656312023878318, 0.9445750230732326, 0.9894009349916499};
inline constexpr double gl16_w[8] = {
    0.1894506104550685, 0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479, 0.0271524594117541};

struct Integral {
  cplx value{};
  double err = 0.0;  // last refinement delta, absolute
  int panels = 0;    // per axis at convergence
};

// Composite tensor GL16 over the rotated box
//   x = center + u e(box_ang) + v e(box_ang + pi/2),
//   u in [u_lo, W], v in [-W, W],
// with the panel count doubled until two refinements agree. The box axes are
// chosen by the caller (jump-normal aligned for half-plane fields), so the
// integrand is smooth inside every panel.
template <class G>
Integral integrate_box(G&& g, const Vec2& center, double box_ang, double u_lo, double W,
                       double rtol = 1e-7, int start = 8, int max_panels = 512) {
  const Vec2 e1{std::cos(box_ang), std::sin(box_ang)};
  const Vec2 e2{-e1.y, e1.x};
  auto run = [&](int n) {
    const double du = (W - u_lo) / n, dv = 2.0 * W / n;
    cplx acc{};
    for (int iu = 0; iu < n; ++iu) {
      const double uc = u_lo + (iu + 0.5) * du;
      for (int iv = 0; iv < n; ++iv) {
        const double vc = -W + (iv + 0.5) * dv;
        cplx cell{};
        for (int a = 0; a < 16; ++a) {
          const double xa = a < 8 ? -gl16_x[a] : gl16_x[a - 8];
          const double wa = gl16_w[a < 8 ? a : a - 8];
          const double u = uc + 0.5 * du * xa;
          for (int b = 0; b < 16; ++b) {
            const double xb = b < 8 ? -gl16_x[b] : gl16_x[b - 8];
            const double wb = gl16_w[b < 8 ? b : b - 8];
            const double v = vc + 0.5 * dv * xb;
            cell += wa * wb * g(center + u * e1 + v * e2);
          }
        }
        acc += cell * (0.25 * du * dv);
      }
    }
    return acc;
  };
  Integral out;
  cplx prev = run(start);
  for (int n = 2 * start; n <= max_panels; n *= 2) {
    const cplx cur = run(n);
    out.err = std::abs(cur - prev);
    out.value = cur;
    out.panels = n;
    if (out.err <= rtol * std::abs(cur) + 1e-18) return out;
    prev = cur;
  }
  return out;  // caller inspects err against its own tolerance
}

// T(tau) = integral f k_tau over the product support. `jump_ang`: chart angle
// of the field's jump normal, or NAN for smooth fields (box axes then follow
// the covector, full range).
template <class F>
Integral transform0(const Pair0& p, F&& f, double tau, double jump_ang = NAN,
                    double rtol = 1e-7) {
  const double W = 1.5 * p.delta;  // covers the tube intersection, |x| <= delta sqrt 2
  auto g = [&](const Vec2& x) { return f(x) * kernel0(p, tau, x); };
  if (std::isnan(jump_ang)) return integrate_box(g, p.z0, p.xi_ang, -W, W, rtol);
  return integrate_box(g, p.z0, jump_ang, 0.0, W, rtol);
}

// Exact value of the frozen-Hessian variant (H = i everywhere, amplitudes
// and cutoff dropped) against a centered Gaussian f = e^{-|x|^2/sigma^2}:
//   T = tau^{3/2} (pi/kappa) e^{-tau^2/(2 kappa)},  kappa = 1/sigma^2 + tau/2.
// Only used to pin down the quadrature above; the true integrand decays much
// more slowly than this.
inline double frozen_gaussian_exact(double tau, double sigma) {
  const double kappa = 1.0 / (sigma * sigma) + 0.5 * tau;
  return std::pow(tau, 1.5) * M_PI / kappa * std::exp(-tau * tau / (2.0 * kappa));
}

// The matching frozen integrand for feeding integrate_box.
inline cplx frozen_gaussian_integrand(double tau, double sigma, const Vec2& x) {
  const double f = std::exp(-beamwf::dot(x, x) / (sigma * sigma));
  // phase sqrt(2) tau x1, transverse damping tau |x|^2 / 2
  return std::pow(tau, 1.5) * f *
         std::exp(I * (M_SQRT2 * tau * x.x) - 0.5 * tau * beamwf::dot(x, x));
}

// Log-log slope of |T| over a tau grid, straight least squares; the library's
// windowing/floor logic is deliberately not replicated here.
inline double loglog_slope(const std::vector<double>& tau,
                           const std::vector<double>& mag) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = tau.size();
  for (std::size_t i = 0; i < tau.size(); ++i) {
    const double x = std::log(tau[i]), y = std::log(mag[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace oracle
