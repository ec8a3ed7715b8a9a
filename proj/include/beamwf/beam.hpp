#pragma once

// Gaussian beam quasimodes concentrated on a boundary-to-boundary geodesic.
//
// The tube chart ("Fermi coordinates") puts the axis at y = 0 with t the
// arclength along it.  For a conformal surface the pullback metric is exactly
// diag(q^2, 1) where q solves the radial Jacobi equation q'' + K q = 0 with
// q(0) = 1, q'(0) = 0 along the geodesics leaving the axis orthogonally; all
// Laplacians and volume weights below lean on that reduction, and a
// finite-difference route through the forward map is kept alongside as an
// independent check.
//
// A beam of order N is  v_s = tau^{1/4} e^{is Theta} (A_0 + s^{-1} A_{-1}) chi(y/delta)
// with s = tau + i lambda.  The quadratic phase coefficient H(t) solves the
// Riccati equation through the linear substitution H = Ydot/Y, Yddot = F Y,
// F = -K(gamma(t)); the leading amplitude is Y^{-1/2}.  At order 0 the phase
// stops at the quadratic term and A_0 = a_0(t).  Order 1 carries the cubic,
// quartic and quintic phase corrections and the matching y-corrections of both
// amplitudes: that is what buys a full extra power of decay for the residual
// (-Delta - s^2) v_s in L^2(M), which the detection thresholds depend on.
// Orders N >= 2 are out of scope and rejected.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "beamwf/detail/algebra.hpp"
#include "beamwf/detail/ode.hpp"
#include "beamwf/geodesic.hpp"
#include "beamwf/manifold.hpp"
#include "beamwf/pairing.hpp"

namespace beamwf {

class BeamError : public std::runtime_error {
 public:
  explicit BeamError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when the requested tube width is wider than the invertible range of
// the forward map; `delta_max` is the largest width that still round-tripped.
class FermiChartError : public BeamError {
 public:
  FermiChartError(const std::string& what, double delta_max_)
      : BeamError(what), delta_max(delta_max_) {}
  double delta_max = 0.0;
};

// --- transverse cutoff -------------------------------------------------------

// The default profile is identically 1 for |y| <= delta/2 and 0 for
// |y| >= delta.  The plateau matters: every cutoff-derivative term in the
// residual is then supported where the Gaussian factor is exponentially small
// in tau, so the cutoff never shows up in the measured decay rates.  The
// plain bump exp(1 - 1/(1-r^2)) is kept as an alternative profile; it has no
// plateau, and its derivative terms put a tau-independent floor under the
// residual, which is visible in the decay diagnostics.
enum class CutoffProfile { plateau, bump };

struct Cutoff {
  double delta = 1.0;
  CutoffProfile profile = CutoffProfile::plateau;

  // chi(y) and its first two y-derivatives, width folded in.
  void eval(double y, double& c, double& c1, double& c2) const {
    const double r = std::abs(y) / delta;
    c = c1 = c2 = 0.0;
    if (profile == CutoffProfile::plateau) {
      if (r >= 1.0) return;
      if (r <= 0.5) {
        c = 1.0;
        return;
      }
      const double w = 2.0 * r - 1.0;  // transition variable in (0, 1)
      const double g = 1.0 / (1.0 - w) - 1.0 / w;
      if (g > 500.0) return;  // chi below 1e-217, call it zero
      if (g < -500.0) {
        c = 1.0;
        return;
      }
      const double u = 1.0 / (1.0 + std::exp(g));
      const double gp = 1.0 / ((1.0 - w) * (1.0 - w)) + 1.0 / (w * w);
      const double gpp =
          2.0 / ((1.0 - w) * (1.0 - w) * (1.0 - w)) - 2.0 / (w * w * w);
      const double uw = -u * (1.0 - u) * gp;
      const double uww = u * (1.0 - u) * ((1.0 - 2.0 * u) * gp * gp - gpp);
      const double sgn = (y >= 0.0) ? 1.0 : -1.0;
      c = u;
      c1 = uw * 2.0 * sgn / delta;
      c2 = uww * 4.0 / (delta * delta);
      return;
    }
    // bump profile
    if (r >= 1.0 - 1e-9) return;
    const double u = 1.0 - r * r;
    const double e = std::exp(1.0 - 1.0 / u);
    const double hp = -2.0 * r / (u * u);
    const double hpp = -2.0 / (u * u) - 8.0 * r * r / (u * u * u);
    const double sgn = (y >= 0.0) ? 1.0 : -1.0;
    c = e;
    c1 = e * hp * sgn / delta;
    c2 = e * (hp * hp + hpp) / (delta * delta);
  }
};

// --- axis grid ---------------------------------------------------------------

// Uniform grid over the extended axis range with a node pinned at t = 0 (the
// anchor point).  All coefficient functions live on this grid; its spacing is
// independent of the tube width, so shrinking delta reproduces coefficients
// bit for bit.
struct AxisGrid {
  double h = 0.0;
  int n_neg = 0, n_pos = 0;  // node i sits at t = (i - n_neg) h

  int size() const { return n_neg + n_pos + 1; }
  int origin() const { return n_neg; }
  double t(int i) const { return (i - n_neg) * h; }
  double t_front() const { return -n_neg * h; }
  double t_back() const { return n_pos * h; }

  static AxisGrid over(double t_lo, double t_hi) {
    if (!(t_lo < 0.0 && t_hi > 0.0))
      throw BeamError("axis grid: the anchor t = 0 must be interior to the range");
    AxisGrid g;
    const double h0 = std::min(0.002, (t_hi - t_lo) / 2000.0);
    g.n_neg = std::max(1, static_cast<int>(std::llround(-t_lo / h0)));
    g.h = -t_lo / g.n_neg;
    g.n_pos = std::max(1, static_cast<int>(std::floor(t_hi / g.h + 1e-12)));
    return g;
  }
};

// Hermite interpolation basis at one t, shared by all coefficient series.
struct SeriesBasis {
  int i = 0;
  double s = 0.0, h = 0.0;
  double h00 = 1, h10 = 0, h01 = 0, h11 = 0;

  SeriesBasis() = default;
  SeriesBasis(const AxisGrid& g, double t) {
    h = g.h;
    double x = (t - g.t_front()) / g.h;
    i = std::clamp(static_cast<int>(std::floor(x)), 0, g.size() - 2);
    s = x - i;
    const double s2 = s * s, s3 = s2 * s;
    h00 = 2 * s3 - 3 * s2 + 1;
    h10 = s3 - 2 * s2 + s;
    h01 = -2 * s3 + 3 * s2;
    h11 = s3 - s2;
  }
};

// One scalar coefficient function: nodal values plus first and second
// t-derivatives.  Values and first derivatives interpolate with cubic
// Hermite; the second derivative only ever multiplies O(y^2) terms, so
// linear interpolation is plenty there.
struct CoefSeries {
  std::vector<cplx> v, d, dd;

  void resize(std::size_t n) {
    v.assign(n, cplx{});
    d.assign(n, cplx{});
    dd.assign(n, cplx{});
  }
  cplx val(const SeriesBasis& b) const {
    return b.h00 * v[b.i] + (b.h10 * b.h) * d[b.i] + b.h01 * v[b.i + 1] +
           (b.h11 * b.h) * d[b.i + 1];
  }
  cplx dot(const SeriesBasis& b) const {
    return b.h00 * d[b.i] + (b.h10 * b.h) * dd[b.i] + b.h01 * d[b.i + 1] +
           (b.h11 * b.h) * dd[b.i + 1];
  }
  cplx ddot(const SeriesBasis& b) const {
    return (1.0 - b.s) * dd[b.i] + b.s * dd[b.i + 1];
  }
};

// --- axis data ---------------------------------------------------------------

// Geometry sampled at one axis point: the frame and the radial Taylor data of
// q.  q_j below is the j-th y-derivative of q(t, y) at y = 0, obtained by
// matching the radial Jacobi equation against the curvature jet:
//   q2 = -K,  q3 = -K_1,  q4 = -K_2 + K^2,  q5 = -K_3 + 4 K K_1,
// where K_j is the j-th derivative of K along the radial geodesic at y = 0.
struct AxisSample {
  Vec2 x, v, e2;  // gamma, unit gamma-dot, unit normal E2 (chart components)
  double K = 0.0;
  double q2 = 0, q2d = 0, q2dd = 0;  // q2 and its first two t-derivatives
  double q3 = 0, q3d = 0;
  double q4 = 0, q5 = 0;
};

// Exact radial data at one tube point (t fixed, y varying).
struct RadialPoint {
  Vec2 x;       // chart position of the point (t, y)
  Vec2 dx_dy;   // radial velocity d sigma / dy
  Vec2 n;       // parallel transport of gamma-dot along the radial
  double q = 1.0, q_y = 0.0, q_t = 0.0;
};

// Pullback metric jets at (t, 0) from differencing the forward map.  The
// independent q-route is exact; this one exists so the two can disagree
// loudly if either is wrong.
struct FermiMetricJets {
  Mat2 G0, dG, d2G;  // G, dG/dy, d2G/dy2 at y = 0
};

namespace detail_beam {

inline Vec2 gamma_apply(const Christoffels& G, const Vec2& a, const Vec2& b) {
  Vec2 r;
  for (int k = 0; k < 2; ++k) {
    double s = 0.0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) s += G.G[k][i][j] * a[i] * b[j];
    r[k] = s;
  }
  return r;
}

inline double quad_form(const Mat2& m, const Vec2& a, const Vec2& b) {
  return a.x * (m.a * b.x + m.b * b.y) + a.y * (m.c * b.x + m.d * b.y);
}

inline double cubic_form(const std::array<double, 4>& d3, const Vec2& e) {
  return d3[0] * e.x * e.x * e.x + 3.0 * d3[1] * e.x * e.x * e.y +
         3.0 * d3[2] * e.x * e.y * e.y + d3[3] * e.y * e.y * e.y;
}

// Second derivative of a nodal array by differencing the stored first
// derivatives: 4th order inside, one-sided at the edges.
inline std::vector<cplx> fd_second(const std::vector<cplx>& d, double h) {
  const int n = static_cast<int>(d.size());
  std::vector<cplx> dd(n);
  if (n < 5) {
    for (int i = 0; i + 1 < n; ++i) dd[i] = (d[i + 1] - d[i]) / h;
    if (n > 1) dd[n - 1] = dd[n - 2];
    return dd;
  }
  dd[0] = (-3.0 * d[0] + 4.0 * d[1] - d[2]) / (2.0 * h);
  dd[1] = (d[2] - d[0]) / (2.0 * h);
  for (int i = 2; i + 2 < n; ++i)
    dd[i] = (-d[i + 2] + 8.0 * d[i + 1] - 8.0 * d[i - 1] + d[i - 2]) / (12.0 * h);
  dd[n - 2] = (d[n - 1] - d[n - 3]) / (2.0 * h);
  dd[n - 1] = (3.0 * d[n - 1] - 4.0 * d[n - 2] + d[n - 3]) / (2.0 * h);
  return dd;
}

}  // namespace detail_beam

// --- Fermi tube chart ----------------------------------------------------------

class FermiChart {
 public:
  ChartMetric chart;
  GeodesicPath path;
  Coframe frame;        // coframe at gamma(0); F1 is the axis codirection
  double delta = 0.0;   // tube half-width the mesh was built for
  AxisGrid grid;

  // Exact frame and radial Taylor data at parameter t.
  AxisSample axis_state(double t) const {
    AxisSample a;
    const GeodesicEval ge = path.eval(t);
    a.x = ge.x;
    a.v = ge.v;
    Vec2 p = perp(ge.v);  // chart rotation is a g-rotation on conformal charts
    const Mat2 g = chart.metric_at(ge.x);
    const double nrm = std::sqrt(detail_beam::quad_form(g, p, p));
    a.e2 = (sigma_sign_ / nrm) * p;

    const CurvatureJet3 kj = chart.curvature_jet3(a.x);
    const Christoffels Ga = chart.christoffel_at(a.x);
    const auto dGa = chart.christoffel_gradient(a.x);

    const Vec2 gdd = -1.0 * detail_beam::gamma_apply(Ga, a.v, a.v);
    const Vec2 e2d = -1.0 * detail_beam::gamma_apply(Ga, a.v, a.e2);
    const Vec2 sdd = -1.0 * detail_beam::gamma_apply(Ga, a.e2, a.e2);
    Vec2 sddd;
    for (int k = 0; k < 2; ++k) {
      double s = 0.0;
      for (int l = 0; l < 2; ++l)
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j)
            s += dGa[l].G[k][i][j] * a.e2[l] * a.e2[i] * a.e2[j];
      sddd[k] = -s;
    }
    sddd = sddd - 2.0 * detail_beam::gamma_apply(Ga, a.e2, sdd);

    const double K0 = kj.K;
    const double K1 = dot(kj.dK, a.e2);
    const double K2 = detail_beam::quad_form(kj.d2K, a.e2, a.e2) + dot(kj.dK, sdd);
    const double K3 = detail_beam::cubic_form(kj.d3K, a.e2) +
                      3.0 * detail_beam::quad_form(kj.d2K, sdd, a.e2) +
                      dot(kj.dK, sddd);

    a.K = K0;
    a.q2 = -K0;
    a.q2d = -dot(kj.dK, a.v);
    a.q2dd = -(detail_beam::quad_form(kj.d2K, a.v, a.v) + dot(kj.dK, gdd));
    a.q3 = -K1;
    a.q3d = -(detail_beam::quad_form(kj.d2K, a.v, a.e2) + dot(kj.dK, e2d));
    a.q4 = -K2 + K0 * K0;
    a.q5 = -K3 + 4.0 * K0 * K1;
    return a;
  }

  // Fresh radial integration at parameter t, both sides, out to `width`.
  // The state is (x, sigma-dot, n, q, q_y, q_t, q_ty); stops at the extended
  // boundary or just short of a focal point of the tube.
  struct RadialSolve {
    detail::DenseOde<10> up, dn;
    double reach_up = 0.0, reach_dn = 0.0;  // positive magnitudes

    RadialPoint at(double y) const {
      const bool pos = y >= 0.0;
      const auto& D = pos ? up : dn;
      const double u = std::min(std::abs(y), pos ? reach_up : reach_dn);
      const auto S = D.eval(u);
      RadialPoint r;
      r.x = {S[0], S[1]};
      const double sgn = pos ? 1.0 : -1.0;
      r.dx_dy = sgn * Vec2{S[2], S[3]};
      r.n = {S[4], S[5]};
      r.q = S[6];
      r.q_y = sgn * S[7];
      r.q_t = S[8];
      return r;
    }
  };

  RadialSolve radial_exact(double t, double width) const {
    return radial_from(axis_state(t), width);
  }

  // Forward map (t, y) -> chart point, interpolated from the stored columns.
  Vec2 forward(double t, double y) const {
    Vec2 x, xt, xy;
    if (!mesh_eval(t, y, x, xt, xy))
      throw BeamError("fermi forward map: point is outside the stored tube");
    return x;
  }

  // Inverse map via damped Newton on the interpolated forward map, warm
  // started from a handful of nearby columns.  Empty when the point is
  // outside the tube (or outside every Newton basin).
  std::optional<std::pair<double, double>> inverse(const Vec2& x) const {
    if (!chart.in_extended(x)) return std::nullopt;
    int k0 = 0;
    double best = 1e300;
    for (std::size_t i = 0; i < col_x_.size(); ++i) {
      const double d2 = dot(x - col_x_[i], x - col_x_[i]);
      if (d2 < best) {
        best = d2;
        k0 = static_cast<int>(i);
      }
    }
    const int last = static_cast<int>(col_x_.size()) - 1;
    for (const int off : {0, -4, 4, -12, 12}) {
      const int k = std::clamp(k0 + off, 0, last);
      const GeodesicEval ge = path.eval(col_t_[k]);
      const double e2phi = std::exp(2.0 * chart.phi(ge.x));
      Vec2 e2u = perp(ge.v);
      e2u = (sigma_sign_ /
             std::sqrt(detail_beam::quad_form(chart.metric_at(ge.x), e2u, e2u))) *
            e2u;
      const double y0 = e2phi * dot(x - ge.x, e2u);
      const double t0 = col_t_[k] + e2phi * dot(x - ge.x, ge.v);
      if (auto hit = newton_invert(x, t0, y0)) return hit;
      if (off == 0) {
        // nearest-column axis point as a fallback seed
        if (auto hit = newton_invert(x, col_t_[k], 0.0)) return hit;
      }
    }
    return std::nullopt;
  }

  // Pullback metric jets at (t, 0) by differencing the forward map; the
  // mesh interpolant is smooth enough for ~1e-8 here, which is all this
  // cross-check route is for.
  FermiMetricJets metric_fd_jets(double t) const {
    const double hy = 1e-4;
    const double hj = std::min(0.05, delta / 4.0);
    auto G_at = [&](double y) {
      const double ht = 1e-4;
      const Vec2 xt = (forward(t + ht, y) - forward(t - ht, y)) / (2.0 * ht);
      const Vec2 xy = (forward(t, y + hy) - forward(t, y - hy)) / (2.0 * hy);
      const Mat2 g = chart.metric_at(forward(t, y));
      return Mat2{detail_beam::quad_form(g, xt, xt), detail_beam::quad_form(g, xt, xy),
                  detail_beam::quad_form(g, xy, xt), detail_beam::quad_form(g, xy, xy)};
    };
    const Mat2 g0 = G_at(0.0);
    const Mat2 gp = G_at(hj), gm = G_at(-hj), gp2 = G_at(2 * hj), gm2 = G_at(-2 * hj);
    auto comb = [&](auto pick) {
      const double d1 =
          (pick(gm2) - 8.0 * pick(gm) + 8.0 * pick(gp) - pick(gp2)) / (12.0 * hj);
      const double d2 = (-pick(gp2) + 16.0 * pick(gp) - 30.0 * pick(g0) +
                         16.0 * pick(gm) - pick(gm2)) /
                        (12.0 * hj * hj);
      return std::make_pair(d1, d2);
    };
    const auto [da, dda] = comb([](const Mat2& m) { return m.a; });
    const auto [db, ddb] = comb([](const Mat2& m) { return m.b; });
    const auto [dc, ddc] = comb([](const Mat2& m) { return m.c; });
    const auto [dd_, ddd] = comb([](const Mat2& m) { return m.d; });
    return {g0, Mat2{da, db, dc, dd_}, Mat2{dda, ddb, ddc, ddd}};
  }

  // Largest |y| the stored mesh can represent around parameter t.
  double clamp_reach(double t, double y) const {
    const auto [i, s] = col_bracket(t);
    (void)s;
    const auto& ca = cols_[i];
    const auto& cb = cols_[i + 1];
    const double r = (y >= 0.0) ? std::min(ca.reach_up, cb.reach_up)
                                : std::min(ca.reach_dn, cb.reach_dn);
    return (y >= 0.0) ? r : -r;
  }

 private:
  friend FermiChart fermi_chart(const ChartMetric&, const GeodesicPath&,
                                const Coframe&, double);

  struct MeshColumn {
    detail::DenseOde<10> up, dn;
    double reach_up = 0.0, reach_dn = 0.0;
  };

  std::vector<double> col_t_;
  std::vector<Vec2> col_x_;
  std::vector<MeshColumn> cols_;
  double col_h_ = 0.0;
  double sigma_sign_ = 1.0;

  RadialSolve radial_from(const AxisSample& a, double width) const {
    auto rhs = [this](double, const detail::State<10>& S, detail::State<10>& k) {
      const Vec2 x{S[0], S[1]}, v{S[2], S[3]}, n{S[4], S[5]};
      const CurvatureJet kj = chart.curvature_jet(x);
      const Christoffels G = chart.christoffel_at(x);
      const Vec2 vd = -1.0 * detail_beam::gamma_apply(G, v, v);
      const Vec2 nd = -1.0 * detail_beam::gamma_apply(G, v, n);
      k = {v.x,  v.y,  vd.x, vd.y, nd.x,
           nd.y, S[7], -kj.K * S[6],
           S[9], -kj.K * S[8] - dot(kj.dK, n) * S[6] * S[6]};
    };
    auto stop = [this](double, const detail::State<10>& S) {
      return chart.boundary_extended({S[0], S[1]}) >= 0.0 || S[6] <= 0.05;
    };
    detail::OdeOptions opt;
    opt.rel_tol = 1e-11;
    opt.abs_tol = 1e-13;
    opt.h_max = 0.02;
    RadialSolve r;
    const detail::State<10> up0 = {a.x.x, a.x.y, a.e2.x, a.e2.y, a.v.x,
                                   a.v.y, 1.0,   0.0,    0.0,    0.0};
    const detail::State<10> dn0 = {a.x.x,  a.x.y, -a.e2.x, -a.e2.y, a.v.x,
                                   a.v.y,  1.0,   0.0,     0.0,     0.0};
    r.up = detail::integrate<10>(rhs, 0.0, up0, width, opt, stop);
    r.dn = detail::integrate<10>(rhs, 0.0, dn0, width, opt, stop);
    r.reach_up = r.up.t_end();
    r.reach_dn = r.dn.t_end();
    return r;
  }

  std::pair<int, double> col_bracket(double t) const {
    double x = (t - col_t_.front()) / col_h_;
    const int i =
        std::clamp(static_cast<int>(std::floor(x)), 0, static_cast<int>(cols_.size()) - 2);
    return {i, x - i};
  }

  // Residual of the forward map at a clamped iterate; pulls the iterate
  // inside the stored band first so the line search always has a value.
  bool probe(double& t, double& y, Vec2& xm, Vec2& xt, Vec2& xy) const {
    t = std::clamp(t, col_t_.front(), col_t_.back());
    if (!mesh_eval(t, y, xm, xt, xy)) {
      y = 0.95 * clamp_reach(t, y);
      if (!mesh_eval(t, y, xm, xt, xy)) return false;
    }
    return true;
  }

  std::optional<std::pair<double, double>> newton_invert(const Vec2& x, double t,
                                                         double y) const {
    const double tol = 1e-12 * std::max(1.0, norm(x));
    Vec2 xm, xt, xy;
    if (!probe(t, y, xm, xt, xy)) return std::nullopt;
    double res = norm(xm - x);
    for (int it = 0; it < 50; ++it) {
      if (res < tol) return std::make_pair(t, y);
      const Mat2 J{xt.x, xy.x, xt.y, xy.y};
      if (std::abs(J.det()) < 1e-14) return std::nullopt;
      const Vec2 dz = J.inverse() * (xm - x);
      double alpha = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 8; ++ls, alpha *= 0.5) {
        double tn = t - alpha * dz.x, yn = y - alpha * dz.y;
        Vec2 xm2, xt2, xy2;
        if (!probe(tn, yn, xm2, xt2, xy2)) continue;
        const double res2 = norm(xm2 - x);
        if (res2 < res || (ls == 0 && res2 < tol)) {
          t = tn;
          y = yn;
          xm = xm2;
          xt = xt2;
          xy = xy2;
          res = res2;
          moved = true;
          break;
        }
      }
      if (!moved) return std::nullopt;
    }
    return std::nullopt;
  }

  // Forward map value and both partials from the stored columns: cubic
  // Hermite in t (the exact t-derivative q n is stored with each column),
  // linear in t for the y-velocity.
  bool mesh_eval(double t, double y, Vec2& x, Vec2& xt, Vec2& xy) const {
    if (t < col_t_.front() - 1e-12 || t > col_t_.back() + 1e-12) return false;
    const auto [i, s] = col_bracket(t);
    const auto& ca = cols_[i];
    const auto& cb = cols_[i + 1];
    const bool pos = y >= 0.0;
    const double u = std::abs(y);
    if (u > (pos ? std::min(ca.reach_up, cb.reach_up)
                 : std::min(ca.reach_dn, cb.reach_dn)))
      return false;
    const auto Sa = (pos ? ca.up : ca.dn).eval(u);
    const auto Sb = (pos ? cb.up : cb.dn).eval(u);
    const double sgn = pos ? 1.0 : -1.0;
    const Vec2 xa{Sa[0], Sa[1]}, xb{Sb[0], Sb[1]};
    const Vec2 qna = Sa[6] * Vec2{Sa[4], Sa[5]};
    const Vec2 qnb = Sb[6] * Vec2{Sb[4], Sb[5]};
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    const double d00 = (6 * s2 - 6 * s) / col_h_, d10 = 3 * s2 - 4 * s + 1;
    const double d01 = (-6 * s2 + 6 * s) / col_h_, d11 = 3 * s2 - 2 * s;
    x = h00 * xa + (h10 * col_h_) * qna + h01 * xb + (h11 * col_h_) * qnb;
    xt = d00 * xa + d10 * qna + d01 * xb + d11 * qnb;
    xy = sgn * ((1.0 - s) * Vec2{Sa[2], Sa[3]} + s * Vec2{Sb[2], Sb[3]});
    return true;
  }
};

// Builds the tube chart: the column mesh plus a round-trip self test on a
// 50 x 11 sample of the tube (points outside the extended chart are skipped;
// there is nothing to invert there).
inline FermiChart fermi_chart(const ChartMetric& chart, const GeodesicPath& path,
                              const Coframe& frame, double delta) {
  if (!(delta > 0.0)) throw BeamError("fermi_chart: tube width must be positive");
  if (path.trapped())
    throw BeamError("fermi_chart: the axis is trapped; need a boundary-to-boundary geodesic");
  if (norm(frame.base - path.z) > 1e-9)
    throw BeamError("fermi_chart: coframe must sit at the axis anchor point");
  const Mat2 ginv = chart.metric_inv_at(path.z);
  const Vec2 f1_dir = chart.raise(path.z, frame.F1);
  const double align = dot(f1_dir, path.v0) / (norm(f1_dir) * norm(path.v0));
  if (align < 1.0 - 1e-9)
    throw BeamError("fermi_chart: coframe's first covector must point along the axis");
  if (std::abs(co_norm(ginv, frame.F1) - 1.0) > 1e-8 ||
      std::abs(co_norm(ginv, frame.F2) - 1.0) > 1e-8 ||
      std::abs(co_inner(ginv, frame.F1, frame.F2)) > 1e-8)
    throw BeamError("fermi_chart: coframe is not g-orthonormal");

  FermiChart f;
  f.chart = chart;
  f.path = path;
  f.frame = frame;
  f.delta = delta;
  f.grid = AxisGrid::over(-path.t_in_extended(), path.t_out_extended());

  const Vec2 e2_req = chart.raise(path.z, frame.F2);
  f.sigma_sign_ = (dot(perp(path.v0), e2_req) >= 0.0) ? 1.0 : -1.0;

  const double range = f.grid.t_back() - f.grid.t_front();
  const int n_cols =
      std::clamp(static_cast<int>(std::ceil(range / 0.0088)) + 1, 48, 600);
  f.col_h_ = range / (n_cols - 1);
  f.col_t_.resize(n_cols);
  f.col_x_.resize(n_cols);
  f.cols_.resize(n_cols);
  for (int i = 0; i < n_cols; ++i) {
    const double t = f.grid.t_front() + i * f.col_h_;
    f.col_t_[i] = t;
    const AxisSample a = f.axis_state(t);
    f.col_x_[i] = a.x;
    auto rs = f.radial_from(a, delta);
    f.cols_[i].up = std::move(rs.up);
    f.cols_[i].dn = std::move(rs.dn);
    f.cols_[i].reach_up = rs.reach_up;
    f.cols_[i].reach_dn = rs.reach_dn;
  }

  // Round-trip check: forward then inverse across the tube.
  double worst = 0.0, delta_ok = 0.0;
  bool failed = false;
  for (int it = 0; it < 50; ++it) {
    const double t =
        f.grid.t_front() + (it + 0.5) / 50.0 * range;
    for (int iy = 0; iy < 11; ++iy) {
      const double y = -delta + (2.0 * delta) * iy / 10.0;
      Vec2 x, xt, xy;
      if (!f.mesh_eval(t, y, x, xt, xy)) continue;
      if (!f.chart.in_extended(x)) continue;
      const auto inv = f.inverse(x);
      if (!inv) {
        failed = true;
        continue;
      }
      const double gap = norm(f.forward(inv->first, inv->second) - x);
      worst = std::max(worst, gap);
      if (gap > 1e-9)
        failed = true;
      else
        delta_ok = std::max(delta_ok, std::abs(y));
    }
  }
  if (failed)
    throw FermiChartError(
        "fermi_chart: inverse round trip failed at width " + std::to_string(delta) +
            "; largest verified width " + std::to_string(0.9 * delta_ok),
        0.9 * delta_ok);
  (void)worst;
  return f;
}

// Half of the focal-limited tube width: radial geodesics are integrated out
// from a sweep of axis points until the Jacobi factor q collapses (or the
// extended chart ends, which does not count against injectivity).  The
// round-trip check inside fermi_chart backstops this estimate.
inline double estimate_tube_width(const ChartMetric& chart, const GeodesicPath& path) {
  FermiChart probe;  // only axis_state is needed; mesh stays empty
  probe.chart = chart;
  probe.path = path;
  const double cap = chart.extended_radius();
  double w = cap;
  const double t0 = -path.t_in_extended(), t1 = path.t_out_extended();
  for (int i = 0; i < 33; ++i) {
    const double t = t0 + (t1 - t0) * (i + 0.5) / 33.0;
    const auto rs = probe.radial_exact(t, cap);
    for (const auto* side : {&rs.up, &rs.dn}) {
      if (side->nodes.back().x[6] <= 0.051)  // stopped by the focal guard
        w = std::min(w, side->t_end());
    }
  }
  if (w < 1e-3)
    throw BeamError("estimate_tube_width: focal point hugs the axis; no usable tube");
  return w;
}

// --- Riccati phase Hessian -----------------------------------------------------

// H(t) solves Hdot + H^2 = F with F = -K along the axis, via the linear
// substitution H = Ydot / Y, Yddot = F Y, Y(0) = 1, Ydot(0) = H0.  Solving for
// Y keeps the solution global (H blows through infinity at zeros of Y on
// non-simple geometry, and we want to see that happen, not step over it).
struct RiccatiSolution {
  AxisGrid grid;
  std::vector<cplx> Y, Yd, H;
  std::vector<double> F;
  cplx H0{0.0, 1.0};
  double min_im_H = 0.0;

  cplx Y_at(const SeriesBasis& b) const {
    return b.h00 * Y[b.i] + (b.h10 * b.h) * Yd[b.i] + b.h01 * Y[b.i + 1] +
           (b.h11 * b.h) * Yd[b.i + 1];
  }
  cplx Yd_at(const SeriesBasis& b) const {
    return b.h00 * Yd[b.i] + (b.h10 * b.h) * (F[b.i] * Y[b.i]) +
           b.h01 * Yd[b.i + 1] + (b.h11 * b.h) * (F[b.i + 1] * Y[b.i + 1]);
  }
};

inline RiccatiSolution riccati_solve_custom(const AxisGrid& grid,
                                            const std::function<double(double)>& F,
                                            cplx H0 = cplx{0.0, 1.0}) {
  RiccatiSolution r;
  r.grid = grid;
  r.H0 = H0;
  const int n = grid.size();
  r.Y.assign(n, cplx{});
  r.Yd.assign(n, cplx{});
  r.H.assign(n, cplx{});
  r.F.assign(n, 0.0);
  const int i0 = grid.origin();
  r.Y[i0] = 1.0;
  r.Yd[i0] = H0;

  auto step = [&](int from, double h) {
    const double t = grid.t(from);
    const cplx y = r.Y[from], yd = r.Yd[from];
    auto f = [&](double tt, cplx a, cplx b) { return std::make_pair(b, F(tt) * a); };
    const auto [k1a, k1b] = f(t, y, yd);
    const auto [k2a, k2b] = f(t + h / 2, y + h / 2 * k1a, yd + h / 2 * k1b);
    const auto [k3a, k3b] = f(t + h / 2, y + h / 2 * k2a, yd + h / 2 * k2b);
    const auto [k4a, k4b] = f(t + h, y + h * k3a, yd + h * k3b);
    return std::make_pair(y + h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a),
                          yd + h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b));
  };
  for (int i = i0; i + 1 < n; ++i) {
    auto [a, b] = step(i, grid.h);
    r.Y[i + 1] = a;
    r.Yd[i + 1] = b;
  }
  for (int i = i0; i > 0; --i) {
    auto [a, b] = step(i, -grid.h);
    r.Y[i - 1] = a;
    r.Yd[i - 1] = b;
  }
  r.min_im_H = 1e300;
  for (int i = 0; i < n; ++i) {
    r.F[i] = F(grid.t(i));
    if (std::abs(r.Y[i]) < 1e-12)
      throw BeamError("riccati_solve: |Y| fell below 1e-12 (phase Hessian blow-up)");
    r.H[i] = r.Yd[i] / r.Y[i];
    r.min_im_H = std::min(r.min_im_H, r.H[i].imag());
  }
  return r;
}

inline RiccatiSolution riccati_solve(const FermiChart& fermi, cplx H0 = cplx{0.0, 1.0}) {
  const auto* f = &fermi;
  return riccati_solve_custom(
      fermi.grid,
      [f](double t) { return -f->chart.curvature_at(f->path.position(t)); }, H0);
}

// --- amplitude transport ---------------------------------------------------------

// Coefficient functions of the order-N beam on the axis grid.  Order 0 keeps
// only a0 = Y^{-1/2}.  Order 1 adds the cubic/quartic/quintic phase
// corrections th3, th4, th5, the y-corrections a1..a3 of the leading
// amplitude, and the first-order amplitude b0 + b1 y + b2 y^2; each entry is
// the unique decaying choice with zero data at t = 0.
struct BeamCoefficients {
  int order = 0;
  AxisGrid grid;
  CoefSeries H;  // copied out of the Riccati solve, with second derivatives
  CoefSeries a0;
  CoefSeries th3, th4, th5, a1, a2, a3, b0, b1, b2;
  double min_im_H = 0.0;
};

namespace detail_beam {

struct TransportCtx {
  cplx H, Hd, Hdd, Hddd;
  cplx a0, a0d, a0dd;
  double q2, q2d, q2dd, q3, q3d, q4, q5;
};

using TState = std::array<cplx, 9>;  // th3 th4 th5 a1 a2 a3 b0 b1 b2

inline TState transport_rhs(const TransportCtx& c, const TState& S) {
  const cplx th3 = S[0], th4 = S[1], th5 = S[2];
  const cplx a1 = S[3], a2 = S[4], a3 = S[5];
  const cplx b0 = S[6], b1 = S[7], b2 = S[8];
  const cplx H = c.H, Hd = c.Hd;

  // eikonal coefficients at y^3, y^4, y^5
  const cplx th3d = c.q3 - 3.0 * H * th3;
  const cplx th4d = c.q4 - 3.0 * Hd * Hd + 12.0 * c.q2 * Hd - 9.0 * c.q2 * c.q2 -
                    3.0 * th3 * th3 - 4.0 * H * th4;
  const cplx th5d = c.q5 - 10.0 * Hd * th3d + 20.0 * c.q2 * th3d + 20.0 * Hd * c.q3 -
                    30.0 * c.q2 * c.q3 - 10.0 * th3 * th4 - 5.0 * H * th5;

  // transport of the leading amplitude at y^1, y^2, y^3
  const cplx a1d = -0.5 * (3.0 * H * a1 + th3 * c.a0);
  const cplx C2 = 0.5 * c.Hdd - 0.5 * c.q2d + 0.5 * th4 + c.q2 * H;
  const cplx a2d =
      -0.5 * (5.0 * H * a2 + (Hd - 2.0 * c.q2) * c.a0d + 2.0 * th3 * a1 + C2 * c.a0);
  const cplx th3dd = c.q3d - 3.0 * Hd * th3 - 3.0 * H * th3d;
  const cplx C31 = 0.5 * c.Hdd - 0.5 * c.q2d + (5.0 / 6.0) * th4 + c.q2 * H;
  const cplx C30 = (th3dd - c.q3d + th5) / 6.0 + 0.5 * c.q3 * H + 0.5 * c.q2 * th3;
  const cplx a3d = -0.5 * (7.0 * H * a3 + (Hd - 2.0 * c.q2) * a1d +
                           (th3d / 3.0 - (2.0 / 3.0) * c.q3) * c.a0d +
                           3.0 * th3 * a2 + C31 * a1 + C30 * c.a0);

  // first-order amplitude: 2 L[a_{-1}] = i Delta(a0-package) matched at y^0..y^2
  const cplx a1dd =
      -0.5 * (3.0 * Hd * a1 + 3.0 * H * a1d + th3d * c.a0 + th3 * c.a0d);
  const cplx C2d = 0.5 * c.Hddd - 0.5 * c.q2dd + 0.5 * th4d + c.q2d * H + c.q2 * Hd;
  const cplx a2dd = -0.5 * (5.0 * Hd * a2 + 5.0 * H * a2d +
                            (c.Hdd - 2.0 * c.q2d) * c.a0d +
                            (Hd - 2.0 * c.q2) * c.a0dd + 2.0 * th3d * a1 +
                            2.0 * th3 * a1d + C2d * c.a0 + C2 * c.a0d);
  const cplx L0 = c.a0dd + 2.0 * a2;
  const cplx L1 = a1dd + 6.0 * a3 + c.q2 * a1;
  const cplx L2 =
      a2dd - c.q2 * c.a0dd - 0.5 * c.q2d * c.a0d + 0.5 * c.q3 * a1 + 2.0 * c.q2 * a2;
  const cplx b0d = 0.5 * (I * L0 - H * b0);
  const cplx b1d = 0.5 * (I * L1 - 3.0 * H * b1 - th3 * b0);
  const cplx b2d = 0.5 * (I * L2 - 5.0 * H * b2 - (Hd - 2.0 * c.q2) * b0d -
                          2.0 * th3 * b1 - C2 * b0);
  return {th3d, th4d, th5d, a1d, a2d, a3d, b0d, b1d, b2d};
}

}  // namespace detail_beam

inline BeamCoefficients transport_amplitudes(const FermiChart& fermi,
                                             const RiccatiSolution& ricc, int order) {
  if (order != 0 && order != 1)
    throw BeamError("transport_amplitudes: unsupported expansion order N = " +
                    std::to_string(order) + " (only N = 0, 1)");
  BeamCoefficients c;
  c.order = order;
  c.grid = ricc.grid;
  c.min_im_H = ricc.min_im_H;
  const AxisGrid& g = c.grid;
  const int n = g.size();
  for (CoefSeries* s : {&c.H, &c.a0, &c.th3, &c.th4, &c.th5, &c.a1, &c.a2, &c.a3,
                        &c.b0, &c.b1, &c.b2})
    s->resize(n);

  // Axis geometry at the nodes, once.
  std::vector<AxisSample> ax(n);
  for (int i = 0; i < n; ++i) ax[i] = fermi.axis_state(g.t(i));

  // H series with exact derivatives from the Riccati relation.
  for (int i = 0; i < n; ++i) {
    const cplx H = ricc.H[i];
    const cplx Hd = ax[i].q2 - H * H;
    c.H.v[i] = H;
    c.H.d[i] = Hd;
    c.H.dd[i] = ax[i].q2d - 2.0 * H * Hd;
  }

  // a0 = Y^{-1/2}, branch continued outward from Y(0) = 1.
  const int i0 = g.origin();
  c.a0.v[i0] = 1.0;
  for (int i = i0 + 1; i < n; ++i)
    c.a0.v[i] = c.a0.v[i - 1] * std::exp(-0.5 * std::log(ricc.Y[i] / ricc.Y[i - 1]));
  for (int i = i0 - 1; i >= 0; --i)
    c.a0.v[i] = c.a0.v[i + 1] * std::exp(-0.5 * std::log(ricc.Y[i] / ricc.Y[i + 1]));
  for (int i = 0; i < n; ++i) {
    c.a0.d[i] = -0.5 * c.H.v[i] * c.a0.v[i];
    c.a0.dd[i] = (0.25 * c.H.v[i] * c.H.v[i] - 0.5 * c.H.d[i]) * c.a0.v[i];
  }
  if (order == 0) return c;

  // Context at arbitrary t: Y-interpolation plus exact axis geometry.
  auto context = [&](double t) {
    detail_beam::TransportCtx ctx;
    const AxisSample a = fermi.axis_state(t);
    const SeriesBasis b(g, t);
    const cplx Y = ricc.Y_at(b);
    const cplx Yd = ricc.Yd_at(b);
    ctx.H = Yd / Y;
    ctx.Hd = a.q2 - ctx.H * ctx.H;
    ctx.Hdd = a.q2d - 2.0 * ctx.H * ctx.Hd;
    ctx.Hddd = a.q2dd - 2.0 * ctx.Hd * ctx.Hd - 2.0 * ctx.H * ctx.Hdd;
    const int j = (b.s < 0.5) ? b.i : b.i + 1;
    ctx.a0 = c.a0.v[j] * std::exp(-0.5 * std::log(Y / ricc.Y[j]));
    ctx.a0d = -0.5 * ctx.H * ctx.a0;
    ctx.a0dd = (0.25 * ctx.H * ctx.H - 0.5 * ctx.Hd) * ctx.a0;
    ctx.q2 = a.q2;
    ctx.q2d = a.q2d;
    ctx.q2dd = a.q2dd;
    ctx.q3 = a.q3;
    ctx.q3d = a.q3d;
    ctx.q4 = a.q4;
    ctx.q5 = a.q5;
    return ctx;
  };

  auto node_ctx = [&](int i) {
    detail_beam::TransportCtx ctx;
    ctx.H = c.H.v[i];
    ctx.Hd = c.H.d[i];
    ctx.Hdd = c.H.dd[i];
    ctx.Hddd = ax[i].q2dd - 2.0 * ctx.Hd * ctx.Hd - 2.0 * ctx.H * ctx.Hdd;
    ctx.a0 = c.a0.v[i];
    ctx.a0d = c.a0.d[i];
    ctx.a0dd = c.a0.dd[i];
    ctx.q2 = ax[i].q2;
    ctx.q2d = ax[i].q2d;
    ctx.q2dd = ax[i].q2dd;
    ctx.q3 = ax[i].q3;
    ctx.q3d = ax[i].q3d;
    ctx.q4 = ax[i].q4;
    ctx.q5 = ax[i].q5;
    return ctx;
  };

  using detail_beam::TState;
  auto axpy = [](const TState& a, double h, const TState& k) {
    TState r;
    for (int j = 0; j < 9; ++j) r[j] = a[j] + h * k[j];
    return r;
  };
  auto store = [&](int i, const TState& S) {
    const TState d = detail_beam::transport_rhs(node_ctx(i), S);
    CoefSeries* series[9] = {&c.th3, &c.th4, &c.th5, &c.a1, &c.a2,
                             &c.a3,  &c.b0,  &c.b1,  &c.b2};
    for (int j = 0; j < 9; ++j) {
      series[j]->v[i] = S[j];
      series[j]->d[i] = d[j];
    }
  };
  auto sweep = [&](int from, int to, double h) {
    CoefSeries* series[9] = {&c.th3, &c.th4, &c.th5, &c.a1, &c.a2,
                             &c.a3,  &c.b0,  &c.b1,  &c.b2};
    TState S;
    for (int j = 0; j < 9; ++j) S[j] = series[j]->v[from];
    int i = from;
    while (i != to) {
      const double t = g.t(i);
      const TState k1 = detail_beam::transport_rhs(node_ctx(i), S);
      const auto cm = context(t + h / 2);
      const TState k2 = detail_beam::transport_rhs(cm, axpy(S, h / 2, k1));
      const TState k3 = detail_beam::transport_rhs(cm, axpy(S, h / 2, k2));
      const int nxt = i + ((h > 0) ? 1 : -1);
      const TState k4 = detail_beam::transport_rhs(node_ctx(nxt), axpy(S, h, k3));
      for (int j = 0; j < 9; ++j)
        S[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
      i = nxt;
      store(i, S);
    }
  };
  store(i0, TState{});
  sweep(i0, n - 1, g.h);
  sweep(i0, 0, -g.h);

  // Second derivatives for the evaluators: differenced from the stored first
  // derivatives (the smooth exact values, so 4th-order stencils are clean).
  for (CoefSeries* s : {&c.th3, &c.th4, &c.th5, &c.a1, &c.a2, &c.a3, &c.b0, &c.b1,
                        &c.b2})
    s->dd = detail_beam::fd_second(s->d, g.h);
  return c;
}

// --- assembled beam ------------------------------------------------------------

struct GaussianBeam {
  std::shared_ptr<const FermiChart> fermi;
  RiccatiSolution ricc;
  BeamCoefficients coef;
  Cutoff cutoff;  // delta here is the effective support half-width
  int order = 0;
  bool delta_shrunk = false;  // positivity guard tightened the support
};

struct BeamOptions {
  double delta = 0.0;  // 0: half the focal-limited width estimate
  CutoffProfile profile = CutoffProfile::plateau;
  cplx H0{0.0, 1.0};
  ShootOptions shoot = tight_shoot();

  static ShootOptions tight_shoot() {
    ShootOptions s;
    s.ode.rel_tol = 1e-12;
    s.ode.abs_tol = 1e-14;
    s.ode.h_max = 0.002;
    return s;
  }
};

// Width guard: largest y* <= delta with Im Theta >= c y^2 for all |y| <= y*,
// c a quarter of the axis minimum of Im H / 2.  Order 0 never shrinks (the
// phase is exactly quadratic with Im H > 0); the higher corrections are real
// on the axis families here but complex in general, hence the sweep.
inline double positivity_width(const BeamCoefficients& c, double delta) {
  if (c.order == 0) return delta;
  const double cmin = 0.25 * 0.5 * c.min_im_H;
  const int n = c.grid.size();
  double ok = delta;
  for (int i = 0; i < n; i += 8) {
    const double ih = c.H.v[i].imag();
    const double i3 = c.th3.v[i].imag(), i4 = c.th4.v[i].imag(), i5 = c.th5.v[i].imag();
    for (int k = 1; k <= 40; ++k) {
      const double y = delta * k / 40.0;
      for (const double yy : {y, -y}) {
        const double imth = 0.5 * ih * yy * yy + i3 * yy * yy * yy / 6.0 +
                            i4 * yy * yy * yy * yy / 24.0 +
                            i5 * yy * yy * yy * yy * yy / 120.0;
        if (imth < cmin * yy * yy) ok = std::min(ok, std::abs(yy) * 0.975);
      }
    }
  }
  return ok;
}

inline GaussianBeam make_beam(const ChartMetric& chart, const Vec2& z, const Vec2& zeta,
                              int order, const BeamOptions& opts = {}) {
  const Vec2 zhat = chart.normalize_covector(z, zeta);
  GeodesicPath path = shoot(chart, z, zhat, opts.shoot);
  if (path.trapped())
    throw BeamError("make_beam: trapped axis; beams need boundary-to-boundary geodesics");
  const Coframe frame{z, zhat, perp(zhat)};
  const double delta_req =
      opts.delta > 0.0 ? opts.delta : 0.5 * estimate_tube_width(chart, path);

  GaussianBeam beam;
  beam.fermi = std::make_shared<FermiChart>(fermi_chart(chart, path, frame, delta_req));
  beam.ricc = riccati_solve(*beam.fermi, opts.H0);
  beam.coef = transport_amplitudes(*beam.fermi, beam.ricc, order);
  beam.order = order;
  beam.cutoff.profile = opts.profile;
  const double dpos = positivity_width(beam.coef, delta_req);
  beam.cutoff.delta = dpos;
  beam.delta_shrunk = dpos < delta_req;
  return beam;
}

// --- evaluation -----------------------------------------------------------------

// s-independent data of a beam at one chart point: the complex phase and the
// two amplitude layers, cutoff folded in.  The full value is
//   tau^{1/4} exp(i s theta) (amp0 + amp1 / s).
struct BeamPoint {
  bool inside = false;
  double t = 0.0, y = 0.0;
  cplx theta;
  cplx amp0, amp1;
};

struct BeamEval {
  cplx value;
  cplx grad[2];  // chart covector components of the differential
  cplx laplacian;
};

inline BeamPoint beam_point(const GaussianBeam& beam, const Vec2& x) {
  BeamPoint p;
  const auto inv = beam.fermi->inverse(x);
  if (!inv) return p;
  const double t = inv->first, y = inv->second;
  if (std::abs(y) >= beam.cutoff.delta) return p;
  double ch, ch1, ch2;
  beam.cutoff.eval(y, ch, ch1, ch2);
  if (ch == 0.0) return p;

  const auto& c = beam.coef;
  const SeriesBasis b(c.grid, t);
  const cplx H = c.H.val(b);
  const double y2 = y * y;
  p.inside = true;
  p.t = t;
  p.y = y;
  if (beam.order == 0) {
    p.theta = t + 0.5 * H * y2;
    p.amp0 = ch * c.a0.val(b);
    p.amp1 = 0.0;
    return p;
  }
  const cplx th3 = c.th3.val(b), th4 = c.th4.val(b), th5 = c.th5.val(b);
  p.theta = t + 0.5 * H * y2 + th3 * y2 * y / 6.0 + th4 * y2 * y2 / 24.0 +
            th5 * y2 * y2 * y / 120.0;
  p.amp0 = ch * (c.a0.val(b) + c.a1.val(b) * y + c.a2.val(b) * y2 +
                 c.a3.val(b) * y2 * y);
  p.amp1 = ch * (c.b0.val(b) + c.b1.val(b) * y + c.b2.val(b) * y2);
  return p;
}

inline cplx beam_value(const GaussianBeam& beam, cplx s, const Vec2& x) {
  const double tau = s.real();
  if (!(tau > 0.0)) throw BeamError("beam_value: Re s must be positive");
  const BeamPoint p = beam_point(beam, x);
  if (!p.inside) return 0.0;
  return std::pow(tau, 0.25) * std::exp(I * s * p.theta) * (p.amp0 + p.amp1 / s);
}

namespace detail_beam {

// Everything the closed-form derivative assembly needs at one (t, y).
struct FermiDerivs {
  cplx v, v_t, v_y, v_tt, v_yy;
};

// Assemble v and its Fermi partials from interpolated coefficients; `rq`
// carries the exact metric factor q and its derivatives at the point.
inline FermiDerivs fermi_derivs(const GaussianBeam& beam, cplx s, double t, double y,
                                const SeriesBasis& b) {
  const auto& c = beam.coef;
  const double tau = s.real();
  const double y2 = y * y, y3 = y2 * y, y4 = y2 * y2, y5 = y4 * y;

  const cplx H = c.H.val(b), Hd = c.H.dot(b), Hdd = c.H.ddot(b);
  cplx th3{}, th4{}, th5{}, th3d{}, th4d{}, th5d{}, th3dd{}, th4dd{}, th5dd{};
  cplx a1{}, a2{}, a3{}, a1d{}, a2d{}, a3d{}, a1dd{}, a2dd{}, a3dd{};
  cplx b0{}, b1{}, b2{}, b0d{}, b1d{}, b2d{}, b0dd{}, b1dd{}, b2dd{};
  if (beam.order == 1) {
    th3 = c.th3.val(b); th3d = c.th3.dot(b); th3dd = c.th3.ddot(b);
    th4 = c.th4.val(b); th4d = c.th4.dot(b); th4dd = c.th4.ddot(b);
    th5 = c.th5.val(b); th5d = c.th5.dot(b); th5dd = c.th5.ddot(b);
    a1 = c.a1.val(b); a1d = c.a1.dot(b); a1dd = c.a1.ddot(b);
    a2 = c.a2.val(b); a2d = c.a2.dot(b); a2dd = c.a2.ddot(b);
    a3 = c.a3.val(b); a3d = c.a3.dot(b); a3dd = c.a3.ddot(b);
    b0 = c.b0.val(b); b0d = c.b0.dot(b); b0dd = c.b0.ddot(b);
    b1 = c.b1.val(b); b1d = c.b1.dot(b); b1dd = c.b1.ddot(b);
    b2 = c.b2.val(b); b2d = c.b2.dot(b); b2dd = c.b2.ddot(b);
  }
  const cplx a0 = c.a0.val(b), a0d = c.a0.dot(b), a0dd = c.a0.ddot(b);

  const cplx Th = t + 0.5 * H * y2 + th3 * y3 / 6.0 + th4 * y4 / 24.0 + th5 * y5 / 120.0;
  const cplx Th_t =
      1.0 + 0.5 * Hd * y2 + th3d * y3 / 6.0 + th4d * y4 / 24.0 + th5d * y5 / 120.0;
  const cplx Th_tt =
      0.5 * Hdd * y2 + th3dd * y3 / 6.0 + th4dd * y4 / 24.0 + th5dd * y5 / 120.0;
  const cplx Th_y = H * y + 0.5 * th3 * y2 + th4 * y3 / 6.0 + th5 * y4 / 24.0;
  const cplx Th_yy = H + th3 * y + 0.5 * th4 * y2 + th5 * y3 / 6.0;

  const cplx sinv = (beam.order == 1) ? 1.0 / s : cplx{0.0};
  const cplx A = (a0 + a1 * y + a2 * y2 + a3 * y3) + sinv * (b0 + b1 * y + b2 * y2);
  const cplx A_t =
      (a0d + a1d * y + a2d * y2 + a3d * y3) + sinv * (b0d + b1d * y + b2d * y2);
  const cplx A_tt =
      (a0dd + a1dd * y + a2dd * y2 + a3dd * y3) + sinv * (b0dd + b1dd * y + b2dd * y2);
  const cplx A_y = (a1 + 2.0 * a2 * y + 3.0 * a3 * y2) + sinv * (b1 + 2.0 * b2 * y);
  const cplx A_yy = (2.0 * a2 + 6.0 * a3 * y) + sinv * (2.0 * b2);

  double ch, ch1, ch2;
  beam.cutoff.eval(y, ch, ch1, ch2);
  const cplx B = ch * A;
  const cplx B_t = ch * A_t;
  const cplx B_tt = ch * A_tt;
  const cplx B_y = ch1 * A + ch * A_y;
  const cplx B_yy = ch2 * A + 2.0 * ch1 * A_y + ch * A_yy;

  const cplx is = I * s;
  const cplx P = std::pow(tau, 0.25) * std::exp(is * Th);
  FermiDerivs d;
  d.v = P * B;
  d.v_t = P * (is * Th_t * B + B_t);
  d.v_y = P * (is * Th_y * B + B_y);
  d.v_tt = P * ((is * Th_tt + is * Th_t * is * Th_t) * B + 2.0 * is * Th_t * B_t + B_tt);
  d.v_yy = P * ((is * Th_yy + is * Th_y * is * Th_y) * B + 2.0 * is * Th_y * B_y + B_yy);
  return d;
}

inline cplx fermi_laplacian(const FermiDerivs& d, const RadialPoint& rp) {
  const double q = rp.q;
  return d.v_tt / (q * q) - rp.q_t * d.v_t / (q * q * q) + d.v_yy +
         (rp.q_y / q) * d.v_y;
}

}  // namespace detail_beam

inline BeamEval beam_eval(const GaussianBeam& beam, cplx s, const Vec2& x) {
  BeamEval out{};
  const double tau = s.real();
  if (!(tau > 0.0)) throw BeamError("beam_eval: Re s must be positive");
  const auto inv = beam.fermi->inverse(x);
  if (!inv) return out;
  const double t = inv->first, y = inv->second;
  if (std::abs(y) >= beam.cutoff.delta) return out;

  const SeriesBasis b(beam.coef.grid, t);
  const auto d = detail_beam::fermi_derivs(beam, s, t, y, b);
  const auto rs = beam.fermi->radial_exact(t, std::abs(y) + 1e-6);
  const RadialPoint rp = rs.at(y);

  out.value = d.v;
  out.laplacian = detail_beam::fermi_laplacian(d, rp);
  const Vec2 xt = rp.q * rp.n;
  const Mat2 J{xt.x, rp.dx_dy.x, xt.y, rp.dx_dy.y};
  const Mat2 Jin = J.inverse();
  out.grad[0] = d.v_t * Jin.a + d.v_y * Jin.c;
  out.grad[1] = d.v_t * Jin.b + d.v_y * Jin.d;
  return out;
}

// --- residual and norm quadrature ------------------------------------------------

struct ResidualReport {
  double residual = 0.0;   // || (-Delta - s^2) v ||_{L^2(M)}
  double l2_norm = 0.0;    // || v ||_{L^2(M)}
  double rel_error = 0.0;  // refinement disagreement, relative
  bool warned = false;     // true when rel_error > 1%
};

inline ResidualReport residual_norm(const GaussianBeam& beam, cplx s) {
  const double tau = s.real();
  if (!(tau > 0.0)) throw BeamError("residual_norm: Re s must be positive");
  if (!(beam.coef.min_im_H > 0.0))
    throw BeamError("residual_norm: Im H is not positive along the axis");

  const auto& fermi = *beam.fermi;
  const AxisGrid& g = beam.coef.grid;
  const double t0 = g.t_front(), t1 = g.t_back();
  const double delta = beam.cutoff.delta;
  const double sigma = 1.0 / std::sqrt(2.0 * tau * beam.coef.min_im_H);

  const GaussLegendre gl(8);

  // One quadrature pass; ny_split subdivides each y panel.
  auto level = [&](int nt, int ny_split, double& r2, double& v2) {
    r2 = v2 = 0.0;
    for (int p = 0; p < nt; ++p) {
      const double ta = t0 + (t1 - t0) * p / nt;
      const double tb = t0 + (t1 - t0) * (p + 1) / nt;
      for (int a = 0; a < 8; ++a) {
        const double t = 0.5 * (ta + tb) + 0.5 * (tb - ta) * gl.x[a];
        const double wt = 0.5 * (tb - ta) * gl.w[a];
        const auto rs = fermi.radial_exact(t, delta);

        // in-M intervals of y, scanned on the dense radial nodes
        auto intervals = [&](const detail::DenseOde<10>& D, double reach, double sgn) {
          std::vector<std::pair<double, double>> iv;
          double prev_u = 0.0;
          double prev_b = fermi.chart.boundary({D.nodes.front().x[0], D.nodes.front().x[1]});
          double open = (prev_b < 0.0) ? 0.0 : -1.0;
          for (std::size_t k = 1; k < D.nodes.size(); ++k) {
            const double u = std::min(D.nodes[k].t, reach);
            const auto& X = D.nodes[k].x;
            const double bb = fermi.chart.boundary({X[0], X[1]});
            if (prev_b < 0.0 && bb >= 0.0) {
              double lo = prev_u, hi = u;
              for (int bi = 0; bi < 60; ++bi) {
                const double mid = 0.5 * (lo + hi);
                const auto Sm = D.eval(mid);
                (fermi.chart.boundary({Sm[0], Sm[1]}) < 0.0 ? lo : hi) = mid;
              }
              if (open >= 0.0) iv.emplace_back(open, lo);
              open = -1.0;
            } else if (prev_b >= 0.0 && bb < 0.0) {
              double lo = prev_u, hi = u;
              for (int bi = 0; bi < 60; ++bi) {
                const double mid = 0.5 * (lo + hi);
                const auto Sm = D.eval(mid);
                (fermi.chart.boundary({Sm[0], Sm[1]}) >= 0.0 ? lo : hi) = mid;
              }
              open = hi;
            }
            prev_u = u;
            prev_b = bb;
            if (u >= reach) break;
          }
          if (open >= 0.0) iv.emplace_back(open, reach);
          // map to signed y
          for (auto& [lo, hi] : iv) {
            lo *= sgn;
            hi *= sgn;
            if (lo > hi) std::swap(lo, hi);
          }
          return iv;
        };
        auto iv_up = intervals(rs.up, std::min(rs.reach_up, delta), 1.0);
        auto iv_dn = intervals(rs.dn, std::min(rs.reach_dn, delta), -1.0);
        std::vector<std::pair<double, double>> iv = iv_dn;
        iv.insert(iv.end(), iv_up.begin(), iv_up.end());

        const SeriesBasis bas(g, t);
        for (const auto& [ya, yb] : iv) {
          // panel edges adapted to the Gaussian core and the cutoff shoulder
          std::vector<double> edges{ya, yb};
          for (const double e : {-3.0 * sigma, 3.0 * sigma, -0.5 * delta, 0.5 * delta, 0.0})
            if (e > ya + 1e-14 && e < yb - 1e-14) edges.push_back(e);
          std::sort(edges.begin(), edges.end());
          for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
            for (int sp = 0; sp < ny_split; ++sp) {
              const double pa = edges[k] + (edges[k + 1] - edges[k]) * sp / ny_split;
              const double pb =
                  edges[k] + (edges[k + 1] - edges[k]) * (sp + 1) / ny_split;
              for (int q = 0; q < 8; ++q) {
                const double y = 0.5 * (pa + pb) + 0.5 * (pb - pa) * gl.x[q];
                const double wy = 0.5 * (pb - pa) * gl.w[q];
                const RadialPoint rp = rs.at(y);
                const auto d = detail_beam::fermi_derivs(beam, s, t, y, bas);
                const cplx lap = detail_beam::fermi_laplacian(d, rp);
                const cplx R = -lap - s * s * d.v;
                const double w = wt * wy * rp.q;
                r2 += w * std::norm(R);
                v2 += w * std::norm(d.v);
              }
            }
          }
        }
      }
    }
  };

  const double range = t1 - t0;
  const int nt0 = std::clamp(static_cast<int>(std::ceil(range / 0.08)), 16, 48);
  double r2a, v2a, r2b, v2b;
  level(nt0, 1, r2a, v2a);
  level(2 * nt0, 2, r2b, v2b);

  ResidualReport rep;
  rep.residual = std::sqrt(r2b);
  rep.l2_norm = std::sqrt(v2b);
  const double dr = std::abs(std::sqrt(r2b) - std::sqrt(r2a)) /
                    std::max(rep.residual, 1e-300);
  const double dv = std::abs(std::sqrt(v2b) - std::sqrt(v2a)) /
                    std::max(rep.l2_norm, 1e-300);
  rep.rel_error = std::max(dr, dv);
  rep.warned = rep.rel_error > 0.01;
  return rep;
}

// --- distance phase ---------------------------------------------------------------

// psi(x) = d_g(x, p) where p is the backward exit of the geodesic through
// (z, xi) from the extended chart.  The normal chart at p is a two-point
// shooting solver (Newton over the exponential map), so this is a genuine
// distance, not a chart heuristic.
inline double simple_phase(const ChartMetric& chart, const Vec2& z, const Vec2& xi,
                           const Vec2& x) {
  const Vec2 xh = chart.normalize_covector(z, xi);
  const GeodesicPath path = shoot(chart, z, xh);
  if (path.trapped())
    throw BeamError("simple_phase: geodesic is trapped; no entry point to anchor at");
  const Vec2 p = path.position(-path.t_in_extended());
  NormalChart nc(chart, p);
  const Vec2 y = nc.log_point(x);
  return norm(y);
}

}  // namespace beamwf
