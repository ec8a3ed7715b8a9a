#pragma once

// Chart-based 2D Riemannian metrics on a disk domain.
//
// Every supported family is conformal, g = e^{2 phi} I on the chart, with phi
// available as an exact degree-4 Taylor jet. That one design choice buys exact
// Christoffels (first derivatives of phi), exact Gauss curvature
// K = -e^{-2 phi} (Laplacian phi), and exact first/second chart derivatives of
// K, which the beam coefficient ODEs consume. The boundary is the chart circle
// b(x) = |x|^2 - R^2; an inflated copy (factor `extension`) hosts the
// nontangential extension of geodesics past the boundary.

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "beamwf/detail/algebra.hpp"
#include "beamwf/detail/jet.hpp"

namespace beamwf {

enum class MetricFamily { euclidean, constant_curvature, conformal_bump };

struct Christoffels {
  // G[k][i][j] = Gamma^k_{ij}, symmetric in (i, j).
  double G[2][2][2] = {};
};

struct CurvatureJet {
  double K = 0.0;
  Vec2 dK;    // chart partials of K
  Mat2 d2K;   // chart Hessian of K
};

struct CurvatureJet3 {
  double K = 0.0;
  Vec2 dK;
  Mat2 d2K;
  std::array<double, 4> d3K = {};  // {K_xxx, K_xxy, K_xyy, K_yyy}
};

class ChartMetric {
 public:
  using Jet = detail::Jet2<4>;

  static ChartMetric euclidean(double radius) {
    ChartMetric m;
    m.family_ = MetricFamily::euclidean;
    m.radius_ = radius;
    m.validate();
    return m;
  }

  static ChartMetric constant_curvature(double K, double radius) {
    ChartMetric m;
    m.family_ = MetricFamily::constant_curvature;
    m.K_ = K;
    m.radius_ = radius;
    m.validate();
    return m;
  }

  static ChartMetric conformal_bump(double amplitude, Vec2 center, double width,
                                    double radius) {
    ChartMetric m;
    m.family_ = MetricFamily::conformal_bump;
    m.amp_ = amplitude;
    m.center_ = center;
    m.width_ = width;
    m.radius_ = radius;
    m.validate();
    return m;
  }

  MetricFamily family() const { return family_; }
  double radius() const { return radius_; }
  double extended_radius() const { return radius_ * extension_; }
  double curvature_param() const { return K_; }
  double bump_amplitude() const { return amp_; }
  Vec2 bump_center() const { return center_; }
  double bump_width() const { return width_; }

  // --- conformal factor ----------------------------------------------------

  Jet phi_jet(const Vec2& p) const { return phi_jet_deg<4>(p); }

  // Same factor carried to total degree D; D=5 feeds the third curvature
  // derivatives that the quintic beam phase correction needs.
  template <int D>
  detail::Jet2<D> phi_jet_deg(const Vec2& p) const {
    using J = detail::Jet2<D>;
    const J X = J::var_u(p.x), Y = J::var_v(p.y);
    switch (family_) {
      case MetricFamily::euclidean:
        return J::constant(0.0);
      case MetricFamily::constant_curvature: {
        const J u = X * X + Y * Y;
        return -((u * (K_ / 4.0) + 1.0).log());
      }
      case MetricFamily::conformal_bump: {
        const J dx = X - center_.x, dy = Y - center_.y;
        const J q = (dx * dx + dy * dy) * (-1.0 / (width_ * width_));
        return q.exp() * amp_;
      }
    }
    throw std::logic_error("unreachable metric family");
  }

  double phi(const Vec2& p) const {
    // Cheap scalar path, no jet coefficients.
    switch (family_) {
      case MetricFamily::euclidean:
        return 0.0;
      case MetricFamily::constant_curvature:
        return -std::log(1.0 + 0.25 * K_ * dot(p, p));
      case MetricFamily::conformal_bump: {
        const Vec2 d = p - center_;
        return amp_ * std::exp(-dot(d, d) / (width_ * width_));
      }
    }
    return 0.0;
  }

  // --- metric tensor ---------------------------------------------------------

  Mat2 metric_at(const Vec2& p) const { return Mat2::scale(std::exp(2.0 * phi(p))); }
  Mat2 metric_inv_at(const Vec2& p) const {
    return Mat2::scale(std::exp(-2.0 * phi(p)));
  }
  double sqrt_det_at(const Vec2& p) const { return std::exp(2.0 * phi(p)); }

  // Christoffels of e^{2 phi} I: Gamma^k_{ij} = d_ik phi_j + d_jk phi_i - d_ij phi_k.
  Christoffels christoffel_at(const Vec2& p) const {
    const Jet j = phi_jet(p);
    const Vec2 dphi = j.gradient();
    return christoffel_from_dphi(dphi);
  }

  // Finite-difference route (central differences of the metric plus one
  // Richardson sweep). Kept as an independent cross-check of the jet path.
  Christoffels christoffel_fd(const Vec2& p, double h = 1e-4) const {
    auto one = [&](double step) {
      double dg[2][2][2];  // dg[l][i][j] = d_l g_{ij}
      for (int l = 0; l < 2; ++l) {
        Vec2 pp = p, pm = p;
        pp[l] += step;
        pm[l] -= step;
        const Mat2 gp = metric_at(pp), gm = metric_at(pm);
        dg[l][0][0] = (gp.a - gm.a) / (2 * step);
        dg[l][0][1] = (gp.b - gm.b) / (2 * step);
        dg[l][1][0] = (gp.c - gm.c) / (2 * step);
        dg[l][1][1] = (gp.d - gm.d) / (2 * step);
      }
      const Mat2 ginv = metric_inv_at(p);
      const double gi[2][2] = {{ginv.a, ginv.b}, {ginv.c, ginv.d}};
      Christoffels c;
      for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) {
            double s = 0.0;
            for (int l = 0; l < 2; ++l)
              s += gi[k][l] * (dg[i][l][j] + dg[j][i][l] - dg[l][i][j]);
            c.G[k][i][j] = 0.5 * s;
          }
      return c;
    };
    const Christoffels ch = one(h), ch2 = one(h / 2);
    Christoffels out;
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          out.G[k][i][j] = (4.0 * ch2.G[k][i][j] - ch.G[k][i][j]) / 3.0;
    return out;
  }

  // --- curvature -------------------------------------------------------------

  double curvature_at(const Vec2& p) const { return curvature_jet(p).K; }

  CurvatureJet curvature_jet(const Vec2& p) const {
    const Jet j = phi_jet(p);
    const Jet lap = j.d_u().d_u() + j.d_v().d_v();  // valid through degree 2
    const Jet K = (j * -2.0).exp() * lap * -1.0;
    CurvatureJet out;
    out.K = K.value();
    out.dK = K.gradient();
    out.d2K = K.hessian();
    return out;
  }

  // Curvature carried one degree further: value, gradient, Hessian and the
  // four third partials {K_xxx, K_xxy, K_xyy, K_yyy}.
  CurvatureJet3 curvature_jet3(const Vec2& p) const {
    using J5 = detail::Jet2<5>;
    const J5 j = phi_jet_deg<5>(p);
    const auto lap = j.d_u().d_u() + j.d_v().d_v();  // content valid through degree 3
    const auto K = (j * -2.0).exp() * lap * -1.0;
    CurvatureJet3 out;
    out.K = K.value();
    out.dK = K.gradient();
    out.d2K = K.hessian();
    out.d3K = K.third();
    return out;
  }

  // Partial derivatives of the Christoffel table: dG[l] = d Gamma / d x_l.
  // The table is linear in d phi, so differentiating swaps in the Hessian rows.
  std::array<Christoffels, 2> christoffel_gradient(const Vec2& p) const {
    const Jet j = phi_jet(p);
    const Mat2 h = j.hessian();
    return {christoffel_from_dphi({h.a, h.b}), christoffel_from_dphi({h.c, h.d})};
  }

  // --- boundary ----------------------------------------------------------------

  double boundary(const Vec2& p) const { return dot(p, p) - radius_ * radius_; }
  double boundary_extended(const Vec2& p) const {
    const double r = extended_radius();
    return dot(p, p) - r * r;
  }
  Vec2 boundary_gradient(const Vec2& p) const { return 2.0 * p; }
  bool in_domain(const Vec2& p) const { return boundary(p) <= 0.0; }
  bool in_extended(const Vec2& p) const { return boundary_extended(p) <= 0.0; }

  // Upper bound for the conformal stretch over the extended chart.
  double conformal_sup() const {
    switch (family_) {
      case MetricFamily::euclidean:
        return 1.0;
      case MetricFamily::constant_curvature: {
        if (K_ >= 0.0) return 1.0;
        const double r = extended_radius();
        return 1.0 / (1.0 + 0.25 * K_ * r * r);
      }
      case MetricFamily::conformal_bump:
        return std::exp(std::max(amp_, 0.0));
    }
    return 1.0;
  }

  // Crude upper bound on the Riemannian diameter of the extended chart.
  double length_scale() const { return 2.0 * extended_radius() * conformal_sup(); }

  // --- covector helpers --------------------------------------------------------

  // Unit covector at p whose chart direction makes `angle` with the x-axis.
  Vec2 unit_covector(const Vec2& p, double angle) const {
    const double s = std::exp(phi(p));
    return {s * std::cos(angle), s * std::sin(angle)};
  }
  Vec2 normalize_covector(const Vec2& p, const Vec2& xi) const {
    const double n = co_norm(metric_inv_at(p), xi);
    if (n == 0.0) throw std::invalid_argument("normalize_covector: zero covector");
    return xi / n;
  }
  Vec2 raise(const Vec2& p, const Vec2& xi) const { return metric_inv_at(p) * xi; }
  Vec2 lower(const Vec2& p, const Vec2& v) const { return metric_at(p) * v; }

 private:
  MetricFamily family_ = MetricFamily::euclidean;
  double radius_ = 1.0;
  double extension_ = 1.1;
  double K_ = 0.0;          // constant_curvature
  double amp_ = 0.0;        // conformal_bump
  Vec2 center_{0.0, 0.0};   // conformal_bump
  double width_ = 1.0;      // conformal_bump

  static Christoffels christoffel_from_dphi(const Vec2& dphi) {
    Christoffels c;
    const double p1 = dphi.x, p2 = dphi.y;
    c.G[0][0][0] = p1;
    c.G[0][0][1] = c.G[0][1][0] = p2;
    c.G[0][1][1] = -p1;
    c.G[1][0][0] = -p2;
    c.G[1][0][1] = c.G[1][1][0] = p1;
    c.G[1][1][1] = p2;
    return c;
  }

  void validate() const {
    if (!(radius_ > 0.0)) throw std::invalid_argument("ChartMetric: radius must be positive");
    if (family_ == MetricFamily::constant_curvature && K_ < 0.0) {
      const double r = extended_radius();
      if (1.0 + 0.25 * K_ * r * r <= 0.0)
        throw std::invalid_argument(
            "ChartMetric: negative-curvature chart must satisfy R*1.1 < 2/sqrt(-K)");
    }
    if (family_ == MetricFamily::conformal_bump && !(width_ > 0.0))
      throw std::invalid_argument("ChartMetric: bump width must be positive");
  }
};

// --- quadrature ------------------------------------------------------------------

struct GaussLegendre {
  std::vector<double> x, w;  // nodes/weights on [-1, 1]

  explicit GaussLegendre(int n) : x(n), w(n) {
    // Newton on P_n with the usual Chebyshev-like initial guesses.
    for (int i = 0; i < n; ++i) {
      double t = std::cos(M_PI * (i + 0.75) / (n + 0.5));
      double p0, p1, dp;
      for (int it = 0; it < 100; ++it) {
        p0 = 1.0;
        p1 = t;
        for (int k = 2; k <= n; ++k) {
          const double pk = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = pk;
        }
        dp = n * (t * p1 - p0) / (t * t - 1.0);
        const double dt = p1 / dp;
        t -= dt;
        if (std::abs(dt) < 1e-15) break;
      }
      x[i] = t;
      w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
  }
};

struct DiskRegion {
  Vec2 center{0.0, 0.0};
  double radius = 1.0;
};

struct IntegrateResult {
  cplx value{0.0, 0.0};
  double error_estimate = 0.0;
  bool converged = true;
  int nodes = 0;
};

// Integral of `f` against the metric volume over a disk region, radial
// Gauss-Legendre times periodic trapezoid, with one node-doubling refinement
// supplying the error estimate.
inline IntegrateResult integrate(const ChartMetric& chart, const DiskRegion& region,
                                 const std::function<cplx(Vec2)>& f,
                                 int n_radial = 24, double tol = 1e-9) {
  auto level = [&](int nr) {
    const GaussLegendre gl(nr);
    const int nt = 2 * nr + 8;
    cplx acc{0.0, 0.0};
    for (int i = 0; i < nr; ++i) {
      const double r = 0.5 * region.radius * (gl.x[i] + 1.0);
      const double wr = 0.5 * region.radius * gl.w[i];
      for (int j = 0; j < nt; ++j) {
        const double th = 2.0 * M_PI * j / nt;
        const Vec2 p = region.center + Vec2{r * std::cos(th), r * std::sin(th)};
        acc += f(p) * chart.sqrt_det_at(p) * (wr * r * (2.0 * M_PI / nt));
      }
    }
    return acc;
  };
  IntegrateResult out;
  const cplx coarse = level(n_radial);
  const cplx fine = level(2 * n_radial);
  out.value = fine;
  out.error_estimate = std::abs(fine - coarse);
  out.nodes = 2 * n_radial * (4 * n_radial + 8);
  out.converged = out.error_estimate <= tol * (1.0 + std::abs(fine));
  return out;
}

}  // namespace beamwf
