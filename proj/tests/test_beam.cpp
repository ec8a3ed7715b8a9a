#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "beamwf/beam.hpp"
#include "support/oracles.hpp"

using namespace beamwf;

namespace {

ChartMetric bump_chart() {
  return ChartMetric::conformal_bump(0.2, {0.15, -0.1}, 0.5, 1.0);
}

GaussianBeam std_beam(const ChartMetric& chart, int order, double delta = 0.45) {
  const Vec2 z{-0.2, 0.05};
  BeamOptions opts;
  opts.delta = delta;
  return make_beam(chart, z, chart.unit_covector(z, 0.15), order, opts);
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  return oracle::loglog_slope(x, y);
}

}  // namespace

TEST_CASE("fermi coordinates on the flat disk are cartesian", "[beam]") {
  const ChartMetric flat = ChartMetric::euclidean(1.0);
  const Vec2 z{-0.2, 0.05};
  const Vec2 zeta = flat.unit_covector(z, 0.15);
  const GeodesicPath path = shoot(flat, z, zeta, BeamOptions::tight_shoot());
  const Coframe frame{z, zeta, perp(zeta)};
  const FermiChart fermi = fermi_chart(flat, path, frame, 0.45);

  const Vec2 d{std::cos(0.15), std::sin(0.15)};
  const Vec2 n{-d.y, d.x};
  std::mt19937 rng(53);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 40; ++i) {
    const double t = -path.t_in() + (path.t_out() + path.t_in()) * u(rng);
    const double y = 0.4 * (2.0 * u(rng) - 1.0);
    const Vec2 x = fermi.forward(t, y);
    CHECK(norm(x - (z + t * d + y * n)) < 1e-10);
    const auto back = fermi.inverse(x);
    REQUIRE(back);
    CHECK(std::abs(back->first - t) < 1e-10);
    CHECK(std::abs(back->second - y) < 1e-10);
  }
}

TEST_CASE("fermi metric is normalized along the axis", "[beam]") {
  const ChartMetric chart = bump_chart();
  const Vec2 z{-0.2, 0.05};
  const Vec2 zeta = chart.unit_covector(z, 0.15);
  const GeodesicPath path = shoot(chart, z, zeta, BeamOptions::tight_shoot());
  const Coframe frame{z, zeta, perp(zeta)};
  const FermiChart fermi = fermi_chart(chart, path, frame, 0.45);

  // pullback metric from the radial solves: G = [g(x_t,x_t), g(x_t,x_y); ...]
  auto G_exact = [&](double t, double y) {
    const auto rs = fermi.radial_exact(t, 0.01);
    const RadialPoint p = rs.at(y);
    const Mat2 g = chart.metric_at(p.x);
    const Vec2 xt = p.q * p.n;
    return Mat2{detail_beam::quad_form(g, xt, xt), detail_beam::quad_form(g, xt, p.dx_dy),
                detail_beam::quad_form(g, p.dx_dy, xt),
                detail_beam::quad_form(g, p.dx_dy, p.dx_dy)};
  };

  for (double t = -0.9 * path.t_in(); t < 0.9 * path.t_out(); t += 0.13) {
    // on the axis the pullback is the identity...
    const Mat2 g0 = G_exact(t, 0.0);
    CHECK(std::abs(g0.a - 1.0) < 1e-10);
    CHECK(std::abs(g0.d - 1.0) < 1e-10);
    CHECK(std::abs(g0.b) < 1e-10);
    // ...and its first transverse derivative vanishes (Richardson clears
    // the cubic metric term from the stencil)
    const double h = 1e-3;
    auto deriv = [&](auto pick) {
      const double full = (pick(G_exact(t, h)) - pick(G_exact(t, -h))) / (2.0 * h);
      const double half = (pick(G_exact(t, h / 2)) - pick(G_exact(t, -h / 2))) / h;
      return (4.0 * half - full) / 3.0;
    };
    CHECK(std::abs(deriv([](const Mat2& m) { return m.a; })) < 1e-7);
    CHECK(std::abs(deriv([](const Mat2& m) { return m.b; })) < 1e-7);
    CHECK(std::abs(deriv([](const Mat2& m) { return m.d; })) < 1e-7);

    // the mesh-difference route is coarse by design; it only has to agree
    // loudly, not finely
    const FermiMetricJets j = fermi.metric_fd_jets(t);
    CHECK(std::abs(j.G0.a - 1.0) < 1e-7);
    CHECK(std::abs(j.G0.d - 1.0) < 1e-7);
    CHECK(std::abs(j.G0.b) < 1e-7);
    CHECK(std::abs(j.dG.a) < 2e-4);
    CHECK(std::abs(j.dG.b) < 2e-4);
    CHECK(std::abs(j.dG.d) < 2e-4);
  }

  // chart -> tube -> chart roundtrip across the whole tube
  for (int it = 0; it < 50; ++it) {
    const double t = -0.95 * path.t_in() + (0.95 * (path.t_out() + path.t_in())) * it / 49.0;
    for (int iy = 0; iy < 11; ++iy) {
      const double y = 0.4 * (2.0 * iy / 10.0 - 1.0);
      const Vec2 x = fermi.forward(t, y);
      if (!chart.in_extended(x)) continue;
      const auto back = fermi.inverse(x);
      REQUIRE(back);
      CHECK(std::abs(back->first - t) < 1e-9);
      CHECK(std::abs(back->second - y) < 1e-9);
    }
  }
}

TEST_CASE("riccati solutions match closed forms", "[beam]") {
  const AxisGrid grid = AxisGrid::over(-1.0, 1.5);
  const cplx H0{0.0, 2.0};  // keep the test away from the H0 = i fixed point

  const RiccatiSolution free = riccati_solve_custom(grid, [](double) { return 0.0; }, H0);
  const RiccatiSolution focus = riccati_solve_custom(grid, [](double) { return -1.0; }, H0);
  const RiccatiSolution defocus = riccati_solve_custom(grid, [](double) { return 1.0; }, H0);
  for (int i = 0; i < grid.size(); ++i) {
    const double t = grid.t(i);
    CHECK(std::abs(free.H[i] - oracle::riccati_free(H0, t)) < 1e-9);
    CHECK(std::abs(focus.H[i] - oracle::riccati_const(H0, -1.0, t)) < 1e-8);
    CHECK(std::abs(defocus.H[i] - oracle::riccati_const(H0, 1.0, t)) < 1e-8);
    CHECK(free.H[i].imag() > 0.0);
    CHECK(focus.H[i].imag() > 0.0);
    CHECK(defocus.H[i].imag() > 0.0);
  }

  // a real initial Hessian has no imaginary part to conserve: the beam
  // machinery downstream must refuse it rather than lose concentration
  BeamOptions real_h0;
  real_h0.delta = 0.45;
  real_h0.H0 = cplx{0.5, 0.0};
  const ChartMetric flat = ChartMetric::euclidean(1.0);
  const GaussianBeam degenerate =
      make_beam(flat, {-0.2, 0.05}, flat.unit_covector({-0.2, 0.05}, 0.15), 0, real_h0);
  CHECK(degenerate.coef.min_im_H <= 0.0);
  CHECK_THROWS_AS(residual_norm(degenerate, cplx{50.0, 0.0}), BeamError);
}

TEST_CASE("imaginary part of H obeys the Wronskian law", "[beam]") {
  // Im H * |Y|^2 is conserved for real F, so positivity is inherited from H0.
  const GaussianBeam beam = std_beam(bump_chart(), 0);
  const auto& r = beam.ricc;
  for (int i = 0; i < r.grid.size(); ++i) {
    CHECK(std::abs(r.H[i].imag() * std::norm(r.Y[i]) - r.H0.imag()) < 1e-7);
  }
  CHECK(beam.coef.min_im_H > 0.0);
}

TEST_CASE("flat-disk amplitude is the classical focusing factor", "[beam]") {
  const GaussianBeam beam = std_beam(ChartMetric::euclidean(1.0), 0);
  const auto& c = beam.coef;
  for (int i = 0; i < c.grid.size(); ++i) {
    const double t = c.grid.t(i);
    const cplx ref = std::pow(cplx{1.0, t}, -0.5);
    CHECK(std::abs(c.a0.v[i] - ref) < 1e-9);
    // |a0|^2 |Y| = 1 ties the amplitude to the Riccati solution
    CHECK(std::abs(std::norm(c.a0.v[i]) * std::abs(beam.ricc.Y[i]) - 1.0) < 1e-9);
  }
}

TEST_CASE("on the axis the beam modulus is the damped amplitude", "[beam]") {
  const double tau = 50.0, lambda = 0.35;
  const cplx s{tau, lambda};

  // flat chart: fully closed form
  {
    const GaussianBeam beam = std_beam(ChartMetric::euclidean(1.0), 0);
    const Vec2 z{-0.2, 0.05};
    const Vec2 d{std::cos(0.15), std::sin(0.15)};
    for (double t : {-0.5, -0.2, 0.0, 0.3, 0.6}) {
      const double got = std::abs(beam_value(beam, s, z + t * d));
      const double ref =
          std::pow(tau, 0.25) * std::pow(1.0 + t * t, -0.25) * std::exp(-lambda * t);
      CHECK(std::abs(got - ref) < 1e-10 * ref);
    }
  }

  // curved chart: the phase is still exactly real on the axis
  {
    const GaussianBeam beam = std_beam(bump_chart(), 0);
    const auto& path = beam.fermi->path;
    for (double t : {-0.4, 0.0, 0.25, 0.55}) {
      const double got = std::abs(beam_value(beam, s, path.position(t)));
      const SeriesBasis b(beam.coef.grid, t);
      const double ref =
          std::pow(tau, 0.25) * std::abs(beam.coef.a0.val(b)) * std::exp(-lambda * t);
      CHECK(std::abs(got - ref) < 1e-9 * ref);
    }
  }
}

TEST_CASE("beam mass neither blows up nor dies as tau grows", "[beam]") {
  const GaussianBeam beam = std_beam(ChartMetric::euclidean(1.0), 0);
  double lo = 1e300, hi = 0.0;
  for (double tau : {25.0, 100.0, 400.0}) {
    const ResidualReport rep = residual_norm(beam, cplx{tau, 0.0});
    lo = std::min(lo, rep.l2_norm);
    hi = std::max(hi, rep.l2_norm);
  }
  CHECK(hi / lo < 3.0);
  CHECK(lo > 0.05);
  CHECK(hi < 20.0);
}

TEST_CASE("transverse profile has the predicted gaussian width", "[beam]") {
  const double tau = 200.0;
  auto measured_std = [&](const GaussianBeam& beam, double t) {
    double m0 = 0.0, m2 = 0.0;
    const double delta = beam.cutoff.delta;
    const int n = 4000;
    for (int i = 0; i <= n; ++i) {
      const double y = -delta + 2.0 * delta * i / n;
      const Vec2 x = beam.fermi->forward(t, y);
      const double a = std::abs(beam_value(beam, cplx{tau, 0.0}, x));
      m0 += a * a;
      m2 += a * a * y * y;
    }
    return std::sqrt(m2 / m0);
  };

  const GaussianBeam flat = std_beam(ChartMetric::euclidean(1.0), 0);
  // H(0) = i, so the width at the waist is exactly (2 tau)^{-1/2}
  CHECK(measured_std(flat, 0.0) ==
        Catch::Approx(1.0 / std::sqrt(2.0 * tau)).epsilon(0.05));

  const GaussianBeam curved = std_beam(bump_chart(), 0);
  for (double t : {0.0, 0.3}) {
    const double imH = curved.coef.H.val(SeriesBasis(curved.coef.grid, t)).imag();
    CHECK(measured_std(curved, t) ==
          Catch::Approx(1.0 / std::sqrt(2.0 * tau * imH)).epsilon(0.05));
  }
}

TEST_CASE("higher truncation order buys a full power of residual decay", "[beam]") {
  const std::vector<double> taus{25.0, 50.0, 100.0, 200.0, 400.0};
  for (const ChartMetric& chart : {ChartMetric::euclidean(1.0), bump_chart()}) {
    // the widest tube the chart can hold; the flat disk takes the full tube
    const double delta = chart.family() == MetricFamily::euclidean ? 1.2 : 0.45;
    double slope[2];
    for (int order : {0, 1}) {
      const GaussianBeam beam = std_beam(chart, order, delta);
      std::vector<double> rel;
      for (double tau : taus) {
        const ResidualReport rep = residual_norm(beam, cplx{tau, 0.0});
        REQUIRE(rep.l2_norm > 0.0);
        rel.push_back(rep.residual / rep.l2_norm);
      }
      slope[order] = fit_slope(taus, rel);
      // residuals must not grow faster than the truncation estimate allows
      CHECK(slope[order] < 1.6);
    }
    INFO("order-0 slope " << slope[0] << ", order-1 slope " << slope[1]);
    CHECK(slope[1] <= slope[0] - 1.0);
  }
}

TEST_CASE("truncated phase nearly solves the eikonal equation", "[beam]") {
  // The Riccati step kills the y^2 eikonal defect, so what is left scales
  // like y^3 on a curved chart.
  const ChartMetric chart = bump_chart();
  const GaussianBeam beam = std_beam(chart, 0);
  const double h = 1e-6;
  auto theta_at = [&](const Vec2& x) { return beam_point(beam, x).theta; };

  std::vector<double> ys{0.05, 0.1, 0.2}, defect;
  for (double y : ys) {
    const Vec2 x = beam.fermi->forward(0.2, y);
    const cplx dx = (theta_at({x.x + h, x.y}) - theta_at({x.x - h, x.y})) / (2.0 * h);
    const cplx dy = (theta_at({x.x, x.y + h}) - theta_at({x.x, x.y - h})) / (2.0 * h);
    const Mat2 gi = chart.metric_inv_at(x);
    const cplx q = gi.a * dx * dx + (gi.b + gi.c) * dx * dy + gi.d * dy * dy;
    defect.push_back(std::abs(q - 1.0));
  }
  CHECK(fit_slope(ys, defect) > 2.7);
}

TEST_CASE("imaginary phase pins the beam to the axis", "[beam]") {
  const GaussianBeam beam = std_beam(bump_chart(), 1);
  CHECK(!beam.delta_shrunk);
  const double c = 0.125 * beam.coef.min_im_H;
  for (double t : {-0.3, 0.0, 0.4}) {
    for (double y : {0.1, 0.25, 0.4}) {
      const BeamPoint p = beam_point(beam, beam.fermi->forward(t, y));
      REQUIRE(p.inside);
      CHECK(p.theta.imag() >= c * y * y);
    }
  }
}

TEST_CASE("the beam is exactly zero outside its tube", "[beam]") {
  const GaussianBeam beam = std_beam(bump_chart(), 1, 0.3);
  const Vec2 z{-0.2, 0.05};
  const Vec2 far[] = {{0.6, -0.6}, {-0.1, 0.7}, z + Vec2{0.0, 0.45}};
  for (const Vec2& x : far) {
    CHECK(beam_value(beam, cplx{50.0, 0.0}, x) == cplx{0.0, 0.0});
    const BeamEval e = beam_eval(beam, cplx{50.0, 0.0}, x);
    CHECK(e.value == cplx{0.0, 0.0});
    CHECK(e.laplacian == cplx{0.0, 0.0});
    CHECK(e.grad[0] == cplx{0.0, 0.0});
    CHECK(e.grad[1] == cplx{0.0, 0.0});
  }
}

TEST_CASE("support width does not leak into the coefficient solves", "[beam]") {
  const ChartMetric chart = bump_chart();
  const GaussianBeam narrow = std_beam(chart, 1, 0.3);
  const GaussianBeam wide = std_beam(chart, 1, 0.45);
  REQUIRE(narrow.coef.grid.size() == wide.coef.grid.size());
  for (int i = 0; i < narrow.coef.grid.size(); ++i) {
    CHECK(narrow.ricc.H[i] == wide.ricc.H[i]);
    CHECK(narrow.coef.a0.v[i] == wide.coef.a0.v[i]);
    CHECK(narrow.coef.th3.v[i] == wide.coef.th3.v[i]);
    CHECK(narrow.coef.b0.v[i] == wide.coef.b0.v[i]);
  }
  // and the values agree bit for bit wherever both cutoffs sit at 1
  const Vec2 z{-0.2, 0.05};
  for (double y : {0.0, 0.05, 0.1}) {
    const Vec2 x = narrow.fermi->forward(0.3, y);
    CHECK(beam_value(narrow, cplx{80.0, 0.0}, x) == beam_value(wide, cplx{80.0, 0.0}, x));
  }
}

TEST_CASE("beam construction and evaluation guard their inputs", "[beam]") {
  const ChartMetric flat = ChartMetric::euclidean(1.0);
  const GaussianBeam beam = std_beam(flat, 0);
  CHECK_THROWS_AS(beam_value(beam, cplx{-5.0, 0.0}, Vec2{0.0, 0.0}), BeamError);
  CHECK_THROWS_AS(beam_value(beam, cplx{0.0, 1.0}, Vec2{0.0, 0.0}), BeamError);
  CHECK_THROWS_AS(residual_norm(beam, cplx{0.0, 0.0}), BeamError);
  CHECK_THROWS_AS(make_beam(flat, {-0.2, 0.05}, {1.0, 0.0}, 2), BeamError);

  // a trapped axis cannot carry a boundary-to-boundary beam
  const ChartMetric cap = ChartMetric::constant_curvature(1.0, 3.0);
  CHECK_THROWS_AS(make_beam(cap, {2.0, 0.0}, cap.unit_covector({2.0, 0.0}, M_PI / 2.0), 0),
                  BeamError);
}

TEST_CASE("distance phase reduces to the euclidean distance", "[beam]") {
  const ChartMetric flat = ChartMetric::euclidean(1.0);
  const Vec2 z{0.1, -0.2};
  const Vec2 xi = flat.unit_covector(z, 0.5);
  const GeodesicPath path = shoot(flat, z, xi);
  const Vec2 p = path.position(-path.t_in_extended());

  std::mt19937 rng(71);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (int i = 0; i < 10; ++i) {
    const Vec2 x{u(rng), u(rng)};
    CHECK(std::abs(simple_phase(flat, z, xi, x) - norm(x - p)) < 1e-9);
  }
}

TEST_CASE("distance phase solves the eikonal equation", "[beam]") {
  const ChartMetric chart = bump_chart();
  const Vec2 z{0.1, -0.2};
  const Vec2 xi = chart.unit_covector(z, 0.5);
  const double h = 1e-5;
  std::mt19937 rng(73);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 6; ++i) {
    const Vec2 x{u(rng), u(rng)};
    const double dx =
        (simple_phase(chart, z, xi, {x.x + h, x.y}) - simple_phase(chart, z, xi, {x.x - h, x.y})) /
        (2.0 * h);
    const double dy =
        (simple_phase(chart, z, xi, {x.x, x.y + h}) - simple_phase(chart, z, xi, {x.x, x.y - h})) /
        (2.0 * h);
    const Mat2 gi = chart.metric_inv_at(x);
    CHECK(std::abs(co_norm(gi, {dx, dy}) - 1.0) < 1e-6);
  }
}

TEST_CASE("distance phase linearizes along the probe covector", "[beam]") {
  // psi(y) - psi(z) - (y - z) . xi = O(|y - z|^2)
  const ChartMetric chart = bump_chart();
  const Vec2 z{0.1, -0.2};
  const Vec2 xi = chart.unit_covector(z, 0.5);
  const double base = simple_phase(chart, z, xi, z);

  std::vector<double> rs{0.02, 0.04, 0.08}, defect;
  for (double r : rs) {
    double worst = 0.0;
    for (double a : {0.3, 1.4, 2.8, 4.4}) {
      const Vec2 y = z + Vec2{r * std::cos(a), r * std::sin(a)};
      const double lin = dot(y - z, xi);
      worst = std::max(worst, std::abs(simple_phase(chart, z, xi, y) - base - lin));
    }
    defect.push_back(worst);
  }
  CHECK(fit_slope(rs, defect) > 1.9);
}
