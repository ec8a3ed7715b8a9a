#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "beamwf/manifold.hpp"
#include "support/oracles.hpp"

using namespace beamwf;

namespace {

// Deterministic sample points inside the chart (and its extension collar).
std::vector<Vec2> sample_points(double radius, int n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec2> pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double r = radius * std::sqrt(u(rng));
    const double a = 2.0 * M_PI * u(rng);
    pts.push_back({r * std::cos(a), r * std::sin(a)});
  }
  return pts;
}

ChartMetric bump_chart() {
  return ChartMetric::conformal_bump(0.2, {0.15, -0.1}, 0.5, 1.0);
}

}  // namespace

TEST_CASE("euclidean chart is flat", "[manifold]") {
  const ChartMetric flat = ChartMetric::euclidean(1.0);
  for (const Vec2& p : sample_points(1.0, 25, 11)) {
    const Mat2 g = flat.metric_at(p);
    CHECK(g.a == 1.0);
    CHECK(g.b == 0.0);
    CHECK(g.c == 0.0);
    CHECK(g.d == 1.0);
    CHECK(flat.sqrt_det_at(p) == 1.0);
    CHECK(flat.curvature_at(p) == 0.0);
    const Christoffels c = flat.christoffel_at(p);
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(c.G[k][i][j] == 0.0);
  }
}

TEST_CASE("factories normalize the metric at the origin", "[manifold]") {
  const ChartMetric charts[] = {
      ChartMetric::euclidean(1.0),
      ChartMetric::constant_curvature(1.0, 1.0),
      ChartMetric::constant_curvature(-0.7, 1.0),
      bump_chart(),
  };
  for (const ChartMetric& chart : charts) {
    const Mat2 g = chart.metric_at({0.0, 0.0});
    INFO("family " << static_cast<int>(chart.family()));
    // The bump is centered away from the origin, so allow its (tiny) tail.
    if (chart.family() == MetricFamily::conformal_bump) {
      CHECK(std::abs(g.a - std::exp(2.0 * chart.phi({0.0, 0.0}))) < 1e-15);
    } else {
      CHECK(g.a == 1.0);
      CHECK(g.d == 1.0);
    }
    CHECK(g.b == 0.0);
    CHECK(g.c == 0.0);
  }
}

TEST_CASE("conformal structure of the metric tables", "[manifold]") {
  const ChartMetric charts[] = {ChartMetric::constant_curvature(1.0, 1.0), bump_chart()};
  for (const ChartMetric& chart : charts) {
    for (const Vec2& p : sample_points(chart.radius(), 40, 17)) {
      const double e2p = std::exp(2.0 * chart.phi(p));
      const Mat2 g = chart.metric_at(p);
      const Mat2 gi = chart.metric_inv_at(p);
      CHECK(std::abs(g.a - e2p) < 1e-15 * e2p);
      CHECK(std::abs(g.d - e2p) < 1e-15 * e2p);
      CHECK(g.b == 0.0);
      CHECK(std::abs(gi.a * g.a - 1.0) < 1e-14);
      CHECK(std::abs(chart.sqrt_det_at(p) - e2p) < 1e-15 * e2p);

      // raise then lower is the identity on covectors
      const Vec2 xi{0.3, -1.1};
      const Vec2 back = chart.lower(p, chart.raise(p, xi));
      CHECK(norm(back - xi) < 1e-14);

      // unit covectors have unit co-norm, and normalizing is idempotent
      const Vec2 uc = chart.unit_covector(p, 0.7);
      CHECK(std::abs(co_norm(gi, uc) - 1.0) < 1e-14);
      const Vec2 nn = chart.normalize_covector(p, chart.normalize_covector(p, xi));
      CHECK(norm(nn - chart.normalize_covector(p, xi)) < 1e-14);
    }
  }
}

TEST_CASE("metric is symmetric positive definite across families", "[manifold]") {
  const ChartMetric charts[] = {
      ChartMetric::euclidean(1.0),
      ChartMetric::constant_curvature(1.0, 1.0),
      ChartMetric::constant_curvature(-0.7, 1.0),
      bump_chart(),
  };
  for (const ChartMetric& chart : charts) {
    for (const Vec2& p : sample_points(chart.extended_radius(), 100, 23)) {
      const Mat2 g = chart.metric_at(p);
      CHECK(g.b == g.c);
      CHECK(g.a > 0.0);
      CHECK(g.a * g.d - g.b * g.c > 0.0);
    }
  }
}

TEST_CASE("christoffels match the finite-difference oracle", "[manifold]") {
  const ChartMetric charts[] = {ChartMetric::constant_curvature(-0.7, 1.0), bump_chart()};
  for (const ChartMetric& chart : charts) {
    auto phi = [&](const Vec2& x) { return chart.phi(x); };
    for (const Vec2& p : sample_points(chart.radius(), 30, 31)) {
      const Christoffels lib = chart.christoffel_at(p);
      const oracle::Christoffel ref = oracle::fd_christoffel(phi, p);
      const Christoffels fd = chart.christoffel_fd(p);
      for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) {
            INFO("k=" << k << " i=" << i << " j=" << j << " at (" << p.x << "," << p.y
                      << ")");
            CHECK(lib.G[k][i][j] == lib.G[k][j][i]);          // symmetry is structural
            CHECK(std::abs(lib.G[k][i][j] - ref.g[k][i][j]) < 2e-9);
            CHECK(std::abs(lib.G[k][i][j] - fd.G[k][i][j]) < 1e-8);
          }
    }
  }
}

TEST_CASE("christoffel table follows the gradient of the conformal factor", "[manifold]") {
  // For g = e^{2 phi} I the whole table is built from d phi:
  // G^1_11 = d1, G^1_12 = d2, G^1_22 = -d1, G^2_11 = -d2, G^2_12 = d1, G^2_22 = d2.
  const ChartMetric chart = bump_chart();
  const double h = 1e-6;
  for (const Vec2& p : sample_points(chart.radius(), 20, 37)) {
    const double d1 = (chart.phi({p.x + h, p.y}) - chart.phi({p.x - h, p.y})) / (2 * h);
    const double d2 = (chart.phi({p.x, p.y + h}) - chart.phi({p.x, p.y - h})) / (2 * h);
    const Christoffels c = chart.christoffel_at(p);
    CHECK(std::abs(c.G[0][0][0] - d1) < 1e-9);
    CHECK(std::abs(c.G[0][0][1] - d2) < 1e-9);
    CHECK(std::abs(c.G[0][1][1] + d1) < 1e-9);
    CHECK(std::abs(c.G[1][0][0] + d2) < 1e-9);
    CHECK(std::abs(c.G[1][0][1] - d1) < 1e-9);
    CHECK(std::abs(c.G[1][1][1] - d2) < 1e-9);
  }
}

TEST_CASE("curvature agrees with closed forms and the finite-difference route",
          "[manifold]") {
  for (double K : {1.0, -0.7}) {
    const ChartMetric chart = ChartMetric::constant_curvature(K, 1.0);
    for (const Vec2& p : sample_points(chart.radius(), 30, 41)) {
      CHECK(std::abs(chart.curvature_at(p) - K) < 1e-12);
    }
  }
  const ChartMetric chart = bump_chart();
  auto phi = [&](const Vec2& x) { return chart.phi(x); };
  for (const Vec2& p : sample_points(chart.radius(), 30, 43)) {
    CHECK(std::abs(chart.curvature_at(p) - oracle::fd_curvature(phi, p)) < 2e-5);
  }
}

TEST_CASE("curvature jet derivatives match finite differences of the value",
          "[manifold]") {
  const ChartMetric chart = bump_chart();
  const double h = 1e-5;
  for (const Vec2& p : sample_points(chart.radius(), 10, 47)) {
    const CurvatureJet j = chart.curvature_jet(p);
    const double dx =
        (chart.curvature_at({p.x + h, p.y}) - chart.curvature_at({p.x - h, p.y})) / (2 * h);
    const double dy =
        (chart.curvature_at({p.x, p.y + h}) - chart.curvature_at({p.x, p.y - h})) / (2 * h);
    CHECK(std::abs(j.dK.x - dx) < 1e-5);
    CHECK(std::abs(j.dK.y - dy) < 1e-5);
  }
}

TEST_CASE("disk integration hits exact areas and is linear", "[manifold]") {
  const ChartMetric flat = ChartMetric::euclidean(1.0);
  const DiskRegion disk{{0.0, 0.0}, 1.0};

  const IntegrateResult area = integrate(flat, disk, [](Vec2) { return cplx{1.0, 0.0}; });
  CHECK(area.converged);
  CHECK(std::abs(area.value - cplx{M_PI, 0.0}) < 1e-10);

  // x^2 over the unit disk: pi/4
  const IntegrateResult second =
      integrate(flat, disk, [](Vec2 p) { return cplx{p.x * p.x, 0.0}; });
  CHECK(std::abs(second.value - cplx{M_PI / 4.0, 0.0}) < 1e-10);

  auto f = [](Vec2 p) { return cplx{std::cos(3.0 * p.x), std::sin(2.0 * p.y)}; };
  auto g = [](Vec2 p) { return cplx{p.x * p.y, std::exp(p.x)}; };
  const cplx fa = integrate(flat, disk, f).value;
  const cplx ga = integrate(flat, disk, g).value;
  const cplx combo =
      integrate(flat, disk, [&](Vec2 p) { return 2.0 * f(p) - 0.5 * g(p); }).value;
  CHECK(std::abs(combo - (2.0 * fa - 0.5 * ga)) < 1e-12);
}

TEST_CASE("disk integration self-refines on curved charts", "[manifold]") {
  const ChartMetric chart = bump_chart();
  const DiskRegion disk{{0.1, 0.0}, 0.8};
  auto f = [](Vec2 p) { return cplx{std::cos(4.0 * p.x) * p.y, std::sin(3.0 * p.y)}; };
  const IntegrateResult coarse = integrate(chart, disk, f, 12);
  const IntegrateResult fine = integrate(chart, disk, f, 48);
  CHECK(fine.converged);
  CHECK(std::abs(coarse.value - fine.value) < 1e-9);
  // the reported estimate bounds the actual refinement error
  CHECK(std::abs(coarse.value - fine.value) <= coarse.error_estimate + 1e-12);

  // doubling the radial nodes should beat fourth-order decay on smooth data
  const double e6 = std::abs(integrate(chart, disk, f, 6).value - fine.value);
  const double e12 = std::abs(integrate(chart, disk, f, 12).value - fine.value);
  CHECK((e12 < e6 / 16.0 || e12 < 1e-12));
}

TEST_CASE("chart construction rejects bad parameters", "[manifold]") {
  CHECK_THROWS_AS(ChartMetric::euclidean(0.0), std::invalid_argument);
  CHECK_THROWS_AS(ChartMetric::euclidean(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(ChartMetric::conformal_bump(0.2, {0.0, 0.0}, 0.0, 1.0),
                  std::invalid_argument);
  // negative curvature needs the extended chart inside the conformal disk
  CHECK_THROWS_AS(ChartMetric::constant_curvature(-1.0, 2.0), std::invalid_argument);
  CHECK_NOTHROW(ChartMetric::constant_curvature(-1.0, 1.5));
}

TEST_CASE("boundary bookkeeping", "[manifold]") {
  const ChartMetric chart = ChartMetric::euclidean(1.0);
  CHECK(chart.boundary({0.0, 0.0}) == -1.0);
  CHECK(chart.boundary({1.0, 0.0}) == 0.0);
  CHECK(chart.in_domain({0.5, 0.5}));
  CHECK(!chart.in_domain({0.9, 0.9}));
  CHECK(chart.in_extended({1.05, 0.0}));
  CHECK(!chart.in_extended({1.2, 0.0}));
  const Vec2 gb = chart.boundary_gradient({0.3, -0.4});
  CHECK(gb.x == 0.6);
  CHECK(gb.y == -0.8);
}
