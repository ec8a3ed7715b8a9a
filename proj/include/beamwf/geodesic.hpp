#pragma once

// Unit-speed geodesics of a ChartMetric, shot from an interior point in both
// time directions until they leave the inflated chart. On top of the dense
// trajectory this header provides the three usability scans (boundary angle,
// conjugate points, self-intersections) and the combined su_check verdict
// that the probe-construction layer consumes.
//
// Time convention: t = 0 at the launch point z, forward along +zeta^sharp and
// backward along -zeta^sharp. t_boundary/t_extended are stored as positive
// magnitudes per side; the in-chart segment is [-exit_bwd.t_boundary,
// +exit_fwd.t_boundary].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "beamwf/detail/algebra.hpp"
#include "beamwf/detail/ode.hpp"
#include "beamwf/manifold.hpp"

namespace beamwf {

struct GeodesicEval {
  Vec2 x;  // chart position
  Vec2 v;  // chart velocity d gamma / dt
};

struct ExitData {
  bool trapped = false;     // never reached the inflated boundary in time
  double t_boundary = 0.0;  // |t| of the first b = 0 crossing
  double t_extended = 0.0;  // |t| of the first inflated-boundary crossing
  Vec2 x;                   // state at the b = 0 crossing
  Vec2 v;                   // true path velocity there (forward orientation)
  double angle = 0.0;       // angle between v and the boundary, radians
  bool nontangential = false;
};

namespace detail {

// d/dt (x, v) for the geodesic flow of a conformal metric.
template <class Chart>
inline State<4> geodesic_rhs(const Chart& chart, const State<4>& s) {
  const Vec2 x{s[0], s[1]}, v{s[2], s[3]};
  const Vec2 dphi = chart.phi_jet(x).gradient();
  const double p1 = dphi.x, p2 = dphi.y;
  const double a1 = -(p1 * v.x * v.x + 2.0 * p2 * v.x * v.y - p1 * v.y * v.y);
  const double a2 = -(-p2 * v.x * v.x + 2.0 * p1 * v.x * v.y + p2 * v.y * v.y);
  return {v.x, v.y, a1, a2};
}

// Bisect f(t) = 0 on [lo, hi] with f(lo) < 0 <= f(hi), to ~1e-13 in t.
template <class F>
inline double bisect_time(F&& f, double lo, double hi) {
  for (int it = 0; it < 200 && (hi - lo) > 1e-13 * std::max(1.0, std::abs(hi));
       ++it) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

struct ShootOptions {
  double t_max_factor = 10.0;  // horizon = factor * chart length scale
  detail::OdeOptions ode;      // defaults: rtol 1e-10, atol 1e-12, h_max 5e-3
};

class GeodesicPath {
 public:
  ChartMetric chart;
  Vec2 z;                      // launch point
  Vec2 v0;                     // launch velocity (g-unit)
  detail::DenseOde<4> fwd;     // parameter t >= 0
  detail::DenseOde<4> bwd;     // parameter s = -t >= 0, velocity stored as -v
  ExitData exit_fwd, exit_bwd;

  GeodesicEval eval(double t) const {
    if (t >= 0.0) {
      const auto s = fwd.eval(t);
      return {{s[0], s[1]}, {s[2], s[3]}};
    }
    const auto s = bwd.eval(-t);
    return {{s[0], s[1]}, {-s[2], -s[3]}};
  }
  Vec2 position(double t) const { return eval(t).x; }
  Vec2 velocity(double t) const { return eval(t).v; }

  double t_out() const { return exit_fwd.t_boundary; }
  double t_in() const { return exit_bwd.t_boundary; }
  double t_out_extended() const { return exit_fwd.t_extended; }
  double t_in_extended() const { return exit_bwd.t_extended; }
  bool trapped() const { return exit_fwd.trapped || exit_bwd.trapped; }
};

// Angle between a velocity and the boundary circle at a boundary point,
// measured with the metric: asin of the normal component of the g-unit
// velocity against the g-unit outward normal.
inline double exit_angle(const ChartMetric& chart, const Vec2& x, const Vec2& v) {
  const Mat2 g = chart.metric_at(x);
  Vec2 nu = x;  // chart outward normal of |x|^2 - R^2, any positive scale
  const double nn = std::sqrt(dot(nu, g * nu));
  const double vn = std::sqrt(dot(v, g * v));
  if (nn == 0.0 || vn == 0.0) return 0.0;
  const double s = std::abs(dot(v, g * nu)) / (nn * vn);
  return std::asin(std::min(1.0, s));
}

// Shoot the geodesic with initial unit covector `zeta` at interior point `z`,
// both directions, out through the inflated boundary (or until the horizon,
// which marks the side as trapped).
inline GeodesicPath shoot(const ChartMetric& chart, const Vec2& z, const Vec2& zeta,
                          const ShootOptions& opt = {}) {
  if (!(chart.boundary(z) < 0.0))
    throw std::invalid_argument("shoot: launch point must be interior");
  const Vec2 zhat = chart.normalize_covector(z, zeta);
  const Vec2 v0 = chart.raise(z, zhat);
  const double t_max = opt.t_max_factor * chart.length_scale();

  GeodesicPath path;
  path.chart = chart;
  path.z = z;
  path.v0 = v0;

  auto rhs = [&chart](double, const detail::State<4>& s, detail::State<4>& k) {
    k = detail::geodesic_rhs(chart, s);
  };
  auto outside = [&chart](double, const detail::State<4>& s) {
    return chart.boundary_extended({s[0], s[1]}) >= 0.0;
  };

  auto run_side = [&](const Vec2& vinit, detail::DenseOde<4>& dense, ExitData& exit,
                      double orientation) {
    dense = detail::integrate<4>(rhs, 0.0, {z.x, z.y, vinit.x, vinit.y}, t_max,
                                 opt.ode, outside);
    auto b_of = [&](double t) {
      const auto s = dense.eval(t);
      return chart.boundary({s[0], s[1]});
    };
    auto bext_of = [&](double t) {
      const auto s = dense.eval(t);
      return chart.boundary_extended({s[0], s[1]});
    };
    exit.trapped = dense.status != detail::OdeStatus::stopped_by_event;
    const auto& nodes = dense.nodes;
    if (exit.trapped) {
      exit.t_boundary = exit.t_extended = nodes.back().t;
      exit.nontangential = true;  // not meaningful; trapped is its own reason
      return;
    }
    // First b = 0 crossing, then the inflated one; both exist once the event
    // predicate fired, because b_ext < b pointwise.
    std::size_t k = 1;
    while (k < nodes.size() && b_of(nodes[k].t) < 0.0) ++k;
    exit.t_boundary = detail::bisect_time(b_of, nodes[k - 1].t, nodes[k].t);
    std::size_t m = k;
    while (m < nodes.size() && bext_of(nodes[m].t) < 0.0) ++m;
    exit.t_extended = detail::bisect_time(bext_of, nodes[m - 1].t, nodes[m].t);

    const auto sb = dense.eval(exit.t_boundary);
    exit.x = {sb[0], sb[1]};
    exit.v = orientation * Vec2{sb[2], sb[3]};
    exit.angle = exit_angle(chart, exit.x, exit.v);
    return;
  };

  run_side(v0, path.fwd, path.exit_fwd, +1.0);
  run_side(-1.0 * v0, path.bwd, path.exit_bwd, -1.0);
  return path;
}

// --- conjugate points -------------------------------------------------------

// Zeros of the scalar Jacobi equation j'' + K(gamma(t)) j = 0 with j = 0,
// j' = 1 at the launch point, scanned in one direction over (0, t_range].
// `direction` is +1 (forward) or -1 (backward); returned times are the
// positive magnitudes along that direction.
inline std::vector<double> jacobi_scan(const GeodesicPath& path, double direction,
                                       double t_range) {
  std::vector<double> zeros;
  if (!(t_range > 0.0)) return zeros;
  const int n = std::max(16, static_cast<int>(std::ceil(t_range / 0.002)));
  const double h = t_range / n;
  auto rhs = [&](double s, const detail::State<2>& y, detail::State<2>& k) {
    const double K = path.chart.curvature_at(path.position(direction * s));
    k = {y[1], -K * y[0]};
  };
  detail::State<2> y{0.0, 1.0};
  double s = 0.0;
  double jp = y[0], jpp = y[1];
  for (int i = 0; i < n; ++i) {
    y = detail::rk4_step<2>(rhs, s, y, h);
    const double s1 = s + h;
    if ((jp > 0.0 && y[0] <= 0.0) || (jp < 0.0 && y[0] >= 0.0)) {
      // Cubic Hermite root inside [s, s1].
      const double j0 = jp, d0 = jpp, j1 = y[0], d1 = y[1];
      auto hermite = [&](double q) {
        const double u = (q - s) / h;
        const double h00 = (1 + 2 * u) * (1 - u) * (1 - u);
        const double h10 = u * (1 - u) * (1 - u);
        const double h01 = u * u * (3 - 2 * u);
        const double h11 = u * u * (u - 1);
        return h00 * j0 + h10 * h * d0 + h01 * j1 + h11 * h * d1;
      };
      double lo = s, hi = s1;
      if (hermite(lo) > 0.0)
        zeros.push_back(detail::bisect_time([&](double q) { return -hermite(q); }, lo, hi));
      else
        zeros.push_back(detail::bisect_time(hermite, lo, hi));
    }
    s = s1;
    jp = y[0];
    jpp = y[1];
  }
  return zeros;
}

// --- self-intersections -------------------------------------------------------

struct SelfCrossing {
  double t_a = 0.0, t_b = 0.0;  // t_a < t_b
  Vec2 x;
};

struct SelfScanOptions {
  double dt_sample = 1e-3;
  double t_sep = 1e-2;    // ignore pairs closer than this in time
  double eps_x = 1e-6;    // required chart coincidence after refinement
  int max_crossings = 64;
};

// Transversal self-crossings of the path restricted to [t_lo, t_hi]. Dense
// samples go into a uniform hash grid sized to the sample spacing, so only
// genuinely close pairs are tested; candidates are polished by Newton on
// x(t) - x(t') = 0. Near-parallel encounters (singular Jacobian) are skipped:
// they either fail eps_x or belong to a retraced closed orbit, which the
// trapped check already rejects.
inline std::vector<SelfCrossing> self_intersection_scan(const GeodesicPath& path,
                                                        double t_lo, double t_hi,
                                                        const SelfScanOptions& opt = {}) {
  std::vector<SelfCrossing> found;
  if (!(t_hi - t_lo > 2.0 * opt.t_sep)) return found;

  const int n = static_cast<int>(std::ceil((t_hi - t_lo) / opt.dt_sample));
  std::vector<double> ts(n + 1);
  std::vector<Vec2> xs(n + 1);
  double vmax = 0.0;
  for (int i = 0; i <= n; ++i) {
    ts[i] = t_lo + (t_hi - t_lo) * i / n;
    const auto e = path.eval(ts[i]);
    xs[i] = e.x;
    vmax = std::max(vmax, norm(e.v));
  }
  const double step = (t_hi - t_lo) / n;
  const double cell = std::max(2.0 * vmax * step, 1e-12);

  std::unordered_map<std::uint64_t, std::vector<int>> grid;
  auto key = [&](const Vec2& p) {
    const auto gx = static_cast<std::int64_t>(std::floor(p.x / cell));
    const auto gy = static_cast<std::int64_t>(std::floor(p.y / cell));
    return (static_cast<std::uint64_t>(gx) << 32) ^
           (static_cast<std::uint64_t>(gy) & 0xffffffffu);
  };
  for (int i = 0; i <= n; ++i) grid[key(xs[i])].push_back(i);

  auto refine = [&](double ta, double tb, SelfCrossing& out) {
    for (int it = 0; it < 40; ++it) {
      const auto ea = path.eval(ta), eb = path.eval(tb);
      const Vec2 F = ea.x - eb.x;
      if (norm(F) < 1e-12) break;
      const Mat2 J{ea.v.x, -eb.v.x, ea.v.y, -eb.v.y};
      if (std::abs(J.det()) < 1e-10 * (norm(ea.v) * norm(eb.v) + 1e-300)) return false;
      const Vec2 d = J.inverse() * F;
      ta -= d.x;
      tb -= d.y;
      if (!(ta >= t_lo - 1e-6 && tb <= t_hi + 1e-6)) return false;
    }
    const Vec2 gap = path.position(ta) - path.position(tb);
    if (norm(gap) > opt.eps_x) return false;
    if (tb < ta) std::swap(ta, tb);
    if (tb - ta <= opt.t_sep) return false;
    if (ta < t_lo - 1e-9 || tb > t_hi + 1e-9) return false;
    out = {ta, tb, path.position(ta)};
    return true;
  };

  for (int i = 0; i <= n; ++i) {
    const auto gx = static_cast<std::int64_t>(std::floor(xs[i].x / cell));
    const auto gy = static_cast<std::int64_t>(std::floor(xs[i].y / cell));
    for (int du = -1; du <= 1; ++du)
      for (int dv = -1; dv <= 1; ++dv) {
        const std::uint64_t k = (static_cast<std::uint64_t>(gx + du) << 32) ^
                                (static_cast<std::uint64_t>(gy + dv) & 0xffffffffu);
        const auto it = grid.find(k);
        if (it == grid.end()) continue;
        for (int j : it->second) {
          if (j <= i || ts[j] - ts[i] <= opt.t_sep) continue;
          if (norm(xs[i] - xs[j]) > cell) continue;
          SelfCrossing c;
          if (!refine(ts[i], ts[j], c)) continue;
          bool dup = false;
          for (const auto& prev : found)
            if (std::abs(prev.t_a - c.t_a) < 1e-6 && std::abs(prev.t_b - c.t_b) < 1e-6)
              dup = true;
          if (dup) continue;
          found.push_back(c);
          if (static_cast<int>(found.size()) >= opt.max_crossings) return found;
        }
      }
  }
  std::sort(found.begin(), found.end(),
            [](const SelfCrossing& a, const SelfCrossing& b) { return a.t_a < b.t_a; });
  return found;
}

// --- combined usability verdict ------------------------------------------------

struct SuOptions {
  double angle_min = 0.1;  // radians; exit angles >= this pass
  ShootOptions shoot;
  SelfScanOptions self_scan;
};

struct SuVerdict {
  bool ok = false;
  std::vector<std::string> reasons;  // subset of {trapped, tangential,
                                     //  conjugate-point, self-intersection}
  GeodesicPath path;
  std::vector<double> conj_fwd, conj_bwd;  // positive magnitudes
  std::vector<SelfCrossing> crossings;
};

inline SuVerdict su_check(const ChartMetric& chart, const Vec2& z, const Vec2& zeta,
                          const SuOptions& opt = {}) {
  SuVerdict v;
  v.path = shoot(chart, z, zeta, opt.shoot);
  auto add = [&](const char* r) {
    for (const auto& s : v.reasons)
      if (s == r) return;
    v.reasons.emplace_back(r);
  };

  if (v.path.trapped()) add("trapped");
  if (!v.path.exit_fwd.trapped && v.path.exit_fwd.angle < opt.angle_min)
    add("tangential");
  if (!v.path.exit_bwd.trapped && v.path.exit_bwd.angle < opt.angle_min)
    add("tangential");
  v.path.exit_fwd.nontangential = v.path.exit_fwd.angle >= opt.angle_min;
  v.path.exit_bwd.nontangential = v.path.exit_bwd.angle >= opt.angle_min;

  v.conj_fwd = jacobi_scan(v.path, +1.0, v.path.t_out());
  v.conj_bwd = jacobi_scan(v.path, -1.0, v.path.t_in());
  if (!v.conj_fwd.empty() || !v.conj_bwd.empty()) add("conjugate-point");

  // Trapped paths can retrace themselves forever; the crossing list is
  // informational there, so cap the scan window instead of walking the
  // whole horizon.
  const double cap = 3.0 * chart.length_scale();
  const double lo = v.path.trapped() ? -std::min(v.path.t_in(), cap) : -v.path.t_in();
  const double hi = v.path.trapped() ? std::min(v.path.t_out(), cap) : v.path.t_out();
  v.crossings = self_intersection_scan(v.path, lo, hi, opt.self_scan);
  if (!v.crossings.empty()) add("self-intersection");

  v.ok = v.reasons.empty();
  return v;
}

// Witness-level query: given the covector eta being probed, the beams travel
// along the g-orthogonal directions, so usability of eta means at least one of
// the two orthogonal covectors passes su_check. In a conformal chart the
// orthogonal covector is the euclidean perpendicular rescaled to unit g-norm.
struct WitnessVerdict {
  bool ok = false;
  Vec2 witness{};     // the passing orthogonal covector (unset if !ok)
  SuVerdict first;    // +perp candidate
  SuVerdict second;   // -perp candidate (only populated if first failed)
};

inline WitnessVerdict su_witness(const ChartMetric& chart, const Vec2& z, const Vec2& eta,
                                 const SuOptions& opt = {}) {
  const Vec2 cand = chart.normalize_covector(z, Vec2{-eta.y, eta.x});
  WitnessVerdict w;
  w.first = su_check(chart, z, cand, opt);
  if (w.first.ok) {
    w.ok = true;
    w.witness = cand;
    return w;
  }
  w.second = su_check(chart, z, -cand, opt);
  if (w.second.ok) {
    w.ok = true;
    w.witness = -cand;
  }
  return w;
}

}  // namespace beamwf
