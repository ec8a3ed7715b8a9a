#pragma once

// Parametrization of admissible geodesic pairs around an anchor direction.
//
// A PairField fixes an anchor (z0, xi0) together with a seed pair
// (zeta1, zeta2 = reflection of zeta1 across xi0), so zeta1 + zeta2 = t0 xi0
// with 0 < t0 < 2. Two independent constructions produce the pair
// (omega1(xi), omega2(xi)) for covectors xi near the anchor:
//
//   pair_map     - constant-coefficient covector field in normal coordinates
//                  at z0, combined with the closed-form c(z, omega) that keeps
//                  <omega1, xi-hat> constant;
//   pair_map_pt  - parallel-transport xi back to z0, rotate the seeds by the
//                  planar rotation aligning xi0 with the pulled-back covector,
//                  transport forward.
//
// Both satisfy omega1 + omega2 = t0 xi-hat exactly (to rounding); they are
// kept as mutually checking backends. frame_map is the same transport trick
// applied to a whole orthonormal coframe. admissible_check then verifies that
// a produced pair actually crosses once, nontangentially.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "beamwf/detail/algebra.hpp"
#include "beamwf/detail/ode.hpp"
#include "beamwf/geodesic.hpp"
#include "beamwf/manifold.hpp"

namespace beamwf {

struct AdmissibilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NeighborhoodError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// zeta2 = 2 <zeta1, xi0> xi0 - zeta1, all g-unit covectors at z.
inline Vec2 reflect_cov(const ChartMetric& chart, const Vec2& z, const Vec2& zeta1,
                        const Vec2& xi0) {
  const Mat2 gi = chart.metric_inv_at(z);
  const Vec2 xh = chart.normalize_covector(z, xi0);
  const Vec2 zh = chart.normalize_covector(z, zeta1);
  const double c = co_inner(gi, zh, xh);
  if (!(c > 0.0 && c < 1.0))
    throw AdmissibilityError("reflect_cov: <zeta1, xi0> = " + std::to_string(c) +
                             " outside (0, 1)");
  return 2.0 * c * xh - zh;
}

// --- parallel transport ---------------------------------------------------------

// Covector transport along t -> (x(t), xdot(t)): eta'_k = Gamma^i_{jk} xdot^j eta_i.
template <class PathEval>
inline Vec2 transport_covector(const ChartMetric& chart, PathEval&& path, double t_from,
                               double t_to, const Vec2& eta0) {
  const double len = std::abs(t_to - t_from);
  if (len == 0.0) return eta0;
  const int n = std::max(8, static_cast<int>(std::ceil(len / 0.002)));
  const double h = (t_to - t_from) / n;
  auto rhs = [&](double t, const detail::State<2>& e, detail::State<2>& k) {
    const GeodesicEval ge = path(t);
    const Christoffels G = chart.christoffel_at(ge.x);
    for (int kk = 0; kk < 2; ++kk) {
      double s = 0.0;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) s += G.G[i][j][kk] * ge.v[j] * e[i];
      k[kk] = s;
    }
  };
  detail::State<2> e{eta0.x, eta0.y};
  double t = t_from;
  for (int i = 0; i < n; ++i, t += h) e = detail::rk4_step<2>(rhs, t, e, h);
  return {e[0], e[1]};
}

// Vector transport: n'^k = -Gamma^k_{ij} xdot^i n^j.
template <class PathEval>
inline Vec2 transport_vector(const ChartMetric& chart, PathEval&& path, double t_from,
                             double t_to, const Vec2& n0) {
  const double len = std::abs(t_to - t_from);
  if (len == 0.0) return n0;
  const int n = std::max(8, static_cast<int>(std::ceil(len / 0.002)));
  const double h = (t_to - t_from) / n;
  auto rhs = [&](double t, const detail::State<2>& w, detail::State<2>& k) {
    const GeodesicEval ge = path(t);
    const Christoffels G = chart.christoffel_at(ge.x);
    for (int kk = 0; kk < 2; ++kk) {
      double s = 0.0;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) s += G.G[kk][i][j] * ge.v[i] * w[j];
      k[kk] = -s;
    }
  };
  detail::State<2> w{n0.x, n0.y};
  double t = t_from;
  for (int i = 0; i < n; ++i, t += h) w = detail::rk4_step<2>(rhs, t, w, h);
  return {w[0], w[1]};
}

inline Vec2 transport_covector(const GeodesicPath& p, double t_from, double t_to,
                               const Vec2& eta0) {
  return transport_covector(p.chart, [&](double t) { return p.eval(t); }, t_from,
                            t_to, eta0);
}
inline Vec2 transport_vector(const GeodesicPath& p, double t_from, double t_to,
                             const Vec2& n0) {
  return transport_vector(p.chart, [&](double t) { return p.eval(t); }, t_from, t_to,
                          n0);
}

// --- exp-chart at a base point -----------------------------------------------------

// Normal coordinates y at z0: y are the components of exp_{z0}^{-1}(x) in a
// g-orthonormal basis (E1, E2). For conformal charts E_j = e^{-phi(z0)} e_j.
class NormalChart {
 public:
  NormalChart() = default;
  NormalChart(const ChartMetric& chart, const Vec2& z0) : chart_(chart), z0_(z0) {
    const double s = std::exp(-chart.phi(z0));
    E1_ = {s, 0.0};
    E2_ = {0.0, s};
    ode_.rel_tol = 1e-11;
    ode_.abs_tol = 1e-13;
    ode_.h_max = 0.02;
  }

  const ChartMetric& chart() const { return chart_; }
  const Vec2& base() const { return z0_; }
  const Vec2& E1() const { return E1_; }
  const Vec2& E2() const { return E2_; }

  // Radial geodesic s in [0, 1] with initial velocity y1 E1 + y2 E2.
  detail::DenseOde<4> radial(const Vec2& y) const {
    const Vec2 w = y.x * E1_ + y.y * E2_;
    auto rhs = [this](double, const detail::State<4>& s, detail::State<4>& k) {
      k = detail::geodesic_rhs(chart_, s);
    };
    return detail::integrate<4>(rhs, 0.0, {z0_.x, z0_.y, w.x, w.y}, 1.0, ode_);
  }

  Vec2 exp_point(const Vec2& y) const {
    const auto s = radial(y).eval(1.0);
    return {s[0], s[1]};
  }

  // Jacobian d(exp_point)/dy, central differences with one Richardson sweep.
  Mat2 dm(const Vec2& y, double h = 1e-5) const {
    auto fd = [&](double step) {
      Mat2 J;
      const Vec2 cu = (exp_point({y.x + step, y.y}) - exp_point({y.x - step, y.y})) /
                      (2 * step);
      const Vec2 cv = (exp_point({y.x, y.y + step}) - exp_point({y.x, y.y - step})) /
                      (2 * step);
      J.a = cu.x;
      J.c = cu.y;
      J.b = cv.x;
      J.d = cv.y;
      return J;
    };
    const Mat2 A = fd(h), B = fd(h / 2);
    return Mat2{(4 * B.a - A.a) / 3, (4 * B.b - A.b) / 3, (4 * B.c - A.c) / 3,
                (4 * B.d - A.d) / 3};
  }

  // exp_{z0}^{-1}(x) in normal coordinates, by Newton with the FD Jacobian.
  Vec2 log_point(const Vec2& x) const {
    // First order exp(y) = z0 + y1 E1 + y2 E2, so invert that for the seed.
    const Mat2 B0{E1_.x, E2_.x, E1_.y, E2_.y};
    Vec2 y = B0.inverse() * (x - z0_);
    double best = 1e300;
    Mat2 Jinv = Mat2::identity();
    for (int it = 0; it < 50; ++it) {
      const Vec2 r = exp_point(y) - x;
      const double rn = norm(r);
      if (rn < 1e-12 * std::max(1.0, norm(x))) return y;
      // The Jacobian drifts slowly, so refresh it only every few iterations.
      if (it % 3 == 0) Jinv = dm(y).inverse();
      Vec2 step = Jinv * r;
      if (rn > best) step = 0.5 * step;
      best = std::min(best, rn);
      y -= step;
    }
    throw std::runtime_error("NormalChart::log_point: Newton did not converge");
  }

 private:
  ChartMetric chart_;
  Vec2 z0_;
  Vec2 E1_, E2_;
  detail::OdeOptions ode_;
};

// --- the pair field -------------------------------------------------------------

struct PairDirections {
  Vec2 omega1, omega2;  // unit covectors at the queried base point
};

struct PairField {
  ChartMetric chart;
  Vec2 z0;
  Vec2 xi0;        // g-unit anchor covector
  Vec2 zeta1, zeta2;
  double t0 = 0.0;
  Vec2 a;            // components of zeta1 in the normal coframe at z0
  double side = 1.0; // orientation of zeta1 against xi0; fixes the branch
  NormalChart nc;
  double valid_radius = 0.0;  // product metric: sqrt(dist^2 + angle^2)
};

namespace detail {

// Chart angle between covectors; conformal charts make this the g-angle.
inline double co_angle(const Vec2& u, const Vec2& v) {
  return std::atan2(std::abs(cross(u, v)), dot(u, v));
}

}  // namespace detail

inline PairDirections pair_map(const PairField& f, const Vec2& z, const Vec2& xi) {
  const Mat2 gi = f.chart.metric_inv_at(z);
  const Vec2 w = f.chart.normalize_covector(z, xi);

  // gamma(z): the constant-coefficient covector a_j dy^j at z, normalized.
  // Rows of (dm)^{-1} are the chart components of dy^j.
  const Vec2 y = f.nc.log_point(z);
  const Mat2 dyx = f.nc.dm(y).inverse();
  Vec2 gamma{dyx.a * f.a.x + dyx.c * f.a.y, dyx.b * f.a.x + dyx.d * f.a.y};
  gamma = f.chart.normalize_covector(z, gamma);

  const double alpha = 0.5 * f.t0;
  const double beta = co_inner(gi, gamma, w);
  if (beta * beta >= 1.0 - 1e-12)
    throw NeighborhoodError("pair_map: degenerate alignment, <gamma, omega> = " +
                            std::to_string(beta));
  // The formula resolves the two covectors by which side of omega the
  // transported seed lies on. Once omega rotates past the seed that side
  // flips and the formula would answer with the pair swapped, silently
  // departing from the transport definition, so refuse instead.
  if (f.side * cross(w, gamma) <= 0.0)
    throw NeighborhoodError("pair_map: covector rotated past the seed direction");
  const double c = alpha * std::sqrt((1.0 - beta * beta) / (1.0 - alpha * alpha));
  const Vec2 num = gamma - beta * w + c * w;
  const Vec2 o1 = num / std::sqrt(1.0 - beta * beta + c * c);
  const Vec2 o2 = 2.0 * co_inner(gi, o1, w) * w - o1;
  return {o1, o2};
}

inline PairDirections pair_map_pt(const PairField& f, const Vec2& z, const Vec2& xi) {
  const Vec2 w = f.chart.normalize_covector(z, xi);
  if (norm(z - f.z0) < 1e-14) {
    // P is the identity; only the planar rotation remains.
    const double d = detail::co_angle(f.xi0, w);
    if (d >= M_PI - 1e-9)
      throw NeighborhoodError("pair_map_pt: rotation through pi is ill-defined");
    const double sgn = cross(f.xi0, w) >= 0.0 ? 1.0 : -1.0;
    return {rot(f.zeta1, sgn * d), rot(f.zeta2, sgn * d)};
  }
  const Vec2 y = f.nc.log_point(z);
  const auto path = f.nc.radial(y);
  auto ev = [&](double s) {
    const auto st = path.eval(s);
    return GeodesicEval{{st[0], st[1]}, {st[2], st[3]}};
  };
  // In 2D the seeds span the whole cotangent plane, so the perpendicular part
  // of P^{-1} xi vanishes and only the rotated-seed term survives.
  Vec2 back = transport_covector(f.chart, ev, 1.0, 0.0, w);
  back = f.chart.normalize_covector(f.z0, back);
  const double d = detail::co_angle(f.xi0, back);
  if (d >= M_PI - 1e-9)
    throw NeighborhoodError("pair_map_pt: rotation through pi is ill-defined");
  const double sgn = cross(f.xi0, back) >= 0.0 ? 1.0 : -1.0;
  const Vec2 r1 = rot(f.zeta1, sgn * d), r2 = rot(f.zeta2, sgn * d);
  return {transport_covector(f.chart, ev, 0.0, 1.0, r1),
          transport_covector(f.chart, ev, 0.0, 1.0, r2)};
}

// Estimated radius of validity in S*M around (z0, xi0), product distance
// sqrt(base^2 + fiber^2). Bisection on "every probe sample on the radius-r
// sphere stays interior and non-degenerate".
inline double estimate_valid_radius(const PairField& f, double r_cap = 1.5) {
  auto sample_ok = [&](double r) {
    for (int ip = 0; ip <= 4; ++ip) {
      const double psi = 0.5 * M_PI * ip / 4;  // split between base and fiber
      const double rb = r * std::cos(psi), rf = r * std::sin(psi);
      for (int ib = 0; ib < (rb > 0.0 ? 4 : 1); ++ib) {
        const double tb = 2.0 * M_PI * ib / 4;
        for (double sf : {rf, -rf}) {
          try {
            const Vec2 z = f.nc.exp_point({rb * std::cos(tb), rb * std::sin(tb)});
            if (!(f.chart.boundary(z) < -1e-9)) return false;
            const double ang = std::atan2(f.xi0.y, f.xi0.x) + sf;
            const Vec2 xi = f.chart.unit_covector(z, ang);
            (void)pair_map(f, z, xi);
          } catch (const std::exception&) {
            return false;
          }
          if (rf == 0.0) break;
        }
      }
      if (r == 0.0) break;
    }
    return true;
  };
  if (sample_ok(r_cap)) return r_cap;
  double lo = 0.0, hi = r_cap;
  for (int it = 0; it < 12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (sample_ok(mid) ? lo : hi) = mid;
  }
  return lo;
}

inline PairField build_pair_field(const ChartMetric& chart, const Vec2& z0,
                                  const Vec2& xi0_in, const Vec2& zeta1_in,
                                  bool estimate_radius = true) {
  if (!(chart.boundary(z0) < 0.0))
    throw std::invalid_argument("build_pair_field: anchor must be interior");
  PairField f;
  f.chart = chart;
  f.z0 = z0;
  f.xi0 = chart.normalize_covector(z0, xi0_in);
  f.zeta1 = chart.normalize_covector(z0, zeta1_in);
  f.zeta2 = reflect_cov(chart, z0, f.zeta1, f.xi0);
  f.t0 = 2.0 * co_inner(chart.metric_inv_at(z0), f.zeta1, f.xi0);
  f.nc = NormalChart(chart, z0);
  const double s = std::exp(-chart.phi(z0));
  f.a = {s * f.zeta1.x, s * f.zeta1.y};  // zeta1 applied to E1, E2
  f.side = cross(f.xi0, f.zeta1) >= 0.0 ? 1.0 : -1.0;
  f.valid_radius = estimate_radius ? estimate_valid_radius(f) : 0.0;
  return f;
}

// --- coframes ------------------------------------------------------------------

struct Coframe {
  Vec2 base;
  Vec2 F1, F2;  // g-orthonormal covectors, positively oriented
};

// F(xi) = P o O_0 o P^{-1}(xi): pull xi back to the coframe's base, rotate the
// coframe so its first covector aligns, push forward to pi(xi).
inline Coframe frame_map(const ChartMetric& chart, const Coframe& F0, const Vec2& z,
                         const Vec2& xi) {
  const Vec2 w = chart.normalize_covector(z, xi);
  auto rotate_to = [&](const Vec2& target) {
    const double d = detail::co_angle(F0.F1, target);
    if (d >= M_PI - 1e-9)
      throw NeighborhoodError("frame_map: rotation through pi is ill-defined");
    const double sgn = cross(F0.F1, target) >= 0.0 ? 1.0 : -1.0;
    return Coframe{F0.base, rot(F0.F1, sgn * d), rot(F0.F2, sgn * d)};
  };
  if (norm(z - F0.base) < 1e-14) {
    Coframe out = rotate_to(w);
    out.F1 = w;  // kill the last rounding so omega^1(xi) = xi holds exactly
    return out;
  }
  NormalChart nc(chart, F0.base);
  const Vec2 y = nc.log_point(z);
  const auto path = nc.radial(y);
  auto ev = [&](double s) {
    const auto st = path.eval(s);
    return GeodesicEval{{st[0], st[1]}, {st[2], st[3]}};
  };
  Vec2 back = transport_covector(chart, ev, 1.0, 0.0, w);
  back = chart.normalize_covector(F0.base, back);
  const Coframe rotated = rotate_to(back);
  Coframe out;
  out.base = z;
  out.F1 = w;
  out.F2 = transport_covector(chart, ev, 0.0, 1.0, rotated.F2);
  return out;
}

// --- admissibility of a concrete pair ----------------------------------------------

struct CrossPathCrossing {
  double t_a = 0.0, t_b = 0.0;  // times on path 1 and path 2
  Vec2 x;
};

struct AdmissibleOptions {
  double angle_min = 0.1;
  double dt_sample = 1e-3;
  double eps_x = 1e-6;     // refined coincidence tolerance
  double base_tol = 1e-5;  // crossing within this of the base is "the" crossing
  int max_crossings = 8;
  ShootOptions shoot;
};

struct AdmissibleVerdict {
  bool admissible = false;
  std::vector<std::string> reasons;  // duplicate-direction, trapped, tangential,
                                     // secondary-crossing, missing-base-crossing
  GeodesicPath path1, path2;
  std::vector<CrossPathCrossing> crossings;
};

// All transversal meetings of the in-chart segments of two paths, found by the
// same hash-grid + Newton polish as the self-intersection scan.
inline std::vector<CrossPathCrossing> cross_intersection_scan(
    const GeodesicPath& pa, const GeodesicPath& pb, const AdmissibleOptions& opt = {}) {
  std::vector<CrossPathCrossing> found;
  auto samples = [&](const GeodesicPath& p, std::vector<double>& ts,
                     std::vector<Vec2>& xs, double& vmax) {
    const double lo = -p.t_in(), hi = p.t_out();
    const int n = std::max(4, static_cast<int>(std::ceil((hi - lo) / opt.dt_sample)));
    ts.resize(n + 1);
    xs.resize(n + 1);
    for (int i = 0; i <= n; ++i) {
      ts[i] = lo + (hi - lo) * i / n;
      const auto e = p.eval(ts[i]);
      xs[i] = e.x;
      vmax = std::max(vmax, norm(e.v));
    }
  };
  std::vector<double> ta, tb;
  std::vector<Vec2> xa, xb;
  double vmax = 0.0;
  samples(pa, ta, xa, vmax);
  samples(pb, tb, xb, vmax);
  const double cell = std::max(2.0 * vmax * opt.dt_sample, 1e-12);

  std::unordered_map<std::uint64_t, std::vector<int>> grid;
  auto key = [&](std::int64_t gx, std::int64_t gy) {
    return (static_cast<std::uint64_t>(gx) << 32) ^
           (static_cast<std::uint64_t>(gy) & 0xffffffffu);
  };
  for (std::size_t i = 0; i < xa.size(); ++i) {
    const auto gx = static_cast<std::int64_t>(std::floor(xa[i].x / cell));
    const auto gy = static_cast<std::int64_t>(std::floor(xa[i].y / cell));
    grid[key(gx, gy)].push_back(static_cast<int>(i));
  }

  auto refine = [&](double t1, double t2, CrossPathCrossing& out) {
    for (int it = 0; it < 40; ++it) {
      const auto ea = pa.eval(t1), eb = pb.eval(t2);
      const Vec2 F = ea.x - eb.x;
      if (norm(F) < 1e-12) break;
      const Mat2 J{ea.v.x, -eb.v.x, ea.v.y, -eb.v.y};
      if (std::abs(J.det()) < 1e-10 * (norm(ea.v) * norm(eb.v) + 1e-300)) return false;
      const Vec2 d = J.inverse() * F;
      t1 -= d.x;
      t2 -= d.y;
    }
    if (norm(pa.position(t1) - pb.position(t2)) > opt.eps_x) return false;
    if (t1 < -pa.t_in() - 1e-9 || t1 > pa.t_out() + 1e-9) return false;
    if (t2 < -pb.t_in() - 1e-9 || t2 > pb.t_out() + 1e-9) return false;
    out = {t1, t2, pa.position(t1)};
    return true;
  };

  for (std::size_t j = 0; j < xb.size(); ++j) {
    const auto gx = static_cast<std::int64_t>(std::floor(xb[j].x / cell));
    const auto gy = static_cast<std::int64_t>(std::floor(xb[j].y / cell));
    for (int du = -1; du <= 1; ++du)
      for (int dv = -1; dv <= 1; ++dv) {
        const auto it = grid.find(key(gx + du, gy + dv));
        if (it == grid.end()) continue;
        for (int i : it->second) {
          if (norm(xa[i] - xb[j]) > cell) continue;
          CrossPathCrossing c;
          if (!refine(ta[i], tb[j], c)) continue;
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
            [](const CrossPathCrossing& a, const CrossPathCrossing& b) {
              return a.t_a < b.t_a;
            });
  return found;
}

inline AdmissibleVerdict admissible_check(const ChartMetric& chart, const Vec2& z,
                                          const Vec2& omega1, const Vec2& omega2,
                                          const AdmissibleOptions& opt = {}) {
  AdmissibleVerdict v;
  auto add = [&](const char* r) {
    for (const auto& s : v.reasons)
      if (s == r) return;
    v.reasons.emplace_back(r);
  };

  const Vec2 o1 = chart.normalize_covector(z, omega1);
  const Vec2 o2 = chart.normalize_covector(z, omega2);
  if (norm(o1 - o2) < 1e-10 || norm(o1 + o2) < 1e-10) {
    add("duplicate-direction");
    v.admissible = false;
    return v;
  }

  v.path1 = shoot(chart, z, o1, opt.shoot);
  v.path2 = shoot(chart, z, o2, opt.shoot);
  if (v.path1.trapped() || v.path2.trapped()) add("trapped");
  for (const GeodesicPath* p : {&v.path1, &v.path2}) {
    if (!p->exit_fwd.trapped && p->exit_fwd.angle < opt.angle_min) add("tangential");
    if (!p->exit_bwd.trapped && p->exit_bwd.angle < opt.angle_min) add("tangential");
  }

  v.crossings = cross_intersection_scan(v.path1, v.path2, opt);
  bool base_seen = false;
  for (const auto& c : v.crossings) {
    if (norm(c.x - z) <= opt.base_tol)
      base_seen = true;
    else
      add("secondary-crossing");
  }
  if (!base_seen) add("missing-base-crossing");

  v.admissible = v.reasons.empty();
  return v;
}

}  // namespace beamwf
