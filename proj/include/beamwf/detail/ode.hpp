#pragma once

// Embedded Dormand-Prince 5(4) with adaptive steps plus cubic-Hermite dense
// output on the accepted nodes. The step cap keeps the Hermite interpolation
// error around 1e-12 for the smooth fields used here, so dense evaluation is
// as trustworthy as the nodes themselves. A fixed-step classic RK4 driver is
// included for coefficient sweeps that want uniformly spaced samples.

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

namespace beamwf::detail {

template <int N>
using State = std::array<double, N>;

enum class OdeStatus { reached_end, stopped_by_event, step_underflow, step_limit };

struct OdeOptions {
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  double h_max = 0.005;
  double h_init = 1e-3;
  std::size_t max_steps = 2'000'000;
};

template <int N>
struct DenseNode {
  double t;
  State<N> x;
  State<N> f;  // RHS at (t, x)
};

// Dense solution on [t_front, t_back] (t may run backward; nodes keep the
// integration order). Piecewise cubic Hermite in each interval.
template <int N>
class DenseOde {
 public:
  std::vector<DenseNode<N>> nodes;
  OdeStatus status = OdeStatus::reached_end;

  double t_begin() const { return nodes.front().t; }
  double t_end() const { return nodes.back().t; }

  // Hermite basis evaluation; clamps to the covered range.
  State<N> eval(double t) const {
    const auto [i, s, h] = locate(t);
    const auto& a = nodes[i];
    const auto& b = nodes[i + 1];
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    State<N> r;
    for (int k = 0; k < N; ++k)
      r[k] = h00 * a.x[k] + h10 * h * a.f[k] + h01 * b.x[k] + h11 * h * b.f[k];
    return r;
  }

  State<N> eval_deriv(double t) const {
    const auto [i, s, h] = locate(t);
    const auto& a = nodes[i];
    const auto& b = nodes[i + 1];
    const double s2 = s * s;
    const double d00 = (6 * s2 - 6 * s) / h, d10 = 3 * s2 - 4 * s + 1;
    const double d01 = (-6 * s2 + 6 * s) / h, d11 = 3 * s2 - 2 * s;
    State<N> r;
    for (int k = 0; k < N; ++k)
      r[k] = d00 * a.x[k] + d10 * a.f[k] + d01 * b.x[k] + d11 * b.f[k];
    return r;
  }

 private:
  // Returns (interval index, normalized position, interval width).
  std::tuple<std::size_t, double, double> locate(double t) const {
    if (nodes.size() < 2) throw std::runtime_error("DenseOde: empty solution");
    const bool fwd = nodes.back().t >= nodes.front().t;
    std::size_t lo = 0, hi = nodes.size() - 2;
    // Binary search for the interval containing t.
    while (lo < hi) {
      const std::size_t mid = (lo + hi + 1) / 2;
      if (fwd ? (nodes[mid].t <= t) : (nodes[mid].t >= t))
        lo = mid;
      else
        hi = mid - 1;
    }
    const double h = nodes[lo + 1].t - nodes[lo].t;
    double s = (t - nodes[lo].t) / h;
    if (s < 0.0) s = 0.0;
    if (s > 1.0) s = 1.0;
    return {lo, s, h};
  }
};

// Integrate x' = f(t, x) from t0 to t1. `stop` (optional) is checked at each
// accepted node; returning true ends the integration with stopped_by_event.
template <int N, typename Rhs, typename Stop>
DenseOde<N> integrate(Rhs&& f, double t0, const State<N>& x0, double t1,
                      const OdeOptions& opt, Stop&& stop) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                          a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                          a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 35.0 / 384 - 5179.0 / 57600,
                          e3 = 500.0 / 1113 - 7571.0 / 16695,
                          e4 = 125.0 / 192 - 393.0 / 640,
                          e5 = -2187.0 / 6784 + 92097.0 / 339200,
                          e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

  const double dir = (t1 >= t0) ? 1.0 : -1.0;
  DenseOde<N> out;
  State<N> x = x0, k1;
  f(t0, x, k1);
  out.nodes.push_back({t0, x, k1});

  double t = t0;
  double h = dir * std::min(opt.h_init, opt.h_max);
  State<N> k2, k3, k4, k5, k6, k7, xt, x5;

  for (std::size_t step = 0; step < opt.max_steps; ++step) {
    if (dir * (t - t1) >= 0.0) {
      out.status = OdeStatus::reached_end;
      return out;
    }
    if (dir * (t + h - t1) > 0.0) h = t1 - t;
    if (std::abs(h) < 1e-14 * (1.0 + std::abs(t))) {
      out.status = OdeStatus::step_underflow;
      return out;
    }

    auto stage = [&](double frac, const State<N>& xs, State<N>& ks) {
      f(t + frac * h, xs, ks);
    };
    for (int k = 0; k < N; ++k) xt[k] = x[k] + h * a21 * k1[k];
    stage(c2, xt, k2);
    for (int k = 0; k < N; ++k) xt[k] = x[k] + h * (a31 * k1[k] + a32 * k2[k]);
    stage(c3, xt, k3);
    for (int k = 0; k < N; ++k)
      xt[k] = x[k] + h * (a41 * k1[k] + a42 * k2[k] + a43 * k3[k]);
    stage(c4, xt, k4);
    for (int k = 0; k < N; ++k)
      xt[k] = x[k] + h * (a51 * k1[k] + a52 * k2[k] + a53 * k3[k] + a54 * k4[k]);
    stage(c5, xt, k5);
    for (int k = 0; k < N; ++k)
      xt[k] = x[k] +
              h * (a61 * k1[k] + a62 * k2[k] + a63 * k3[k] + a64 * k4[k] + a65 * k5[k]);
    stage(1.0, xt, k6);
    for (int k = 0; k < N; ++k)
      x5[k] = x[k] + h * (b1 * k1[k] + b3 * k3[k] + b4 * k4[k] + b5 * k5[k] + b6 * k6[k]);
    f(t + h, x5, k7);  // FSAL

    double err = 0.0;
    for (int k = 0; k < N; ++k) {
      const double ek = h * (e1 * k1[k] + e3 * k3[k] + e4 * k4[k] + e5 * k5[k] +
                             e6 * k6[k] + e7 * k7[k]);
      const double sc = opt.abs_tol + opt.rel_tol * std::max(std::abs(x[k]), std::abs(x5[k]));
      err += (ek / sc) * (ek / sc);
    }
    err = std::sqrt(err / N);

    if (err <= 1.0) {
      t += h;
      x = x5;
      k1 = k7;
      out.nodes.push_back({t, x, k1});
      if (stop(t, x)) {
        out.status = OdeStatus::stopped_by_event;
        return out;
      }
    }
    const double fac = (err > 0.0) ? 0.9 * std::pow(err, -0.2) : 5.0;
    h *= std::min(5.0, std::max(0.2, fac));
    if (std::abs(h) > opt.h_max) h = dir * opt.h_max;
  }
  out.status = OdeStatus::step_limit;
  return out;
}

template <int N, typename Rhs>
DenseOde<N> integrate(Rhs&& f, double t0, const State<N>& x0, double t1,
                      const OdeOptions& opt) {
  return integrate<N>(std::forward<Rhs>(f), t0, x0, t1, opt,
                      [](double, const State<N>&) { return false; });
}

// Single classic RK4 step, for fixed-grid coefficient sweeps.
template <int N, typename Rhs>
State<N> rk4_step(Rhs&& f, double t, const State<N>& x, double h) {
  State<N> k1, k2, k3, k4, xt;
  f(t, x, k1);
  for (int k = 0; k < N; ++k) xt[k] = x[k] + 0.5 * h * k1[k];
  f(t + 0.5 * h, xt, k2);
  for (int k = 0; k < N; ++k) xt[k] = x[k] + 0.5 * h * k2[k];
  f(t + 0.5 * h, xt, k3);
  for (int k = 0; k < N; ++k) xt[k] = x[k] + h * k3[k];
  f(t + h, xt, k4);
  State<N> r;
  for (int k = 0; k < N; ++k)
    r[k] = x[k] + (h / 6.0) * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
  return r;
}

}  // namespace beamwf::detail
