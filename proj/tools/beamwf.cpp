// Command-line driver: audits and scans over the library's building blocks.
//
//   beamwf su-audit      --config grid.json      geodesic verdict grid
//   beamwf pair-audit    --config anchor.json    direction-pair identities
//   beamwf beam-residual --config beam.json      quasimode residual sweep
//   beamwf phase-audit   --config probe.json     phase conditions per cached covector
//   beamwf wf-scan       --config scenario.json  full direction classification
//
// Every subcommand reads one JSON config, writes CSV artifacts plus a
// manifest.json (version, config digest, stage timings, warnings) into the
// output directory, and prints a one-line summary. Exit codes: 0 success,
// 2 config problem, 3 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "beamwf/detail/rng.hpp"
#include "beamwf/scenario.hpp"

namespace {

using nlohmann::json;
using namespace beamwf;
using detail_scenario::check_keys;
using detail_scenario::get_num;
using detail_scenario::get_vec2;

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return json::parse(ss.str());
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += sep;
    out += p;
  }
  return out;
}

void write_or_throw(const std::string& path, const std::string& body) {
  if (!detail_scenario::write_file(path, body))
    throw ScenarioError("could not write '" + path + "'");
}

CutoffProfile parse_profile(const json& j, const char* key) {
  if (!j.contains(key)) return CutoffProfile::plateau;
  const std::string s = j[key].get<std::string>();
  if (s == "plateau") return CutoffProfile::plateau;
  if (s == "bump") return CutoffProfile::bump;
  throw ScenarioError(std::string("'") + key + "' must be 'plateau' or 'bump'");
}

std::string csv_name(const json& j, const char* dflt) {
  if (!j.contains("output")) return dflt;
  check_keys(j["output"], {"csv"}, "output");
  return j["output"].contains("csv") ? j["output"]["csv"].get<std::string>()
                                     : std::string(dflt);
}

struct Common {
  std::string config;
  std::string out = ".";
  int threads = 0;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file")->required();
  cmd->add_option("--out", c.out, "output directory (default: current)");
  cmd->add_option("--threads", c.threads, "worker threads (overrides config)");
  cmd->add_option("--seed", c.seed, "RNG seed (overrides config)")
      ->each([&c](const std::string&) { c.seed_given = true; });
}

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("BEAMWF_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 0;
}

void finish(const Common& c, const char* command, const std::string& hash,
            std::uint64_t seed, const std::map<std::string, double>& stages,
            const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const json m = run_manifest(command, hash, seed, stages, warnings);
  write_or_throw(c.out + "/manifest.json", m.dump(2) + "\n");
}

// --- su-audit -----------------------------------------------------------------------
// Deterministic disk coverage: golden-angle spiral base points, evenly spaced
// directions at each. One row per (point, direction) with the full verdict.

int run_su_audit(const Common& c) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const json j = load_json(c.config);
  check_keys(j, {"metric", "grid", "output"}, "su-audit");
  if (!j.contains("metric") || !j.contains("grid"))
    throw ScenarioError("su-audit: 'metric' and 'grid' are required");
  const MetricSpec ms = parse_metric(j["metric"]);
  const ChartMetric chart = make_metric(ms);

  const json& g = j["grid"];
  check_keys(g, {"points", "directions", "radius_frac"}, "grid");
  const int n_base = static_cast<int>(get_num(g, "points", 20));
  const int n_dir = static_cast<int>(get_num(g, "directions", 16));
  const double frac = get_num(g, "radius_frac", 0.8);
  if (n_base < 1 || n_dir < 1 || !(frac > 0.0 && frac < 1.0))
    throw ScenarioError("grid: need points >= 1, directions >= 1, 0 < radius_frac < 1");

  std::string csv =
      "index,z_x,z_y,eta_angle,ok,witness_x,witness_y,t_out,t_in,"
      "first_conj_fwd,first_conj_bwd,reasons\n";
  std::vector<std::string> warnings;
  int n_ok = 0, idx = 0;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n_base; ++i) {
    const double r = frac * ms.radius * std::sqrt((i + 0.5) / n_base);
    const Vec2 z{r * std::cos(golden * i), r * std::sin(golden * i)};
    for (int k = 0; k < n_dir; ++k, ++idx) {
      const double ang = 2.0 * M_PI * k / n_dir;
      const Vec2 eta = chart.unit_covector(z, ang);
      const WitnessVerdict w = su_witness(chart, z, eta);
      n_ok += w.ok;
      // When the witness exists its verdict is clean, so the times shown are
      // the passing geodesic's; on failure show the +perp attempt and tag
      // each failure reason with the side it came from.
      const SuVerdict& v = w.ok ? (w.first.ok ? w.first : w.second) : w.first;
      std::string reasons;
      if (!w.ok) {
        std::vector<std::string> tagged;
        for (const auto& r : w.first.reasons) tagged.push_back("+perp:" + r);
        for (const auto& r : w.second.reasons) tagged.push_back("-perp:" + r);
        reasons = join(tagged, ";");
      }
      detail::CsvRow row(csv);
      row.num(idx)
          .num(z.x)
          .num(z.y)
          .num(ang)
          .num(w.ok ? 1 : 0)
          .num(w.witness.x)
          .num(w.witness.y)
          .num(v.path.t_out())
          .num(v.path.t_in())
          .num(v.conj_fwd.empty() ? 0.0 : v.conj_fwd.front())
          .num(v.conj_bwd.empty() ? 0.0 : v.conj_bwd.front())
          .field(reasons);
    }
  }

  const std::string path = c.out + "/" + csv_name(j, "su_audit.csv");
  write_or_throw(path, csv);
  const double secs = std::chrono::duration<double>(clock::now() - t0).count();
  finish(c, "su-audit", detail_scenario::hash_hex(j.dump()), 0, {{"audit", secs}},
         warnings);
  std::printf("su-audit: %d/%d ok -> %s\n", n_ok, idx, path.c_str());
  return 0;
}

// --- pair-audit ---------------------------------------------------------------------
// Random covectors in the pair field's validity ball; each row reports the
// covector-sum identity defect, the unit-norm defects, and the disagreement
// between the transported and the pointwise backends.

int run_pair_audit(const Common& c) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const json j = load_json(c.config);
  check_keys(j, {"metric", "anchor", "samples", "output", "seed"}, "pair-audit");
  if (!j.contains("metric") || !j.contains("anchor"))
    throw ScenarioError("pair-audit: 'metric' and 'anchor' are required");
  const ChartMetric chart = make_metric(parse_metric(j["metric"]));

  const json& a = j["anchor"];
  check_keys(a, {"z", "xi_angle_deg", "zeta_angle_deg"}, "anchor");
  const Vec2 z0 = get_vec2(a, "z", {0.0, 0.0});
  const double xi_ang = get_num(a, "xi_angle_deg", 0.0) * M_PI / 180.0;
  const double ze_ang = get_num(a, "zeta_angle_deg", 45.0) * M_PI / 180.0;
  const int n = static_cast<int>(get_num(j, "samples", 200));
  if (n < 1) throw ScenarioError("pair-audit: 'samples' must be positive");
  std::uint64_t seed = j.contains("seed") ? j["seed"].get<std::uint64_t>() : 0;
  if (c.seed_given) seed = c.seed;

  const Vec2 xi0 = chart.unit_covector(z0, xi_ang);
  const Vec2 zeta1 = chart.unit_covector(z0, xi_ang + ze_ang);
  const PairField f = build_pair_field(chart, z0, xi0, zeta1);
  const double angle0 = std::atan2(f.xi0.y, f.xi0.x);

  std::string csv = "index,z_x,z_y,xi_x,xi_y,t,par_defect,unit_defect,backend_defect\n";
  detail::Rng rng(seed);
  double worst_par = 0.0, worst_unit = 0.0, worst_backend = 0.0;
  for (int i = 0; i < n; ++i) {
    // uniform over the product-metric ball: radius rho split between base
    // displacement and covector rotation
    const double rho = f.valid_radius * std::sqrt(rng.uniform());
    const double psi = rng.uniform(0.0, 2.0 * M_PI);
    const double phi = rng.uniform(0.0, 2.0 * M_PI);
    const double d = rho * std::abs(std::cos(psi));
    const Vec2 z = f.nc.exp_point({d * std::cos(phi), d * std::sin(phi)});
    const Vec2 xi = chart.unit_covector(z, angle0 + rho * std::sin(psi));

    const PairDirections p = pair_map(f, z, xi);
    const PairDirections q = pair_map_pt(f, z, xi);
    const Mat2 gi = chart.metric_inv_at(z);
    const Vec2 xh = chart.normalize_covector(z, xi);
    const Vec2 sum = p.omega1 + p.omega2;
    const double t = co_inner(gi, sum, xh);
    const Vec2 res = sum - t * xh;
    const double par = std::sqrt(std::max(0.0, co_inner(gi, res, res)));
    const double unit =
        std::max(std::abs(std::sqrt(co_inner(gi, p.omega1, p.omega1)) - 1.0),
                 std::abs(std::sqrt(co_inner(gi, p.omega2, p.omega2)) - 1.0));
    const double backend =
        std::max(norm(p.omega1 - q.omega1), norm(p.omega2 - q.omega2));
    worst_par = std::max(worst_par, par);
    worst_unit = std::max(worst_unit, unit);
    worst_backend = std::max(worst_backend, backend);
    detail::CsvRow row(csv);
    row.num(i).num(z.x).num(z.y).num(xi.x).num(xi.y).num(t).num(par).num(unit).num(
        backend);
  }

  const std::string path = c.out + "/" + csv_name(j, "pair_audit.csv");
  write_or_throw(path, csv);
  const double secs = std::chrono::duration<double>(clock::now() - t0).count();
  finish(c, "pair-audit", detail_scenario::hash_hex(j.dump()), seed, {{"audit", secs}},
         {});
  std::printf(
      "pair-audit: %d samples, worst parallel %.3e, unit %.3e, backend %.3e -> %s\n", n,
      worst_par, worst_unit, worst_backend, path.c_str());
  return 0;
}

// --- beam-residual ------------------------------------------------------------------
// One beam per requested order, residual norms over a frequency grid.

int run_beam_residual(const Common& c) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const json j = load_json(c.config);
  check_keys(j, {"metric", "beam", "orders", "tau_grid", "output"}, "beam-residual");
  if (!j.contains("metric") || !j.contains("beam"))
    throw ScenarioError("beam-residual: 'metric' and 'beam' are required");
  const ChartMetric chart = make_metric(parse_metric(j["metric"]));

  const json& b = j["beam"];
  check_keys(b, {"z", "xi", "delta", "lambda", "profile"}, "beam");
  const Vec2 z = get_vec2(b, "z", {0.0, 0.0});
  const Vec2 xi = get_vec2(b, "xi", {1.0, 0.0});
  BeamOptions bo;
  bo.delta = get_num(b, "delta", 0.0);
  bo.profile = parse_profile(b, "profile");
  const double lambda = get_num(b, "lambda", 0.0);

  std::vector<int> orders{0, 1};
  if (j.contains("orders")) {
    orders.clear();
    for (const auto& o : j["orders"]) orders.push_back(o.get<int>());
  }
  std::vector<double> taus{25.0, 50.0, 100.0, 200.0, 400.0};
  if (j.contains("tau_grid")) {
    taus.clear();
    for (const auto& t : j["tau_grid"]) taus.push_back(t.get<double>());
  }
  if (taus.size() < 2) throw ScenarioError("beam-residual: 'tau_grid' needs >= 2 entries");

  std::string csv = "order,tau,residual,l2_norm,rel_error,warned\n";
  std::vector<std::string> warnings;
  json slopes;
  for (const int ord : orders) {
    if (ord != 0 && ord != 1) throw ScenarioError("beam-residual: orders are 0 or 1");
    const GaussianBeam beam = make_beam(chart, z, xi, ord, bo);
    if (beam.delta_shrunk)
      warnings.push_back("order " + std::to_string(ord) +
                         ": width shrunk to keep the phase positive");
    // least squares on log residual vs log tau
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const double tau : taus) {
      const ResidualReport r = residual_norm(beam, cplx{tau, lambda});
      if (r.warned)
        warnings.push_back("order " + std::to_string(ord) + ", tau " +
                           std::to_string(tau) + ": residual quadrature above 1%");
      detail::CsvRow row(csv);
      row.num(ord).num(tau).num(r.residual).num(r.l2_norm).num(r.rel_error).num(
          r.warned ? 1 : 0);
      const double lx = std::log(tau), ly = std::log(r.residual / r.l2_norm);
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
    }
    const double m = taus.size();
    slopes["order" + std::to_string(ord)] = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  }

  const std::string path = c.out + "/" + csv_name(j, "beam_residual.csv");
  write_or_throw(path, csv);
  const double secs = std::chrono::duration<double>(clock::now() - t0).count();
  json m = run_manifest("beam-residual", detail_scenario::hash_hex(j.dump()), 0,
                        {{"audit", secs}}, warnings);
  m["residual_over_l2_slopes"] = slopes;
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  write_or_throw(c.out + "/manifest.json", m.dump(2) + "\n");
  std::printf("beam-residual: slopes %s -> %s\n", slopes.dump().c_str(), path.c_str());
  return 0;
}

// --- phase-audit --------------------------------------------------------------------
// Builds a probe and audits the summed phase at every cached covector.

int run_phase_audit(const Common& c) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const json j = load_json(c.config);
  check_keys(j, {"metric", "probe", "output"}, "phase-audit");
  if (!j.contains("metric") || !j.contains("probe"))
    throw ScenarioError("phase-audit: 'metric' and 'probe' are required");
  const ChartMetric chart = make_metric(parse_metric(j["metric"]));

  const json& p = j["probe"];
  check_keys(p,
             {"z", "xi_angle_deg", "zeta_angle_deg", "lambda1", "lambda2", "order",
              "delta", "xi_radius", "profile"},
             "probe");
  const Vec2 z0 = get_vec2(p, "z", {0.0, 0.0});
  const double xi_ang = get_num(p, "xi_angle_deg", 0.0) * M_PI / 180.0;
  const double ze_ang = get_num(p, "zeta_angle_deg", 45.0) * M_PI / 180.0;
  ProbeOptions opts;
  opts.xi_radius = get_num(p, "xi_radius", 0.0);
  opts.profile = parse_profile(p, "profile");
  const Vec2 xi0 = chart.unit_covector(z0, xi_ang);
  const Vec2 zeta1 = chart.unit_covector(z0, xi_ang + ze_ang);

  FbiProbe probe =
      probe_build(chart, z0, xi0, zeta1, get_num(p, "lambda1", 0.0),
                  get_num(p, "lambda2", 0.0), static_cast<int>(get_num(p, "order", 1.0)),
                  get_num(p, "delta", 0.0), opts);
  std::vector<std::string> warnings = probe.notes;

  std::string csv =
      "index,z_x,z_y,xi_x,xi_y,grad_defect,grad_tol,hess_min,hess_tol,"
      "hess_scale_defect,im_min,im_tol,homog_defect,homog_tol,diag_defect,diag_tol,ok\n";
  int idx = 0, n_ok = 0;
  for (const CachedXi& k : probe.cached()) {
    const PhaseAudit a = phase_audit(probe, k.z, k.xi_hat);
    n_ok += a.ok;
    if (!a.ok)
      warnings.push_back("phase conditions failed at cached covector " +
                         std::to_string(idx));
    detail::CsvRow row(csv);
    row.num(idx++)
        .num(k.z.x)
        .num(k.z.y)
        .num(k.xi_hat.x)
        .num(k.xi_hat.y)
        .num(a.grad_defect)
        .num(a.grad_tol)
        .num(a.hess_min)
        .num(a.hess_tol)
        .num(a.hess_scale_defect)
        .num(a.im_min)
        .num(a.im_tol)
        .num(a.homog_defect)
        .num(a.homog_tol)
        .num(a.diag_defect)
        .num(a.diag_tol)
        .num(a.ok ? 1 : 0);
  }

  const std::string path = c.out + "/" + csv_name(j, "phase_audit.csv");
  write_or_throw(path, csv);
  const double secs = std::chrono::duration<double>(clock::now() - t0).count();
  finish(c, "phase-audit", detail_scenario::hash_hex(j.dump()), 0, {{"audit", secs}},
         warnings);
  std::printf("phase-audit: %d/%d covectors pass, t0 %.12g -> %s\n", n_ok, idx, probe.t0,
              path.c_str());
  return 0;
}

// --- wf-scan ------------------------------------------------------------------------

int run_wf_scan(const Common& c) {
  Scenario sc = parse_scenario(load_json(c.config));
  if (c.seed_given) sc.seed = c.seed;
  const RunReport rep = run_scenario(sc, c.out, resolve_threads(c.threads));
  for (const auto& w : rep.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (rep.status != 0) {
    std::fprintf(stderr, "error: %s\n", rep.message.c_str());
    return rep.status;
  }
  std::map<std::string, int> counts;
  for (const auto& r : rep.records) counts[wf_label(r.cls)]++;
  std::string tally;
  for (const auto& [k, v] : counts)
    tally += (tally.empty() ? "" : ", ") + std::to_string(v) + " " + k;
  std::printf("wf-scan: %zu directions (%s) -> %s\n", rep.records.size(), tally.c_str(),
              rep.csv_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wave front scanner on conformal disk metrics"};
  app.set_version_flag("--version", beamwf::version);
  app.require_subcommand(1);

  Common c;
  int (*runner)(const Common&) = nullptr;
  const std::pair<const char*, int (*)(const Common&)> cmds[] = {
      {"su-audit", run_su_audit},           {"pair-audit", run_pair_audit},
      {"beam-residual", run_beam_residual}, {"phase-audit", run_phase_audit},
      {"wf-scan", run_wf_scan},
  };
  for (const auto& [name, fn] : cmds) {
    CLI::App* sub = app.add_subcommand(name);
    add_common(sub, c);
    sub->callback([&runner, fn = fn] { runner = fn; });
  }
  CLI11_PARSE(app, argc, argv);

  try {
    return runner(c);
  } catch (const beamwf::ScenarioError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
