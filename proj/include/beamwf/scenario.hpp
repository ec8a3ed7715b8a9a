#pragma once
// Scenario configs for the command-line driver: JSON in, direction scan out,
// with deterministic CSV/JSON artifacts and a run manifest.
//
// A scenario names a metric, a test field with known regularity, a base
// point with a direction grid, and the probe parameters. Parsing is strict:
// unknown keys, missing required fields, and out-of-range values are config
// errors (exit code 2 at the tool level), reported before any artifact is
// written. Numerical failures inside a run are exit code 3.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "beamwf/detail/csv.hpp"
#include "beamwf/fbi.hpp"
#include "beamwf/manifold.hpp"
#include "beamwf/version.hpp"

namespace beamwf {

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- metric and field specs ---------------------------------------------------------

struct MetricSpec {
  std::string kind = "euclidean";  // euclidean | constant-curvature | conformal-bump
  double radius = 1.0;
  double K = 0.0;          // constant-curvature only
  double amplitude = 0.0;  // conformal-bump only
  Vec2 center{0.0, 0.0};
  double width = 1.0;
};

struct FieldSpec {
  std::string kind = "zero";  // gaussian | half-plane-jump | cone | zero
  Vec2 center{0.0, 0.0};      // gaussian, cone
  double sigma = 0.35;        // gaussian
  Vec2 point{0.0, 0.0};       // half-plane-jump
  Vec2 normal{1.0, 0.0};
  double alpha = 0.5;         // cone exponent
};

struct TestFunction {
  ScalarField field;
  std::string wf_note;  // human-readable description of the singular support
};

inline ChartMetric make_metric(const MetricSpec& m) {
  if (!(m.radius > 0.0)) throw ScenarioError("metric: radius must be positive");
  if (m.kind == "euclidean") return ChartMetric::euclidean(m.radius);
  if (m.kind == "constant-curvature") return ChartMetric::constant_curvature(m.K, m.radius);
  if (m.kind == "conformal-bump") {
    if (!(m.width > 0.0)) throw ScenarioError("metric: bump width must be positive");
    return ChartMetric::conformal_bump(m.amplitude, m.center, m.width, m.radius);
  }
  throw ScenarioError("metric: unknown kind '" + m.kind + "'");
}

inline TestFunction make_test_function(const FieldSpec& f) {
  TestFunction out;
  char note[160];
  if (f.kind == "gaussian") {
    if (!(f.sigma > 0.0)) throw ScenarioError("field: gaussian sigma must be positive");
    const Vec2 c = f.center;
    const double s2 = f.sigma * f.sigma;
    out.field.eval = [c, s2](const Vec2& x) {
      const Vec2 d = x - c;
      return std::exp(-dot(d, d) / s2);
    };
    out.wf_note = "wave front set: empty";
    return out;
  }
  if (f.kind == "half-plane-jump") {
    const double nn = norm(f.normal);
    if (!(nn > 0.0)) throw ScenarioError("field: jump normal must be nonzero");
    const Vec2 nu = f.normal / nn;
    const Vec2 p = f.point;
    out.field.eval = [p, nu](const Vec2& x) { return dot(x - p, nu) > 0.0 ? 1.0 : 0.0; };
    out.field.has_jump = true;
    out.field.jump_point = p;
    out.field.jump_normal = nu;
    std::snprintf(note, sizeof note,
                  "wave front set: +/- (%g, %g) conormal along the line through (%g, %g)",
                  nu.x, nu.y, p.x, p.y);
    out.wf_note = note;
    return out;
  }
  if (f.kind == "cone") {
    if (!(f.alpha > 0.0)) throw ScenarioError("field: cone exponent must be positive");
    const Vec2 c = f.center;
    const double a = f.alpha;
    out.field.eval = [c, a](const Vec2& x) { return std::pow(norm(x - c), a); };
    std::snprintf(note, sizeof note, "wave front set: every direction at (%g, %g)", c.x,
                  c.y);
    out.wf_note = note;
    return out;
  }
  if (f.kind == "zero") {
    out.field.eval = [](const Vec2&) { return 0.0; };
    out.wf_note = "wave front set: empty";
    return out;
  }
  throw ScenarioError("field: unknown kind '" + f.kind + "'");
}

// --- scenario -----------------------------------------------------------------------

struct Scenario {
  MetricSpec metric;
  FieldSpec field;
  Vec2 z0{0.0, 0.0};
  int n_directions = 16;       // evenly spaced full turn, used when angles is empty
  std::vector<double> angles;  // explicit chart angles (radians)
  ScanParams scan;
  std::uint64_t seed = 0;
  std::string csv_path = "wf_scan.csv";
  std::string summary_path = "wf_summary.json";
};

namespace detail_scenario {

using nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const char* where) {
  if (!j.is_object()) throw ScenarioError(std::string(where) + ": expected an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) ok = true;
    if (!ok)
      throw ScenarioError(std::string(where) + ": unknown key '" + item.key() + "'");
  }
}

inline double get_num(const json& j, const char* key, double dflt) {
  if (!j.contains(key)) return dflt;
  if (!j[key].is_number())
    throw ScenarioError(std::string("expected a number for '") + key + "'");
  return j[key].get<double>();
}

inline Vec2 get_vec2(const json& j, const char* key, Vec2 dflt) {
  if (!j.contains(key)) return dflt;
  const auto& v = j[key];
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ScenarioError(std::string("expected [x, y] for '") + key + "'");
  return {v[0].get<double>(), v[1].get<double>()};
}

inline std::string hash_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace detail_scenario

inline MetricSpec parse_metric(const nlohmann::json& j) {
  using namespace detail_scenario;
  check_keys(j, {"kind", "radius", "K", "amplitude", "center", "width"}, "metric");
  MetricSpec m;
  if (j.contains("kind")) m.kind = j["kind"].get<std::string>();
  m.radius = get_num(j, "radius", m.radius);
  m.K = get_num(j, "K", m.K);
  m.amplitude = get_num(j, "amplitude", m.amplitude);
  m.center = get_vec2(j, "center", m.center);
  m.width = get_num(j, "width", m.width);
  (void)make_metric(m);  // validate eagerly
  return m;
}

inline FieldSpec parse_field(const nlohmann::json& j) {
  using namespace detail_scenario;
  check_keys(j, {"kind", "center", "sigma", "point", "normal", "alpha"}, "field");
  FieldSpec f;
  if (j.contains("kind")) f.kind = j["kind"].get<std::string>();
  f.center = get_vec2(j, "center", f.center);
  f.sigma = get_num(j, "sigma", f.sigma);
  f.point = get_vec2(j, "point", f.point);
  f.normal = get_vec2(j, "normal", f.normal);
  f.alpha = get_num(j, "alpha", f.alpha);
  (void)make_test_function(f);
  return f;
}

inline Scenario parse_scenario(const nlohmann::json& j) {
  using namespace detail_scenario;
  check_keys(j, {"metric", "field", "scan", "output", "seed"}, "scenario");
  if (!j.contains("metric") || !j.contains("field") || !j.contains("scan"))
    throw ScenarioError("scenario: 'metric', 'field', and 'scan' are required");

  Scenario sc;
  sc.metric = parse_metric(j["metric"]);
  sc.field = parse_field(j["field"]);

  const auto& s = j["scan"];
  check_keys(s,
             {"z", "directions", "angles_deg", "tau_grid", "zeta_angle_deg", "lambda1",
              "lambda2", "order", "delta", "s_smooth", "s_sing", "tau_min", "threads"},
             "scan");
  sc.z0 = get_vec2(s, "z", sc.z0);
  if (s.contains("directions")) {
    if (!s["directions"].is_number_integer() || s["directions"].get<int>() < 1)
      throw ScenarioError("scan: 'directions' must be a positive integer");
    sc.n_directions = s["directions"].get<int>();
  }
  if (s.contains("angles_deg")) {
    if (!s["angles_deg"].is_array() || s["angles_deg"].empty())
      throw ScenarioError("scan: 'angles_deg' must be a nonempty array");
    for (const auto& a : s["angles_deg"]) {
      if (!a.is_number()) throw ScenarioError("scan: 'angles_deg' entries must be numbers");
      sc.angles.push_back(a.get<double>() * M_PI / 180.0);
    }
  }
  if (s.contains("tau_grid")) {
    if (!s["tau_grid"].is_array() || s["tau_grid"].size() < 5)
      throw ScenarioError("scan: 'tau_grid' needs at least five entries");
    sc.scan.tau_grid.clear();
    for (const auto& t : s["tau_grid"]) {
      if (!t.is_number()) throw ScenarioError("scan: 'tau_grid' entries must be numbers");
      sc.scan.tau_grid.push_back(t.get<double>());
    }
    for (std::size_t i = 0; i + 1 < sc.scan.tau_grid.size(); ++i)
      if (!(sc.scan.tau_grid[i] > 0.0 && sc.scan.tau_grid[i + 1] > sc.scan.tau_grid[i]))
        throw ScenarioError("scan: 'tau_grid' must be positive and increasing");
  }
  sc.scan.zeta_angle = get_num(s, "zeta_angle_deg", 45.0) * M_PI / 180.0;
  sc.scan.lambda1 = get_num(s, "lambda1", 0.0);
  sc.scan.lambda2 = get_num(s, "lambda2", 0.0);
  const double order = get_num(s, "order", 1.0);
  if (order != 0.0 && order != 1.0) throw ScenarioError("scan: 'order' must be 0 or 1");
  sc.scan.order = static_cast<int>(order);
  sc.scan.delta = get_num(s, "delta", 0.0);
  if (sc.scan.delta < 0.0) throw ScenarioError("scan: 'delta' must be nonnegative");
  sc.scan.thresholds.s_smooth = get_num(s, "s_smooth", 5.0);
  sc.scan.thresholds.s_sing = get_num(s, "s_sing", 2.5);
  if (!(sc.scan.thresholds.s_smooth > sc.scan.thresholds.s_sing &&
        sc.scan.thresholds.s_sing > 0.0))
    throw ScenarioError("scan: thresholds need s_smooth > s_sing > 0");
  sc.scan.quad.tau_min = get_num(s, "tau_min", 10.0);
  if (!(sc.scan.quad.tau_min > 0.0)) throw ScenarioError("scan: 'tau_min' must be positive");
  if (!sc.scan.tau_grid.empty() && sc.scan.tau_grid.front() < sc.scan.quad.tau_min)
    throw ScenarioError("scan: 'tau_grid' starts below 'tau_min'");
  const double threads = get_num(s, "threads", 1.0);
  if (!(threads >= 1.0)) throw ScenarioError("scan: 'threads' must be at least 1");
  sc.scan.threads = static_cast<int>(threads);

  if (j.contains("output")) {
    const auto& o = j["output"];
    check_keys(o, {"csv", "summary"}, "output");
    if (o.contains("csv")) sc.csv_path = o["csv"].get<std::string>();
    if (o.contains("summary")) sc.summary_path = o["summary"].get<std::string>();
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned())
      throw ScenarioError("scenario: 'seed' must be a nonnegative integer");
    sc.seed = j["seed"].get<std::uint64_t>();
  }

  // the base point must lie inside the configured domain
  const ChartMetric chart = make_metric(sc.metric);
  if (!(chart.boundary(sc.z0) < 0.0))
    throw ScenarioError("scan: base point lies outside the domain");
  return sc;
}

// Canonical re-serialization; parse(scenario_json(sc)) re-validates to the
// same scenario, and its dump is what the config hash digests.
inline nlohmann::json scenario_json(const Scenario& sc) {
  nlohmann::json j;
  j["metric"]["kind"] = sc.metric.kind;
  j["metric"]["radius"] = sc.metric.radius;
  if (sc.metric.kind == "constant-curvature") j["metric"]["K"] = sc.metric.K;
  if (sc.metric.kind == "conformal-bump") {
    j["metric"]["amplitude"] = sc.metric.amplitude;
    j["metric"]["center"] = {sc.metric.center.x, sc.metric.center.y};
    j["metric"]["width"] = sc.metric.width;
  }
  j["field"]["kind"] = sc.field.kind;
  if (sc.field.kind == "gaussian") {
    j["field"]["center"] = {sc.field.center.x, sc.field.center.y};
    j["field"]["sigma"] = sc.field.sigma;
  } else if (sc.field.kind == "half-plane-jump") {
    j["field"]["point"] = {sc.field.point.x, sc.field.point.y};
    j["field"]["normal"] = {sc.field.normal.x, sc.field.normal.y};
  } else if (sc.field.kind == "cone") {
    j["field"]["center"] = {sc.field.center.x, sc.field.center.y};
    j["field"]["alpha"] = sc.field.alpha;
  }
  auto& s = j["scan"];
  s["z"] = {sc.z0.x, sc.z0.y};
  if (sc.angles.empty()) {
    s["directions"] = sc.n_directions;
  } else {
    std::vector<double> deg;
    for (const double a : sc.angles) deg.push_back(a * 180.0 / M_PI);
    s["angles_deg"] = deg;
  }
  s["tau_grid"] = sc.scan.tau_grid;
  s["zeta_angle_deg"] = sc.scan.zeta_angle * 180.0 / M_PI;
  s["lambda1"] = sc.scan.lambda1;
  s["lambda2"] = sc.scan.lambda2;
  s["order"] = sc.scan.order;
  s["delta"] = sc.scan.delta;
  s["s_smooth"] = sc.scan.thresholds.s_smooth;
  s["s_sing"] = sc.scan.thresholds.s_sing;
  s["tau_min"] = sc.scan.quad.tau_min;
  s["threads"] = sc.scan.threads;
  j["output"]["csv"] = sc.csv_path;
  j["output"]["summary"] = sc.summary_path;
  j["seed"] = sc.seed;
  return j;
}

inline std::string config_hash(const Scenario& sc) {
  return detail_scenario::hash_hex(scenario_json(sc).dump());
}

// --- runs ---------------------------------------------------------------------------

struct RunReport {
  int status = 0;  // 0 ok, 2 config error, 3 numerical failure
  std::string message;
  std::string csv_path, summary_path, manifest_path;
  std::vector<DirectionRecord> records;
  std::vector<std::string> warnings;
};

namespace detail_scenario {

inline bool write_file(const std::string& path, const std::string& body) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) return false;
  const std::size_t n = std::fwrite(body.data(), 1, body.size(), f);
  return std::fclose(f) == 0 && n == body.size();
}

}  // namespace detail_scenario

// Manifest shared by all driver subcommands: tool version, config digest,
// wall-clock per stage, and any warnings the run surfaced.
inline nlohmann::json run_manifest(const std::string& command, const std::string& hash,
                                   std::uint64_t seed,
                                   const std::map<std::string, double>& stages,
                                   const std::vector<std::string>& warnings) {
  nlohmann::json m;
  m["version"] = version;
  m["command"] = command;
  m["config_hash"] = hash;
  m["seed"] = seed;
  for (const auto& [k, v] : stages) m["stages_seconds"][k] = v;
  m["warnings"] = warnings;
  return m;
}

inline RunReport run_scenario(const Scenario& sc, const std::string& out_dir,
                              int threads_override = 0) {
  using clock = std::chrono::steady_clock;
  RunReport rep;
  rep.csv_path = out_dir + "/" + sc.csv_path;
  rep.summary_path = out_dir + "/" + sc.summary_path;
  rep.manifest_path = out_dir + "/manifest.json";

  ChartMetric chart = make_metric(sc.metric);
  TestFunction fn = make_test_function(sc.field);

  std::vector<ScanDirection> dirs;
  if (sc.angles.empty()) {
    for (int k = 0; k < sc.n_directions; ++k)
      dirs.push_back({sc.z0, 2.0 * M_PI * k / sc.n_directions});
  } else {
    for (const double a : sc.angles) dirs.push_back({sc.z0, a});
  }

  ScanParams par = sc.scan;
  if (threads_override > 0) par.threads = threads_override;

  const auto t_scan = clock::now();
  try {
    rep.records = wf_scan(chart, fn.field, dirs, par);
  } catch (const std::exception& e) {
    rep.status = 3;
    rep.message = std::string("scan failed: ") + e.what();
    return rep;
  }
  const double scan_s = std::chrono::duration<double>(clock::now() - t_scan).count();

  for (const auto& r : rep.records) {
    if (r.cls == WfClass::untestable)
      rep.warnings.push_back("direction " + std::to_string(r.index) +
                             " untestable: " + r.reason);
    if (r.quad_warned)
      rep.warnings.push_back("direction " + std::to_string(r.index) +
                             ": quadrature refinement above 1% on some samples");
  }

  // CSV: one row per direction.
  std::string csv =
      "index,z_x,z_y,angle,xi_x,xi_y,t0,slope,r2,class,floored,underflow,quad_warned,"
      "noise,reason\n";
  for (std::size_t i = 0; i < rep.records.size(); ++i) {
    const auto& r = rep.records[i];
    detail::CsvRow row(csv);
    row.num(r.index)
        .num(r.z.x)
        .num(r.z.y)
        .num(dirs[i].angle)
        .num(r.xi_hat.x)
        .num(r.xi_hat.y)
        .num(r.t0)
        .num(r.slope)
        .num(r.r2)
        .field(wf_label(r.cls))
        .num(r.floored ? 1 : 0)
        .num(r.underflow ? 1 : 0)
        .num(r.quad_warned ? 1 : 0)
        .num(r.noise)
        .field(r.reason);
  }

  const std::string hash = config_hash(sc);
  nlohmann::json summary;
  summary["version"] = version;
  summary["config_hash"] = hash;
  summary["config"] = scenario_json(sc);
  summary["field_note"] = fn.wf_note;
  std::map<std::string, int> counts;
  for (const auto& r : rep.records) counts[wf_label(r.cls)]++;
  for (const auto& [k, v] : counts) summary["counts"][k] = v;
  auto& out_dirs = summary["directions"];
  out_dirs = nlohmann::json::array();
  for (std::size_t i = 0; i < rep.records.size(); ++i) {
    const auto& r = rep.records[i];
    nlohmann::json d;
    d["index"] = r.index;
    d["z"] = {r.z.x, r.z.y};
    d["angle"] = dirs[i].angle;
    d["xi"] = {r.xi_hat.x, r.xi_hat.y};
    d["t0"] = r.t0;
    d["class"] = wf_label(r.cls);
    d["slope"] = r.slope;
    d["r2"] = r.r2;
    d["magnitudes"] = r.mags;
    d["noise"] = r.noise;
    d["floored"] = r.floored;
    d["underflow"] = r.underflow;
    d["quad_warned"] = r.quad_warned;
    if (!r.reason.empty()) d["reason"] = r.reason;
    out_dirs.push_back(d);
  }

  const auto t_write = clock::now();
  bool ok = detail_scenario::write_file(rep.csv_path, csv);
  ok = ok && detail_scenario::write_file(rep.summary_path, summary.dump(2) + "\n");
  const double write_s = std::chrono::duration<double>(clock::now() - t_write).count();
  const nlohmann::json manifest = run_manifest(
      "wf-scan", hash, sc.seed, {{"scan", scan_s}, {"write", write_s}}, rep.warnings);
  ok = ok && detail_scenario::write_file(rep.manifest_path, manifest.dump(2) + "\n");
  if (!ok) {
    rep.status = 2;
    rep.message = "could not write artifacts under '" + out_dir + "'";
  }
  return rep;
}

}  // namespace beamwf
