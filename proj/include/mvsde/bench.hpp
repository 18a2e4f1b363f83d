#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "error.hpp"
#include "field.hpp"
#include "fit.hpp"
#include "io.hpp"
#include "kernels.hpp"
#include "metrics.hpp"
#include "norms.hpp"
#include "particles.hpp"
#include "solver.hpp"
#include "spectral.hpp"

namespace mvsde {

inline constexpr const char* kVersion = "0.1.0";

struct ReportRow {
  std::string quantity;
  double theory = 0;
  double measured = 0;
  double tol = 0;
  bool pass = false;

  /// |measured - theory| ≤ tol.
  static ReportRow match(std::string q, double theory, double measured, double tol) {
    return {std::move(q), theory, measured, tol, std::isfinite(measured) && std::abs(measured - theory) <= tol};
  }
  /// measured ≤ bound + tol.
  static ReportRow at_most(std::string q, double bound, double measured, double tol = 0.0) {
    return {std::move(q), bound, measured, tol, std::isfinite(measured) && measured <= bound + tol};
  }
  /// measured ≥ bound - tol.
  static ReportRow at_least(std::string q, double bound, double measured, double tol = 0.0) {
    return {std::move(q), bound, measured, tol, std::isfinite(measured) && measured >= bound - tol};
  }
  bool operator==(const ReportRow&) const = default;
};

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool operator==(const PlotSeries&) const = default;
};

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  int grid = 0;
  std::string version = kVersion;
  std::string timestamp;
  bool operator==(const Provenance&) const = default;
};

/// Extra CSV/JSON artifact written next to the report (file name, contents).
struct ReportTable {
  std::string file;
  std::string body;
  bool operator==(const ReportTable&) const = default;
};

struct RunReport {
  std::string experiment;
  std::vector<ReportRow> rows;
  Provenance provenance;
  std::vector<PlotSeries> plots;
  std::vector<std::string> notes;
  std::vector<ReportTable> tables;

  bool all_pass() const {
    return std::all_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.pass; });
  }
  bool operator==(const RunReport&) const = default;
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace detail {

inline nlohmann::json num_json(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

inline double json_num(const nlohmann::json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    if (s == "nan") return std::nan("");
    fail(ErrorKind::Io, "unexpected number text '" + s + "' in report JSON");
  }
  return j.get<double>();
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json j;
  j["experiment"] = r.experiment;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows)
    j["rows"].push_back({{"quantity", row.quantity},
                         {"theory", detail::num_json(row.theory)},
                         {"measured", detail::num_json(row.measured)},
                         {"tol", detail::num_json(row.tol)},
                         {"pass", row.pass}});
  j["provenance"] = {{"config_hash", r.provenance.config_hash},
                     {"seed", r.provenance.seed},
                     {"grid", r.provenance.grid},
                     {"version", r.provenance.version},
                     {"timestamp", r.provenance.timestamp}};
  j["plots"] = nlohmann::json::array();
  for (const auto& p : r.plots) {
    nlohmann::json xs = nlohmann::json::array(), ys = nlohmann::json::array();
    for (double v : p.x) xs.push_back(detail::num_json(v));
    for (double v : p.y) ys.push_back(detail::num_json(v));
    j["plots"].push_back({{"name", p.name}, {"x", xs}, {"y", ys}});
  }
  j["notes"] = r.notes;
  j["tables"] = nlohmann::json::array();
  for (const auto& t : r.tables) j["tables"].push_back({{"file", t.file}, {"body", t.body}});
  return j;
}

inline RunReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, std::string("report JSON does not parse: ") + e.what());
  }
  RunReport r;
  try {
    r.experiment = j.at("experiment").get<std::string>();
    for (const auto& row : j.at("rows"))
      r.rows.push_back({row.at("quantity").get<std::string>(), detail::json_num(row.at("theory")),
                        detail::json_num(row.at("measured")), detail::json_num(row.at("tol")),
                        row.at("pass").get<bool>()});
    const auto& p = j.at("provenance");
    r.provenance = {p.at("config_hash").get<std::string>(), p.at("seed").get<std::uint64_t>(), p.at("grid").get<int>(),
                    p.at("version").get<std::string>(), p.at("timestamp").get<std::string>()};
    for (const auto& pl : j.at("plots")) {
      PlotSeries s;
      s.name = pl.at("name").get<std::string>();
      for (const auto& v : pl.at("x")) s.x.push_back(detail::json_num(v));
      for (const auto& v : pl.at("y")) s.y.push_back(detail::json_num(v));
      r.plots.push_back(std::move(s));
    }
    r.notes = j.at("notes").get<std::vector<std::string>>();
    for (const auto& t : j.at("tables")) r.tables.push_back({t.at("file").get<std::string>(), t.at("body").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, std::string("report JSON is missing fields: ") + e.what());
  }
  return r;
}

/// Fixed column order: quantity, theory, measured, tol, pass.
inline std::string report_csv(const RunReport& r) {
  std::string out = "quantity,theory,measured,tol,pass\n";
  for (const auto& row : r.rows)
    out += detail::csv_field(row.quantity) + "," + format_double(row.theory) + "," + format_double(row.measured) + "," +
           format_double(row.tol) + "," + (row.pass ? "true" : "false") + "\n";
  return out;
}

/// Parses the rows of report_csv.
inline std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::vector<ReportRow> rows;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "quantity,theory,measured,tol,pass") fail(ErrorKind::Io, "report CSV header mismatch");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        f.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    f.push_back(cur);
    if (f.size() != 5) fail(ErrorKind::Io, "report CSV row has " + std::to_string(f.size()) + " fields");
    auto num = [](const std::string& s) {
      if (s == "inf") return kInf;
      if (s == "-inf") return -kInf;
      if (s == "nan") return std::nan("");
      return std::strtod(s.c_str(), nullptr);
    };
    rows.push_back({f[0], num(f[1]), num(f[2]), num(f[3]), f[4] == "true"});
  }
  return rows;
}

/// Two whitespace-separated columns, one pair per line.
inline std::string plotdata(const PlotSeries& s) {
  std::string out;
  for (std::size_t i = 0; i < s.x.size(); ++i) out += format_double(s.x[i]) + " " + format_double(s.y[i]) + "\n";
  return out;
}

inline std::vector<std::pair<double, double>> parse_plotdata(const std::string& text) {
  std::vector<std::pair<double, double>> out;
  std::istringstream in(text);
  std::string a, b;
  while (in >> a >> b) out.emplace_back(std::strtod(a.c_str(), nullptr), std::strtod(b.c_str(), nullptr));
  return out;
}

/// Writes report.csv, report.json, plot_<name>.dat and the extra tables; returns the written paths.
inline std::vector<std::string> emit_report(const RunReport& r, const std::string& dir,
                                            const std::set<std::string>& formats = {"csv", "json", "plotdata"}) {
  for (const auto& f : formats)
    require(f == "csv" || f == "json" || f == "plotdata", "unknown report format '" + f + "'");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create '" + dir + "': " + ec.message());
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const std::string& body) {
    const std::string path = (std::filesystem::path(dir) / name).string();
    write_text_file(path, body);
    written.push_back(path);
  };
  if (formats.count("csv")) {
    put("report.csv", report_csv(r));
    for (const auto& t : r.tables) put(t.file, t.body);
  }
  if (formats.count("json")) put("report.json", report_to_json(r).dump(2) + "\n");
  if (formats.count("plotdata"))
    for (const auto& p : r.plots) put("plot_" + p.name + ".dat", plotdata(p));
  return written;
}

/// Tolerances used when a config does not set them.
inline const std::map<std::string, double>& default_tolerances() {
  static const std::map<std::string, double> table{
      {"tol_slope", 0.08},          {"tol_growth", 0.1},         {"tol_null_zero", 1e-8},
      {"tol_null_constant", 1e-6},  {"tol_ratio", 0.9},          {"tol_residual", 1e-6},
      {"tol_time_shift", 1e-4},     {"tol_shift_gaussian", 1e-6}, {"tol_spread", 0.2},
      {"tol_stability_slope", 0.1}, {"tol_linearity", 0.1},      {"tol_entropy_analytic", 1e-6},
      {"tol_mc_slope", 0.15},       {"tol_lipschitz", 0.5},      {"entropy_bound_zero", 0.5},
      {"entropy_bound_kernel", 1.0}};
  return table;
}

inline double tolerance(const Config& cfg, const std::string& key) {
  const auto& t = default_tolerances();
  const auto it = t.find(key);
  require(it != t.end(), "no default tolerance named '" + key + "'");
  return cfg.get_double(key, it->second);
}

inline GridSpec grid_from(const Config& cfg) {
  GridSpec g{int(cfg.get_int("dim", 1)), int(cfg.get_int("grid", 2048)), cfg.get_double("extent", 16.0)};
  g.validate();
  return g;
}

inline FlowParams flow_params_from(const Config& cfg, std::vector<double> times) {
  FlowParams fp;
  fp.eps = cfg.get_double("eps", 0.0);
  fp.p = cfg.get_double("p", kInf);
  fp.delta = cfg.get_double("delta", 1.0);
  fp.k = cfg.get_double("k", 2.0);
  fp.kappa = cfg.get_double("kappa", 0.5);
  fp.T = cfg.get_double("T", 0.5);
  fp.lambda = cfg.get_double("lambda", 0.0);
  fp.dim = int(cfg.get_int("dim", 1));
  fp.substeps = int(cfg.get_int("substeps", 1));
  fp.time_grid = std::move(times);
  return fp;
}

/// Refuses parameter sets outside the solver's condition set, naming the failed condition.
inline Admissibility admissibility_gate(const FlowParams& fp) {
  fp.validate();
  const Admissibility a = eta_theta_params(fp);
  if (!a.solver_condition) fail(ErrorKind::Inadmissible, a.violation);
  return a;
}

/// Kernel from the config with amplitude and mollification overrides applied.
inline KernelSpec kernel_from(const Config& cfg, const std::string& name, int dim) {
  KernelSpec s = kernel_catalog(name, dim);
  const double amp = cfg.get_double("amplitude", 1.0);
  if (auto* r = std::get_if<RieszOrder>(&s.variant))
    for (double& c : r->c) c *= amp;
  if (cfg.has("mollification_eps")) s.mollification_eps = cfg.get_double("mollification_eps", 0.0);
  if (cfg.has("kernel_kappa")) s.modulation.kappa = cfg.get_double("kernel_kappa", 0.0);
  return s;
}

inline Drift drift_for(const KernelSpec& spec, const GridSpec& g) {
  if (const auto* cv = std::get_if<ConstantVector>(&spec.variant))
    if (std::all_of(cv->c.begin(), cv->c.end(), [](double v) { return v == 0.0; })) return zero_drift();
  return kernel_drift(spec, g);
}

inline ScalarField gaussian_density(const GridSpec& g, double mean, double variance) {
  GaussianSpec s;
  s.mean.assign(std::size_t(g.dim), 0.0);
  s.mean[0] = mean;
  s.variance = variance;
  return s.density(g);
}

/// Unit-mass spike at the grid node nearest x.
inline ScalarField dirac_spike(const GridSpec& g, double x = 0.0) {
  ScalarField f(g);
  const int j = std::clamp(int(std::lround((x + 0.5 * g.extent) / g.spacing())), 0, g.points - 1);
  const std::size_t at = g.dim == 1 ? std::size_t(j) : std::size_t(j) * g.points + std::size_t(g.points / 2);
  f.values[at] = 1.0 / g.cell_volume();
  return f;
}

/// max over sampled Gaussian pairs of sup|b_t(μ) - b_t(ν)| / ‖μ - ν‖_{δ,k*}, using the probe (lower) bracket.
inline double measured_lipschitz(const KernelSpec& spec, const GridSpec& g, const SobolevIndex& idx, double t, int pairs,
                                 std::uint64_t seed) {
  const Drift dr = drift_for(spec, g);
  if (!dr.measure_dependent) return 0.0;
  std::mt19937_64 rng(detail::stream_seed(seed, 0x11u));
  std::uniform_real_distribution<double> unif;
  const BallLattice lat = BallLattice::for_grid(g);
  double best = 0;
  for (int j = 0; j < pairs; ++j) {
    const ScalarField mu = gaussian_density(g, 2 * unif(rng) - 1, 0.02 + 0.5 * unif(rng));
    const ScalarField nu = gaussian_density(g, 2 * unif(rng) - 1, 0.02 + 0.5 * unif(rng));
    const double num = (dr(t, mu) - dr(t, nu)).sup_norm();
    const double den = probe_dual_norm(mu - nu, idx, lat, {32, seed + std::uint64_t(j)});
    if (den > 0) best = std::max(best, num / den);
  }
  return best;
}

struct Calibration {
  double amplitude = 0;
  double lipschitz_unit = 0;
};

/// Largest amplitude c with measured Lipschitz constant × horizon < target, by bisection.
inline Calibration calibrate_amplitude(KernelSpec spec, const GridSpec& g, const SobolevIndex& idx, double T,
                                       double target, int pairs, std::uint64_t seed) {
  auto* r = std::get_if<RieszOrder>(&spec.variant);
  require(r != nullptr, "calibration needs a RieszOrder kernel");
  const std::vector<double> base = r->c;
  auto lip_times_T = [&](double c) {
    for (std::size_t i = 0; i < base.size(); ++i) r->c[i] = c * base[i];
    return measured_lipschitz(spec, g, idx, T, pairs, seed) * T;
  };
  double lo = 0, hi = 1;
  while (lip_times_T(hi) < target && hi < 1e6) lo = hi, hi *= 2;
  for (int it = 0; it < 30; ++it) {
    const double mid = 0.5 * (lo + hi);
    (lip_times_T(mid) < target ? lo : hi) = mid;
  }
  return {lo, lip_times_T(1.0) / T};
}

namespace detail {

inline std::string fmt_case(const std::string& head, std::initializer_list<std::pair<const char*, double>> kv) {
  std::string s = head;
  for (const auto& [k, v] : kv) s += std::string(" ") + k + "=" + format_double(v);
  return s;
}

inline std::vector<double> times_from(const Config& cfg, double T) {
  const std::string kind = cfg.get_string("time_grid", "uniform");
  const int steps = int(cfg.get_int("steps", 100));
  if (kind == "uniform") return uniform_time_grid(T, steps);
  if (kind == "geometric") return geometric_time_grid(cfg.get_double("t_first", 1e-3), T, steps);
  if (kind == "graded") return graded_time_grid(T, steps, cfg.get_double("grading", 2.0));
  fail(ErrorKind::InvalidArgument, "unknown time_grid '" + kind + "'");
}

inline std::string chaos_csv(const ChaosStudy& s) {
  std::string out = "N,seed,t,W1,L1\n";
  for (const auto& r : s.rows)
    out += std::to_string(r.N) + "," + std::to_string(r.seed) + "," + format_double(r.t) + "," + format_double(r.W1) +
           "," + format_double(r.L1) + "\n";
  return out;
}

inline std::string probe_csv(const ExponentProbeResult& r) {
  std::string out = "t,norm_estimate,probes_used,seed\n";
  for (std::size_t i = 0; i < r.t.size(); ++i)
    out += format_double(r.t[i]) + "," + format_double(r.values[i]) + "," + std::to_string(r.probes) + "," +
           std::to_string(r.seed) + "\n";
  return out;
}

inline std::string norm_study_csv(const NormStudy& s) {
  std::string out = "eps,norm,verdict\n";
  for (const auto& r : s.rows)
    out += format_double(r.eps) + "," + format_double(r.norm) + "," + to_string(s.fit.verdict) + "\n";
  return out;
}

inline std::string solve_report_json(const SolveReport& r) {
  nlohmann::json j;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["lambda_used"] = r.lambda_used;
  j["residuals"] = r.residuals;
  j["contraction_ratios"] = r.contraction_ratios;
  j["contraction_ratio"] = r.contraction_ratio;
  j["decay_trajectory"] = r.decay_trajectory;
  j["fitted_B"] = r.fitted_B;
  j["lambda_envelope"] = r.lambda_envelope;
  j["blowup"] = r.blowup;
  j["blowup_time"] = r.blowup_time;
  j["gamma_norm"] = r.gamma_norm;
  j["tau_n_estimate"] = r.tau_n_estimate;
  j["k_t"] = r.k_t;
  j["s_t"] = r.s_t;
  j["max_mass_drift"] = r.diagnostics.max_mass_drift;
  j["clipped_mass"] = r.diagnostics.clipped_mass;
  j["max_negative_mass"] = r.diagnostics.max_negative_mass;
  j["max_l1_increment"] = r.max_l1_increment;
  j["times"] = r.times;
  return j.dump(2) + "\n";
}

/// Lower-bracket dual norms of μ_t - ν_t at the selected time indices.
inline std::vector<double> lower_profile(const MeasureFlow& a, const MeasureFlow& b, const SobolevIndex& idx,
                                         const std::vector<std::size_t>& at, int probes, std::uint64_t seed) {
  std::vector<double> out;
  for (std::size_t i : at) {
    const BallLattice lat = BallLattice::for_grid(a.densities[i].grid);
    out.push_back(probe_dual_norm(a.densities[i] - b.densities[i], idx, lat, {probes, seed}));
  }
  return out;
}

}  // namespace detail

inline RunReport run_heat_exponent(const Config& cfg, RunReport rep) {
  const GridSpec g = grid_from(cfg);
  const auto is = cfg.get_doubles("i", {0}), deltas = cfg.get_doubles("delta", {1}), epss = cfg.get_doubles("eps", {0}),
             ks = cfg.get_doubles("k", {2}), ps = cfg.get_doubles("p", {kInf});
  const std::size_t n = is.size();
  require(deltas.size() == n && epss.size() == n && ks.size() == n && ps.size() == n,
          "heat_exponent lists i, delta, eps, k, p must have equal length");
  const auto t = geometric_time_grid(cfg.get_double("t_min", 0.01), cfg.get_double("t_max", 1.0),
                                     int(cfg.get_int("t_count", 12)));
  const int probes = int(cfg.get_int("probes", 64));
  const double tol = tolerance(cfg, "tol_slope");
  for (std::size_t c = 0; c < n; ++c) {
    if (epss[c] > deltas[c])
      fail(ErrorKind::Inadmissible, "condition eps <= delta fails: eps = " + format_double(epss[c]) +
                                        " > delta = " + format_double(deltas[c]));
    if (ks[c] > ps[c])
      fail(ErrorKind::Inadmissible,
           "condition k <= p fails: k = " + format_double(ks[c]) + " > p = " + format_double(ps[c]));
    const auto res = operator_exponent_probe(int(is[c]), {deltas[c], ks[c]}, {epss[c], ps[c]}, t, probes,
                                             rep.provenance.seed, g);
    const std::string name = detail::fmt_case(
        "slope", {{"i", is[c]}, {"delta", deltas[c]}, {"eps", epss[c]}, {"k", ks[c]}, {"p", ps[c]}});
    rep.rows.push_back(ReportRow::match(name, res.theoretical_slope, res.slope, tol));
    const std::string tag = "case" + std::to_string(c);
    rep.plots.push_back({"heat_exponent_" + tag, res.t, res.values});
    rep.tables.push_back({"probe_" + tag + ".csv", detail::probe_csv(res)});
    rep.notes.push_back(name + ": intercept " + format_double(res.intercept) + ", r2 " + format_double(res.r2));
  }
  return rep;
}

inline RunReport run_kernel_membership(const Config& cfg, RunReport rep) {
  const GridSpec g = grid_from(cfg);
  const std::string kname = cfg.get_string("kernel", "riesz");
  const KernelSpec spec = kernel_from(cfg, kname, g.dim);
  const auto deltas = cfg.get_doubles("delta", {1});
  const auto ks = cfg.get_doubles("k", {2});
  auto expect = cfg.get_items("expect", {"bounded"});
  if (expect.size() == 1) expect.assign(deltas.size(), expect[0]);
  require(expect.size() == deltas.size(), "expect must have one verdict per delta");
  const auto eps_list = cfg.has("eps_list") ? cfg.get_doubles("eps_list") : default_eps_list(g, int(cfg.get_int("eps_count", 9)));
  const bool growth = cfg.get_bool("check_growth", false);
  const double tol = tolerance(cfg, "tol_growth");
  for (std::size_t a = 0; a < deltas.size(); ++a) {
    require(expect[a] == "bounded" || expect[a] == "unbounded", "expect entries must be bounded or unbounded");
    for (double k : ks) {
      const NormStudy st = kernel_norm_study(spec, {deltas[a], k}, eps_list, g);
      const std::string name = detail::fmt_case("verdict " + kname, {{"delta", deltas[a]}, {"k", k}});
      const double want = expect[a] == "bounded" ? 1.0 : 0.0;
      const double got = st.fit.verdict == Verdict::bounded ? 1.0 : 0.0;
      rep.rows.push_back(ReportRow::match(name, want, got, 0.0));
      const auto* dd = std::get_if<DiracDerivative>(&spec.variant);
      if (growth && dd && expect[a] == "unbounded") {
        const double theory = std::min(0.0, 0.5 * (deltas[a] - g.dim - dd->order));
        rep.rows.push_back(ReportRow::match(detail::fmt_case("growth_exponent " + kname, {{"delta", deltas[a]}, {"k", k}}),
                                            theory, st.fit.growth_exponent, tol));
      }
      const std::string tag = kname + "_d" + format_double(deltas[a]) + "_k" + format_double(k);
      PlotSeries ps{"norm_" + tag, {}, {}};
      for (const auto& r : st.rows) ps.x.push_back(r.eps), ps.y.push_back(r.norm);
      rep.plots.push_back(ps);
      rep.tables.push_back({"norm_study_" + tag + ".csv", detail::norm_study_csv(st)});
      rep.notes.push_back(name + ": aic stabilizing " + format_double(st.fit.aic_stabilizing) + ", aic power " +
                          format_double(st.fit.aic_power) + ", growth exponent " + format_double(st.fit.growth_exponent));
      for (const auto& w : st.warnings) rep.notes.push_back(w);
    }
  }
  return rep;
}

/// ∫_0^t K_s s^κ ds for K ≡ 1.
inline double modulation_integral(const TimeModulation& m, double t) {
  require(m.K_times.empty(), "closed-form drift integral needs K = 1");
  return std::pow(t, m.kappa + 1) / (m.kappa + 1);
}

inline RunReport run_solve(const Config& cfg, RunReport rep) {
  const GridSpec g = grid_from(cfg);
  const std::string kname = cfg.get_string("kernel", "zero");
  const KernelSpec spec = kernel_from(cfg, kname, g.dim);
  const double T = cfg.get_double("T", 0.5);
  FlowParams fp = flow_params_from(cfg, detail::times_from(cfg, T));
  admissibility_gate(fp);
  const double m0 = cfg.get_double("initial_mean", 0.0), v0 = cfg.get_double("initial_variance", 0.05);
  const ScalarField gamma = gaussian_density(g, m0, v0);
  const Drift drift = drift_for(spec, g);
  PicardOptions opt;
  opt.tol = cfg.get_double("picard_tol", 1e-9);
  opt.max_iter = int(cfg.get_int("max_iter", 20));
  const SolveResult sol = picard_solve(gamma, drift, fp, opt);
  const SolveReport& sr = sol.report;
  rep.tables.push_back({"solve_report.json", detail::solve_report_json(sr)});

  const auto* cv = std::get_if<ConstantVector>(&spec.variant);
  if (cv) {
    const bool zero = drift.zero;
    double err = 0;
    for (std::size_t i = 0; i < sol.flow.size(); ++i) {
      const double t = sol.flow.times[i];
      const double shift = cv->c[0] * modulation_integral(spec.modulation, t);
      err = std::max(err, (sol.flow.densities[i] - gaussian_density(g, m0 + shift, v0 + t)).sup_norm());
    }
    const std::string key = zero ? "tol_null_zero" : "tol_null_constant";
    rep.rows.push_back(ReportRow::at_most("linf_error_vs_analytic " + kname, tolerance(cfg, key), err));
    rep.rows.push_back(ReportRow::match("iterations " + kname, 1, sr.iterations, 0));
  } else {
    rep.rows.push_back(ReportRow::match("converged " + kname, 1, sr.converged ? 1 : 0, 0));
    rep.rows.push_back(ReportRow::at_most("iterations " + kname, opt.max_iter, sr.iterations));
    rep.rows.push_back({"contraction_ratio " + kname, tolerance(cfg, "tol_ratio"), sr.contraction_ratio, 0.0,
                        sr.contraction_ratio < tolerance(cfg, "tol_ratio")});
    const double resid = sr.residuals.empty() ? kInf : sr.residuals.back();
    rep.rows.push_back({"final_residual " + kname, tolerance(cfg, "tol_residual"), resid, 0.0,
                        resid < tolerance(cfg, "tol_residual")});
    const auto lambdas = cfg.get_doubles("lambda_list", {0, 1, 10, 100});
    PlotSeries lam{"ratio_vs_lambda", {}, {}};
    double worst_increase = -kInf;
    for (std::size_t j = 0; j < lambdas.size(); ++j) {
      lam.x.push_back(lambdas[j]);
      lam.y.push_back(sr.max_ratio_for(lambdas[j]));
      if (j > 0) worst_increase = std::max(worst_increase, lam.y[j] - lam.y[j - 1]);
    }
    rep.plots.push_back(lam);
    if (lambdas.size() >= 2)
      rep.rows.push_back(ReportRow::at_most("ratio_increase_over_lambda " + kname, 0.0, worst_increase));
    if (cfg.get_bool("calibrate", false)) {
      const int pairs = int(cfg.get_int("calibration_pairs", 16));
      const Calibration cal = calibrate_amplitude(spec, g, fp.from(), T, tolerance(cfg, "tol_lipschitz"), pairs,
                                                  rep.provenance.seed);
      rep.rows.push_back(ReportRow::at_most("lipschitz_times_T " + kname, tolerance(cfg, "tol_lipschitz"),
                                            cal.lipschitz_unit * T));
      rep.notes.push_back("bisection amplitude limit " + format_double(cal.amplitude) + " for Lipschitz x T < " +
                          format_double(tolerance(cfg, "tol_lipschitz")));
    }
  }
  PlotSeries res{"picard_residuals", {}, {}};
  for (std::size_t i = 0; i < sr.residuals.size(); ++i) res.x.push_back(double(i + 1)), res.y.push_back(sr.residuals[i]);
  rep.plots.push_back(res);
  rep.plots.push_back({"decay_trajectory", sr.times, sr.decay_trajectory});

  const double r = cfg.get_double("time_shift_r", 0.0);
  if (r > 0) {
    const ScalarField spike = dirac_spike(g, m0);
    const TimeShiftResult ts = time_shift_solve(spike, r, drift, fp, opt);
    const SolveResult direct = picard_solve(gaussian_density(g, m0, r), drift, fp, opt);
    double worst = 0;
    for (std::size_t i = 0; i < fp.time_grid.size(); ++i)
      worst = std::max(worst, (ts.restricted.densities[i] - direct.flow.densities[i]).l1_norm());
    rep.rows.push_back(ReportRow::at_most("time_shift_l1_max " + kname, tolerance(cfg, "tol_time_shift"), worst));
    const double at_r = (ts.restricted.initial - gaussian_density(g, m0, r)).sup_norm();
    rep.rows.push_back(ReportRow::at_most("time_shift_at_r_vs_gaussian " + kname, tolerance(cfg, "tol_shift_gaussian"), at_r));
  }
  rep.notes.push_back("lambda used " + format_double(sr.lambda_used) + ", fitted B " + format_double(sr.fitted_B) +
                      ", tau_n " + format_double(sr.tau_n_estimate) + ", clipped mass " +
                      format_double(sr.diagnostics.clipped_mass));
  return rep;
}

inline RunReport run_decay(const Config& cfg, RunReport rep) {
  const GridSpec g = grid_from(cfg);
  const std::string kname = cfg.get_string("kernel", "riesz_small");
  const KernelSpec spec = kernel_from(cfg, kname, g.dim);
  const double T = cfg.get_double("T", 0.5);
  std::vector<double> times = geometric_time_grid(cfg.get_double("t_first", 1e-3), T, int(cfg.get_int("steps", 120)));
  FlowParams fp = flow_params_from(cfg, times);
  const Admissibility adm = admissibility_gate(fp);
  const auto rs = cfg.get_doubles("r_list", {0.02, 0.01, 0.005});
  const Drift drift = drift_for(spec, g);
  std::vector<double> sups;
  for (double r : rs) {
    const SolveResult sol = picard_solve(gaussian_density(g, 0.0, r), drift, fp);
    double s = 0;
    for (std::size_t i = 0; i < times.size(); ++i)
      if (times[i] >= r * (1 - 1e-12)) s = std::max(s, sol.report.decay_trajectory[i]);
    sups.push_back(s);
    rep.plots.push_back({"decay_r" + format_double(r), times, sol.report.decay_trajectory});
    rep.notes.push_back("r = " + format_double(r) + ": sup t^(eta/2) norm = " + format_double(s) + ", iterations " +
                        std::to_string(sol.report.iterations));
  }
  const double hi = *std::max_element(sups.begin(), sups.end()), lo = *std::min_element(sups.begin(), sups.end());
  rep.rows.push_back(ReportRow::at_most("decay_sup_spread " + kname, tolerance(cfg, "tol_spread"), (hi - lo) / hi));
  rep.notes.push_back("eta = " + format_double(adm.eta) + ", fitted uniform constant " + format_double(hi));
  return rep;
}

inline double stability_exponent(const FlowParams& fp) {
  return -(1 + fp.delta) / 2 - fp.dim * inv_or_zero(fp.k) / 2;
}

inline RunReport run_stability(const Config& cfg, RunReport rep) {
  const GridSpec g = grid_from(cfg);
  const double T = cfg.get_double("T", 0.5);
  std::vector<double> times = geometric_time_grid(cfg.get_double("t_first", 1e-4), T, int(cfg.get_int("steps", 150)));
  FlowParams fp = flow_params_from(cfg, times);
  admissibility_gate(fp);
  const double r = cfg.get_double("r", 1e-3);
  const auto hs = cfg.get_doubles("h_list", {0.02, 0.05, 0.1});
  const auto kernels = cfg.get_items("kernels", {"zero", "riesz_small"});
  const double fit_lo = cfg.get_double("fit_t_min", 0.02), fit_hi = cfg.get_double("fit_t_max", T);
  const int probes = int(cfg.get_int("probes", 64));
  std::vector<std::size_t> at;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (times[i] >= fit_lo * (1 - 1e-12) && times[i] <= fit_hi * (1 + 1e-12)) at.push_back(i);
  require(at.size() >= 4, "stability fit window holds fewer than 4 times");
  std::vector<double> tw;
  for (std::size_t i : at) tw.push_back(times[i]);
  const double theory = stability_exponent(fp);
  const SobolevIndex idx = fp.from();
  const ScalarField g0 = gaussian_density(g, 0.0, r);
  for (const auto& kname : kernels) {
    const Drift drift = drift_for(kernel_from(cfg, kname, g.dim), g);
    const SolveResult base = picard_solve(g0, drift, fp);
    std::vector<std::vector<double>> upper_ratio;
    for (double h : hs) {
      const ScalarField g1 = gaussian_density(g, h, r);
      const double w1 = wasserstein_1d(g0, g1, 1.0);
      const SolveResult other = picard_solve(g1, drift, fp);
      std::vector<double> lower = detail::lower_profile(base.flow, other.flow, idx, at, probes, rep.provenance.seed);
      for (double& v : lower) v /= w1;
      const FitResult f = fit_exponent(tw, lower);
      rep.rows.push_back(ReportRow::match(detail::fmt_case("stability_slope " + kname, {{"h", h}}), theory, f.slope,
                                          tolerance(cfg, "tol_stability_slope")));
      rep.plots.push_back({"stability_" + kname + "_h" + format_double(h), tw, lower});
      const auto prof = flow_difference_profile(base.flow, other.flow, fp);
      std::vector<double> up;
      for (std::size_t i : at) up.push_back(prof[i] / w1);
      upper_ratio.push_back(up);
      rep.notes.push_back(kname + " h=" + format_double(h) + ": W1 " + format_double(w1) + ", r2 " + format_double(f.r2));
    }
    double worst = 0;
    for (std::size_t j = 0; j < at.size(); ++j) {
      double mx = 0, mn = kInf;
      for (const auto& u : upper_ratio) mx = std::max(mx, u[j]), mn = std::min(mn, u[j]);
      worst = std::max(worst, mx / mn - 1);
    }
    rep.rows.push_back(ReportRow::at_most("stability_linearity_in_W1 " + kname, tolerance(cfg, "tol_linearity"), worst));
  }
  return rep;
}

inline RunReport run_entropy_cost(const Config& cfg, RunReport rep) {
  const GridSpec g = grid_from(cfg);
  const double T = cfg.get_double("T", 0.5);
  FlowParams fp = flow_params_from(cfg, detail::times_from(cfg, T));
  admissibility_gate(fp);
  const double r = cfg.get_double("r", 0.01), h = cfg.get_double("h", 0.05), t_lo = cfg.get_double("t_min", 0.05);
  const auto kernels = cfg.get_items("kernels", {"zero", "riesz_small"});
  GaussianSpec a, b;
  a.mean.assign(std::size_t(g.dim), 0.0);
  b.mean = a.mean;
  b.mean[0] = h;
  a.variance = b.variance = r;
  const double w2 = gaussian_w2(a, b);
  for (const auto& kname : kernels) {
    const KernelSpec spec = kernel_from(cfg, kname, g.dim);
    const Drift drift = drift_for(spec, g);
    const SolveResult s0 = picard_solve(a.density(g), drift, fp), s1 = picard_solve(b.density(g), drift, fp);
    PlotSeries ps{"entropy_cost_" + kname, {}, {}};
    double sup = 0, analytic_err = 0;
    for (std::size_t i = 0; i < fp.time_grid.size(); ++i) {
      const double t = fp.time_grid[i];
      if (t < t_lo * (1 - 1e-12)) continue;
      const double v = relative_entropy(s0.flow.densities[i], s1.flow.densities[i]) * t / (w2 * w2);
      ps.x.push_back(t);
      ps.y.push_back(v);
      sup = std::max(sup, v);
      analytic_err = std::max(analytic_err, std::abs(v - t / (2 * (r + t))));
    }
    rep.plots.push_back(ps);
    if (drift.zero) {
      rep.rows.push_back(ReportRow::at_most("entropy_cost_sup " + kname, tolerance(cfg, "entropy_bound_zero"), sup));
      rep.rows.push_back(ReportRow::at_most("entropy_cost_vs_analytic " + kname, tolerance(cfg, "tol_entropy_analytic"),
                                            analytic_err));
    } else {
      rep.rows.push_back(ReportRow::at_most("entropy_cost_sup " + kname, tolerance(cfg, "entropy_bound_kernel"), sup));
    }
    rep.notes.push_back(kname + ": fitted beta_t envelope " + format_double(sup));
  }
  return rep;
}

inline RunReport run_particles(const Config& cfg, RunReport rep) {
  const GridSpec g = grid_from(cfg);
  const double T = cfg.get_double("T", 0.5);
  const double m0 = cfg.get_double("initial_mean", 0.0), v0 = cfg.get_double("initial_variance", 0.05);
  std::vector<std::size_t> Ns;
  for (double v : cfg.get_doubles("N_list", {250, 1000, 4000})) Ns.push_back(std::size_t(v));
  const int R = int(cfg.get_int("seeds", 10));
  const auto kernels = cfg.get_items("kernels", {"zero", "riesz_small"});
  const double eps = cfg.get_double("mollification_eps", 0.01);
  for (const auto& kname : kernels) {
    SimConfig sc;
    sc.dt = cfg.get_double("dt", 0.005);
    sc.T = T;
    sc.seed = rep.provenance.seed;
    sc.mollification_eps = eps;
    sc.grid = g;
    sc.initial = GaussianMixture{{1.0}, {std::vector<double>(std::size_t(g.dim), 0.0)}, {v0}};
    std::get<GaussianMixture>(sc.initial).means[0][0] = m0;
    sc.checkpoints = {T};
    KernelSpec spec = kernel_from(cfg, kname, g.dim);
    spec.mollification_eps = eps;
    const Drift drift = drift_for(spec, g);
    if (!drift.zero) sc.kernel = spec;
    FlowParams fp = flow_params_from(cfg, uniform_time_grid(T, int(cfg.get_int("steps", 100))));
    admissibility_gate(fp);
    const MeasureFlow pde = picard_solve(gaussian_density(g, m0, v0), drift, fp).flow;
    const ChaosStudy st = chaos_convergence_study(sc, Ns, pde, R);
    rep.tables.push_back({"chaos_" + kname + ".csv", detail::chaos_csv(st)});
    for (const auto& f : st.failures) rep.notes.push_back("particle failure: " + f);
    PlotSeries ps{"w1_vs_N_" + kname, {}, {}};
    std::vector<double> mean, se;
    for (const auto& s : st.summary) {
      ps.x.push_back(double(s.N));
      ps.y.push_back(s.W1_mean);
      mean.push_back(s.W1_mean);
      se.push_back(s.runs > 0 ? s.W1_sd / std::sqrt(double(s.runs)) : kInf);
      rep.notes.push_back(kname + " N=" + std::to_string(s.N) + ": W1 " + format_double(s.W1_mean) + " +- " +
                          format_double(s.W1_sd) + ", L1 " + format_double(s.L1_mean) + " +- " + format_double(s.L1_sd));
    }
    rep.plots.push_back(ps);
    rep.notes.push_back(kname + ": wrap count " + std::to_string(st.wrap_count));
    rep.rows.push_back(ReportRow::match("failed_seeds " + kname, 0, double(st.failures.size()), 0));
    if (drift.zero) {
      std::vector<double> lx, ly;
      for (std::size_t j = 0; j < ps.x.size(); ++j) lx.push_back(std::log(ps.x[j])), ly.push_back(std::log(ps.y[j]));
      const FitResult f = linear_fit(lx, ly);
      rep.rows.push_back(ReportRow::match("mc_rate_slope " + kname, -0.5, f.slope, tolerance(cfg, "tol_mc_slope")));
    } else {
      int inversions = 0, significant = 0;
      for (std::size_t j = 1; j < mean.size(); ++j) {
        if (mean[j] > mean[j - 1]) ++inversions;
        if (mean[j] - mean[j - 1] > 2 * std::hypot(se[j], se[j - 1])) ++significant;
      }
      rep.rows.push_back(ReportRow::at_most("w1_inversions " + kname, 1, inversions));
      rep.rows.push_back(ReportRow::at_most("w1_inversions_beyond_error_bars " + kname, 0, significant));
    }
  }
  return rep;
}

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"heat_exponent", "kernel_membership", "solve",    "decay",
                                              "stability",     "entropy_cost",      "particles"};
  return names;
}

/// Runs the experiment named by the config's `experiment` key.
inline RunReport run_experiment(const Config& cfg) {
  const std::string name = cfg.get_string("experiment");
  RunReport rep;
  rep.experiment = name;
  rep.provenance.config_hash = config_hash(cfg);
  rep.provenance.seed = cfg.get_u64("seed", 1);
  rep.provenance.grid = int(cfg.get_int("grid", 2048));
  rep.provenance.timestamp = utc_timestamp();
  if (name == "heat_exponent") return run_heat_exponent(cfg, rep);
  if (name == "kernel_membership") return run_kernel_membership(cfg, rep);
  if (name == "solve") return run_solve(cfg, rep);
  if (name == "decay") return run_decay(cfg, rep);
  if (name == "stability") return run_stability(cfg, rep);
  if (name == "entropy_cost") return run_entropy_cost(cfg, rep);
  if (name == "particles") return run_particles(cfg, rep);
  fail(ErrorKind::InvalidArgument, "unknown experiment '" + name + "'");
}

}  // namespace mvsde
