#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mvsde/mvsde.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using namespace mvsde;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<int> grid;
  std::optional<int> threads;
};

Config load_config(const Globals& g) {
  Config cfg = g.config.empty() ? Config{} : Config::load(g.config);
  if (g.seed) cfg.set_raw("seed", std::to_string(*g.seed));
  if (g.grid) cfg.set_raw("grid", std::to_string(*g.grid));
  return cfg;
}

void print_rows(const RunReport& r) {
  for (const auto& row : r.rows)
    std::printf("%-4s %-60s measured=%-14s theory=%-10s tol=%s\n", row.pass ? "PASS" : "FAIL", row.quantity.c_str(),
                format_double(row.measured).c_str(), format_double(row.theory).c_str(), format_double(row.tol).c_str());
}

int cmd_norm(const Globals& g, double delta, double k, double mean, double variance, int probes) {
  const Config cfg = load_config(g);
  const GridSpec grid = grid_from(cfg);
  const ScalarField rho = gaussian_density(grid, mean, variance);
  const SobolevIndex idx{delta, k};
  nlohmann::json j;
  j["local_neg_norm"] = local_neg_norm(rho, idx);
  if (k > 1) {
    const DualBracket b = dual_norm_bracket(rho, idx, {probes, cfg.get_u64("seed", 1)});
    j["dual_lower"] = b.lower;
    j["dual_upper"] = b.upper;
    j["bracket_ratio"] = b.ratio();
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_kernel_study(const Globals& g, const std::string& kernel, double delta, double k, int eps_count) {
  const Config cfg = load_config(g);
  const GridSpec grid = grid_from(cfg);
  const NormStudy st = kernel_norm_study(kernel_from(cfg, kernel, grid.dim), {delta, k}, default_eps_list(grid, eps_count), grid);
  std::filesystem::create_directories(g.out);
  write_text_file(g.out + "/norm_study.csv", detail::norm_study_csv(st));
  for (const auto& w : st.warnings) std::cerr << "warning: " << w << "\n";
  std::printf("%s: %s (growth exponent %s)\n", kernel.c_str(), to_string(st.fit.verdict),
              format_double(st.fit.growth_exponent).c_str());
  return 0;
}

int cmd_solve(const Globals& g) {
  const Config cfg = load_config(g);
  const GridSpec grid = grid_from(cfg);
  const KernelSpec spec = kernel_from(cfg, cfg.get_string("kernel", "zero"), grid.dim);
  const double T = cfg.get_double("T", 0.5);
  const FlowParams fp = flow_params_from(cfg, detail::times_from(cfg, T));
  admissibility_gate(fp);
  const ScalarField gamma =
      gaussian_density(grid, cfg.get_double("initial_mean", 0.0), cfg.get_double("initial_variance", 0.05));
  PicardOptions opt;
  opt.tol = cfg.get_double("picard_tol", 1e-9);
  opt.max_iter = int(cfg.get_int("max_iter", 20));
  const SolveResult sol = picard_solve(gamma, drift_for(spec, grid), fp, opt);
  std::filesystem::create_directories(g.out);
  write_flow_binary(g.out + "/flow.bin", sol.flow);
  write_text_file(g.out + "/flow.csv", flow_csv(sol.flow.times, sol.flow.densities));
  write_text_file(g.out + "/solve_report.json", detail::solve_report_json(sol.report));
  std::printf("iterations %d, converged %s, contraction ratio %s, lambda %s\n", sol.report.iterations,
              sol.report.converged ? "yes" : "no", format_double(sol.report.contraction_ratio).c_str(),
              format_double(sol.report.lambda_used).c_str());
  return sol.report.converged ? 0 : 1;
}

int cmd_particles(const Globals& g, std::size_t N) {
  const Config cfg = load_config(g);
  const GridSpec grid = grid_from(cfg);
  SimConfig sc;
  sc.dt = cfg.get_double("dt", 0.005);
  sc.T = cfg.get_double("T", 0.5);
  sc.seed = cfg.get_u64("seed", 1);
  sc.mollification_eps = cfg.get_double("mollification_eps", 0.01);
  sc.grid = grid;
  sc.pairwise = cfg.get_bool("pairwise", false);
  sc.checkpoints = cfg.get_doubles("checkpoints", {sc.T});
  GaussianMixture gm{{1.0}, {std::vector<double>(std::size_t(grid.dim), 0.0)}, {cfg.get_double("initial_variance", 0.05)}};
  gm.means[0][0] = cfg.get_double("initial_mean", 0.0);
  sc.initial = gm;
  KernelSpec spec = kernel_from(cfg, cfg.get_string("kernel", "zero"), grid.dim);
  spec.mollification_eps = sc.mollification_eps;
  if (!drift_for(spec, grid).zero) sc.kernel = spec;
  const Trajectory tr = simulate_particles(sc, N);
  std::vector<double> times;
  std::vector<ScalarField> dens;
  std::string pos = grid.dim == 1 ? "t,id,x\n" : "t,id,x,y\n";
  for (const auto& e : tr.checkpoints) {
    times.push_back(e.time);
    dens.push_back(empirical_density(e, grid, silverman_bandwidth(e, grid)));
    for (std::size_t i = 0; i < e.N(); ++i) {
      pos += format_double(e.time) + "," + std::to_string(e.ids[i]) + "," + format_double(e.x(i, 0));
      if (grid.dim == 2) pos += "," + format_double(e.x(i, 1));
      pos += "\n";
    }
  }
  std::filesystem::create_directories(g.out);
  write_text_file(g.out + "/particles.bin", encode_flow(times, dens));
  write_text_file(g.out + "/positions.csv", pos);
  std::printf("simulated %zu particles over %d steps, wrap count %lld\n", N, tr.steps, tr.wrap_count);
  return 0;
}

int cmd_experiment(const Globals& g, const std::string& name) {
  Config cfg = load_config(g);
  cfg.set_raw("experiment", name);
  const RunReport rep = run_experiment(cfg);
  emit_report(rep, g.out);
  print_rows(rep);
  return rep.all_pass() ? 0 : 1;
}

int cmd_report(const Globals& g) {
  const RunReport rep = report_from_json(read_text_file(g.out + "/report.json"));
  std::printf("experiment %s, config %s, seed %llu, grid %d, version %s\n", rep.experiment.c_str(),
              rep.provenance.config_hash.c_str(), static_cast<unsigned long long>(rep.provenance.seed),
              rep.provenance.grid, rep.provenance.version.c_str());
  print_rows(rep);
  return rep.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"McKean-Vlasov flows with singular interactions: norms, kernels, solver, particles, experiments"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  int grid = 0, threads = 0;
  app.add_option("--config", g.config, "Config file (flat key = value)");
  auto* seed_opt = app.add_option("--seed", seed, "Seed override");
  auto* grid_opt = app.add_option("--grid", grid, "Grid points per dimension override");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  auto* thr_opt = app.add_option("--threads", threads, "OpenMP thread count");

  double delta = 1, k = 2, mean = 0, variance = 0.05;
  int probes = 64, eps_count = 9;
  std::string kernel = "riesz", experiment;
  std::size_t N = 1000;

  auto* norm = app.add_subcommand("norm", "Local negative Sobolev norm and dual-norm bracket of a Gaussian density");
  norm->add_option("--delta", delta, "Smoothness index delta")->capture_default_str();
  norm->add_option("--k", k, "Integrability index k (inf allowed)")->capture_default_str();
  norm->add_option("--mean", mean, "Gaussian mean")->capture_default_str();
  norm->add_option("--variance", variance, "Gaussian variance")->capture_default_str();
  norm->add_option("--probes", probes, "Random probes for the lower bracket")->capture_default_str();
  auto* study = app.add_subcommand("kernel-study", "Mollification sweep of a catalog kernel with boundedness verdict");
  study->add_option("--kernel", kernel, "Catalog kernel")->capture_default_str()->check(CLI::IsMember(kernel_catalog_names()));
  study->add_option("--delta", delta, "Smoothness index delta")->capture_default_str();
  study->add_option("--k", k, "Integrability index k (inf allowed)")->capture_default_str();
  study->add_option("--eps-count", eps_count, "Number of mollification levels")->capture_default_str();
  auto* solve = app.add_subcommand("solve", "Picard solve; writes flow.bin, flow.csv and solve_report.json");
  auto* parts = app.add_subcommand("particles", "Particle simulation; writes particles.bin and positions.csv");
  parts->add_option("--n", N, "Particle count")->capture_default_str();
  auto* exp = app.add_subcommand("experiment", "Run a named experiment and emit its report");
  exp->add_option("name", experiment, "Experiment name")->required()->check(CLI::IsMember(experiment_names()));
  auto* report = app.add_subcommand("report", "Print the report stored in --out");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;
  if (*grid_opt) g.grid = grid;
  if (*thr_opt) {
    g.threads = threads;
#ifdef _OPENMP
    omp_set_num_threads(threads);
#endif
  }
  try {
    if (*norm) return cmd_norm(g, delta, k, mean, variance, probes);
    if (*study) return cmd_kernel_study(g, kernel, delta, k, eps_count);
    if (*solve) return cmd_solve(g);
    if (*parts) return cmd_particles(g, N);
    if (*exp) return cmd_experiment(g, experiment);
    if (*report) return cmd_report(g);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
