#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "error.hpp"
#include "field.hpp"
#include "kernels.hpp"
#include "metrics.hpp"
#include "solver.hpp"
#include "spectral.hpp"

namespace mvsde {

struct ParticleEnsemble {
  int dim = 1;
  /// Row-major N×dim positions.
  std::vector<double> positions;
  /// Noise stream id of each particle.
  std::vector<std::uint64_t> ids;
  double time = 0;

  std::size_t N() const { return ids.size(); }
  double x(std::size_t i, int c = 0) const { return positions[i * std::size_t(dim) + std::size_t(c)]; }
  void validate() const {
    require(dim == 1 || dim == 2, "ensemble dimension must be 1 or 2");
    require(N() >= 2, "ensemble needs at least 2 particles");
    require(positions.size() == N() * std::size_t(dim), "positions do not match N·dim");
    for (double v : positions) require(std::isfinite(v), "ensemble has non-finite positions");
  }
};

struct GaussianMixture {
  std::vector<double> weights{1.0};
  std::vector<std::vector<double>> means{{0.0}};
  std::vector<double> variances{1.0};
};

struct GridDensitySampler {
  ScalarField density;
};

using InitialSampler = std::variant<GaussianMixture, GridDensitySampler>;

struct SimConfig {
  double dt = 0.005;
  double T = 0.5;
  std::uint64_t seed = 1;
  double mollification_eps = 0.01;
  /// nullopt means zero drift.
  std::optional<KernelSpec> kernel;
  InitialSampler initial = GaussianMixture{};
  GridSpec grid{1, 2048, 16.0};
  /// O(N²) pairwise drift instead of grid binning.
  bool pairwise = false;
  /// Times at which the ensemble is recorded; empty records only T.
  std::vector<double> checkpoints;

  int steps() const { return int(std::llround(T / dt)); }
  void validate() const {
    grid.validate();
    require(dt > 0 && T > 0, "dt and T must be positive");
    require(std::abs(T / dt - std::round(T / dt)) < 1e-9 * std::max(1.0, T / dt), "T must be a multiple of dt");
    require(mollification_eps >= 0, "mollification eps must be nonnegative");
    if (kernel) {
      kernel->validate(grid.dim);
      if (kernel->singular()) {
        if (!(mollification_eps > 0)) fail(ErrorKind::RequiresMollification, "singular kernel needs eps > 0");
        require(dt <= mollification_eps, "dt must not exceed the mollification eps");
      }
    }
    for (double c : checkpoints) require(c > 0 && c <= T * (1 + 1e-12), "checkpoints must lie in (0, T]");
  }
};

struct Trajectory {
  std::vector<ParticleEnsemble> checkpoints;
  long long wrap_count = 0;
  int steps = 0;
};

namespace detail {

inline double unit_open(std::uint64_t x) { return (double(x >> 11) + 1.0) * 0x1.0p-53; }

inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t id, std::uint64_t step, std::uint64_t lane) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ id);
  h = splitmix64(h ^ step);
  return splitmix64(h ^ lane);
}

/// Two independent standard normals for (seed, particle, step) by Box-Muller.
inline std::array<double, 2> normal_pair(std::uint64_t seed, std::uint64_t id, std::uint64_t step) {
  const double u1 = unit_open(counter_hash(seed, id, step, 0));
  const double u2 = unit_open(counter_hash(seed, id, step, 1));
  const double r = std::sqrt(-2.0 * std::log(u1));
  return {r * std::cos(2 * std::numbers::pi * u2), r * std::sin(2 * std::numbers::pi * u2)};
}

inline constexpr std::uint64_t kInitStep = std::numeric_limits<std::uint64_t>::max();

inline double wrap_coord(double x, double L, long long& wraps) {
  if (x >= -0.5 * L && x < 0.5 * L) return x;
  const double k = std::floor((x + 0.5 * L) / L);
  wraps += 1;
  double y = x - k * L;
  if (y >= 0.5 * L) y -= L;
  if (y < -0.5 * L) y += L;
  return y;
}

/// Inverse CDF of the cell-uniform reading of a 1D density.
inline double sample_cells_1d(const std::vector<double>& cdf, const GridSpec& g, double u) {
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  std::size_t j = std::size_t(std::max<std::ptrdiff_t>(0, it - cdf.begin() - 1));
  j = std::min(j, std::size_t(g.points - 1));
  const double lo = cdf[j], hi = cdf[j + 1];
  const double frac = hi > lo ? (u - lo) / (hi - lo) : 0.5;
  return g.coord(int(j)) - 0.5 * g.spacing() + frac * g.spacing();
}

inline std::vector<double> cell_cdf(const std::vector<double>& w) {
  std::vector<double> cdf(w.size() + 1, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) cdf[i + 1] = cdf[i] + std::max(w[i], 0.0);
  const double total = cdf.back();
  require(total > 0, "sampler density has no positive mass");
  for (double& c : cdf) c /= total;
  return cdf;
}

}  // namespace detail

/// Draws particle positions from the initial sampler; particle i uses its own counter stream.
inline ParticleEnsemble sample_initial(const InitialSampler& sampler, const GridSpec& grid, std::size_t N,
                                       std::uint64_t seed) {
  ParticleEnsemble ens;
  ens.dim = grid.dim;
  ens.positions.resize(N * std::size_t(grid.dim));
  ens.ids.resize(N);
  for (std::size_t i = 0; i < N; ++i) ens.ids[i] = i;
  if (const auto* gm = std::get_if<GaussianMixture>(&sampler)) {
    require(!gm->weights.empty() && gm->weights.size() == gm->means.size() && gm->weights.size() == gm->variances.size(),
            "mixture needs matching weights, means and variances");
    std::vector<double> cdf = detail::cell_cdf(gm->weights);
    for (std::size_t i = 0; i < N; ++i) {
      const double u = detail::unit_open(detail::counter_hash(seed, i, detail::kInitStep, 2));
      std::size_t comp = std::size_t(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      comp = std::min(std::max<std::size_t>(comp, 1) - 1, gm->weights.size() - 1);
      require(gm->means[comp].size() == std::size_t(grid.dim), "mixture mean has the wrong dimension");
      const auto z = detail::normal_pair(seed, i, detail::kInitStep);
      for (int c = 0; c < grid.dim; ++c)
        ens.positions[i * std::size_t(grid.dim) + std::size_t(c)] =
            gm->means[comp][std::size_t(c)] + std::sqrt(gm->variances[comp]) * z[std::size_t(c)];
    }
  } else {
    const auto& rho = std::get<GridDensitySampler>(sampler).density;
    require_same_grid(rho.grid, grid);
    const int n = grid.points;
    if (grid.dim == 1) {
      const auto cdf = detail::cell_cdf(rho.values);
      for (std::size_t i = 0; i < N; ++i)
        ens.positions[i] = detail::sample_cells_1d(cdf, grid, detail::unit_open(detail::counter_hash(seed, i, detail::kInitStep, 3)));
    } else {
      std::vector<double> marg(std::size_t(n), 0.0);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) marg[std::size_t(a)] += std::max(rho.values[std::size_t(a) * n + b], 0.0);
      const auto cdf = detail::cell_cdf(marg);
      GridSpec g1{1, n, grid.extent};
      for (std::size_t i = 0; i < N; ++i) {
        const double x = detail::sample_cells_1d(cdf, g1, detail::unit_open(detail::counter_hash(seed, i, detail::kInitStep, 3)));
        const int a = std::clamp(int(std::floor((x + 0.5 * grid.extent) / grid.spacing())), 0, n - 1);
        std::vector<double> row(rho.values.begin() + long(a) * n, rho.values.begin() + long(a + 1) * n);
        const auto cdf_y = detail::cell_cdf(row);
        ens.positions[2 * i] = x;
        ens.positions[2 * i + 1] =
            detail::sample_cells_1d(cdf_y, g1, detail::unit_open(detail::counter_hash(seed, i, detail::kInitStep, 4)));
      }
    }
  }
  return ens;
}

/// Cloud-in-cell histogram density (mass 1/N per particle, grid nodes at x_j).
inline ScalarField bin_particles(const ParticleEnsemble& ens, const GridSpec& g) {
  require(ens.dim == g.dim, "ensemble and grid dimensions differ");
  ScalarField rho(g);
  const int n = g.points;
  const double h = g.spacing();
  const double w = 1.0 / (double(ens.N()) * g.cell_volume());
  for (std::size_t i = 0; i < ens.N(); ++i) {
    const double sx = (ens.x(i, 0) + 0.5 * g.extent) / h;
    const double fx = std::floor(sx);
    const double ax = sx - fx;
    const int ix = detail::wrap(int(fx), n), jx = detail::wrap(int(fx) + 1, n);
    if (g.dim == 1) {
      rho.values[std::size_t(ix)] += w * (1 - ax);
      rho.values[std::size_t(jx)] += w * ax;
    } else {
      const double sy = (ens.x(i, 1) + 0.5 * g.extent) / h;
      const double fy = std::floor(sy);
      const double ay = sy - fy;
      const int iy = detail::wrap(int(fy), n), jy = detail::wrap(int(fy) + 1, n);
      rho.values[std::size_t(ix) * n + iy] += w * (1 - ax) * (1 - ay);
      rho.values[std::size_t(jx) * n + iy] += w * ax * (1 - ay);
      rho.values[std::size_t(ix) * n + jy] += w * (1 - ax) * ay;
      rho.values[std::size_t(jx) * n + jy] += w * ax * ay;
    }
  }
  return rho;
}

/// Linear (CIC-adjoint) interpolation of a grid field at a point.
inline double interpolate_linear(const std::vector<double>& f, const GridSpec& g, double x, double y = 0.0) {
  const int n = g.points;
  const double h = g.spacing();
  const double sx = (x + 0.5 * g.extent) / h;
  const double fx = std::floor(sx);
  const double ax = sx - fx;
  const int ix = detail::wrap(int(fx), n), jx = detail::wrap(int(fx) + 1, n);
  if (g.dim == 1) return (1 - ax) * f[std::size_t(ix)] + ax * f[std::size_t(jx)];
  const double sy = (y + 0.5 * g.extent) / h;
  const double fy = std::floor(sy);
  const double ay = sy - fy;
  const int iy = detail::wrap(int(fy), n), jy = detail::wrap(int(fy) + 1, n);
  return (1 - ax) * (1 - ay) * f[std::size_t(ix) * n + iy] + ax * (1 - ay) * f[std::size_t(jx) * n + iy] +
         (1 - ax) * ay * f[std::size_t(ix) * n + jy] + ax * ay * f[std::size_t(jx) * n + jy];
}

/// Periodic cubic (Catmull-Rom) interpolation of a 1D grid field.
inline double interpolate_cubic_1d(const std::vector<double>& f, const GridSpec& g, double x) {
  const int n = g.points;
  const double s = (x + 0.5 * g.extent) / g.spacing();
  const double fl = std::floor(s);
  const double t = s - fl;
  const int i = int(fl);
  const double p0 = f[std::size_t(detail::wrap(i - 1, n))], p1 = f[std::size_t(detail::wrap(i, n))];
  const double p2 = f[std::size_t(detail::wrap(i + 1, n))], p3 = f[std::size_t(detail::wrap(i + 2, n))];
  return p1 + 0.5 * t * (p2 - p0 + t * (2 * p0 - 5 * p1 + 4 * p2 - p3 + t * (3 * (p1 - p2) + p3 - p0)));
}

/// Grid-binned drift K_t t^κ (h_ε * μ^N)(x_i): CIC binning, spectral convolution, linear interpolation.
inline std::vector<double> binned_drift(const ParticleEnsemble& ens, const KernelSymbol& ks, double factor) {
  const GridSpec& g = ks.grid;
  const VectorField b = convolve_symbol(ks, bin_particles(ens, g));
  std::vector<double> out(ens.positions.size());
  for (std::size_t i = 0; i < ens.N(); ++i)
    for (int c = 0; c < ens.dim; ++c)
      out[i * std::size_t(ens.dim) + std::size_t(c)] =
          factor * interpolate_linear(b.components[std::size_t(c)], g, ens.x(i, 0), ens.dim == 2 ? ens.x(i, 1) : 0.0);
  return out;
}

/// Pairwise drift K_t t^κ N^{-1} Σ_j h_ε(x_i - x_j) with h_ε realized on a `refine`-times finer 1D grid.
inline std::vector<double> pairwise_drift(const ParticleEnsemble& ens, const KernelSpec& spec, double eps,
                                          const GridSpec& g, double factor, int refine = 4) {
  if (ens.dim != 1) fail(ErrorKind::Unsupported, "pairwise drift is implemented for d = 1");
  GridSpec fine{1, g.points * refine, g.extent};
  KernelSpec s = spec;
  s.mollification_eps = eps;
  const std::vector<double> h = realize_kernel(s, fine).components[0];
  const std::size_t N = ens.N();
  std::vector<double> out(N, 0.0);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < N; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < N; ++j) {
      double z = ens.positions[i] - ens.positions[j];
      z -= g.extent * std::round(z / g.extent);
      acc += interpolate_cubic_1d(h, fine, z);
    }
    out[i] = factor * acc / double(N);
  }
  return out;
}

/// Euler-Maruyama with empirical-measure drift; deterministic per (seed, N, cfg).
inline Trajectory simulate_from(ParticleEnsemble ens, const SimConfig& cfg) {
  cfg.validate();
  ens.validate();
  require(ens.dim == cfg.grid.dim, "ensemble and grid dimensions differ");
  Trajectory traj;
  const int S = cfg.steps();
  traj.steps = S;
  const int d = ens.dim;
  const double sq = std::sqrt(cfg.dt);
  std::vector<int> record;
  if (cfg.checkpoints.empty()) {
    record.push_back(S);
  } else {
    for (double c : cfg.checkpoints) record.push_back(int(std::llround(c / cfg.dt)));
  }
  std::optional<KernelSymbol> ks;
  bool constant = false;
  std::vector<double> cvec;
  if (cfg.kernel) {
    if (const auto* cv = std::get_if<ConstantVector>(&cfg.kernel->variant)) {
      constant = true;
      cvec = cv->c;
    } else if (!cfg.pairwise) {
      ks = kernel_symbol(*cfg.kernel, cfg.grid, cfg.mollification_eps);
    }
  }
  auto maybe_record = [&](int step) {
    for (int r : record)
      if (r == step) {
        ParticleEnsemble snap = ens;
        snap.time = step * cfg.dt;
        traj.checkpoints.push_back(std::move(snap));
        break;
      }
  };
  for (int s = 0; s < S; ++s) {
    const double t = s * cfg.dt;
    std::vector<double> drift;
    if (cfg.kernel) {
      const double f = cfg.kernel->modulation.factor(t);
      if (constant) {
        drift.resize(ens.positions.size());
        for (std::size_t i = 0; i < ens.N(); ++i)
          for (int c = 0; c < d; ++c) drift[i * std::size_t(d) + std::size_t(c)] = f * cvec[std::size_t(c)];
      } else if (f != 0.0) {
        drift = cfg.pairwise ? pairwise_drift(ens, *cfg.kernel, cfg.mollification_eps, cfg.grid, f)
                             : binned_drift(ens, *ks, f);
      }
    }
    long long wraps = 0;
#pragma omp parallel for schedule(static) reduction(+ : wraps)
    for (std::size_t i = 0; i < ens.N(); ++i) {
      const auto z = detail::normal_pair(cfg.seed, ens.ids[i], std::uint64_t(s));
      for (int c = 0; c < d; ++c) {
        const std::size_t at = i * std::size_t(d) + std::size_t(c);
        double x = ens.positions[at] + sq * z[std::size_t(c)];
        if (!drift.empty()) x += drift[at] * cfg.dt;
        ens.positions[at] = std::isfinite(x) ? detail::wrap_coord(x, cfg.grid.extent, wraps) : x;
      }
    }
    traj.wrap_count += wraps;
    for (double v : ens.positions)
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "non-finite particle position at step " << s << " (t = " << t << ")";
        fail(ErrorKind::SimulationFailure, os.str());
      }
    ens.time = (s + 1) * cfg.dt;
    maybe_record(s + 1);
  }
  return traj;
}

inline Trajectory simulate_particles(const SimConfig& cfg, std::size_t N) {
  cfg.validate();
  require(N >= 2, "need at least 2 particles");
  return simulate_from(sample_initial(cfg.initial, cfg.grid, N, cfg.seed), cfg);
}

/// Gaussian KDE: CIC histogram smoothed by the heat semigroup at time bandwidth², renormalized to mass 1.
inline ScalarField empirical_density(const ParticleEnsemble& ens, const GridSpec& g, double bandwidth) {
  require(bandwidth >= g.spacing() * (1 - 1e-12), "bandwidth must be at least the grid spacing");
  ScalarField rho = heat_apply(bin_particles(ens, g), bandwidth * bandwidth);
  rho *= 1.0 / rho.mass();
  return rho;
}

inline double silverman_bandwidth(const ParticleEnsemble& ens, const GridSpec& g) {
  double mean = 0, sq = 0;
  const std::size_t N = ens.N();
  for (std::size_t i = 0; i < N; ++i) mean += ens.x(i, 0);
  mean /= double(N);
  for (std::size_t i = 0; i < N; ++i) sq += (ens.x(i, 0) - mean) * (ens.x(i, 0) - mean);
  const double sd = std::sqrt(sq / double(N - 1));
  return std::max(g.spacing(), 1.06 * sd * std::pow(double(N), -0.2));
}

/// W_1 between an ensemble and a grid density (exact quantile coupling in 1D, lumped OT in 2D).
inline double ensemble_w1(const ParticleEnsemble& ens, const ScalarField& rho) {
  if (ens.dim == 1) {
    return wasserstein_quantile(QuantileFunction::from_atoms(ens.positions), QuantileFunction::from_density(rho), 1.0);
  }
  const int block = std::max(1, rho.grid.points / 32);
  return wasserstein_discrete(lump_density(bin_particles(ens, rho.grid), block), lump_density(rho, block), 1.0);
}

struct ChaosRow {
  std::size_t N = 0;
  std::uint64_t seed = 0;
  double t = 0;
  double W1 = 0;
  double L1 = 0;
};

struct ChaosSummary {
  std::size_t N = 0;
  double t = 0;
  double W1_mean = 0, W1_sd = 0;
  double L1_mean = 0, L1_sd = 0;
  int runs = 0;
};

struct ChaosStudy {
  std::vector<ChaosRow> rows;
  std::vector<ChaosSummary> summary;
  std::vector<std::string> failures;
  long long wrap_count = 0;
};

/// For each N runs R seeds and compares the ensemble with the PDE flow at the checkpoint times.
inline ChaosStudy chaos_convergence_study(const SimConfig& cfg, const std::vector<std::size_t>& N_list,
                                          const MeasureFlow& pde_flow, int R = 10) {
  cfg.validate();
  require(R >= 1, "need at least one seed");
  require(!N_list.empty(), "N_list is empty");
  std::vector<double> times = cfg.checkpoints.empty() ? std::vector<double>{cfg.T} : cfg.checkpoints;
  std::vector<std::size_t> pde_index;
  for (double t : times) {
    std::size_t best = pde_flow.size();
    for (std::size_t i = 0; i < pde_flow.size(); ++i)
      if (std::abs(pde_flow.times[i] - t) <= 1e-9 * std::max(1.0, t)) best = i;
    require(best < pde_flow.size(), "checkpoint time missing from the PDE flow");
    pde_index.push_back(best);
  }
  ChaosStudy study;
  for (std::size_t N : N_list) {
    std::vector<std::vector<double>> w1(times.size()), l1(times.size());
    for (int r = 0; r < R; ++r) {
      SimConfig c = cfg;
      c.seed = cfg.seed + std::uint64_t(r);
      c.checkpoints = times;
      try {
        const Trajectory tr = simulate_particles(c, N);
        study.wrap_count += tr.wrap_count;
        for (std::size_t k = 0; k < times.size(); ++k) {
          const auto& ens = tr.checkpoints.at(k);
          const ScalarField& rho = pde_flow.densities[pde_index[k]];
          const double W1 = ensemble_w1(ens, rho);
          const double L1 = (empirical_density(ens, rho.grid, silverman_bandwidth(ens, rho.grid)) - rho).l1_norm();
          study.rows.push_back({N, c.seed, times[k], W1, L1});
          w1[k].push_back(W1);
          l1[k].push_back(L1);
        }
      } catch (const Error& e) {
        study.failures.push_back("N=" + std::to_string(N) + " seed=" + std::to_string(c.seed) + ": " + e.what());
      }
    }
    for (std::size_t k = 0; k < times.size(); ++k) {
      ChaosSummary s;
      s.N = N;
      s.t = times[k];
      s.runs = int(w1[k].size());
      auto stats = [](const std::vector<double>& v, double& m, double& sd) {
        m = 0;
        sd = 0;
        if (v.empty()) return;
        for (double x : v) m += x;
        m /= double(v.size());
        if (v.size() > 1) {
          for (double x : v) sd += (x - m) * (x - m);
          sd = std::sqrt(sd / double(v.size() - 1));
        }
      };
      stats(w1[k], s.W1_mean, s.W1_sd);
      stats(l1[k], s.L1_mean, s.L1_sd);
      study.summary.push_back(s);
    }
  }
  return study;
}

}  // namespace mvsde
