#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "field.hpp"
#include "fit.hpp"
#include "spectral.hpp"

namespace mvsde {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Index (δ, k) of W̃^{-δ,k}; k = kInf is a first-class value.
struct SobolevIndex {
  double delta = 0.0;
  double k = 2.0;

  bool k_infinite() const { return std::isinf(k); }
  double inv_k() const { return k_infinite() ? 0.0 : 1.0 / k; }
  /// Hölder conjugate k' = k/(k-1), with 1' = ∞ and ∞' = 1.
  double conjugate() const {
    if (k_infinite()) return 1.0;
    if (k == 1.0) return kInf;
    return k / (k - 1.0);
  }
  void validate() const {
    require(std::isfinite(delta) && delta >= 0, "Sobolev index needs delta >= 0");
    require(k >= 1, "Sobolev index needs k >= 1");
  }
};

/// Unit balls centered every `stride` grid points along each axis.
struct BallLattice {
  int stride = 1;
  double radius = 1.0;

  /// 1D: every grid point; 2D: largest power-of-two stride with stride·h ≤ max_spacing.
  static BallLattice for_grid(const GridSpec& g, double max_spacing = 0.5) {
    g.validate();
    BallLattice lat;
    if (g.dim == 1) return lat;
    while (2 * lat.stride * g.spacing() <= max_spacing && 2 * lat.stride <= g.points / 2) lat.stride *= 2;
    return lat;
  }
  double spacing(const GridSpec& g) const { return stride * g.spacing(); }
};

namespace detail {

/// Cell-overlap weights of the unit ball around a grid point.
struct BallStencil {
  std::vector<std::array<int, 2>> offsets;
  std::vector<double> weights;
  int full_radius_1d = 0;
  std::vector<std::vector<char>> full_2d;  // full_2d[dx+R][dy+R]
  int R = 0;
  bool full(int dx, int dy) const {
    if (std::abs(dx) > R || std::abs(dy) > R) return false;
    return full_2d[std::size_t(dx + R)][std::size_t(dy + R)] != 0;
  }
};

inline BallStencil build_stencil(const GridSpec& g) {
  const double h = g.spacing();
  BallStencil s;
  s.R = int(std::ceil(1.0 / h + 0.5)) + 1;
  if (g.dim == 1) {
    s.full_radius_1d = int(std::floor((1.0 - 0.5 * h) / h + 1e-12));
    for (int o = -s.R; o <= s.R; ++o) {
      const double lo = std::max(o * h - 0.5 * h, -1.0), hi = std::min(o * h + 0.5 * h, 1.0);
      const double w = std::max(0.0, hi - lo) / h;
      if (w > 0) {
        s.offsets.push_back({o, 0});
        s.weights.push_back(std::min(w, 1.0));
      }
    }
    s.full_2d.assign(std::size_t(2 * s.R + 1), std::vector<char>(1, 0));
    return s;
  }
  const int sub = 16;
  s.full_2d.assign(std::size_t(2 * s.R + 1), std::vector<char>(std::size_t(2 * s.R + 1), 0));
  for (int a = -s.R; a <= s.R; ++a) {
    for (int b = -s.R; b <= s.R; ++b) {
      const double fx = std::abs(a) * h + 0.5 * h, fy = std::abs(b) * h + 0.5 * h;
      const double nx = std::max(0.0, std::abs(a) * h - 0.5 * h), ny = std::max(0.0, std::abs(b) * h - 0.5 * h);
      if (nx * nx + ny * ny >= 1.0) continue;
      double w = 1.0;
      if (fx * fx + fy * fy > 1.0) {
        int in = 0;
        for (int u = 0; u < sub; ++u)
          for (int v = 0; v < sub; ++v) {
            const double x = a * h + ((u + 0.5) / sub - 0.5) * h, y = b * h + ((v + 0.5) / sub - 0.5) * h;
            if (x * x + y * y <= 1.0) ++in;
          }
        w = double(in) / (sub * sub);
      } else {
        s.full_2d[std::size_t(a + s.R)][std::size_t(b + s.R)] = 1;
      }
      if (w > 0) {
        s.offsets.push_back({a, b});
        s.weights.push_back(w);
      }
    }
  }
  return s;
}

inline const BallStencil& stencil_for(const GridSpec& g) {
  static std::mutex m;
  static std::map<std::tuple<int, int, double>, std::unique_ptr<BallStencil>> cache;
  std::lock_guard<std::mutex> lock(m);
  auto& slot = cache[{g.dim, g.points, g.extent}];
  if (!slot) slot = std::make_unique<BallStencil>(build_stencil(g));
  return *slot;
}

inline int wrap(int i, int n) { return ((i % n) + n) % n; }

inline void validate_lattice(const GridSpec& g, const BallLattice& lat) {
  require(lat.stride >= 1 && lat.stride <= g.points, "lattice stride out of range");
  require(lat.radius == 1.0, "ball radius is fixed at 1");
  require(lat.spacing(g) <= 0.5 + 1e-12, "lattice spacing must be at most 0.5");
}

}  // namespace detail

/// max over lattice centers of (∫ 1_B(z,1) a^k)^{1/k} for a ≥ 0 given on the grid; k = ∞ gives max a.
inline double windowed_lk_max(const std::vector<double>& a, const GridSpec& g, double k, const BallLattice& lat) {
  detail::validate_lattice(g, lat);
  if (std::isinf(k)) return *std::max_element(a.begin(), a.end());
  const auto& st = detail::stencil_for(g);
  const int n = g.points;
  std::vector<double> ak(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) ak[i] = k == 1.0 ? a[i] : (k == 2.0 ? a[i] * a[i] : std::pow(a[i], k));
  double best = 0;
  if (g.dim == 1) {
    const int R = st.full_radius_1d;
    std::vector<double> prefix(std::size_t(2 * n + 1), 0.0);
    for (int i = 0; i < 2 * n; ++i) prefix[std::size_t(i + 1)] = prefix[std::size_t(i)] + ak[std::size_t(i % n)];
    const int span = 2 * R + 1;
    for (int c = 0; c < n; c += lat.stride) {
      double s;
      if (span >= n) {
        s = prefix[std::size_t(n)];
      } else {
        const int lo = detail::wrap(c - R, n);
        s = prefix[std::size_t(lo + span)] - prefix[std::size_t(lo)];
      }
      for (std::size_t q = 0; q < st.offsets.size(); ++q) {
        const int o = st.offsets[q][0];
        if (std::abs(o) <= R) continue;
        s += st.weights[q] * ak[std::size_t(detail::wrap(c + o, n))];
      }
      best = std::max(best, s);
    }
  } else {
    for (int cx = 0; cx < n; cx += lat.stride) {
      for (int cy = 0; cy < n; cy += lat.stride) {
        double s = 0;
        for (std::size_t q = 0; q < st.offsets.size(); ++q) {
          const int ix = detail::wrap(cx + st.offsets[q][0], n), iy = detail::wrap(cy + st.offsets[q][1], n);
          s += st.weights[q] * ak[std::size_t(ix) * n + iy];
        }
        best = std::max(best, s);
      }
    }
  }
  const double v = best * g.cell_volume();
  return k == 1.0 ? v : std::pow(v, 1.0 / k);
}

inline std::vector<double> abs_values(const ScalarField& f) {
  std::vector<double> a(f.values.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::abs(f.values[i]);
  return a;
}

/// sup_z ‖1_B(z,1) (1-Δ)^{-δ/2} f‖_{L^k} with the sup taken over the lattice.
inline double local_neg_norm(const ScalarField& f, const SobolevIndex& idx, const BallLattice& lat) {
  idx.validate();
  require(f.all_finite(), "field has non-finite values");
  const ScalarField g = idx.delta > 0 ? bessel_power(f, 0.5 * idx.delta) : f;
  return windowed_lk_max(abs_values(g), f.grid, idx.k, lat);
}

inline double local_neg_norm(const ScalarField& f, const SobolevIndex& idx) {
  return local_neg_norm(f, idx, BallLattice::for_grid(f.grid));
}

/// Vector fields: Euclidean magnitude after componentwise Bessel smoothing.
inline double local_neg_norm(const VectorField& f, const SobolevIndex& idx, const BallLattice& lat) {
  idx.validate();
  require(f.all_finite(), "field has non-finite values");
  const VectorField g = idx.delta > 0 ? bessel_power(f, 0.5 * idx.delta) : f;
  return windowed_lk_max(g.magnitude().values, f.grid, idx.k, lat);
}

inline double local_neg_norm(const VectorField& f, const SobolevIndex& idx) {
  return local_neg_norm(f, idx, BallLattice::for_grid(f.grid));
}

/// Volume of the unit ball in R^d.
inline double unit_ball_volume(int d) { return d == 1 ? 2.0 : std::numbers::pi; }

/// c with ‖f‖_{W̃^{-δ,k}} ≤ c sup|f| and ‖μ‖_var ≤ c ‖μ‖_{δ,k*}: the Bessel kernel has unit mass, so c = |B(0,1)|^{1/k}.
inline double tv_dual_constant(const SobolevIndex& idx, int d) {
  return idx.k_infinite() ? 1.0 : std::pow(unit_ball_volume(d), 1.0 / idx.k);
}

enum class DualMethod { amalgam, probe };

struct ProbeOptions {
  int probes = 64;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ (index * 0xD1B54A32D192ED03ULL));
}

/// Largest block length m (a multiple of stride) whose offsets [-m/2, m-1-m/2]^d lie in the full-weight stencil.
inline int amalgam_block(const GridSpec& g, const BallLattice& lat) {
  const auto& st = stencil_for(g);
  int best = lat.stride;
  for (int m = lat.stride; m <= g.points; m += lat.stride) {
    const int lo = -(m / 2), hi = m - 1 - m / 2;
    bool ok;
    if (g.dim == 1) {
      ok = -lo <= st.full_radius_1d && hi <= st.full_radius_1d;
    } else {
      ok = st.full(lo, lo) && st.full(lo, hi) && st.full(hi, lo) && st.full(hi, hi);
    }
    if (!ok) break;
    best = m;
  }
  return best;
}

inline double amalgam_partition(const std::vector<double>& apow, const GridSpec& g, int m, int start, double kp) {
  const int n = g.points;
  const int nb = (n + m - 1) / m;
  const double vol = g.cell_volume();
  auto cell_of = [&](int i) { return wrap(i - start, n) / m; };
  double total = 0;
  if (g.dim == 1) {
    std::vector<double> cell(std::size_t(nb), 0.0);
    for (int i = 0; i < n; ++i) cell[std::size_t(cell_of(i))] += apow[std::size_t(i)];
    for (double c : cell) total += std::pow(c * vol, 1.0 / kp);
  } else {
    std::vector<double> cell(std::size_t(nb) * nb, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        cell[std::size_t(cell_of(i)) * nb + cell_of(j)] += apow[std::size_t(i) * n + j];
    for (double c : cell) total += std::pow(c * vol, 1.0 / kp);
  }
  return total;
}

}  // namespace detail

/// Upper surrogate Σ_cells ‖1_cell (1-Δ)^{δ/2} ρ‖_{L^{k'}}, minimized over partition offsets.
inline double amalgam_dual_norm(const ScalarField& rho, const SobolevIndex& idx, const BallLattice& lat) {
  idx.validate();
  if (idx.k == 1.0) fail(ErrorKind::Unsupported, "amalgam dual norm needs k > 1");
  detail::validate_lattice(rho.grid, lat);
  const ScalarField psi = idx.delta > 0 ? bessel_power(rho, -0.5 * idx.delta) : rho;
  if (idx.k_infinite()) return psi.l1_norm();
  const double kp = idx.conjugate();
  std::vector<double> apow(psi.values.size());
  for (std::size_t i = 0; i < apow.size(); ++i) apow[i] = std::pow(std::abs(psi.values[i]), kp);
  const int m = detail::amalgam_block(rho.grid, lat);
  const int shifts = std::max(1, std::min(8, m / lat.stride));
  double best = kInf;
  for (int o = 0; o < shifts; ++o) {
    const int c0 = lat.stride * ((o * (m / lat.stride)) / shifts);
    best = std::min(best, detail::amalgam_partition(apow, rho.grid, m, c0 - m / 2, kp));
  }
  return best;
}

/// Certified lower bound max_f |∫ρ f| / ‖f‖_{W̃^{-δ,k}} over structured and random test functions.
/// Test functions are built as g = (1-Δ)^{-δ/2} f, so ∫ρ f = ∫ψ g with ψ = (1-Δ)^{δ/2} ρ.
inline double probe_dual_norm(const ScalarField& rho, const SobolevIndex& idx, const BallLattice& lat,
                              const ProbeOptions& opt = {}) {
  idx.validate();
  require(opt.probes >= 1, "probe method needs at least one probe");
  detail::validate_lattice(rho.grid, lat);
  const GridSpec& g = rho.grid;
  const std::size_t sz = g.size();
  const double vol = g.cell_volume();
  const ScalarField psi = idx.delta > 0 ? bessel_power(rho, -0.5 * idx.delta) : rho;

  auto score = [&](const std::vector<double>& gv) {
    double pair = 0;
    for (std::size_t i = 0; i < sz; ++i) pair += psi.values[i] * gv[i];
    std::vector<double> a(sz);
    for (std::size_t i = 0; i < sz; ++i) a[i] = std::abs(gv[i]);
    const double nrm = windowed_lk_max(a, g, idx.k, lat);
    return nrm > 0 ? std::abs(pair) * vol / nrm : 0.0;
  };

  std::size_t imax = 0;
  for (std::size_t i = 0; i < sz; ++i)
    if (std::abs(psi.values[i]) > std::abs(psi.values[imax])) imax = i;
  if (psi.values[imax] == 0.0) return 0.0;

  std::vector<double> holder(sz);
  const double kp = idx.conjugate();
  for (std::size_t i = 0; i < sz; ++i) {
    const double v = psi.values[i];
    const double sgn = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
    if (idx.k_infinite())
      holder[i] = sgn;
    else if (idx.k == 1.0)
      holder[i] = i == imax ? sgn : 0.0;
    else
      holder[i] = sgn * std::pow(std::abs(v), kp - 1.0);
  }

  std::vector<std::vector<double>> structured;
  structured.push_back(holder);
  if (opt.probes >= 2) {
    const auto& st = detail::stencil_for(g);
    std::vector<double> local(sz, 0.0);
    const int n = g.points;
    const int cx = g.dim == 1 ? int(imax) : int(imax / std::size_t(n));
    const int cy = g.dim == 1 ? 0 : int(imax % std::size_t(n));
    for (std::size_t q = 0; q < st.offsets.size(); ++q) {
      const int ix = detail::wrap(cx + st.offsets[q][0], n);
      const std::size_t at = g.dim == 1 ? std::size_t(ix) : std::size_t(ix) * n + detail::wrap(cy + st.offsets[q][1], n);
      local[at] = holder[at];
    }
    structured.push_back(local);
  }
  if (opt.probes >= 3) {
    ScalarField sgn(g);
    for (std::size_t i = 0; i < sz; ++i) sgn.values[i] = rho.values[i] > 0 ? 1.0 : (rho.values[i] < 0 ? -1.0 : 0.0);
    structured.push_back(idx.delta > 0 ? bessel_power(sgn, 0.5 * idx.delta).values : sgn.values);
  }

  const int n_struct = int(structured.size());
  const int n_rand = opt.probes - n_struct;
  std::vector<double> scores(std::size_t(opt.probes), 0.0);
  for (int j = 0; j < n_struct; ++j) scores[std::size_t(j)] = score(structured[std::size_t(j)]);

  const double kmax_lo = 8.0 * std::numbers::pi / g.extent, kmax_hi = std::numbers::pi / g.spacing();
#pragma omp parallel for schedule(dynamic)
  for (int j = 0; j < n_rand; ++j) {
    std::mt19937_64 rng(detail::stream_seed(opt.seed, std::uint64_t(j)));
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif;
    std::vector<double> gv(sz);
    if (j % 2 == 0) {
      const double amp = std::exp(std::log(1e-3) * (1.0 - unif(rng)));
      for (std::size_t i = 0; i < sz; ++i) gv[i] = holder[i] * (1.0 + amp * normal(rng));
    } else {
      ScalarField noise(g);
      for (double& v : noise.values) v = normal(rng);
      const double kc = std::exp(std::log(kmax_lo) + unif(rng) * (std::log(kmax_hi) - std::log(kmax_lo)));
      gv = apply_multiplier(noise, [kc](const Mode& md) { return Complex(md.k2() <= kc * kc ? 1.0 : 0.0, 0); }).values;
    }
    scores[std::size_t(n_struct + j)] = score(gv);
  }
  return *std::max_element(scores.begin(), scores.end());
}

inline double measure_dual_norm(const ScalarField& rho, const SobolevIndex& idx, DualMethod method,
                                const BallLattice& lat, const ProbeOptions& opt = {}) {
  require(rho.all_finite(), "density has non-finite values");
  return method == DualMethod::amalgam ? amalgam_dual_norm(rho, idx, lat) : probe_dual_norm(rho, idx, lat, opt);
}

inline double measure_dual_norm(const ScalarField& rho, const SobolevIndex& idx, DualMethod method,
                                const ProbeOptions& opt = {}) {
  return measure_dual_norm(rho, idx, method, BallLattice::for_grid(rho.grid), opt);
}

/// Probe lower bound and amalgam upper surrogate of ‖ρ‖_{δ,k*}.
struct DualBracket {
  double lower = 0;
  double upper = 0;
  double ratio() const { return lower > 0 ? upper / lower : 1.0; }
};

inline DualBracket dual_norm_bracket(const ScalarField& rho, const SobolevIndex& idx, const ProbeOptions& opt = {}) {
  const BallLattice lat = BallLattice::for_grid(rho.grid);
  return {probe_dual_norm(rho, idx, lat, opt), amalgam_dual_norm(rho, idx, lat)};
}

struct ExponentProbeResult {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
  double theoretical_slope = 0;
  std::vector<double> t;
  std::vector<double> values;
  int probes = 0;
  std::uint64_t seed = 0;
};

/// Exponent -(i+δ-ε)/2 - d(1/k - 1/p)/2 of ‖∇^i P_t‖ from W̃^{-δ,k} to W̃^{-ε,p}.
inline double heat_operator_exponent(int i, const SobolevIndex& from, const SobolevIndex& to, int d) {
  return -(i + from.delta - to.delta) / 2.0 - d * (from.inv_k() - to.inv_k()) / 2.0;
}

/// Estimates ‖∇^i P_t‖_{W̃^{-δ,k} → W̃^{-ε,p}} per t by maximizing over random test functions, then fits log-log.
inline ExponentProbeResult operator_exponent_probe(int i, const SobolevIndex& from, const SobolevIndex& to,
                                                   const std::vector<double>& t_grid, int probes, std::uint64_t seed,
                                                   const GridSpec& grid) {
  grid.validate();
  from.validate();
  to.validate();
  require(i == 0 || i == 1, "derivative order i must be 0 or 1");
  require(to.delta <= from.delta, "target smoothness eps must not exceed delta");
  require(from.k <= to.k, "target integrability p must be at least k");
  require(probes >= 1, "need at least one probe");
  require(t_grid.size() >= 4, "t_grid needs at least 4 points");
  for (std::size_t j = 0; j < t_grid.size(); ++j) {
    require(std::isfinite(t_grid[j]) && t_grid[j] > 0, "t_grid entries must be positive");
    if (j > 0) require(t_grid[j] > t_grid[j - 1], "t_grid must be strictly increasing");
  }
  require(std::log10(t_grid.back() / t_grid.front()) >= 1.5 - 1e-12, "t_grid must span at least 1.5 decades");

  const BallLattice lat = BallLattice::for_grid(grid);
  const std::size_t nt = t_grid.size();
  const int d = grid.dim;
  const double h = grid.spacing();
  std::vector<double> best(nt * std::size_t(probes), 0.0);

#pragma omp parallel for schedule(dynamic)
  for (int j = 0; j < probes; ++j) {
    std::mt19937_64 rng(detail::stream_seed(seed, std::uint64_t(j)));
    std::uniform_real_distribution<double> unif;
    std::normal_distribution<double> normal;
    const int type = int(rng() % 4);
    const double w = std::exp(std::log(h) + unif(rng) * (std::log(2.0) - std::log(h)));
    const double cx = unif(rng) - 0.5, cy = d == 2 ? unif(rng) - 0.5 : 0.0;
    const double env = 1.0 + unif(rng) * (grid.extent / 4 - 1.0);
    ScalarField gfun(grid);
    if (type == 3) {
      for (double& v : gfun.values) v = normal(rng);
      const double kc = std::numbers::pi / w;
      gfun = apply_multiplier(gfun, [kc](const Mode& md) { return Complex(md.k2() <= kc * kc ? 1.0 : 0.0, 0); });
    } else {
      gfun = ScalarField::from_function(grid, [&](double x, double y) {
        const double dx = x - cx, dy = y - cy;
        const double r2 = dx * dx + dy * dy;
        switch (type) {
          case 0: return std::exp(-r2 / (2 * w * w));
          case 1: return -dx / w * std::exp(-r2 / (2 * w * w));
          default: return std::tanh(dx / w) * std::exp(-r2 / (2 * env * env));
        }
      });
    }
    std::vector<double> ag = abs_values(gfun);
    const double nrm = windowed_lk_max(ag, grid, from.k, lat);
    if (!(nrm > 0)) continue;
    const Spectrum spec = forward(gfun);
    const double lift = 0.5 * (from.delta - to.delta);
    for (std::size_t ti = 0; ti < nt; ++ti) {
      const double t = t_grid[ti];
      std::vector<double> mag(grid.size(), 0.0);
      const int ncomp = i == 0 ? 1 : d;
      for (int c = 0; c < ncomp; ++c) {
        Spectrum s = spec;
        for_each_mode(grid, [&](std::size_t idx, const Mode& md) {
          Complex m(std::pow(1.0 + md.k2(), lift) * std::exp(-0.5 * t * md.k2()), 0);
          if (i == 1) m *= (md.nyquist(c) ? Complex(0, 0) : Complex(0, md.k(c)));
          s.coeffs[idx] *= m;
        });
        const ScalarField out = inverse(s);
        for (std::size_t q = 0; q < mag.size(); ++q) mag[q] += out.values[q] * out.values[q];
      }
      for (double& v : mag) v = std::sqrt(v);
      best[ti * std::size_t(probes) + std::size_t(j)] = windowed_lk_max(mag, grid, to.k, lat) / nrm;
    }
  }

  ExponentProbeResult res;
  res.t = t_grid;
  res.probes = probes;
  res.seed = seed;
  res.theoretical_slope = heat_operator_exponent(i, from, to, d);
  for (std::size_t ti = 0; ti < nt; ++ti) {
    double m = 0;
    for (int j = 0; j < probes; ++j) m = std::max(m, best[ti * std::size_t(probes) + std::size_t(j)]);
    res.values.push_back(m);
  }
  const FitResult f = fit_exponent(res.t, res.values);
  res.slope = f.slope;
  res.intercept = f.intercept;
  res.r2 = f.r2;
  return res;
}

}  // namespace mvsde
