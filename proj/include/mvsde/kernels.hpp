#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "error.hpp"
#include "field.hpp"
#include "fit.hpp"
#include "norms.hpp"
#include "spectral.hpp"

namespace mvsde {

/// K_t t^κ with K tabulated (piecewise linear, clamped at the ends); empty table means K ≡ 1.
struct TimeModulation {
  double kappa = 0.0;
  std::vector<double> K_times;
  std::vector<double> K_values;

  void validate() const {
    require(std::isfinite(kappa) && kappa >= 0, "kappa must be nonnegative");
    require(K_times.size() == K_values.size(), "K table needs matching times and values");
    for (std::size_t i = 0; i < K_values.size(); ++i) {
      require(K_values[i] >= 1.0, "tabulated K must be >= 1");
      if (i > 0) {
        require(K_times[i] > K_times[i - 1], "K table times must increase");
        require(K_values[i] >= K_values[i - 1], "tabulated K must be nondecreasing");
      }
    }
  }
  double K(double t) const {
    if (K_times.empty()) return 1.0;
    if (t <= K_times.front()) return K_values.front();
    if (t >= K_times.back()) return K_values.back();
    std::size_t i = 1;
    while (K_times[i] < t) ++i;
    const double a = (t - K_times[i - 1]) / (K_times[i] - K_times[i - 1]);
    return (1 - a) * K_values[i - 1] + a * K_values[i];
  }
  double factor(double t) const {
    require(t >= 0, "time must be nonnegative");
    return K(t) * (kappa == 0.0 ? 1.0 : std::pow(t, kappa));
  }
};

/// h(z) = c_j z_j / |z|^{d+2n0+eps0} per component.
struct RieszOrder {
  std::vector<double> c{1.0};
  int n0 = 0;
  double eps0 = 0.5;
};

/// e_direction ⊗ ∂_direction^order δ₀.
struct DiracDerivative {
  int order = 0;
  int direction = 0;
};

struct ConstantVector {
  std::vector<double> c{0.0};
};

struct GridSampled {
  VectorField field;
};

using KernelVariant = std::variant<RieszOrder, DiracDerivative, ConstantVector, GridSampled>;

struct KernelSpec {
  KernelVariant variant = ConstantVector{};
  /// Heat-smoothing time ε; nullopt selects 4·spacing² on the realizing grid.
  std::optional<double> mollification_eps;
  TimeModulation modulation;
  std::string name;

  bool singular() const {
    return std::holds_alternative<RieszOrder>(variant) || std::holds_alternative<DiracDerivative>(variant);
  }
  double eps_on(const GridSpec& g) const {
    return mollification_eps ? *mollification_eps : 4.0 * g.spacing() * g.spacing();
  }
  void validate(int dim) const {
    modulation.validate();
    if (mollification_eps) require(*mollification_eps >= 0, "mollification eps must be nonnegative");
    if (const auto* r = std::get_if<RieszOrder>(&variant)) {
      require(r->n0 >= 0, "n0 must be nonnegative");
      require(r->eps0 >= 0 && r->eps0 < 2, "eps0 must lie in [0,2)");
      require(r->c.size() == std::size_t(dim), "amplitude vector c must have one entry per dimension");
      if (r->eps0 == 0.0 && r->n0 >= 1)
        fail(ErrorKind::Unsupported, "eps0 = 0 with n0 >= 1 has a logarithmic symbol");
    } else if (const auto* dd = std::get_if<DiracDerivative>(&variant)) {
      require(dd->order >= 0 && dd->order <= 2, "Dirac derivative order must be 0, 1 or 2");
      require(dd->direction >= 0 && dd->direction < dim, "Dirac derivative direction out of range");
    } else if (const auto* cv = std::get_if<ConstantVector>(&variant)) {
      require(cv->c.size() == std::size_t(dim), "constant vector must have one entry per dimension");
    } else if (const auto* gs = std::get_if<GridSampled>(&variant)) {
      require(gs->field.grid.dim == dim, "sampled kernel has the wrong dimension");
    }
  }
};

/// Fourier constant of z/|z|^{α+2} in d dimensions: the transform is K iξ|ξ|^{α-d}.
inline double riesz_symbol_constant(int d, int n0, double eps0) {
  const double alpha = d + 2.0 * n0 + eps0 - 2.0;
  return -std::pow(std::numbers::pi, 0.5 * d) * std::pow(2.0, d - alpha - 1.0) * std::tgamma(0.5 * (d - alpha)) /
         std::tgamma(0.5 * alpha + 1.0);
}

/// Continuum Fourier transform ĥ(ξ) of the (mollified) kernel sampled at the grid's half-spectrum modes.
struct KernelSymbol {
  GridSpec grid;
  std::vector<std::vector<Complex>> components;
};

inline Complex grid_phase(const Mode& md) { return ((md.mx + md.my) % 2 == 0) ? Complex(1, 0) : Complex(-1, 0); }

inline KernelSymbol kernel_symbol(const KernelSpec& spec, const GridSpec& g, std::optional<double> eps_override = {}) {
  g.validate();
  spec.validate(g.dim);
  const double eps = eps_override ? *eps_override : spec.eps_on(g);
  if (spec.singular() && !(eps > 0))
    fail(ErrorKind::RequiresMollification, "singular kernel needs mollification eps > 0");
  const int d = g.dim;
  KernelSymbol ks{g, std::vector<std::vector<Complex>>(std::size_t(d),
                                                        std::vector<Complex>(detail::spectrum_size(g)))};
  const double vol = std::pow(g.extent, d);
  if (const auto* r = std::get_if<RieszOrder>(&spec.variant)) {
    const double K = riesz_symbol_constant(d, r->n0, r->eps0);
    const double pw = 2.0 * r->n0 + r->eps0 - 2.0;
    for (int c = 0; c < d; ++c)
      for_each_mode(g, [&](std::size_t i, const Mode& md) {
        const double k2 = md.k2();
        if (k2 == 0.0 || md.nyquist(c)) return;
        ks.components[std::size_t(c)][i] =
            Complex(0, r->c[std::size_t(c)] * K * md.k(c) * std::pow(k2, 0.5 * pw) * std::exp(-0.5 * eps * k2));
      });
  } else if (const auto* dd = std::get_if<DiracDerivative>(&spec.variant)) {
    std::array<int, 2> order{0, 0};
    order[std::size_t(dd->direction)] = dd->order;
    for_each_mode(g, [&](std::size_t i, const Mode& md) {
      ks.components[std::size_t(dd->direction)][i] = derivative_symbol(md, order) * std::exp(-0.5 * eps * md.k2());
    });
  } else if (const auto* cv = std::get_if<ConstantVector>(&spec.variant)) {
    for (int c = 0; c < d; ++c) ks.components[std::size_t(c)][0] = cv->c[std::size_t(c)] * vol;
  } else if (const auto* gs = std::get_if<GridSampled>(&spec.variant)) {
    require_same_grid(gs->field.grid, g);
    for (int c = 0; c < d; ++c) {
      const Spectrum s = forward(gs->field.component(c));
      for_each_mode(g, [&](std::size_t i, const Mode& md) {
        ks.components[std::size_t(c)][i] = g.cell_volume() * grid_phase(md) * s.coeffs[i] *
                                           (eps > 0 ? std::exp(-0.5 * eps * md.k2()) : 1.0);
      });
    }
  }
  return ks;
}

/// The mollified kernel h_ε = P_ε h as a grid field (symbol route).
inline VectorField realize_kernel(const KernelSpec& spec, const GridSpec& g) {
  const KernelSymbol ks = kernel_symbol(spec, g);
  VectorField out(g);
  for (int c = 0; c < g.dim; ++c) {
    Spectrum s{g, ks.components[std::size_t(c)]};
    for_each_mode(g, [&](std::size_t i, const Mode& md) { s.coeffs[i] *= grid_phase(md) / g.cell_volume(); });
    out.set_component(c, inverse(s));
  }
  return out;
}

/// Unmollified RieszOrder kernel on the 1D torus by symmetric image summation with an asymptotic tail.
inline double riesz_direct_periodic_1d(const RieszOrder& r, double z, double L, int images = 256) {
  const double beta = 1.0 + 2.0 * r.n0 + r.eps0;
  auto h = [beta](double u) { return u == 0.0 ? 0.0 : (u > 0 ? 1.0 : -1.0) * std::pow(std::abs(u), 1.0 - beta); };
  z = z - L * std::round(z / L);
  if (beta == 1.0) return r.c[0] * ((z > 0 ? 1.0 : (z < 0 ? -1.0 : 0.0)) - 2.0 * z / L);
  double s = h(z);
  for (int m = 1; m <= images; ++m) s += h(z + m * L) + h(z - m * L);
  s -= 2.0 * z * std::pow(L, -beta) * std::pow(images + 0.5, 1.0 - beta);
  return r.c[0] * s;
}

/// Direct-route realization (1D RieszOrder only, unmollified, off the origin).
inline ScalarField realize_kernel_direct_1d(const KernelSpec& spec, const GridSpec& g) {
  const auto* r = std::get_if<RieszOrder>(&spec.variant);
  if (!r || g.dim != 1) fail(ErrorKind::Unsupported, "direct route covers 1D RieszOrder kernels");
  return ScalarField::from_function(g, [&](double x) { return riesz_direct_periodic_1d(*r, x, g.extent); });
}

/// Spectral convolution b = irfft(ĥ · rfft(ρ)), unscaled by the time modulation.
inline VectorField convolve_symbol(const KernelSymbol& ks, const ScalarField& rho) {
  require_same_grid(ks.grid, rho.grid);
  const Spectrum s = forward(rho);
  VectorField out(rho.grid);
  for (int c = 0; c < rho.grid.dim; ++c) {
    Spectrum sc{rho.grid, s.coeffs};
    for (std::size_t i = 0; i < sc.coeffs.size(); ++i) sc.coeffs[i] *= ks.components[std::size_t(c)][i];
    out.set_component(c, inverse(sc));
  }
  return out;
}

struct DriftEvaluation {
  VectorField drift;
  double eps_sensitivity = 0.0;
};

/// K_t t^κ (h_ε * ρ) and the sensitivity sup|b_ε - b_{ε/2}|.
inline DriftEvaluation drift_from_kernel(const KernelSpec& spec, const ScalarField& rho, double t) {
  require(rho.all_finite(), "density has non-finite values");
  if (const auto* gs = std::get_if<GridSampled>(&spec.variant)) require_same_grid(gs->field.grid, rho.grid);
  const double f = spec.modulation.factor(t);
  DriftEvaluation ev;
  ev.drift = convolve_symbol(kernel_symbol(spec, rho.grid), rho);
  ev.drift *= f;
  const double eps = spec.eps_on(rho.grid);
  if (eps > 0 && f != 0.0) {
    VectorField half = convolve_symbol(kernel_symbol(spec, rho.grid, 0.5 * eps), rho);
    half *= f;
    ev.eps_sensitivity = (ev.drift - half).sup_norm();
  }
  return ev;
}

/// Drift b_t(·, μ_t) as used by the solver and the particle system.
struct Drift {
  std::function<VectorField(double, const ScalarField&)> eval;
  bool measure_dependent = true;
  bool zero = false;
  std::string name;
  /// Symbol of the underlying convolution kernel, when there is one.
  std::optional<KernelSymbol> symbol;
  TimeModulation modulation;

  VectorField operator()(double t, const ScalarField& rho) const { return eval(t, rho); }
};

inline Drift zero_drift() {
  Drift d;
  d.eval = [](double, const ScalarField& rho) { return VectorField(rho.grid); };
  d.measure_dependent = false;
  d.zero = true;
  d.name = "zero";
  return d;
}

inline Drift kernel_drift(const KernelSpec& spec, const GridSpec& g) {
  auto ks = std::make_shared<KernelSymbol>(kernel_symbol(spec, g));
  Drift d;
  d.modulation = spec.modulation;
  d.symbol = *ks;
  d.name = spec.name.empty() ? "kernel" : spec.name;
  d.measure_dependent = !std::holds_alternative<ConstantVector>(spec.variant);
  const TimeModulation mod = spec.modulation;
  d.eval = [ks, mod](double t, const ScalarField& rho) {
    VectorField b = convolve_symbol(*ks, rho);
    b *= mod.factor(t);
    return b;
  };
  return d;
}

/// Drift switched off on [0, r) and delayed by r afterwards: 1_{[r,∞)}(t) b_{t-r}.
inline Drift shifted_drift(const Drift& base, double r) {
  require(r > 0, "shift must be positive");
  Drift d = base;
  d.name = base.name + "_shifted";
  auto inner = base.eval;
  d.eval = [inner, r](double t, const ScalarField& rho) {
    if (t < r) return VectorField(rho.grid);
    return inner(t - r, rho);
  };
  return d;
}

enum class NemytskiiFamily { zero, density, clip_gradient, linear };

/// F(x, h) for h ∈ H_n = ⊕_{i<n} (R^d)^{⊗i}, scaled by the K_t t^κ envelope.
struct NemytskiiSpec {
  int n = 1;
  NemytskiiFamily family = NemytskiiFamily::zero;
  double scale = 1.0;
  double clip = 1.0;
  int direction = 0;
  std::vector<double> coefficients;
  TimeModulation modulation;

  /// Number of H_n coordinates: Σ_{i<n} d^i.
  std::size_t jet_size(int d) const {
    std::size_t s = 0, p = 1;
    for (int i = 0; i < n; ++i, p *= std::size_t(d)) s += p;
    return s;
  }
  void validate(int d) const {
    require(n >= 1, "Nemytskii depth n must be >= 1");
    if (n - 1 > 4) fail(ErrorKind::UnsupportedOrder, "Nemytskii depth needs derivatives above order 4");
    modulation.validate();
    require(direction >= 0 && direction < d, "Nemytskii direction out of range");
    require(scale >= 0 && clip > 0, "Nemytskii scale must be nonnegative and clip positive");
    if (family == NemytskiiFamily::clip_gradient) require(n >= 2, "clip_gradient needs n >= 2");
    if (family == NemytskiiFamily::linear)
      require(coefficients.size() == jet_size(d), "linear family needs one coefficient per H_n coordinate");
  }

  /// F without the envelope; `h` lists H_n coordinates ordered by tensor degree, then index tuple.
  std::vector<double> apply(const std::vector<double>& h, int d) const {
    std::vector<double> out(std::size_t(d), 0.0);
    switch (family) {
      case NemytskiiFamily::zero: break;
      case NemytskiiFamily::density: out[std::size_t(direction)] = scale * h[0]; break;
      case NemytskiiFamily::clip_gradient:
        for (int c = 0; c < d; ++c) out[std::size_t(c)] = scale * std::clamp(h[1 + std::size_t(c)], -clip, clip);
        break;
      case NemytskiiFamily::linear: {
        double s = 0;
        for (std::size_t a = 0; a < h.size(); ++a) s += coefficients[a] * h[a];
        out[std::size_t(direction)] = scale * s;
        break;
      }
    }
    return out;
  }
};

/// All ∂^{α} ρ with α running over ordered index tuples of length < n, in jet order.
inline std::vector<ScalarField> density_jet(const ScalarField& rho, int n) {
  const int d = rho.grid.dim;
  std::vector<ScalarField> jet;
  for (int deg = 0; deg < n; ++deg) {
    std::size_t count = 1;
    for (int i = 0; i < deg; ++i) count *= std::size_t(d);
    for (std::size_t tuple = 0; tuple < count; ++tuple) {
      std::array<int, 2> order{0, 0};
      std::size_t t = tuple;
      for (int i = 0; i < deg; ++i) {
        order[t % std::size_t(d)] += 1;
        t /= std::size_t(d);
      }
      jet.push_back(field_derivative(rho, order));
    }
  }
  return jet;
}

inline VectorField nemytskii_drift(const NemytskiiSpec& spec, const ScalarField& rho, double t) {
  const int d = rho.grid.dim;
  spec.validate(d);
  require(rho.all_finite(), "density has non-finite values");
  VectorField out(rho.grid);
  if (spec.family == NemytskiiFamily::zero) return out;
  const double env = spec.modulation.factor(t);
  const std::vector<ScalarField> jet = density_jet(rho, spec.n);
  std::vector<double> h(jet.size());
  for (std::size_t i = 0; i < rho.grid.size(); ++i) {
    for (std::size_t a = 0; a < jet.size(); ++a) h[a] = jet[a].values[i];
    const std::vector<double> f = spec.apply(h, d);
    for (int c = 0; c < d; ++c) out.components[std::size_t(c)][i] = env * f[std::size_t(c)];
  }
  return out;
}

inline Drift nemytskii_drift_fn(const NemytskiiSpec& spec) {
  Drift d;
  d.name = "nemytskii";
  d.modulation = spec.modulation;
  d.zero = spec.family == NemytskiiFamily::zero;
  d.measure_dependent = !d.zero;
  d.eval = [spec](double t, const ScalarField& rho) { return nemytskii_drift(spec, rho, t); };
  return d;
}

struct LipschitzCheck {
  double max_ratio = 0;
  double envelope = 0;
  bool passed = false;
};

/// Samples pairs (h, h̃) and compares max |F_t(h) - F_t(h̃)| / ‖h - h̃‖ with K_t t^κ.
inline LipschitzCheck nemytskii_lipschitz_check(const NemytskiiSpec& spec, int d, double t, int samples,
                                                std::uint64_t seed) {
  spec.validate(d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  const std::size_t m = spec.jet_size(d);
  const double env = spec.modulation.factor(t);
  LipschitzCheck out;
  out.envelope = env;
  for (int s = 0; s < samples; ++s) {
    const double spread = std::exp(std::log(1e-3) + unif(rng) * std::log(1e4));
    std::vector<double> a(m), b(m);
    double dist = 0;
    for (std::size_t i = 0; i < m; ++i) {
      a[i] = spread * normal(rng);
      b[i] = a[i] + spread * normal(rng) * unif(rng);
      dist += (a[i] - b[i]) * (a[i] - b[i]);
    }
    dist = std::sqrt(dist);
    if (dist == 0) continue;
    const auto fa = spec.apply(a, d), fb = spec.apply(b, d);
    double df = 0;
    for (int c = 0; c < d; ++c) df += (fa[std::size_t(c)] - fb[std::size_t(c)]) * (fa[std::size_t(c)] - fb[std::size_t(c)]);
    out.max_ratio = std::max(out.max_ratio, env * std::sqrt(df) / dist);
  }
  out.passed = out.max_ratio <= env * (1 + 1e-12);
  return out;
}

struct NormStudyRow {
  double eps = 0;
  double norm = 0;
};

struct NormStudy {
  std::vector<NormStudyRow> rows;
  BoundednessFit fit;
  std::vector<std::string> warnings;
};

/// local_neg_norm of realize_kernel at each mollification ε, plus a boundedness verdict.
inline NormStudy kernel_norm_study(const KernelSpec& spec, const SobolevIndex& idx, const std::vector<double>& eps_list,
                                   const GridSpec& g) {
  g.validate();
  idx.validate();
  require(eps_list.size() >= 4, "norm study needs at least 4 eps values");
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    require(eps_list[i] > 0, "eps values must be positive");
    if (i > 0) require(eps_list[i] < eps_list[i - 1], "eps_list must be strictly decreasing");
  }
  NormStudy study;
  const double floor_eps = 4.0 * g.spacing() * g.spacing() * (1 - 1e-9);
  const BallLattice lat = BallLattice::for_grid(g);
  for (double eps : eps_list) {
    if (eps < floor_eps) {
      study.warnings.push_back("eps = " + std::to_string(eps) + " is below the grid resolution 4h^2; list truncated");
      break;
    }
    KernelSpec s = spec;
    s.mollification_eps = eps;
    study.rows.push_back({eps, local_neg_norm(realize_kernel(s, g), idx, lat)});
  }
  require(study.rows.size() >= 4, "fewer than 4 resolvable eps values remain");
  std::vector<double> e, y;
  for (const auto& r : study.rows) e.push_back(r.eps), y.push_back(r.norm);
  study.fit = boundedness_verdict(e, y);
  return study;
}

/// Geometric eps list from eps_max down to the grid floor 4h^2 (factor 2 per step).
inline std::vector<double> default_eps_list(const GridSpec& g, int count = 9) {
  std::vector<double> out;
  const double floor_eps = 4.0 * g.spacing() * g.spacing();
  for (int i = count - 1; i >= 0; --i) out.push_back(floor_eps * std::pow(2.0, i));
  return out;
}

/// Named kernels addressable from configs.
inline KernelSpec kernel_catalog(const std::string& name, int dim) {
  KernelSpec s;
  s.name = name;
  const std::vector<double> unit(std::size_t(dim), 1.0);
  if (name == "zero") {
    s.variant = ConstantVector{std::vector<double>(std::size_t(dim), 0.0)};
  } else if (name == "constant") {
    s.variant = ConstantVector{unit};
  } else if (name == "dirac0" || name == "dirac1" || name == "dirac2") {
    s.variant = DiracDerivative{name.back() - '0', 0};
  } else if (name == "riesz") {
    s.variant = RieszOrder{unit, 0, 0.5};
  } else if (name == "riesz_small") {
    s.variant = RieszOrder{unit, 0, 0.5};
    s.modulation.kappa = 0.5;
  } else if (name == "hilbert") {
    s.variant = RieszOrder{unit, 0, 1.0};
  } else if (name == "riesz_n1") {
    s.variant = RieszOrder{unit, 1, 0.5};
  } else {
    fail(ErrorKind::InvalidArgument, "unknown kernel '" + name + "'");
  }
  return s;
}

inline std::vector<std::string> kernel_catalog_names() {
  return {"zero", "constant", "dirac0", "dirac1", "dirac2", "riesz", "riesz_small", "hilbert", "riesz_n1"};
}

}  // namespace mvsde
