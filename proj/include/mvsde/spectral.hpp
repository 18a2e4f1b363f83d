#pragma once

#include <fftw3.h>

#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <utility>
#include <vector>

#include "error.hpp"
#include "field.hpp"
#include "quadrature.hpp"

namespace mvsde {

using Complex = std::complex<double>;

/// Half-spectrum of a real field (FFTW r2c layout, unnormalized forward transform).
struct Spectrum {
  GridSpec grid;
  std::vector<Complex> coeffs;
};

/// Angular wavenumbers of one stored mode; the Nyquist flags mark the unpaired modes.
struct Mode {
  double kx = 0, ky = 0;
  bool nyq_x = false, nyq_y = false;
  int mx = 0, my = 0;
  double k2() const { return kx * kx + ky * ky; }
  double k(int c) const { return c == 0 ? kx : ky; }
  bool nyquist(int c) const { return c == 0 ? nyq_x : nyq_y; }
};

namespace detail {

class FftPlans {
 public:
  FftPlans(int dim, int n) {
    const std::size_t nr = dim == 1 ? std::size_t(n) : std::size_t(n) * n;
    const std::size_t nc = dim == 1 ? std::size_t(n / 2 + 1) : std::size_t(n) * (n / 2 + 1);
    double* r = fftw_alloc_real(nr);
    fftw_complex* c = fftw_alloc_complex(nc);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    if (dim == 1) {
      fwd_ = fftw_plan_dft_r2c_1d(n, r, c, flags);
      inv_ = fftw_plan_dft_c2r_1d(n, c, r, flags);
    } else {
      fwd_ = fftw_plan_dft_r2c_2d(n, n, r, c, flags);
      inv_ = fftw_plan_dft_c2r_2d(n, n, c, r, flags);
    }
    fftw_free(r);
    fftw_free(c);
  }
  ~FftPlans() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
  }
  FftPlans(const FftPlans&) = delete;
  FftPlans& operator=(const FftPlans&) = delete;

  fftw_plan forward() const { return fwd_; }
  fftw_plan inverse() const { return inv_; }

 private:
  fftw_plan fwd_;
  fftw_plan inv_;
};

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

inline const FftPlans& plans_for(const GridSpec& g) {
  static std::map<std::pair<int, int>, std::unique_ptr<FftPlans>> cache;
  std::lock_guard<std::mutex> lock(fftw_planner_mutex());
  auto& slot = cache[{g.dim, g.points}];
  if (!slot) slot = std::make_unique<FftPlans>(g.dim, g.points);
  return *slot;
}

inline std::size_t spectrum_size(const GridSpec& g) {
  return g.dim == 1 ? std::size_t(g.points / 2 + 1) : std::size_t(g.points) * (g.points / 2 + 1);
}

}  // namespace detail

inline Spectrum forward(const ScalarField& f) {
  const auto& p = detail::plans_for(f.grid);
  Spectrum s{f.grid, std::vector<Complex>(detail::spectrum_size(f.grid))};
  std::vector<double> in = f.values;
  fftw_execute_dft_r2c(p.forward(), in.data(), reinterpret_cast<fftw_complex*>(s.coeffs.data()));
  return s;
}

inline ScalarField inverse(const Spectrum& s) {
  const auto& p = detail::plans_for(s.grid);
  std::vector<Complex> work = s.coeffs;
  ScalarField out(s.grid);
  fftw_execute_dft_c2r(p.inverse(), reinterpret_cast<fftw_complex*>(work.data()), out.values.data());
  const double norm = 1.0 / double(s.grid.size());
  for (double& v : out.values) v *= norm;
  return out;
}

/// Calls fn(index, mode) for every stored half-spectrum mode.
template <class Fn>
void for_each_mode(const GridSpec& g, Fn&& fn) {
  const int n = g.points;
  const double dk = 2.0 * std::numbers::pi / g.extent;
  if (g.dim == 1) {
    for (int m = 0; m <= n / 2; ++m) {
      Mode md;
      md.mx = m;
      md.kx = dk * m;
      md.nyq_x = (m == n / 2);
      fn(std::size_t(m), md);
    }
    return;
  }
  const int half = n / 2 + 1;
  for (int i = 0; i < n; ++i) {
    const int mi = i <= n / 2 ? i : i - n;
    for (int j = 0; j < half; ++j) {
      Mode md;
      md.mx = mi;
      md.my = j;
      md.kx = dk * mi;
      md.ky = dk * j;
      md.nyq_x = (i == n / 2);
      md.nyq_y = (j == n / 2);
      fn(std::size_t(i) * half + j, md);
    }
  }
}

/// Multiplies the spectrum of f by m(mode) and transforms back.
template <class M>
ScalarField apply_multiplier(const ScalarField& f, M&& m) {
  Spectrum s = forward(f);
  for_each_mode(f.grid, [&](std::size_t idx, const Mode& md) { s.coeffs[idx] *= m(md); });
  ScalarField out = inverse(s);
  out.underresolved = f.underresolved;
  return out;
}

inline Complex ipow(int n) {
  switch (((n % 4) + 4) % 4) {
    case 0: return {1, 0};
    case 1: return {0, 1};
    case 2: return {-1, 0};
    default: return {0, -1};
  }
}

/// Multiplier of the derivative ∂^order, with Nyquist modes zeroed along directions of odd order.
inline Complex derivative_symbol(const Mode& md, const std::array<int, 2>& order) {
  if ((order[0] % 2 == 1 && md.nyq_x) || (order[1] % 2 == 1 && md.nyq_y)) return {0, 0};
  double mag = 1;
  for (int a = 0; a < order[0]; ++a) mag *= md.kx;
  for (int a = 0; a < order[1]; ++a) mag *= md.ky;
  return ipow(order[0] + order[1]) * mag;
}

inline bool heat_underresolved(const GridSpec& g, double t) { return std::sqrt(t) < 2.0 * g.spacing(); }

inline void require_time(double t) {
  require(std::isfinite(t) && t > 0, "heat time must be positive and finite");
}

/// P_t f: convolution with the Gaussian of variance t per coordinate (generator ½Δ).
inline ScalarField heat_apply(const ScalarField& f, double t) {
  require_time(t);
  ScalarField out = apply_multiplier(f, [t](const Mode& md) { return Complex(std::exp(-0.5 * t * md.k2()), 0); });
  out.underresolved = f.underresolved || heat_underresolved(f.grid, t);
  return out;
}

/// ∇ P_t f.
inline VectorField heat_gradient(const ScalarField& f, double t) {
  require_time(t);
  VectorField out(f.grid);
  Spectrum s = forward(f);
  for (int c = 0; c < f.grid.dim; ++c) {
    Spectrum sc = s;
    for_each_mode(f.grid, [&](std::size_t idx, const Mode& md) {
      const Complex m = md.nyquist(c) ? Complex(0, 0) : Complex(0, md.k(c) * std::exp(-0.5 * t * md.k2()));
      sc.coeffs[idx] *= m;
    });
    out.set_component(c, inverse(sc));
  }
  out.underresolved = f.underresolved || heat_underresolved(f.grid, t);
  return out;
}

enum class BesselMode { spectral, gamma_quadrature };

/// Multiplier (1+|ξ|²)^{-r} for any real r; negative r lifts instead of smoothing.
inline ScalarField bessel_power(const ScalarField& f, double r) {
  if (r == 0.0) return f;
  return apply_multiplier(f, [r](const Mode& md) { return Complex(std::pow(1.0 + md.k2(), -r), 0); });
}

inline VectorField bessel_power(const VectorField& f, double r) {
  VectorField out(f.grid);
  for (int c = 0; c < f.grid.dim; ++c) out.set_component(c, bessel_power(f.component(c), r));
  out.underresolved = f.underresolved;
  return out;
}

/// (1-Δ)^{-r} f, either as the exact multiplier or as the Γ-weighted heat-semigroup integral
/// Γ(r)^{-1} ∫ s^{r-1} e^{-s} e^{sΔ} ds evaluated with `nodes` quadrature nodes.
inline ScalarField bessel_apply(const ScalarField& f, double r, BesselMode mode = BesselMode::spectral,
                                int nodes = 200) {
  require(std::isfinite(r) && r >= 0, "Bessel order r must be nonnegative");
  if (mode == BesselMode::spectral) return bessel_power(f, r);
  require(r > 0, "gamma_quadrature mode needs r > 0");
  const GammaHeatRule rule(r, nodes);
  return apply_multiplier(f, [&rule](const Mode& md) { return Complex(rule.multiplier(md.k2()), 0); });
}

/// Spectral derivative ∂^order with |order| ≤ 4.
inline ScalarField field_derivative(const ScalarField& f, std::array<int, 2> order) {
  require(order[0] >= 0 && order[1] >= 0, "derivative order must be nonnegative");
  if (order[0] + order[1] > 4) fail(ErrorKind::UnsupportedOrder, "derivative order above 4");
  if (f.grid.dim == 1 && order[1] != 0) fail(ErrorKind::WrongDimension, "y-derivative on a 1D grid");
  if (order[0] + order[1] == 0) return f;
  return apply_multiplier(f, [&order](const Mode& md) { return derivative_symbol(md, order); });
}

inline ScalarField field_derivative(const ScalarField& f, int order_x) { return field_derivative(f, {order_x, 0}); }

}  // namespace mvsde
