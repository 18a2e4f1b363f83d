#pragma once

// Independent reference computations used by the tests.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "mvsde/mvsde.hpp"

namespace oracle {

/// Random trigonometric polynomial with wavenumbers up to `modes`, sampled by direct summation.
inline mvsde::ScalarField band_limited(const mvsde::GridSpec& g, int modes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> amp(0, 1);
  std::uniform_real_distribution<double> phase(0, 2 * std::numbers::pi);
  const double w = 2 * std::numbers::pi / g.extent;
  if (g.dim == 1) {
    std::vector<double> a(std::size_t(modes) + 1), ph(a.size());
    for (std::size_t m = 0; m < a.size(); ++m) a[m] = amp(rng), ph[m] = phase(rng);
    return mvsde::ScalarField::from_function(g, [&](double x) {
      double s = 0;
      for (std::size_t m = 0; m < a.size(); ++m) s += a[m] * std::cos(w * double(m) * x + ph[m]);
      return s;
    });
  }
  struct Wave { int mx, my; double a, ph; };
  std::vector<Wave> waves;
  for (int mx = -modes; mx <= modes; ++mx)
    for (int my = 0; my <= modes; ++my) waves.push_back({mx, my, amp(rng), phase(rng)});
  return mvsde::ScalarField::from_function(g, [&](double x, double y) {
    double s = 0;
    for (const auto& v : waves) s += v.a * std::cos(w * (v.mx * x + v.my * y) + v.ph);
    return s;
  });
}

/// Minimum transport cost over all vertices (spanning-tree basic solutions) of the transportation polytope.
inline double transport_vertex_min(const std::vector<double>& a, const std::vector<double>& b,
                                   const std::vector<std::vector<double>>& cost) {
  const std::size_t m = a.size(), n = b.size(), cells = m * n, basis = m + n - 1;
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> pick(cells, 0);
  std::fill(pick.end() - long(basis), pick.end(), 1);
  do {
    std::vector<double> ra = a, rb = b;
    std::vector<char> used(cells, 0), row_done(m, 0), col_done(n, 0);
    for (std::size_t c = 0; c < cells; ++c) used[c] = char(pick[c]);
    std::vector<double> x(cells, 0.0);
    std::size_t left = basis;
    bool progress = true;
    while (left > 0 && progress) {
      progress = false;
      for (std::size_t i = 0; i < m && !progress; ++i) {
        if (row_done[i]) continue;
        std::size_t cnt = 0, last = 0;
        for (std::size_t j = 0; j < n; ++j)
          if (used[i * n + j]) ++cnt, last = j;
        if (cnt == 1) {
          x[i * n + last] = ra[i];
          rb[last] -= ra[i];
          used[i * n + last] = 0;
          row_done[i] = 1;
          --left;
          progress = true;
        }
      }
      for (std::size_t j = 0; j < n && !progress; ++j) {
        if (col_done[j]) continue;
        std::size_t cnt = 0, last = 0;
        for (std::size_t i = 0; i < m; ++i)
          if (used[i * n + j]) ++cnt, last = i;
        if (cnt == 1) {
          x[last * n + j] = rb[j];
          ra[last] -= rb[j];
          used[last * n + j] = 0;
          col_done[j] = 1;
          --left;
          progress = true;
        }
      }
    }
    if (left != 0) continue;
    bool feasible = true;
    for (double v : x) feasible = feasible && v >= -1e-13;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) s += x[i * n + j];
      feasible = feasible && std::abs(s - a[i]) < 1e-12;
    }
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < m; ++i) s += x[i * n + j];
      feasible = feasible && std::abs(s - b[j]) < 1e-12;
    }
    if (!feasible) continue;
    double c = 0;
    for (std::size_t k = 0; k < cells; ++k) c += x[k] * cost[k / n][k % n];
    best = std::min(best, c);
  } while (std::next_permutation(pick.begin(), pick.end()));
  return best;
}

/// sup_x |(1-Δ)^{-δ/2} p_ε(x)| = (1/π) ∫_0^∞ (1+ξ²)^{-δ/2} e^{-εξ²/2} dξ for the 1D heat kernel p_ε.
inline double bessel_heat_peak(double delta, double eps) {
  boost::math::quadrature::exp_sinh<double> integrator;
  return integrator.integrate([&](double xi) { return std::pow(1 + xi * xi, -0.5 * delta) * std::exp(-0.5 * eps * xi * xi); }) /
         std::numbers::pi;
}

/// Principal value ∫ sign(x-y)/|x-y| ρ(y) dy for ρ = N(0, s²), folded to ∫_0^∞ [ρ(x-u) - ρ(x+u)]/u du.
inline double hilbert_gaussian_drift(double x, double s2) {
  auto rho = [s2](double y) { return std::exp(-y * y / (2 * s2)) / std::sqrt(2 * std::numbers::pi * s2); };
  auto f = [&](double u) { return u == 0 ? 2 * x / s2 * rho(x) : (rho(x - u) - rho(x + u)) / u; };
  const double cut = 12 * std::sqrt(s2) + std::abs(x);
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, cut, 15, 1e-13);
}

/// Explicit finite-difference Fokker-Planck integrator for ∂ρ = ½ρ'' - (bρ)' in 1D, drift re-evaluated each step.
template <class DriftFn>
mvsde::ScalarField fd_fokker_planck(mvsde::ScalarField rho, DriftFn drift, double T, double dt) {
  const auto& g = rho.grid;
  const int n = g.points;
  const double h = g.spacing();
  const int steps = int(std::llround(T / dt));
  std::vector<double> next(rho.values.size());
  auto rhs = [&](const mvsde::ScalarField& r, double t, std::vector<double>& out) {
    const std::vector<double> b = drift(t, r);
    for (int j = 0; j < n; ++j) {
      const int jm = (j + n - 1) % n, jp = (j + 1) % n;
      const double diff = 0.5 * (r.values[std::size_t(jp)] - 2 * r.values[std::size_t(j)] + r.values[std::size_t(jm)]) / (h * h);
      const double adv = (b[std::size_t(jp)] * r.values[std::size_t(jp)] - b[std::size_t(jm)] * r.values[std::size_t(jm)]) / (2 * h);
      out[std::size_t(j)] = diff - adv;
    }
  };
  std::vector<double> k1(rho.values.size()), k2(rho.values.size());
  for (int s = 0; s < steps; ++s) {
    const double t = s * dt;
    rhs(rho, t, k1);
    mvsde::ScalarField mid = rho;
    for (std::size_t i = 0; i < mid.values.size(); ++i) mid.values[i] += dt * k1[i];
    rhs(mid, t + dt, k2);
    for (std::size_t i = 0; i < rho.values.size(); ++i) rho.values[i] += 0.5 * dt * (k1[i] + k2[i]);
  }
  return rho;
}

}  // namespace oracle
