#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "error.hpp"

namespace mvsde {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [a, b] (Newton iteration on P_n).
inline QuadratureRule gauss_legendre(int n, double a = -1.0, double b = 1.0) {
  require(n >= 1, "Gauss-Legendre needs at least one node");
  QuadratureRule q;
  q.nodes.resize(std::size_t(n));
  q.weights.resize(std::size_t(n));
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  auto legendre = [n](double x, double& dp) {
    double p0 = 1, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    if (n == 1) p0 = 1;
    dp = n * (x * p1 - p0) / (x * x - 1);
    return p1;
  };
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0;
    for (int it = 0; it < 100; ++it) {
      const double dx = legendre(x, dp) / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    legendre(x, dp);
    const double w = 2.0 / ((1 - x * x) * dp * dp);
    q.nodes[std::size_t(i)] = mid - half * x;
    q.nodes[std::size_t(n - 1 - i)] = mid + half * x;
    q.weights[std::size_t(i)] = half * w;
    q.weights[std::size_t(n - 1 - i)] = half * w;
  }
  return q;
}

/// n-point tanh-sinh rule on (0, 1) with step chosen so nodes span [-hmax, hmax].
inline QuadratureRule tanh_sinh_unit(int n, double hmax = 3.0) {
  require(n >= 2, "tanh-sinh needs at least two nodes");
  QuadratureRule q;
  const double dh = 2.0 * hmax / (n - 1);
  const double pi2 = 0.5 * std::numbers::pi;
  for (int i = 0; i < n; ++i) {
    const double h = -hmax + i * dh;
    const double s = pi2 * std::sinh(h);
    const double ch = std::cosh(s);
    const double u = 0.5 * (1.0 + std::tanh(s));
    const double w = 0.5 * dh * pi2 * std::cosh(h) / (ch * ch);
    if (u <= 0.0 || w == 0.0) continue;
    q.nodes.push_back(u);
    q.weights.push_back(w);
  }
  return q;
}

/// Nodes s_i and weights W_i with Σ W_i exp(-(1+a) s_i) ≈ Γ(r) (1+a)^{-r}, a ≥ 0.
/// (0,1] uses u = s^r and tanh-sinh; [1, s_max] uses Gauss-Legendre, s_max set by e^{-s}s^{r-1} < 1e-17.
class GammaHeatRule {
 public:
  GammaHeatRule(double r, int nodes) : r_(r) {
    require(r > 0 && std::isfinite(r), "gamma rule needs r > 0");
    require(nodes >= 4, "gamma rule needs at least 4 nodes");
    const int n1 = nodes / 2, n2 = nodes - n1;
    const QuadratureRule ts = tanh_sinh_unit(n1);
    for (std::size_t i = 0; i < ts.nodes.size(); ++i) {
      s_.push_back(std::pow(ts.nodes[i], 1.0 / r));
      w_.push_back(ts.weights[i] / r);
    }
    double smax = 1.0;
    while (std::exp(-smax) * std::pow(smax, r - 1) > 1e-17) smax *= 1.2;
    const QuadratureRule gl = gauss_legendre(n2, 1.0, smax);
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
      s_.push_back(gl.nodes[i]);
      w_.push_back(gl.weights[i] * std::pow(gl.nodes[i], r - 1));
    }
    inv_gamma_ = 1.0 / std::tgamma(r);
  }

  /// Approximates (1+a)^{-r}; a = |ξ|² is the mode's squared wavenumber.
  double multiplier(double a) const {
    double acc = 0;
    for (std::size_t i = 0; i < s_.size(); ++i) acc += w_[i] * std::exp(-(1.0 + a) * s_[i]);
    return acc * inv_gamma_;
  }

  double order() const { return r_; }
  const std::vector<double>& heat_times_half() const { return s_; }
  const std::vector<double>& weights() const { return w_; }

 private:
  double r_;
  double inv_gamma_ = 1;
  std::vector<double> s_;
  std::vector<double> w_;
};

}  // namespace mvsde
