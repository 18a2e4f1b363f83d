#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "error.hpp"
#include "field.hpp"

namespace mvsde {

/// Weighted points; weights sum to 1.
struct DiscreteMeasure {
  int dim = 1;
  std::vector<std::array<double, 2>> points;
  std::vector<double> weights;

  void validate() const {
    require(dim == 1 || dim == 2, "discrete measure dimension must be 1 or 2");
    require(!points.empty() && points.size() == weights.size(), "discrete measure needs matching points and weights");
    double s = 0;
    for (double w : weights) {
      require(w >= 0 && std::isfinite(w), "weights must be nonnegative");
      s += w;
    }
    require(std::abs(s - 1.0) <= 1e-12 * std::max<std::size_t>(1, weights.size()), "weights must sum to 1");
  }
};

/// Isotropic Gaussian N(mean, variance·I).
struct GaussianSpec {
  std::vector<double> mean{0.0};
  double variance = 1.0;

  void validate() const { require(variance > 0 && std::isfinite(variance), "Gaussian variance must be positive"); }
  int dim() const { return int(mean.size()); }
  ScalarField density(const GridSpec& g) const {
    validate();
    require(int(mean.size()) == g.dim, "Gaussian mean dimension does not match the grid");
    const double norm = std::pow(2 * std::numbers::pi * variance, -0.5 * g.dim);
    const double mx = mean[0], my = g.dim == 2 ? mean[1] : 0.0;
    return ScalarField::from_function(g, [&](double x, double y) {
      const double r2 = (x - mx) * (x - mx) + (g.dim == 2 ? (y - my) * (y - my) : 0.0);
      return norm * std::exp(-r2 / (2 * variance));
    });
  }
};

inline double gaussian_w2(const GaussianSpec& a, const GaussianSpec& b) {
  a.validate();
  b.validate();
  require(a.dim() == b.dim(), "Gaussians of different dimensions");
  double s = 0;
  for (int i = 0; i < a.dim(); ++i) s += (a.mean[std::size_t(i)] - b.mean[std::size_t(i)]) * (a.mean[std::size_t(i)] - b.mean[std::size_t(i)]);
  const double ds = std::sqrt(a.variance) - std::sqrt(b.variance);
  return std::sqrt(s + a.dim() * ds * ds);
}

/// Ent(N(m1, v1 I) | N(m2, v2 I)).
inline double gaussian_relative_entropy(const GaussianSpec& a, const GaussianSpec& b) {
  a.validate();
  b.validate();
  require(a.dim() == b.dim(), "Gaussians of different dimensions");
  double s = 0;
  for (int i = 0; i < a.dim(); ++i) s += (a.mean[std::size_t(i)] - b.mean[std::size_t(i)]) * (a.mean[std::size_t(i)] - b.mean[std::size_t(i)]);
  const double r = a.variance / b.variance;
  return 0.5 * a.dim() * (r - 1 - std::log(r)) + s / (2 * b.variance);
}

/// Piecewise-linear quantile function: on [u0, u1] it runs linearly from x0 to x1 (x0 = x1 for atoms).
class QuantileFunction {
 public:
  struct Piece {
    double u0, u1, x0, x1;
  };

  /// Cell-uniform reading of a 1D grid density (negative values clipped, mass renormalized).
  static QuantileFunction from_density(const ScalarField& rho) {
    if (rho.grid.dim != 1) fail(ErrorKind::WrongDimension, "quantile functions need a 1D density");
    const double h = rho.grid.spacing();
    double total = 0;
    for (double v : rho.values) total += std::max(v, 0.0);
    require(total > 0, "density has no positive mass");
    QuantileFunction q;
    double u = 0;
    for (int j = 0; j < rho.grid.points; ++j) {
      const double m = std::max(rho.values[std::size_t(j)], 0.0) / total;
      if (m <= 0) continue;
      const double x = rho.grid.coord(j);
      q.pieces_.push_back({u, u + m, x - 0.5 * h, x + 0.5 * h});
      u += m;
    }
    q.pieces_.back().u1 = 1.0;
    return q;
  }

  static QuantileFunction from_atoms(std::vector<double> x, std::vector<double> w = {}) {
    require(!x.empty(), "need at least one atom");
    if (w.empty()) w.assign(x.size(), 1.0 / double(x.size()));
    require(w.size() == x.size(), "atoms and weights differ in length");
    std::vector<std::size_t> order(x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    double total = 0;
    for (double v : w) {
      require(v >= 0, "atom weights must be nonnegative");
      total += v;
    }
    require(total > 0, "atoms carry no mass");
    QuantileFunction q;
    double u = 0;
    for (std::size_t i : order) {
      if (w[i] <= 0) continue;
      const double m = w[i] / total;
      q.pieces_.push_back({u, u + m, x[i], x[i]});
      u += m;
    }
    q.pieces_.back().u1 = 1.0;
    return q;
  }

  const std::vector<Piece>& pieces() const { return pieces_; }

 private:
  std::vector<Piece> pieces_;
};

namespace detail {

/// ∫_0^du |d0 + (d1 - d0) s/du|^q ds in closed form.
inline double linear_power_integral(double d0, double d1, double du, double q) {
  const double a0 = std::abs(d0), a1 = std::abs(d1);
  if (d0 * d1 >= 0) {
    const double diff = a1 - a0;
    if (std::abs(diff) <= 1e-12 * std::max(a0, a1)) return du * std::pow(0.5 * (a0 + a1), q);
    return du * (std::pow(a1, q + 1) - std::pow(a0, q + 1)) / ((q + 1) * diff);
  }
  return du * (std::pow(a0, q + 1) + std::pow(a1, q + 1)) / ((q + 1) * (a0 + a1));
}

}  // namespace detail

/// (∫_0^1 |Q1(u) - Q2(u)|^q du)^{1/q}, integrated exactly over merged breakpoints.
inline double wasserstein_quantile(const QuantileFunction& a, const QuantileFunction& b, double q) {
  require(q >= 1 && std::isfinite(q), "W_q needs finite q >= 1");
  const auto& pa = a.pieces();
  const auto& pb = b.pieces();
  std::size_t i = 0, j = 0;
  double u = 0, total = 0;
  auto at = [](const QuantileFunction::Piece& p, double uu) {
    if (p.u1 <= p.u0) return p.x0;
    return p.x0 + (p.x1 - p.x0) * (uu - p.u0) / (p.u1 - p.u0);
  };
  while (i < pa.size() && j < pb.size()) {
    const double next = std::min(pa[i].u1, pb[j].u1);
    if (next > u) {
      const double d0 = at(pa[i], u) - at(pb[j], u);
      const double d1 = at(pa[i], next) - at(pb[j], next);
      total += detail::linear_power_integral(d0, d1, next - u, q);
      u = next;
    }
    if (pa[i].u1 <= u) ++i;
    if (j < pb.size() && pb[j].u1 <= u) ++j;
  }
  return std::pow(total, 1.0 / q);
}

inline double wasserstein_1d(const ScalarField& rho1, const ScalarField& rho2, double q) {
  if (rho1.grid.dim != 1 || rho2.grid.dim != 1) fail(ErrorKind::WrongDimension, "wasserstein_1d needs 1D densities");
  return wasserstein_quantile(QuantileFunction::from_density(rho1), QuantileFunction::from_density(rho2), q);
}

/// Exact optimal transport cost^{1/q} with ground cost |x-y|^q by successive shortest paths (Dijkstra with potentials).
inline double wasserstein_discrete(const DiscreteMeasure& a, const DiscreteMeasure& b, double q) {
  a.validate();
  b.validate();
  require(a.dim == b.dim, "discrete measures of different dimensions");
  require(q >= 1 && std::isfinite(q), "W_q needs finite q >= 1");
  const std::size_t ma = a.points.size(), mb = b.points.size();
  if (double(ma) * double(mb) > 1e6) fail(ErrorKind::TooLarge, "support product exceeds 1e6");
  std::vector<double> cost(ma * mb);
  for (std::size_t i = 0; i < ma; ++i)
    for (std::size_t j = 0; j < mb; ++j) {
      double d2 = 0;
      for (int c = 0; c < a.dim; ++c)
        d2 += (a.points[i][std::size_t(c)] - b.points[j][std::size_t(c)]) * (a.points[i][std::size_t(c)] - b.points[j][std::size_t(c)]);
      cost[i * mb + j] = std::pow(std::sqrt(d2), q);
    }
  std::vector<double> supply = a.weights, demand = b.weights, flow(ma * mb, 0.0);
  // node V is a super source feeding every row with leftover supply
  const std::size_t V = ma + mb, S = V;
  std::vector<double> pot(V + 1, 0.0);
  const double inf = std::numeric_limits<double>::infinity();
  const double tiny = 1e-15;
  double remaining = 0;
  for (double s : supply) remaining += s;
  while (remaining > tiny) {
    std::vector<double> dist(V + 1, inf);
    std::vector<std::ptrdiff_t> prev(V + 1, -1);
    std::vector<char> done(V + 1, 0);
    dist[S] = 0;
    for (std::size_t step = 0; step <= V; ++step) {
      std::size_t u = V + 1;
      for (std::size_t v = 0; v <= V; ++v)
        if (!done[v] && dist[v] < inf && (u == V + 1 || dist[v] < dist[u])) u = v;
      if (u == V + 1) break;
      done[u] = 1;
      auto relax = [&](std::size_t v, double reduced) {
        if (done[v]) return;
        const double nd = dist[u] + std::max(reduced, 0.0);
        if (nd < dist[v]) dist[v] = nd, prev[v] = std::ptrdiff_t(u);
      };
      if (u == S) {
        for (std::size_t i = 0; i < ma; ++i)
          if (supply[i] > tiny) relax(i, pot[S] - pot[i]);
      } else if (u < ma) {
        for (std::size_t j = 0; j < mb; ++j) relax(ma + j, cost[u * mb + j] + pot[u] - pot[ma + j]);
      } else {
        const std::size_t j = u - ma;
        for (std::size_t i = 0; i < ma; ++i)
          if (flow[i * mb + j] > tiny) relax(i, -cost[i * mb + j] + pot[u] - pot[i]);
      }
    }
    std::size_t target = V;
    for (std::size_t j = 0; j < mb; ++j)
      if (demand[j] > tiny && dist[ma + j] < inf && (target == V || dist[ma + j] < dist[target])) target = ma + j;
    if (target == V) break;
    const double dt = dist[target];
    for (std::size_t v = 0; v <= V; ++v) pot[v] += std::min(dist[v], dt);
    double push = demand[target - ma];
    std::size_t v = target;
    while (prev[v] != std::ptrdiff_t(S)) {
      const std::size_t u = std::size_t(prev[v]);
      if (u >= ma) push = std::min(push, flow[v * mb + (u - ma)]);
      v = u;
    }
    push = std::min(push, supply[v]);
    const std::size_t start = v;
    v = target;
    while (v != start) {
      const std::size_t u = std::size_t(prev[v]);
      if (u < ma)
        flow[u * mb + (v - ma)] += push;
      else
        flow[v * mb + (u - ma)] -= push;
      v = u;
    }
    supply[start] -= push;
    demand[target - ma] -= push;
    remaining -= push;
  }
  double total = 0;
  for (std::size_t i = 0; i < ma * mb; ++i) total += flow[i] * cost[i];
  return std::pow(std::max(total, 0.0), 1.0 / q);
}

/// Support extraction for 2D (or 1D) densities: block×block cells are lumped to their centers of mass,
/// lumps below `threshold` are dropped and the rest renormalized.
inline DiscreteMeasure lump_density(const ScalarField& rho, int block, double threshold = 0.0) {
  require(block >= 1 && rho.grid.points % block == 0, "block must divide the grid size");
  const GridSpec& g = rho.grid;
  const int n = g.points, nb = n / block;
  const std::size_t cells = g.dim == 1 ? std::size_t(nb) : std::size_t(nb) * nb;
  std::vector<double> w(cells, 0.0), cx(cells, 0.0), cy(cells, 0.0);
  for (int i = 0; i < n; ++i) {
    const int jmax = g.dim == 1 ? 1 : n;
    for (int j = 0; j < jmax; ++j) {
      const std::size_t at = g.dim == 1 ? std::size_t(i) : std::size_t(i) * n + j;
      const double m = std::max(rho.values[at], 0.0) * g.cell_volume();
      const std::size_t c = g.dim == 1 ? std::size_t(i / block) : std::size_t(i / block) * nb + std::size_t(j / block);
      w[c] += m;
      cx[c] += m * g.coord(i);
      if (g.dim == 2) cy[c] += m * g.coord(j);
    }
  }
  DiscreteMeasure out;
  out.dim = g.dim;
  double total = 0;
  for (std::size_t c = 0; c < cells; ++c)
    if (w[c] > threshold) total += w[c];
  require(total > 0, "no mass above the lumping threshold");
  for (std::size_t c = 0; c < cells; ++c) {
    if (w[c] <= threshold) continue;
    out.points.push_back({cx[c] / w[c], g.dim == 2 ? cy[c] / w[c] : 0.0});
    out.weights.push_back(w[c] / total);
  }
  return out;
}

/// Grid quadrature of |ρ1 - ρ2| (total mass of the difference, in [0, 2]).
inline double total_variation(const ScalarField& rho1, const ScalarField& rho2) {
  require_same_grid(rho1.grid, rho2.grid);
  return (rho1 - rho2).l1_norm();
}

/// Mass of ρ1 on which ρ2 vanishes beyond this is treated as a failure of absolute continuity.
inline constexpr double kEntropyVanishingMass = 1e-12;

/// Σ h^d ρ1 log(ρ1/ρ2) with 0 log 0 = 0; +∞ when ρ2 vanishes on more than 1e-12 of ρ1's mass.
inline double relative_entropy(const ScalarField& rho1, const ScalarField& rho2) {
  require_same_grid(rho1.grid, rho2.grid);
  double s = 0, orphan = 0;
  for (std::size_t i = 0; i < rho1.values.size(); ++i) {
    const double a = rho1.values[i], b = rho2.values[i];
    if (a <= 0) continue;
    if (b <= 0) {
      orphan += a;
      continue;
    }
    s += a * std::log(a / b);
  }
  const double vol = rho1.grid.cell_volume();
  if (orphan * vol > kEntropyVanishingMass) return std::numeric_limits<double>::infinity();
  return std::max(0.0, s * vol);
}

}  // namespace mvsde
