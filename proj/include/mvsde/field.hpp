#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>
#include <vector>

#include "error.hpp"

namespace mvsde {

/// Periodic grid on the torus [-L/2, L/2)^d with n points per dimension.
struct GridSpec {
  int dim = 1;
  int points = 256;
  double extent = 16.0;

  double spacing() const { return extent / points; }
  double cell_volume() const { return dim == 1 ? spacing() : spacing() * spacing(); }
  std::size_t size() const {
    return dim == 1 ? std::size_t(points) : std::size_t(points) * std::size_t(points);
  }
  double coord(int j) const { return -0.5 * extent + j * spacing(); }

  void validate() const {
    require(dim == 1 || dim == 2, "grid dimension must be 1 or 2");
    require(points >= 16, "grid needs at least 16 points per dimension");
    require((points & (points - 1)) == 0, "points per dimension must be a power of two");
    require(std::isfinite(extent) && extent > 0, "grid extent must be positive and finite");
  }

  bool operator==(const GridSpec&) const = default;
};

inline void require_same_grid(const GridSpec& a, const GridSpec& b) {
  require(a == b, "fields live on different grids");
}

/// Real samples on a GridSpec; 2D layout is row-major with x as the slow index.
struct ScalarField {
  GridSpec grid;
  std::vector<double> values;
  bool underresolved = false;

  ScalarField() = default;
  explicit ScalarField(const GridSpec& g, double fill = 0.0) : grid(g), values(g.size(), fill) {
    g.validate();
  }
  ScalarField(const GridSpec& g, std::vector<double> v) : grid(g), values(std::move(v)) {
    g.validate();
    require(values.size() == g.size(), "value count does not match grid size");
  }

  /// Samples f(x) in 1D or f(x, y) in 2D.
  template <class F>
  static ScalarField from_function(const GridSpec& g, F&& f) {
    ScalarField out(g);
    const int n = g.points;
    if (g.dim == 1) {
      if constexpr (std::is_invocable_v<F, double>) {
        for (int i = 0; i < n; ++i) out.values[i] = f(g.coord(i));
      } else {
        for (int i = 0; i < n; ++i) out.values[i] = f(g.coord(i), 0.0);
      }
    } else {
      if constexpr (std::is_invocable_v<F, double, double>) {
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) out.values[std::size_t(i) * n + j] = f(g.coord(i), g.coord(j));
      } else {
        fail(ErrorKind::WrongDimension, "2D grid needs a callable f(x, y)");
      }
    }
    return out;
  }

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  double mass() const {
    double s = 0;
    for (double v : values) s += v;
    return s * grid.cell_volume();
  }
  double sup_norm() const {
    double m = 0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }
  double l1_norm() const {
    double s = 0;
    for (double v : values) s += std::abs(v);
    return s * grid.cell_volume();
  }
  double l2_norm() const {
    double s = 0;
    for (double v : values) s += v * v;
    return std::sqrt(s * grid.cell_volume());
  }
  double min_value() const { return *std::min_element(values.begin(), values.end()); }
  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }
  bool is_density(double mass_tol = 1e-8, double neg_tol = 0.0) const {
    return all_finite() && min_value() >= -neg_tol && std::abs(mass() - 1.0) <= mass_tol;
  }

  ScalarField& operator+=(const ScalarField& o) {
    require_same_grid(grid, o.grid);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
  }
  ScalarField& operator-=(const ScalarField& o) {
    require_same_grid(grid, o.grid);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= o.values[i];
    return *this;
  }
  ScalarField& operator*=(double c) {
    for (double& v : values) v *= c;
    return *this;
  }
};

inline ScalarField operator+(ScalarField a, const ScalarField& b) { return a += b; }
inline ScalarField operator-(ScalarField a, const ScalarField& b) { return a -= b; }
inline ScalarField operator*(double c, ScalarField a) { return a *= c; }
inline ScalarField operator*(ScalarField a, double c) { return a *= c; }

/// dim-many component arrays on a shared grid.
struct VectorField {
  GridSpec grid;
  std::vector<std::vector<double>> components;
  bool underresolved = false;

  VectorField() = default;
  explicit VectorField(const GridSpec& g, double fill = 0.0)
      : grid(g), components(std::size_t(g.dim), std::vector<double>(g.size(), fill)) {
    g.validate();
  }

  ScalarField component(int c) const { return ScalarField(grid, components.at(std::size_t(c))); }
  void set_component(int c, const ScalarField& f) {
    require_same_grid(grid, f.grid);
    components.at(std::size_t(c)) = f.values;
  }

  ScalarField magnitude() const {
    ScalarField out(grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      double s = 0;
      for (const auto& comp : components) s += comp[i] * comp[i];
      out.values[i] = std::sqrt(s);
    }
    return out;
  }
  double sup_norm() const { return magnitude().sup_norm(); }
  bool all_finite() const {
    for (const auto& comp : components)
      for (double v : comp)
        if (!std::isfinite(v)) return false;
    return true;
  }

  VectorField& operator+=(const VectorField& o) {
    require_same_grid(grid, o.grid);
    for (std::size_t c = 0; c < components.size(); ++c)
      for (std::size_t i = 0; i < components[c].size(); ++i) components[c][i] += o.components[c][i];
    return *this;
  }
  VectorField& operator-=(const VectorField& o) {
    require_same_grid(grid, o.grid);
    for (std::size_t c = 0; c < components.size(); ++c)
      for (std::size_t i = 0; i < components[c].size(); ++i) components[c][i] -= o.components[c][i];
    return *this;
  }
  VectorField& operator*=(double s) {
    for (auto& comp : components)
      for (double& v : comp) v *= s;
    return *this;
  }
};

inline VectorField operator-(VectorField a, const VectorField& b) { return a -= b; }
inline VectorField operator+(VectorField a, const VectorField& b) { return a += b; }
inline VectorField operator*(double s, VectorField a) { return a *= s; }

}  // namespace mvsde
