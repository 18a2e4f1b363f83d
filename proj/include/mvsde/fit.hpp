#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "error.hpp"

namespace mvsde {

struct FitResult {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
};

/// Ordinary least squares y = intercept + slope·x.
inline FitResult linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "linear fit needs matching arrays of length >= 2");
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0, "linear fit needs distinct abscissae");
  FitResult f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    ssr += r * r;
  }
  f.r2 = syy > 0 ? 1.0 - ssr / syy : 1.0;
  return f;
}

/// Least squares of log value against log t; intercept is log B in value ≈ B t^slope.
inline FitResult fit_exponent(const std::vector<double>& t, const std::vector<double>& value) {
  require(t.size() == value.size(), "fit_exponent needs matching arrays");
  require(t.size() >= 4, "fit_exponent needs at least 4 points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < t.size(); ++i) {
    require(t[i] > 0 && std::isfinite(t[i]), "fit_exponent needs positive abscissae");
    require(value[i] > 0 && std::isfinite(value[i]), "fit_exponent needs positive values");
    lx.push_back(std::log(t[i]));
    ly.push_back(std::log(value[i]));
  }
  return linear_fit(lx, ly);
}

enum class Verdict { bounded, unbounded };

inline const char* to_string(Verdict v) { return v == Verdict::bounded ? "bounded" : "unbounded"; }

/// Two-model comparison for norms sampled along decreasing ε:
/// A: y = a - b ε^c (c ∈ (0,2], stabilizes) against B: y = a ε^s (power law), scored by AIC on log residuals.
struct BoundednessFit {
  Verdict verdict = Verdict::bounded;
  double aic_stabilizing = 0;
  double aic_power = 0;
  double power_slope = 0;
  double growth_exponent = 0;
  double stabilizing_c = 0;
};

inline BoundednessFit boundedness_verdict(const std::vector<double>& eps, const std::vector<double>& y) {
  require(eps.size() == y.size() && eps.size() >= 4, "verdict needs at least 4 (eps, norm) pairs");
  const std::size_t n = eps.size();
  std::vector<double> le(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    require(eps[i] > 0 && y[i] > 0, "verdict needs positive eps and norms");
    le[i] = std::log(eps[i]);
    ly[i] = std::log(y[i]);
  }
  BoundednessFit out;
  const FitResult pw = linear_fit(le, ly);
  double ssr_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - pw.intercept - pw.slope * le[i];
    ssr_b += r * r;
  }
  out.power_slope = pw.slope;

  double best = std::numeric_limits<double>::infinity();
  for (int ci = 1; ci <= 400; ++ci) {
    const double c = 2.0 * ci / 400.0;
    double s11 = 0, s12 = 0, s22 = 0, sy1 = 0, sy2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = std::pow(eps[i], c);
      s11 += 1;
      s12 += e;
      s22 += e * e;
      sy1 += y[i];
      sy2 += y[i] * e;
    }
    const double det = s11 * s22 - s12 * s12;
    if (std::abs(det) < 1e-300) continue;
    const double a = (sy1 * s22 - sy2 * s12) / det;
    const double b = (s11 * sy2 - s12 * sy1) / det;
    double ssr = 0;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      const double pred = a + b * std::pow(eps[i], c);
      if (!(pred > 0)) ok = false;
      else ssr += (ly[i] - std::log(pred)) * (ly[i] - std::log(pred));
    }
    if (ok && ssr < best) {
      best = ssr;
      out.stabilizing_c = c;
    }
  }
  const double dn = double(n);
  out.aic_power = dn * std::log(ssr_b / dn + 1e-300) + 4.0;
  out.aic_stabilizing =
      std::isfinite(best) ? dn * std::log(best / dn + 1e-300) + 6.0 : std::numeric_limits<double>::infinity();

  std::vector<double> le_small(le.begin() + long(n / 2), le.end()), ly_small(ly.begin() + long(n / 2), ly.end());
  out.growth_exponent = le_small.size() >= 2 ? linear_fit(le_small, ly_small).slope : pw.slope;
  const bool grows = out.growth_exponent < -0.02;
  out.verdict = (out.aic_power < out.aic_stabilizing && grows) ? Verdict::unbounded : Verdict::bounded;
  return out;
}

}  // namespace mvsde
