#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "field.hpp"
#include "fit.hpp"
#include "kernels.hpp"
#include "norms.hpp"
#include "spectral.hpp"

namespace mvsde {

/// Exponents (ε,p) and (δ,k), κ, horizon, output times in (0,T] and the weight λ of the flow metric.
struct FlowParams {
  double eps = 0.0;
  double p = kInf;
  double delta = 1.0;
  double k = 2.0;
  double kappa = 0.5;
  double T = 0.5;
  std::vector<double> time_grid;
  double lambda = 0.0;
  int dim = 1;
  /// ETD substeps per output interval; the frozen drift is interpolated linearly in time.
  int substeps = 1;

  SobolevIndex from() const { return {delta, k}; }
  SobolevIndex to() const { return {eps, p}; }

  void validate() const {
    require(dim == 1 || dim == 2, "dimension must be 1 or 2");
    require(eps >= 0 && delta >= 0 && kappa >= 0, "eps, delta and kappa must be nonnegative");
    require(k >= 1 && p >= 1, "k and p must be >= 1");
    require(eps <= delta, "eps must not exceed delta");
    require(k <= p, "k must not exceed p");
    require(std::isfinite(T) && T > 0, "horizon T must be positive");
    require(lambda >= 0, "lambda must be nonnegative");
    require(substeps >= 1, "substeps must be >= 1");
    require(!time_grid.empty(), "time grid is empty");
    for (std::size_t i = 0; i < time_grid.size(); ++i) {
      require(time_grid[i] > 0 && time_grid[i] <= T * (1 + 1e-12), "time grid must lie in (0, T]");
      if (i > 0) require(time_grid[i] > time_grid[i - 1], "time grid must be strictly increasing");
    }
  }
};

inline std::vector<double> uniform_time_grid(double T, int steps) {
  require(T > 0 && steps >= 1, "uniform grid needs T > 0 and steps >= 1");
  std::vector<double> t;
  for (int i = 1; i <= steps; ++i) t.push_back(T * i / steps);
  return t;
}

/// t_i = T (i/steps)^grading, clustering at 0 for grading > 1.
inline std::vector<double> graded_time_grid(double T, int steps, double grading) {
  require(T > 0 && steps >= 1 && grading >= 1, "graded grid needs T > 0, steps >= 1, grading >= 1");
  std::vector<double> t;
  for (int i = 1; i <= steps; ++i) t.push_back(T * std::pow(double(i) / steps, grading));
  return t;
}

inline std::vector<double> geometric_time_grid(double t0, double T, int count) {
  require(t0 > 0 && T > t0 && count >= 2, "geometric grid needs 0 < t0 < T and count >= 2");
  std::vector<double> t;
  for (int i = 0; i < count; ++i) t.push_back(t0 * std::pow(T / t0, double(i) / (count - 1)));
  t.back() = T;
  return t;
}

struct Admissibility {
  double eta = 0;
  double theta = 0;
  std::optional<double> xi;
  /// η < 1 + 2κ: the solver's contraction condition.
  bool solver_condition = false;
  /// η < max(1, 1/2 + κ), δ < min(1, 2 - d/k) + (2κ - η)^+ and ε ≤ min(δ, d(p-1)/p).
  bool strong_condition = false;
  /// q inside ((ε + d/p)/(1 + (2κ-η)^+ - η), (ε + d/p)/(ε + d/p - d/k)^+].
  std::optional<bool> q_condition;
  std::string violation;
};

inline double inv_or_zero(double x) { return std::isinf(x) ? 0.0 : 1.0 / x; }

/// η = δ - ε + d(1/k - 1/p), θ = 2/(1 - (η-2κ)^+), and ξ(q) = δ + d/k - (d/p + ε)(q-1)/q when q is given.
inline Admissibility eta_theta_params(const FlowParams& fp, std::optional<double> q = {}) {
  Admissibility a;
  const int d = fp.dim;
  const double ik = inv_or_zero(fp.k), ip = inv_or_zero(fp.p);
  a.eta = fp.delta - fp.eps + d * (ik - ip);
  const double excess = std::max(0.0, a.eta - 2 * fp.kappa);
  a.theta = excess < 1 ? 2.0 / (1.0 - excess) : kInf;
  a.solver_condition = a.eta < 1 + 2 * fp.kappa;
  const double slack = std::max(0.0, 2 * fp.kappa - a.eta);
  a.strong_condition = a.eta < std::max(1.0, 0.5 + fp.kappa) && fp.delta < std::min(1.0, 2.0 - d * ik) + slack &&
                       fp.eps <= std::min(fp.delta, d * (1.0 - ip));
  if (q) {
    const double qq = *q;
    a.xi = fp.delta + d * ik - (d * ip + fp.eps) * (qq - 1) / qq;
    const double num = fp.eps + d * ip;
    const double lo_den = 1 + slack - a.eta;
    const double hi_den = std::max(0.0, fp.eps + d * ip - d * ik);
    const bool lower_ok = lo_den > 0 ? qq > num / lo_den : false;
    const bool upper_ok = hi_den > 0 ? qq <= num / hi_den : true;
    a.q_condition = lower_ok && upper_ok;
  }
  if (!a.solver_condition) {
    std::ostringstream os;
    os << "condition eta < 1 + 2 kappa fails: eta = " << a.eta << " >= " << 1 + 2 * fp.kappa;
    a.violation = os.str();
  }
  return a;
}

/// τ_n = n when (ε,p) = (0,∞), else min{n, (A x^θ e^{A x^θ})^{-1}} with x = ‖γ‖_{ε,p*}.
inline double tau_n_formula(double gamma_norm, int n, double A_n, const FlowParams& fp) {
  require(A_n > 0, "A_n must be positive");
  require(gamma_norm > 0, "initial norm must be positive");
  require(n >= 1, "n must be >= 1");
  if (fp.eps == 0.0 && std::isinf(fp.p)) return double(n);
  const double theta = eta_theta_params(fp).theta;
  if (std::isinf(theta)) return 0.0;
  const double z = A_n * std::pow(gamma_norm, theta);
  return std::min(double(n), 1.0 / (z * std::exp(z)));
}

struct MeasureFlow {
  std::vector<double> times;
  std::vector<ScalarField> densities;
  ScalarField initial;

  std::size_t size() const { return times.size(); }
  /// ‖μ_{t_{i+1}} - μ_{t_i}‖_{L¹} for consecutive times (the first entry compares with the initial density).
  std::vector<double> l1_increments() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < densities.size(); ++i)
      out.push_back((densities[i] - (i == 0 ? initial : densities[i - 1])).l1_norm());
    return out;
  }
};

inline MeasureFlow heat_flow(const ScalarField& gamma, const std::vector<double>& times) {
  MeasureFlow f;
  f.times = times;
  f.initial = gamma;
  for (double t : times) f.densities.push_back(heat_apply(gamma, t));
  return f;
}

struct PhiDiagnostics {
  double max_mass_drift = 0;
  double clipped_mass = 0;
  double max_negative_mass = 0;
};

class DegradedAccuracyError : public Error {
 public:
  DegradedAccuracyError(const std::string& msg, PhiDiagnostics diag)
      : Error(ErrorKind::DegradedAccuracy, msg), diag_(diag) {}
  const PhiDiagnostics& diagnostics() const { return diag_; }

 private:
  PhiDiagnostics diag_;
};

namespace detail {

inline void phi12(Complex z, Complex& p1, Complex& p2) {
  if (std::abs(z) < 1e-2) {
    p1 = 1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0 + z * z * z * z / 120.0;
    p2 = 0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0 + z * z * z * z / 720.0;
  } else {
    const Complex e = std::exp(z);
    p1 = (e - 1.0) / z;
    p2 = (e - 1.0 - z) / (z * z);
  }
}

inline std::vector<double> field_means(const VectorField& b) {
  std::vector<double> m;
  for (const auto& comp : b.components) {
    double s = 0;
    for (double v : comp) s += v;
    m.push_back(s / double(comp.size()));
  }
  return m;
}

/// -∇·((b - b̄) ρ) in Fourier space.
inline std::vector<Complex> nonlinear_term(const std::vector<Complex>& u, const VectorField& b,
                                           const std::vector<double>& mean) {
  const GridSpec& g = b.grid;
  const ScalarField rho = inverse(Spectrum{g, u});
  std::vector<Complex> out(u.size(), Complex(0, 0));
  for (int c = 0; c < g.dim; ++c) {
    ScalarField flux(g);
    const auto& bc = b.components[std::size_t(c)];
    for (std::size_t i = 0; i < flux.values.size(); ++i) flux.values[i] = (bc[i] - mean[std::size_t(c)]) * rho.values[i];
    const Spectrum fs = forward(flux);
    for_each_mode(g, [&](std::size_t i, const Mode& md) {
      if (!md.nyquist(c)) out[i] -= Complex(0, md.k(c)) * fs.coeffs[i];
    });
  }
  return out;
}

inline VectorField lerp(const VectorField& a, const VectorField& b, double w) {
  if (w == 0.0) return a;
  if (w == 1.0) return b;
  VectorField out = a;
  for (std::size_t c = 0; c < out.components.size(); ++c)
    for (std::size_t i = 0; i < out.components[c].size(); ++i)
      out.components[c][i] = (1 - w) * a.components[c][i] + w * b.components[c][i];
  return out;
}

/// One ETD2RK (Cox-Matthews) step of ∂ρ = ½Δρ - ∇·(bρ) with the drift mean in the exact propagator.
inline void etd2_step(std::vector<Complex>& u, const GridSpec& g, double dt, const VectorField& b0,
                      const VectorField& b1, bool zero_drift) {
  if (zero_drift) {
    for_each_mode(g, [&](std::size_t i, const Mode& md) { u[i] *= std::exp(-0.5 * dt * md.k2()); });
    return;
  }
  const auto m0 = field_means(b0), m1 = field_means(b1);
  std::vector<double> bbar(m0.size());
  for (std::size_t c = 0; c < m0.size(); ++c) bbar[c] = 0.5 * (m0[c] + m1[c]);
  const std::size_t sz = u.size();
  std::vector<Complex> E(sz), P1(sz), P2(sz);
  for_each_mode(g, [&](std::size_t i, const Mode& md) {
    Complex adv(0, 0);
    for (int c = 0; c < g.dim; ++c)
      if (!md.nyquist(c)) adv += Complex(0, md.k(c) * bbar[std::size_t(c)]);
    const Complex z = (-0.5 * md.k2() - adv) * dt;
    E[i] = std::exp(z);
    phi12(z, P1[i], P2[i]);
  });
  const auto N0 = nonlinear_term(u, b0, m0);
  std::vector<Complex> a(sz);
  for (std::size_t i = 0; i < sz; ++i) a[i] = E[i] * u[i] + dt * P1[i] * N0[i];
  const auto N1 = nonlinear_term(a, b1, m1);
  for (std::size_t i = 0; i < sz; ++i) u[i] = a[i] + dt * P2[i] * (N1[i] - N0[i]);
}

}  // namespace detail

/// Drift evaluations b_t(·, μ_t) at t = 0 (on γ) and at every output time.
inline std::vector<VectorField> evaluate_drifts(const Drift& drift, const ScalarField& gamma, const MeasureFlow& mu) {
  std::vector<VectorField> out;
  out.push_back(drift(0.0, gamma));
  for (std::size_t i = 0; i < mu.size(); ++i) out.push_back(drift(mu.times[i], mu.densities[i]));
  return out;
}

/// Law flow of the SDE with drift frozen at the given evaluations (index 0 is t = 0).
inline MeasureFlow phi_apply_frozen(const ScalarField& gamma, const std::vector<double>& times,
                                    const std::vector<VectorField>& drifts, bool zero_drift, int substeps,
                                    PhiDiagnostics* diag = nullptr) {
  require(drifts.size() == times.size() + 1, "need one drift per output time plus t = 0");
  const GridSpec& g = gamma.grid;
  MeasureFlow out;
  out.times = times;
  out.initial = gamma;
  std::vector<Complex> u = forward(gamma).coeffs;
  PhiDiagnostics local;
  double t_prev = 0.0;
  for (std::size_t n = 0; n < times.size(); ++n) {
    const double dt = (times[n] - t_prev) / substeps;
    for (int s = 0; s < substeps; ++s) {
      const VectorField b0 = detail::lerp(drifts[n], drifts[n + 1], double(s) / substeps);
      const VectorField b1 = detail::lerp(drifts[n], drifts[n + 1], double(s + 1) / substeps);
      detail::etd2_step(u, g, dt, b0, b1, zero_drift);
    }
    t_prev = times[n];
    ScalarField rho = inverse(Spectrum{g, u});
    double neg = 0, clipped = 0;
    bool modified = false;
    for (double& v : rho.values) {
      if (v < 0) neg += v;
      if (v < -1e-6) {
        clipped += -1e-6 - v;
        v = -1e-6;
        modified = true;
      }
    }
    neg *= -g.cell_volume();
    clipped *= g.cell_volume();
    local.max_negative_mass = std::max(local.max_negative_mass, neg);
    local.clipped_mass += clipped;
    if (!rho.all_finite() || neg > 1e-3) {
      std::ostringstream os;
      os << "negative density mass " << neg << " at t = " << times[n] << " (clipped so far " << local.clipped_mass
         << ")";
      if (diag) *diag = local;
      throw DegradedAccuracyError(os.str(), local);
    }
    const double mass = rho.mass();
    local.max_mass_drift = std::max(local.max_mass_drift, std::abs(mass - 1.0));
    if (mass != 1.0) {
      rho *= 1.0 / mass;
      if (!modified)
        for (auto& c : u) c *= 1.0 / mass;
    }
    if (modified) u = forward(rho).coeffs;
    out.densities.push_back(std::move(rho));
  }
  if (diag) *diag = local;
  return out;
}

/// (Φμ)_t: law of X^μ_t for the SDE with drift b_t(·, μ_t), started from γ.
inline MeasureFlow phi_apply(const ScalarField& gamma, const MeasureFlow& mu, const Drift& drift,
                             const FlowParams& params, PhiDiagnostics* diag = nullptr) {
  params.validate();
  require(gamma.grid.dim == params.dim, "density dimension does not match the parameters");
  require(mu.times == params.time_grid, "flow times must match the parameter time grid");
  require(std::abs(gamma.mass() - 1.0) < 1e-6, "initial density must have mass 1");
  const std::vector<VectorField> drifts =
      drift.zero ? std::vector<VectorField>(params.time_grid.size() + 1, VectorField(gamma.grid))
                 : evaluate_drifts(drift, gamma, mu);
  return phi_apply_frozen(gamma, params.time_grid, drifts, drift.zero, params.substeps, diag);
}

/// Exponent (δ-ε)/2 + d(1/k - 1/p)/2 = η/2 of the time weight in the flow metric.
inline double flow_weight_exponent(const FlowParams& fp) { return 0.5 * eta_theta_params(fp).eta; }

/// Upper-bracket dual norms ‖μ_t - ν_t‖_{δ,k*} per time.
inline std::vector<double> flow_difference_profile(const MeasureFlow& mu, const MeasureFlow& nu, const FlowParams& fp) {
  require(mu.times == nu.times, "flows live on different time grids");
  require(mu.size() == nu.size(), "flows have different lengths");
  const SobolevIndex idx = fp.from();
  std::vector<double> out;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    require_same_grid(mu.densities[i].grid, nu.densities[i].grid);
    const BallLattice lat = BallLattice::for_grid(mu.densities[i].grid);
    out.push_back(amalgam_dual_norm(mu.densities[i] - nu.densities[i], idx, lat));
  }
  return out;
}

inline double weighted_sup(const std::vector<double>& times, const std::vector<double>& profile, double lambda,
                           double exponent) {
  double best = 0;
  for (std::size_t i = 0; i < times.size(); ++i)
    best = std::max(best, std::exp(-lambda * times[i]) * std::pow(times[i], exponent) * profile[i]);
  return best;
}

/// ρ^{λ,T}(μ,ν) = sup_t e^{-λt} t^{η/2} ‖μ_t - ν_t‖_{δ,k*} over the time grid.
inline double weighted_flow_distance(const MeasureFlow& mu, const MeasureFlow& nu, const FlowParams& fp) {
  return weighted_sup(mu.times, flow_difference_profile(mu, nu, fp), fp.lambda, flow_weight_exponent(fp));
}

struct PicardOptions {
  double tol = 1e-9;
  int max_iter = 20;
  bool auto_lambda = true;
  double blowup_cap = 1e8;
  /// θ' for s_t(θ', γ); nullopt uses θ.
  std::optional<double> theta_prime;
  int n = 1;
  double A_n = 1.0;
};

struct SolveReport {
  int iterations = 0;
  bool converged = false;
  double lambda_used = 0;
  std::vector<double> residuals;
  std::vector<double> contraction_ratios;
  double contraction_ratio = 0;
  std::vector<double> decay_trajectory;
  double fitted_B = 0;
  double lambda_envelope = 0;
  bool blowup = false;
  double blowup_time = 0;
  double gamma_norm = 0;
  double tau_n_estimate = 0;
  std::vector<double> k_t;
  std::vector<double> s_t;
  PhiDiagnostics diagnostics;
  double max_l1_increment = 0;
  /// Per-iteration difference profiles ‖μ^{n+1}_t - μ^n_t‖ (upper bracket), kept for re-weighting.
  std::vector<std::vector<double>> difference_profiles;
  std::vector<double> times;
  double weight_exponent = 0;

  std::vector<double> residuals_for(double lambda) const {
    std::vector<double> r;
    for (const auto& prof : difference_profiles) r.push_back(weighted_sup(times, prof, lambda, weight_exponent));
    return r;
  }
  /// Successive ratios of the residuals under weight λ, skipping pairs at the rounding floor.
  std::vector<double> ratios_for(double lambda, double floor = 1e-13) const {
    const auto r = residuals_for(lambda);
    std::vector<double> out;
    for (std::size_t i = 1; i < r.size(); ++i)
      if (r[i - 1] > floor && r[i] > floor) out.push_back(r[i] / r[i - 1]);
    return out;
  }
  double max_ratio_for(double lambda) const {
    const auto r = ratios_for(lambda);
    return r.empty() ? 0.0 : *std::max_element(r.begin(), r.end());
  }
};

struct SolveResult {
  MeasureFlow flow;
  SolveReport report;
};

namespace detail {

inline double gamma_dual_norm(const ScalarField& gamma, const FlowParams& fp) {
  const SobolevIndex idx = fp.to();
  const BallLattice lat = BallLattice::for_grid(gamma.grid);
  return idx.k == 1.0 ? probe_dual_norm(gamma, idx, lat) : amalgam_dual_norm(gamma, idx, lat);
}

inline bool same_fields(const std::vector<VectorField>& a, const std::vector<VectorField>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].components != b[i].components) return false;
  return true;
}

inline void fill_flow_diagnostics(SolveReport& rep, const ScalarField& gamma, const MeasureFlow& flow,
                                  const FlowParams& fp, const PicardOptions& opt) {
  const Admissibility adm = eta_theta_params(fp);
  const double w = 0.5 * adm.eta;
  const SobolevIndex idx = fp.from();
  rep.gamma_norm = gamma_dual_norm(gamma, fp);
  double running = 0;
  const double theta_p = opt.theta_prime ? *opt.theta_prime : adm.theta;
  for (std::size_t i = 0; i < flow.size(); ++i) {
    const double t = flow.times[i];
    const BallLattice lat = BallLattice::for_grid(flow.densities[i].grid);
    const double nrm = idx.k == 1.0 ? probe_dual_norm(flow.densities[i], idx, lat)
                                    : amalgam_dual_norm(flow.densities[i], idx, lat);
    if (!rep.blowup && (!std::isfinite(nrm) || nrm > opt.blowup_cap)) {
      rep.blowup = true;
      rep.blowup_time = t;
    }
    const double v = std::pow(t, w) * nrm;
    rep.decay_trajectory.push_back(v);
    running = std::max(running, v);
    const double kt = std::max(rep.gamma_norm, running);
    rep.k_t.push_back(kt);
    rep.s_t.push_back(std::isfinite(theta_p) && kt > 0 ? std::min(t, std::pow(kt, -theta_p)) : 0.0);
  }
  rep.fitted_B = running;
  rep.tau_n_estimate = rep.gamma_norm > 0 ? tau_n_formula(rep.gamma_norm, opt.n, opt.A_n, fp) : double(opt.n);
  const std::size_t half = flow.size() / 2;
  if (flow.size() - half >= 2) {
    std::vector<double> x, y;
    for (std::size_t i = half; i < flow.size(); ++i)
      if (rep.decay_trajectory[i] > 0) x.push_back(flow.times[i]), y.push_back(std::log(rep.decay_trajectory[i]));
    if (x.size() >= 2 && x.front() < x.back()) rep.lambda_envelope = std::max(0.0, linear_fit(x, y).slope);
  }
  const auto inc = flow.l1_increments();
  rep.max_l1_increment = inc.empty() ? 0.0 : *std::max_element(inc.begin(), inc.end());
}

}  // namespace detail

/// Picard iteration μ^{n+1} = Φ(μ^n) from the heat flow of γ until ρ^{λ,T}(μ^{n+1}, μ^n) < tol.
inline SolveResult picard_solve(const ScalarField& gamma, const Drift& drift, const FlowParams& params,
                                const PicardOptions& opt = {}) {
  params.validate();
  require(opt.max_iter >= 1 && opt.tol > 0, "need max_iter >= 1 and tol > 0");
  const Admissibility adm = eta_theta_params(params);
  if (!adm.solver_condition) fail(ErrorKind::Inadmissible, adm.violation);
  require(gamma.grid.dim == params.dim, "density dimension does not match the parameters");
  require(std::abs(gamma.mass() - 1.0) < 1e-6, "initial density must have mass 1");

  SolveResult res;
  SolveReport& rep = res.report;
  rep.times = params.time_grid;
  rep.weight_exponent = 0.5 * adm.eta;
  MeasureFlow mu = heat_flow(gamma, params.time_grid);
  std::vector<VectorField> drifts =
      drift.zero ? std::vector<VectorField>(params.time_grid.size() + 1, VectorField(gamma.grid))
                 : evaluate_drifts(drift, gamma, mu);
  int above_one = 0;
  for (int it = 1; it <= opt.max_iter; ++it) {
    PhiDiagnostics diag;
    MeasureFlow next = phi_apply_frozen(gamma, params.time_grid, drifts, drift.zero, params.substeps, &diag);
    rep.diagnostics.max_mass_drift = std::max(rep.diagnostics.max_mass_drift, diag.max_mass_drift);
    rep.diagnostics.max_negative_mass = std::max(rep.diagnostics.max_negative_mass, diag.max_negative_mass);
    rep.diagnostics.clipped_mass += diag.clipped_mass;
    rep.iterations = it;
    std::vector<VectorField> next_drifts =
        (!drift.measure_dependent) ? drifts : evaluate_drifts(drift, gamma, next);
    const bool exact = !drift.measure_dependent || detail::same_fields(next_drifts, drifts);
    if (exact) {
      rep.difference_profiles.push_back(std::vector<double>(params.time_grid.size(), 0.0));
      mu = std::move(next);
      rep.converged = true;
      break;
    }
    rep.difference_profiles.push_back(flow_difference_profile(next, mu, params));
    mu = std::move(next);
    drifts = std::move(next_drifts);
    const auto resid = rep.residuals_for(params.lambda);
    if (resid.back() < opt.tol) {
      rep.converged = true;
      break;
    }
    if (resid.size() >= 2 && resid[resid.size() - 2] > 1e-13 && resid.back() >= resid[resid.size() - 2])
      ++above_one;
    else
      above_one = 0;
    if (above_one >= 3) {
      bool rescued = false;
      if (opt.auto_lambda) {
        for (double lam = std::max(1.0, 2 * params.lambda); lam <= 1e6; lam *= 2) {
          const auto r = rep.residuals_for(lam);
          const std::size_t m = r.size();
          if (r[m - 1] < r[m - 2] && r[m - 2] < r[m - 3] && r[m - 3] < r[m - 4]) {
            rescued = true;
            break;
          }
        }
      }
      if (!rescued)
        fail(ErrorKind::NoContraction,
             "contraction ratio >= 1 for 3 consecutive iterations; increase lambda or shorten the horizon T");
      above_one = 0;
    }
  }
  rep.lambda_used = params.lambda;
  if (opt.auto_lambda) {
    while (rep.max_ratio_for(rep.lambda_used) >= 0.9 && rep.lambda_used < 1e6)
      rep.lambda_used = std::max(1.0, 2 * rep.lambda_used);
  }
  rep.residuals = rep.residuals_for(rep.lambda_used);
  rep.contraction_ratios = rep.ratios_for(rep.lambda_used);
  rep.contraction_ratio = rep.max_ratio_for(rep.lambda_used);
  if (rep.converged && !rep.residuals.empty() && rep.difference_profiles.back().size() &&
      std::all_of(rep.difference_profiles.back().begin(), rep.difference_profiles.back().end(),
                  [](double v) { return v == 0.0; }))
    rep.residuals.back() = 0.0;
  detail::fill_flow_diagnostics(rep, gamma, mu, params, opt);
  res.flow = std::move(mu);
  return res;
}

struct TimeShiftResult {
  /// Flow on [0, T+r] with the drift switched on at r.
  MeasureFlow extended;
  /// Restriction to [r, T+r], relabelled to t ∈ (0, T] with initial density at time r.
  MeasureFlow restricted;
  SolveReport report;
};

/// Free heat flow on [0, r], then the drift b_{t-r}; the law at r + t realizes the flow started from γ₀ * N(0, r).
inline TimeShiftResult time_shift_solve(const ScalarField& gamma0, double r, const Drift& drift,
                                        const FlowParams& params, const PicardOptions& opt = {},
                                        int heat_steps = 8) {
  params.validate();
  require(std::isfinite(r) && r > 0, "shift r must be positive");
  require(std::sqrt(r) >= 2.0 * gamma0.grid.spacing(), "shift r is below the grid resolution (sqrt(r) < 2h)");
  require(heat_steps >= 1, "heat_steps must be >= 1");
  FlowParams ext = params;
  ext.T = params.T + r;
  ext.time_grid.clear();
  for (int j = 1; j <= heat_steps; ++j) ext.time_grid.push_back(r * j / heat_steps);
  for (double t : params.time_grid) ext.time_grid.push_back(r + t);
  const SolveResult sol = picard_solve(gamma0, shifted_drift(drift, r), ext, opt);
  TimeShiftResult out;
  out.extended = sol.flow;
  out.report = sol.report;
  out.restricted.times = params.time_grid;
  out.restricted.initial = sol.flow.densities[std::size_t(heat_steps - 1)];
  for (std::size_t i = 0; i < params.time_grid.size(); ++i)
    out.restricted.densities.push_back(sol.flow.densities[std::size_t(heat_steps) + i]);
  return out;
}

}  // namespace mvsde
