#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mvsde/mvsde.hpp"
#include "oracles.hpp"

using namespace mvsde;

namespace {

const GridSpec g1{1, 512, 16.0};

ScalarField random_density(const GridSpec& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1), pos(-2, 2), var(0.02, 0.5);
  ScalarField f(g);
  for (int c = 0; c < 3; ++c) f += u(rng) * gaussian_density(g, pos(rng), var(rng));
  f *= 1.0 / f.mass();
  return f;
}

double pairing(const ScalarField& a, const ScalarField& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s * a.grid.cell_volume();
}

}  // namespace

TEST(Norms, ConstantFieldFiniteK) {
  const ScalarField one(g1, 1.0);
  for (double delta : {0.0, 0.5, 2.0})
    for (double k : {1.0, 2.0, 3.0}) EXPECT_NEAR(local_neg_norm(one, {delta, k}), std::pow(2.0, 1.0 / k), 1e-12);
}

TEST(Norms, ConstantFieldInfiniteK) {
  EXPECT_NEAR(local_neg_norm(ScalarField(g1, 1.0), {1.0, kInf}), 1.0, 1e-12);
}

TEST(Norms, ConstantField2D) {
  const GridSpec g{2, 128, 8.0};
  EXPECT_NEAR(local_neg_norm(ScalarField(g, 1.0), {1.0, 2.0}), std::sqrt(std::numbers::pi), 2e-3);
}

TEST(Norms, MollifiedDiracThreshold) {
  const GridSpec g{1, 4096, 16.0};
  auto norm_at = [&](double std_dev, double delta) {
    return local_neg_norm(gaussian_density(g, 0.0, std_dev * std_dev), {delta, kInf});
  };
  const double a = norm_at(0.02, 1.5), b = norm_at(0.01, 1.5);
  EXPECT_LT(std::abs(b - a) / a, 0.05);
  double prev = norm_at(0.04, 0.5);
  for (double s : {0.02, 0.01, 0.005}) {
    const double cur = norm_at(s, 0.5);
    EXPECT_GT(cur, 1.1 * prev) << s;
    prev = cur;
  }
}

TEST(Norms, Scaling) {
  std::mt19937_64 rng(1);
  const ScalarField f = oracle::band_limited(g1, 40, 2);
  for (double c : {-3.0, 0.5, 7.0}) {
    for (SobolevIndex idx : {SobolevIndex{1, 2}, SobolevIndex{0.5, kInf}, SobolevIndex{2, 1}}) {
      const double base = local_neg_norm(f, idx);
      EXPECT_NEAR(local_neg_norm(c * f, idx), std::abs(c) * base, 1e-12 * std::abs(c) * base);
    }
    const ScalarField d = random_density(g1, rng) - random_density(g1, rng);
    const double am = measure_dual_norm(d, {1, 2}, DualMethod::amalgam);
    EXPECT_NEAR(measure_dual_norm(c * d, {1, 2}, DualMethod::amalgam), std::abs(c) * am, 1e-12 * std::abs(c) * am);
  }
}

TEST(Norms, MonotoneInDelta) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ScalarField f = oracle::band_limited(g1, 60, 10 + seed);
    for (double k : {1.0, 2.0, kInf}) {
      double prev = local_neg_norm(f, {0.0, k});
      for (double delta : {0.25, 0.5, 1.0, 2.0}) {
        const double cur = local_neg_norm(f, {delta, k});
        ASSERT_LE(cur, prev * (1 + 1e-12));
        prev = cur;
      }
    }
  }
}

TEST(Norms, LInfinityComparison) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ScalarField f = oracle::band_limited(g1, 80, 30 + seed);
    for (SobolevIndex idx : {SobolevIndex{1, 2}, SobolevIndex{0.5, 3}, SobolevIndex{1.5, kInf}})
      ASSERT_LE(local_neg_norm(f, idx), tv_dual_constant(idx, 1) * f.sup_norm() * (1 + 1e-12));
  }
}

TEST(Norms, VectorFieldUsesMagnitude) {
  const GridSpec g{2, 64, 8.0};
  VectorField v(g);
  v.set_component(0, ScalarField(g, 3.0));
  v.set_component(1, ScalarField(g, 4.0));
  EXPECT_NEAR(local_neg_norm(v, {1.0, kInf}), 5.0, 1e-12);
}

TEST(Norms, ZeroDifferenceHasZeroDualNorm) {
  const ScalarField gamma = gaussian_density(g1, 0.0, 0.1);
  const ScalarField zero = gamma - gamma;
  EXPECT_EQ(measure_dual_norm(zero, {1, 2}, DualMethod::amalgam), 0.0);
  EXPECT_EQ(measure_dual_norm(zero, {1, 2}, DualMethod::probe), 0.0);
}

TEST(Norms, ProbeBelowAmalgam) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const ScalarField d = random_density(g1, rng) - random_density(g1, rng);
    for (SobolevIndex idx : {SobolevIndex{1, 2}, SobolevIndex{0.5, 4}, SobolevIndex{1, kInf}}) {
      const DualBracket b = dual_norm_bracket(d, idx, {16, std::uint64_t(trial)});
      ASSERT_LE(b.lower, b.upper * (1 + 1e-12)) << trial;
    }
  }
}

TEST(Norms, ProbeMatchesBruteForceSearch) {
  const ScalarField rho = gaussian_density(g1, 0.0, 0.04) - gaussian_density(g1, 0.1, 0.04);
  const SobolevIndex idx{1, 2};
  const double probe = measure_dual_norm(rho, idx, DualMethod::probe);
  // (1+1) evolution strategy over a 24-bump basis, 10^4 normalized test functions
  const int B = 24;
  std::vector<ScalarField> basis;
  std::vector<double> ip(B);
  for (int j = 0; j < B; ++j) {
    const double c = -1.8 + 3.6 * j / (B - 1);
    basis.push_back(ScalarField::from_function(g1, [c](double x) { return std::exp(-0.5 * (x - c) * (x - c) / 0.0144); }));
    ip[std::size_t(j)] = pairing(basis.back(), rho);
  }
  auto score = [&](const std::vector<double>& a) {
    ScalarField f(g1);
    double num = 0;
    for (int j = 0; j < B; ++j) {
      f += a[std::size_t(j)] * basis[std::size_t(j)];
      num += a[std::size_t(j)] * ip[std::size_t(j)];
    }
    return std::abs(num) / local_neg_norm(f, idx);
  };
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  std::vector<double> best(B);
  double bv = 0, step = 0.5;
  for (int it = 0; it < 10000; ++it) {
    std::vector<double> a = best;
    for (auto& v : a) v = it < 1000 ? n01(rng) : v + step * n01(rng);
    const double v = score(a);
    if (v > bv) {
      bv = v, best = a;
      if (it >= 1000) step *= 1.5;
    } else if (it >= 1000) {
      step = std::max(1e-3, step * 0.97);
    }
  }
  EXPECT_NEAR(bv, probe, 0.02 * probe);
  EXPECT_LE(bv, measure_dual_norm(rho, idx, DualMethod::amalgam) * (1 + 1e-12));
}

TEST(Norms, TotalVariationComparison) {
  std::mt19937_64 rng(5);
  for (SobolevIndex idx : {SobolevIndex{1, 2}, SobolevIndex{0.5, 3}}) {
    const double c = tv_dual_constant(idx, 1);
    for (int trial = 0; trial < 50; ++trial) {
      const ScalarField a = random_density(g1, rng), b = random_density(g1, rng);
      const double tv = total_variation(a, b);
      ASSERT_LE(tv, c * measure_dual_norm(a - b, idx, DualMethod::probe, ProbeOptions{16, std::uint64_t(trial)}) * (1 + 1e-9));
    }
  }
}

TEST(Norms, AmalgamRejectsKOne) {
  const ScalarField d = gaussian_density(g1, 0.0, 0.1) - gaussian_density(g1, 0.2, 0.1);
  try {
    measure_dual_norm(d, {1, 1}, DualMethod::amalgam);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Unsupported);
  }
}

TEST(Norms, ProbeNeedsProbes) {
  const ScalarField d = gaussian_density(g1, 0.0, 0.1) - gaussian_density(g1, 0.2, 0.1);
  EXPECT_THROW(measure_dual_norm(d, {1, 2}, DualMethod::probe, ProbeOptions{0, 1}), Error);
}

TEST(Norms, ProbeIsDeterministic) {
  const ScalarField d = gaussian_density(g1, 0.0, 0.1) - gaussian_density(g1, 0.3, 0.2);
  EXPECT_EQ(measure_dual_norm(d, {1, 2}, DualMethod::probe, ProbeOptions{32, 9}), measure_dual_norm(d, {1, 2}, DualMethod::probe, ProbeOptions{32, 9}));
}

TEST(Norms, TheoreticalExponentFormula) {
  EXPECT_DOUBLE_EQ(heat_operator_exponent(0, {1, 2}, {0, kInf}, 1), -0.75);
  EXPECT_DOUBLE_EQ(heat_operator_exponent(1, {0, kInf}, {0, kInf}, 1), -0.5);
  EXPECT_DOUBLE_EQ(heat_operator_exponent(0, {0.7, 3}, {0.7, 3}, 2), 0.0);
}

TEST(Norms, ExponentProbeFlatCase) {
  const GridSpec g{1, 2048, 16.0};
  const auto r = operator_exponent_probe(0, {1, 2}, {1, 2}, geometric_time_grid(0.01, 1.0, 10), 32, 7, g);
  EXPECT_NEAR(r.slope, 0.0, 0.05);
}

TEST(Norms, ExponentProbeGradientCase) {
  const GridSpec g{1, 2048, 16.0};
  const auto r = operator_exponent_probe(1, {0, kInf}, {0, kInf}, geometric_time_grid(0.01, 1.0, 12), 32, 7, g);
  EXPECT_NEAR(r.slope, -0.5, 0.05);
}

TEST(Norms, ExponentProbeSmoothingCase) {
  const GridSpec g{1, 2048, 16.0};
  const auto r = operator_exponent_probe(0, {1, 2}, {0, kInf}, geometric_time_grid(0.01, 1.0, 12), 64, 7, g);
  EXPECT_NEAR(r.slope, -0.75, 0.08);
}

TEST(Norms, ExponentProbeTracksExactWholeLineNorms) {
  // ‖P_t‖ from H^{-δ} (k = 2) to L^∞ and from W^{-δ,1} to L² on the line: ‖(1-Δ)^{δ/2} p_t‖_{L²}
  const GridSpec g{1, 2048, 16.0};
  const auto ts = geometric_time_grid(0.01, 1.0, 12);
  auto exact_slope = [&](double delta) {
    std::vector<double> lt, ly;
    boost::math::quadrature::exp_sinh<double> q;
    for (double t : ts) {
      const double v = q.integrate([&](double xi) { return std::pow(1 + xi * xi, delta) * std::exp(-t * xi * xi); }) / std::numbers::pi;
      lt.push_back(std::log(t));
      ly.push_back(0.5 * std::log(v));
    }
    return linear_fit(lt, ly).slope;
  };
  const double a = exact_slope(1.0), b = exact_slope(0.5);
  EXPECT_NEAR(a, -0.642, 0.005);
  EXPECT_NEAR(b, -0.424, 0.005);
  EXPECT_NEAR(operator_exponent_probe(0, {1, 2}, {0, kInf}, ts, 64, 7, g).slope, a, 0.05);
  EXPECT_NEAR(operator_exponent_probe(0, {0.5, 1}, {0, 2}, ts, 64, 7, g).slope, b, 0.05);
}

TEST(Norms, ExponentProbeRejectsDegenerateGrid) {
  EXPECT_THROW(operator_exponent_probe(0, {1, 2}, {0, kInf}, {0.1, 0.1, 0.2}, 8, 1, g1), Error);
  EXPECT_THROW(operator_exponent_probe(0, {1, 2}, {0, kInf}, {0.1, 0.2, 0.3, -1.0}, 8, 1, g1), Error);
  EXPECT_THROW(operator_exponent_probe(0, {0.5, 2}, {1, kInf}, geometric_time_grid(0.01, 1.0, 8), 8, 1, g1), Error);
}

TEST(Norms, IndexValidation) {
  EXPECT_THROW(local_neg_norm(ScalarField(g1, 1.0), {-1, 2}), Error);
  EXPECT_THROW(local_neg_norm(ScalarField(g1, 1.0), {1, 0.5}), Error);
}
