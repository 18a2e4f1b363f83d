#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mvsde/mvsde.hpp"
#include "oracles.hpp"

using namespace mvsde;

namespace {

const GridSpec g1{1, 2048, 16.0};

ScalarField random_density(const GridSpec& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1), pos(-2, 2), var(0.05, 0.5);
  ScalarField f(g);
  for (int c = 0; c < 3; ++c) f += u(rng) * gaussian_density(g, pos(rng), var(rng));
  f *= 1.0 / f.mass();
  return f;
}

KernelSpec riesz(double eps0, int n0 = 0, double eps = 0.01) {
  KernelSpec s;
  s.variant = RieszOrder{{1.0}, n0, eps0};
  s.mollification_eps = eps;
  return s;
}

}  // namespace

TEST(Kernels, ConstantVectorRealizesConstant) {
  KernelSpec s;
  s.variant = ConstantVector{{0.7, -1.3}};
  const GridSpec g{2, 64, 8.0};
  const VectorField h = realize_kernel(s, g);
  // the realized field is a density-like kernel: its convolution with any probability density returns c
  const ScalarField rho = ScalarField::from_function(g, [](double x, double y) {
    return std::exp(-(x * x + y * y) / 0.5) / (0.5 * std::numbers::pi);
  });
  const VectorField b = convolve_symbol(kernel_symbol(s, g), rho);
  for (double v : b.components[0]) ASSERT_NEAR(v, 0.7, 1e-10);
  for (double v : b.components[1]) ASSERT_NEAR(v, -1.3, 1e-10);
  EXPECT_TRUE(h.all_finite());
}

TEST(Kernels, MollifiedDiracIsHeatKernel) {
  KernelSpec s;
  s.variant = DiracDerivative{0, 0};
  s.mollification_eps = 0.01;
  const VectorField h = realize_kernel(s, g1);
  EXPECT_LT((h.component(0) - gaussian_density(g1, 0.0, 0.01)).sup_norm(), 1e-8);
}

TEST(Kernels, MollifiedDiracDerivativeIsHeatKernelDerivative) {
  KernelSpec s;
  s.variant = DiracDerivative{1, 0};
  s.mollification_eps = 0.02;
  const ScalarField p = gaussian_density(g1, 0.0, 0.02);
  ScalarField want = p;
  for (int i = 0; i < g1.points; ++i) want.values[std::size_t(i)] *= -g1.coord(i) / 0.02;
  EXPECT_LT((realize_kernel(s, g1).component(0) - want).sup_norm(), 1e-6 * want.sup_norm());
}

TEST(Kernels, SingularKernelNeedsMollification) {
  for (KernelSpec s : {riesz(0.5, 0, 0.0), KernelSpec{DiracDerivative{0, 0}, 0.0, {}, ""}}) {
    try {
      realize_kernel(s, g1);
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::RequiresMollification);
    }
  }
}

TEST(Kernels, RieszSymbolConstantMatchesHilbertTransform) {
  // sign(z)/|z| has transform -iπ sign(ξ)
  EXPECT_NEAR(riesz_symbol_constant(1, 0, 1.0), -std::numbers::pi, 1e-12);
}

TEST(Kernels, SymbolRouteMatchesDirectRoute) {
  for (double eps0 : {0.5, 1.0, 1.5}) {
    for (int n0 : {0, 1}) {
      const double eps = 4e-4, sd = std::sqrt(eps);
      const KernelSpec s = riesz(eps0, n0, eps);
      const auto& r = std::get<RieszOrder>(s.variant);
      const ScalarField spectral = realize_kernel(s, g1).component(0);
      double worst = 0;
      for (int i = 0; i < g1.points; i += 3) {
        const double z = g1.coord(i);
        if (std::abs(z) < 6 * sd || std::abs(z) > 0.45 * g1.extent) continue;
        const double w = std::min(0.9 * std::abs(z), 12 * sd);
        const double direct = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
            [&](double u) {
              return riesz_direct_periodic_1d(r, z - u, g1.extent) * std::exp(-u * u / (2 * eps)) /
                     std::sqrt(2 * std::numbers::pi * eps);
            },
            -w, w, 8, 1e-12);
        worst = std::max(worst, std::abs(spectral[std::size_t(i)] - direct) / std::abs(direct));
      }
      EXPECT_LT(worst, 0.01) << "eps0=" << eps0 << " n0=" << n0;
    }
  }
}

TEST(Kernels, SymbolRouteConvergesToUnmollifiedKernel) {
  const double z = 1.0;
  const int i = int(std::lround(z / g1.spacing())) + g1.points / 2;
  ASSERT_NEAR(g1.coord(i), z, 1e-12);
  double prev = 0;
  for (double eps : {1e-2, 5e-3, 2.5e-3}) {
    const KernelSpec s = riesz(1.0, 0, eps);
    const double direct = riesz_direct_periodic_1d(std::get<RieszOrder>(s.variant), z, g1.extent);
    const double err = std::abs(realize_kernel(s, g1).component(0)[std::size_t(i)] - direct) / std::abs(direct);
    if (prev > 0) {
      EXPECT_NEAR(err / prev, 0.5, 0.05);
    }
    prev = err;
  }
  EXPECT_LT(prev, 0.01);
}

TEST(Kernels, HilbertDriftMatchesPrincipalValueQuadrature) {
  KernelSpec s = kernel_catalog("hilbert", 1);
  const double s2 = 0.04;
  const ScalarField rho = gaussian_density(g1, 0.0, s2);
  const VectorField b = drift_from_kernel(s, rho, 1.0).drift;
  double sup_b = 0, sup_o = 0, worst = 0;
  for (int i = 0; i < g1.points; i += 8) {
    const double x = g1.coord(i);
    if (std::abs(x) > 3) continue;
    const double o = oracle::hilbert_gaussian_drift(x, s2);
    sup_o = std::max(sup_o, std::abs(o));
    sup_b = std::max(sup_b, std::abs(b.components[0][std::size_t(i)]));
    worst = std::max(worst, std::abs(o - b.components[0][std::size_t(i)]));
  }
  EXPECT_NEAR(sup_b, sup_o, 0.02 * sup_o);
  EXPECT_LT(worst, 0.02 * sup_o);
}

TEST(Kernels, ConstantDriftIsConstant) {
  KernelSpec s;
  s.variant = ConstantVector{{2.5}};
  std::mt19937_64 rng(1);
  const VectorField b = drift_from_kernel(s, random_density(g1, rng), 0.3).drift;
  for (double v : b.components[0]) ASSERT_NEAR(v, 2.5, 1e-10);
}

TEST(Kernels, ModulationVanishesAtZero) {
  KernelSpec s = riesz(0.5);
  s.modulation.kappa = 1.0;
  std::mt19937_64 rng(2);
  EXPECT_EQ(drift_from_kernel(s, random_density(g1, rng), 0.0).drift.sup_norm(), 0.0);
}

TEST(Kernels, TabulatedModulation) {
  TimeModulation m{0.5, {0.0, 1.0}, {1.0, 3.0}};
  EXPECT_NEAR(m.factor(0.25), 1.5 * 0.5, 1e-15);
  EXPECT_NEAR(m.factor(4.0), 3.0 * 2.0, 1e-15);
  TimeModulation bad{0.0, {0.0, 1.0}, {2.0, 1.5}};
  EXPECT_THROW(bad.validate(), Error);
  TimeModulation small{0.0, {0.0}, {0.5}};
  EXPECT_THROW(small.validate(), Error);
}

TEST(Kernels, MismatchedGridIsRejected) {
  KernelSpec s;
  s.variant = GridSampled{VectorField(GridSpec{1, 256, 16.0})};
  try {
    drift_from_kernel(s, gaussian_density(g1, 0.0, 0.1), 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
  }
}

TEST(Kernels, EpsSensitivityIsReported) {
  const auto ev = drift_from_kernel(riesz(0.5), gaussian_density(g1, 0.0, 0.05), 1.0);
  EXPECT_GT(ev.eps_sensitivity, 0.0);
  EXPECT_LT(ev.eps_sensitivity, 0.1 * ev.drift.sup_norm());
}

TEST(Kernels, DriftIsLinearInDensity) {
  std::mt19937_64 rng(3);
  const KernelSpec s = riesz(0.5);
  for (int trial = 0; trial < 10; ++trial) {
    const ScalarField a = random_density(g1, rng), b = random_density(g1, rng);
    const double al = 0.3 + 0.05 * trial;
    const VectorField lhs = drift_from_kernel(s, al * a + (1 - al) * b, 0.4).drift;
    const VectorField rhs = al * drift_from_kernel(s, a, 0.4).drift + (1 - al) * drift_from_kernel(s, b, 0.4).drift;
    ASSERT_LT((lhs - rhs).sup_norm(), 1e-12 * lhs.sup_norm());
  }
}

TEST(Kernels, DriftIsTranslationEquivariant) {
  std::mt19937_64 rng(4);
  const ScalarField a = random_density(g1, rng);
  const int shift = 101;
  ScalarField b(g1);
  for (int i = 0; i < g1.points; ++i) b.values[std::size_t((i + shift) % g1.points)] = a.values[std::size_t(i)];
  const VectorField da = drift_from_kernel(riesz(0.5), a, 1.0).drift, db = drift_from_kernel(riesz(0.5), b, 1.0).drift;
  double worst = 0;
  for (int i = 0; i < g1.points; ++i)
    worst = std::max(worst, std::abs(db.components[0][std::size_t((i + shift) % g1.points)] - da.components[0][std::size_t(i)]));
  EXPECT_LT(worst, 1e-12 * da.sup_norm());
}

TEST(Kernels, EnvelopeAndLipschitzInMeasure) {
  std::mt19937_64 rng(5);
  KernelSpec s = riesz(0.5);
  s.modulation.kappa = 0.5;
  const SobolevIndex idx{1, 2};
  const double hnorm = local_neg_norm(realize_kernel(s, g1), idx);
  for (int trial = 0; trial < 10; ++trial) {
    const double t = 0.1 + 0.04 * trial;
    const ScalarField a = random_density(g1, rng), b = random_density(g1, rng);
    const double env = s.modulation.factor(t);
    const double ba = drift_from_kernel(s, a, t).drift.sup_norm();
    ASSERT_LE(ba, env * measure_dual_norm(a, idx, DualMethod::amalgam) * hnorm * (1 + 1e-9));
    const double diff = (drift_from_kernel(s, a, t).drift - drift_from_kernel(s, b, t).drift).sup_norm();
    ASSERT_LE(diff, env * measure_dual_norm(a - b, idx, DualMethod::amalgam) * hnorm * (1 + 1e-9));
  }
}

TEST(Kernels, NemytskiiZero) {
  NemytskiiSpec s;
  EXPECT_EQ(nemytskii_drift(s, gaussian_density(g1, 0.0, 0.1), 0.5).sup_norm(), 0.0);
}

TEST(Kernels, NemytskiiDensityPeak) {
  NemytskiiSpec s;
  s.family = NemytskiiFamily::density;
  s.modulation.kappa = 0.5;
  const double s2 = 0.09, t = 0.25;
  const VectorField b = nemytskii_drift(s, gaussian_density(g1, 0.0, s2), t);
  EXPECT_NEAR(b.sup_norm(), std::sqrt(t) / std::sqrt(2 * std::numbers::pi * s2), 1e-10);
}

TEST(Kernels, NemytskiiClipGradientLipschitz) {
  NemytskiiSpec s;
  s.n = 2;
  s.family = NemytskiiFamily::clip_gradient;
  s.modulation.kappa = 0.5;
  for (int d : {1, 2}) {
    const LipschitzCheck c = nemytskii_lipschitz_check(s, d, 0.3, 1000, 7);
    EXPECT_TRUE(c.passed);
    EXPECT_LE(c.max_ratio, std::sqrt(0.3) * (1 + 1e-12));
    EXPECT_GT(c.max_ratio, 0.5 * std::sqrt(0.3));
  }
}

TEST(Kernels, NemytskiiGradientDrift) {
  NemytskiiSpec s;
  s.n = 2;
  s.family = NemytskiiFamily::clip_gradient;
  s.clip = 100.0;
  const double s2 = 0.1;
  const VectorField b = nemytskii_drift(s, gaussian_density(g1, 0.0, s2), 1.0);
  const double peak = std::exp(-0.5) / std::sqrt(s2) / std::sqrt(2 * std::numbers::pi * s2);
  EXPECT_NEAR(b.sup_norm(), peak, 1e-3 * peak);
}

TEST(Kernels, NemytskiiDepthLimit) {
  NemytskiiSpec s;
  s.n = 6;
  s.family = NemytskiiFamily::density;
  try {
    nemytskii_drift(s, gaussian_density(g1, 0.0, 0.1), 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnsupportedOrder);
  }
}

TEST(Kernels, DensityJetOrdering) {
  const GridSpec g{2, 64, 8.0};
  const ScalarField rho = ScalarField::from_function(g, [](double x, double y) { return std::exp(-(x * x + 2 * y * y)); });
  const auto jet = density_jet(rho, 3);
  ASSERT_EQ(jet.size(), 1u + 2u + 4u);
  EXPECT_LT((jet[1] - field_derivative(rho, {1, 0})).sup_norm(), 1e-12);
  EXPECT_LT((jet[2] - field_derivative(rho, {0, 1})).sup_norm(), 1e-12);
  EXPECT_LT((jet[4] - jet[5]).sup_norm(), 1e-12);
}

TEST(Kernels, DiracNormStudyThreshold) {
  KernelSpec s = kernel_catalog("dirac0", 1);
  const auto eps = default_eps_list(g1, 9);
  EXPECT_EQ(kernel_norm_study(s, {1.5, kInf}, eps, g1).fit.verdict, Verdict::bounded);
  const NormStudy low = kernel_norm_study(s, {0.5, kInf}, eps, g1);
  EXPECT_EQ(low.fit.verdict, Verdict::unbounded);
  EXPECT_NEAR(low.fit.growth_exponent, -0.25, 0.1);
}

TEST(Kernels, RieszNormStudyVerdicts) {
  const auto eps = default_eps_list(g1, 9);
  for (double k : {2.0, 4.0})
    EXPECT_EQ(kernel_norm_study(kernel_catalog("riesz", 1), {1, k}, eps, g1).fit.verdict, Verdict::bounded) << k;
  EXPECT_EQ(kernel_norm_study(kernel_catalog("riesz_n1", 1), {1, 2}, eps, g1).fit.verdict, Verdict::unbounded);
}

TEST(Kernels, NormStudyTruncatesUnresolvedEps) {
  std::vector<double> eps = default_eps_list(g1, 6);
  eps.push_back(1e-9);
  const NormStudy st = kernel_norm_study(kernel_catalog("dirac0", 1), {1.5, kInf}, eps, g1);
  EXPECT_EQ(st.rows.size(), 6u);
  EXPECT_FALSE(st.warnings.empty());
}

TEST(Kernels, CatalogNames) {
  for (const auto& n : kernel_catalog_names()) EXPECT_NO_THROW(kernel_catalog(n, 1).validate(1)) << n;
  EXPECT_THROW(kernel_catalog("nope", 1), Error);
}

TEST(Kernels, SpecValidation) {
  KernelSpec s = riesz(2.5);
  EXPECT_THROW(s.validate(1), Error);
  s = riesz(0.0, 1);
  try {
    s.validate(1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Unsupported);
  }
  s.variant = DiracDerivative{3, 0};
  EXPECT_THROW(s.validate(1), Error);
}
