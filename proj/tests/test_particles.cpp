#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "mvsde/mvsde.hpp"

using namespace mvsde;

namespace {

SimConfig zero_config(double T, double dt, double var0) {
  SimConfig c;
  c.T = T;
  c.dt = dt;
  c.initial = GaussianMixture{{1.0}, {{0.0}}, {var0}};
  return c;
}

void moments(const ParticleEnsemble& e, double& mean, double& var) {
  const std::size_t N = e.N();
  mean = std::accumulate(e.positions.begin(), e.positions.end(), 0.0) / double(N);
  var = 0;
  for (double x : e.positions) var += (x - mean) * (x - mean);
  var /= double(N - 1);
}

KernelSpec small_kernel() {
  KernelSpec s = kernel_catalog("riesz_small", 1);
  s.modulation.kappa = 0;
  return s;
}

}  // namespace

TEST(Particles, Deterministic) {
  SimConfig c = zero_config(0.2, 0.01, 0.1);
  c.kernel = small_kernel();
  const auto a = simulate_particles(c, 500), b = simulate_particles(c, 500);
  EXPECT_EQ(a.checkpoints.back().positions, b.checkpoints.back().positions);
  c.seed = 2;
  EXPECT_NE(simulate_particles(c, 500).checkpoints.back().positions, a.checkpoints.back().positions);
}

TEST(Particles, Exchangeable) {
  SimConfig c = zero_config(0.2, 0.01, 0.1);
  c.kernel = small_kernel();
  const ParticleEnsemble e = sample_initial(c.initial, c.grid, 300, c.seed);
  ParticleEnsemble p = e;
  std::vector<std::size_t> perm(e.N());
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::rotate(perm.begin(), perm.begin() + 17, perm.end());
  for (std::size_t i = 0; i < e.N(); ++i) {
    p.positions[i] = e.positions[perm[i]];
    p.ids[i] = e.ids[perm[i]];
  }
  const auto a = simulate_from(e, c).checkpoints.back();
  const auto b = simulate_from(p, c).checkpoints.back();
  for (std::size_t i = 0; i < e.N(); ++i) EXPECT_NEAR(b.positions[i], a.positions[perm[i]], 1e-12);
}

TEST(Particles, BrownianVarianceGrowth) {
  const SimConfig c = zero_config(1.0, 0.01, 0.2);
  const auto tr = simulate_particles(c, 10000);
  const ParticleEnsemble start = sample_initial(c.initial, c.grid, 10000, c.seed);
  double m0, v0, m1, v1;
  moments(start, m0, v0);
  moments(tr.checkpoints.back(), m1, v1);
  EXPECT_NEAR(v1 - v0, 1.0, 0.05);
  EXPECT_EQ(tr.wrap_count, 0);
}

TEST(Particles, ConstantDriftMean) {
  SimConfig c = zero_config(1.0, 0.01, 0.1);
  c.kernel = kernel_catalog("constant", 1);
  std::get<ConstantVector>(c.kernel->variant).c = {0.7};
  const ParticleEnsemble start = sample_initial(c.initial, c.grid, 1000, c.seed);
  double m0, v0, m1, v1;
  moments(start, m0, v0);
  moments(simulate_particles(c, 1000).checkpoints.back(), m1, v1);
  EXPECT_NEAR(m1 - m0, 0.7, 3 * std::sqrt(1.0 / 1000));
}

TEST(Particles, ZeroKernelLawAcrossSeeds) {
  const double T = 0.5, v0 = 0.1;
  const std::size_t N = 2000;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SimConfig c = zero_config(T, 0.01, v0);
    c.seed = seed;
    double m, v;
    moments(simulate_particles(c, N).checkpoints.back(), m, v);
    const double var = v0 + T;
    EXPECT_LT(std::abs(m), 4 * std::sqrt(var / double(N))) << seed;
    EXPECT_LT(std::abs(v - var), 4 * var * std::sqrt(2.0 / double(N - 1))) << seed;
  }
}

TEST(Particles, PairwiseMatchesBinnedDrift) {
  const KernelSpec s = small_kernel();
  const GridSpec g{1, 2048, 16.0};
  const ParticleEnsemble e = sample_initial(GaussianMixture{{0.5, 0.5}, {{-0.5}, {0.6}}, {0.1, 0.2}}, g, 1000, 3);
  const auto pw = pairwise_drift(e, s, 0.01, g, 1.0);
  const auto bn = binned_drift(e, kernel_symbol(s, g, 0.01), 1.0);
  double worst = 0, scale = 0;
  for (std::size_t i = 0; i < e.N(); ++i) {
    worst = std::max(worst, std::abs(pw[i] - bn[i]));
    scale = std::max(scale, std::abs(pw[i]));
  }
  EXPECT_GT(scale, 0.1);
  EXPECT_LT(worst, 1e-3);
}

TEST(Particles, PairwiseSimulationTracksBinned) {
  SimConfig c = zero_config(0.1, 0.005, 0.1);
  c.kernel = small_kernel();
  const auto a = simulate_particles(c, 400).checkpoints.back();
  c.pairwise = true;
  const auto b = simulate_particles(c, 400).checkpoints.back();
  for (std::size_t i = 0; i < a.N(); ++i) EXPECT_NEAR(a.positions[i], b.positions[i], 1e-4);
}

TEST(Particles, WrapsArePeriodicAndCounted) {
  SimConfig c = zero_config(1.0, 0.01, 0.1);
  c.kernel = kernel_catalog("constant", 1);
  std::get<ConstantVector>(c.kernel->variant).c = {12.0};
  const auto tr = simulate_particles(c, 200);
  EXPECT_GT(tr.wrap_count, 100);
  for (double x : tr.checkpoints.back().positions) {
    EXPECT_GE(x, -8.0);
    EXPECT_LT(x, 8.0);
  }
}

TEST(Particles, Checkpoints) {
  SimConfig c = zero_config(0.5, 0.01, 0.1);
  c.checkpoints = {0.1, 0.3, 0.5};
  const auto tr = simulate_particles(c, 100);
  ASSERT_EQ(tr.checkpoints.size(), 3u);
  EXPECT_NEAR(tr.checkpoints[1].time, 0.3, 1e-12);
}

TEST(Particles, ConfigErrors) {
  SimConfig c = zero_config(0.5, 0.01, 0.1);
  c.kernel = small_kernel();
  c.mollification_eps = 0;
  try {
    simulate_particles(c, 100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RequiresMollification);
  }
  c.mollification_eps = 0.001;
  EXPECT_THROW(simulate_particles(c, 100), Error);
  c = zero_config(0.5, 0.03, 0.1);
  EXPECT_THROW(simulate_particles(c, 100), Error);
  EXPECT_THROW(simulate_particles(zero_config(0.5, 0.01, 0.1), 1), Error);
}

TEST(Particles, NonFiniteIsFatal) {
  SimConfig c = zero_config(0.1, 0.01, 0.1);
  ParticleEnsemble e = sample_initial(c.initial, c.grid, 10, 1);
  c.kernel = kernel_catalog("constant", 1);
  std::get<ConstantVector>(c.kernel->variant).c = {std::numeric_limits<double>::infinity()};
  try {
    simulate_from(e, c);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::SimulationFailure);
    EXPECT_NE(std::string(err.what()).find("step 0"), std::string::npos);
  }
}

TEST(Particles, GridDensitySampler) {
  const GridSpec g{1, 1024, 16.0};
  const ParticleEnsemble e = sample_initial(GridDensitySampler{gaussian_density(g, 1.0, 0.3)}, g, 20000, 5);
  double m, v;
  moments(e, m, v);
  EXPECT_NEAR(m, 1.0, 4 * std::sqrt(0.3 / 20000));
  EXPECT_NEAR(v, 0.3, 0.02);
}

TEST(Kde, SingleParticleIsGaussian) {
  const GridSpec g{1, 2048, 16.0};
  ParticleEnsemble e;
  e.positions = {0.0};
  e.ids = {0};
  const double b = 0.1;
  EXPECT_LT((empirical_density(e, g, b) - gaussian_density(g, 0.0, b * b)).sup_norm(), 1e-8);
}

TEST(Kde, MassIsOne) {
  const GridSpec g{1, 512, 16.0};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ParticleEnsemble e = sample_initial(GaussianMixture{{1.0}, {{0.0}}, {double(seed)}}, g, 50, seed);
    EXPECT_NEAR(empirical_density(e, g, 0.2).mass(), 1.0, 1e-14);
  }
  EXPECT_THROW(empirical_density(sample_initial(GaussianMixture{}, g, 10, 1), g, 0.001), Error);
}

TEST(Kde, BrownianFromDirac) {
  SimConfig c = zero_config(1.0, 0.05, 0.0);
  const auto e = simulate_particles(c, 100000).checkpoints.back();
  const ScalarField rho = empirical_density(e, c.grid, silverman_bandwidth(e, c.grid));
  EXPECT_LT((rho - gaussian_density(c.grid, 0.0, 1.0)).l1_norm(), 0.02);
}

TEST(Ensemble, W1AgainstOwnLaw) {
  const GridSpec g{1, 2048, 16.0};
  const ParticleEnsemble e = sample_initial(GaussianMixture{}, g, 4000, 9);
  const double w = ensemble_w1(e, gaussian_density(g, 0.0, 1.0));
  EXPECT_LT(w, 0.05);
  EXPECT_GT(ensemble_w1(e, gaussian_density(g, 0.5, 1.0)), 0.4);
}

class ZeroKernelChaos : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = zero_config(0.5, 0.01, 0.05);
    const GridSpec& g = cfg_.grid;
    pde_ = heat_flow(gaussian_density(g, 0.0, 0.05), {0.25, 0.5});
    cfg_.checkpoints = {0.5};
    study_ = chaos_convergence_study(cfg_, {250, 1000, 4000}, pde_, 10);
  }
  static inline SimConfig cfg_;
  static inline MeasureFlow pde_;
  static inline ChaosStudy study_;
};

TEST_F(ZeroKernelChaos, MonteCarloRate) {
  ASSERT_EQ(study_.summary.size(), 3u);
  EXPECT_TRUE(study_.failures.empty());
  std::vector<double> x, y;
  for (const auto& s : study_.summary) {
    x.push_back(std::log(double(s.N)));
    y.push_back(std::log(s.W1_mean));
  }
  EXPECT_NEAR(linear_fit(x, y).slope, -0.5, 0.1);
}

TEST_F(ZeroKernelChaos, Deterministic) {
  const ChaosStudy again = chaos_convergence_study(cfg_, {250, 1000, 4000}, pde_, 10);
  ASSERT_EQ(again.rows.size(), study_.rows.size());
  for (std::size_t i = 0; i < again.rows.size(); ++i) {
    EXPECT_EQ(again.rows[i].W1, study_.rows[i].W1);
    EXPECT_EQ(again.rows[i].L1, study_.rows[i].L1);
  }
}

TEST_F(ZeroKernelChaos, SpreadOfMeansShrinksWithSeeds) {
  auto spread = [&](int R) {
    std::vector<double> means;
    for (std::uint64_t base = 0; base < 8; ++base) {
      SimConfig c = cfg_;
      c.seed = 1000 + base * 100;
      means.push_back(chaos_convergence_study(c, {500}, pde_, R).summary[0].W1_mean);
    }
    const double m = std::accumulate(means.begin(), means.end(), 0.0) / 8;
    double v = 0;
    for (double x : means) v += (x - m) * (x - m);
    return std::sqrt(v / 7);
  };
  const double ratio = spread(16) / spread(4);
  EXPECT_GT(ratio, 0.2);
  EXPECT_LT(ratio, 0.9);
}

TEST(Chaos, MissingCheckpointIsRejected) {
  SimConfig c = zero_config(0.5, 0.01, 0.05);
  const MeasureFlow pde = heat_flow(gaussian_density(c.grid, 0.0, 0.05), {0.25});
  EXPECT_THROW(chaos_convergence_study(c, {100}, pde, 2), Error);
}
