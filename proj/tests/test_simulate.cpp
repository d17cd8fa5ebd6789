#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "kyleback/equilibrium.hpp"
#include "kyleback/simulate.hpp"

using namespace kyleback;

namespace {

const ModelParams kAffineParams{1.0, 0.5, 0.1, 4.0};
constexpr double kLam = 1.9506249024, kM = 1.0;

const ConvexPotential& affine_potential() {
  static const ConvexPotential pot = ConvexPotential::from_function(
      XiGrid::standard(kAffineParams), [](double x) { return kLam * x + kM; }, kAffineParams.l_cap);
  return pot;
}

const PricingSurface& affine_surface() {
  static const PricingSurface s = build_surface(affine_potential(), kAffineParams);
  return s;
}

ModelParams uniform_params() {
  ModelParams p{1.0, 0.5, 0.1, 0.0};
  p.l_cap = belief_slope_cap(BeliefDistribution::uniform(10.0, 20.0), p.T, p.sigma);
  return p;
}

const BeliefDistribution kUniform = BeliefDistribution::uniform(10.0, 20.0);

const FixedPointResult& uniform_solution() {
  static const FixedPointResult r = picard_solve(kUniform, uniform_params());
  return r;
}

const PricingSurface& uniform_surface() {
  static const PricingSurface s = build_surface(uniform_solution().potential, uniform_params());
  return s;
}

SimulationConfig small_config(std::size_t paths, std::uint64_t seed = 11) {
  SimulationConfig c;
  c.n_paths = paths;
  c.n_steps = 200;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(SimulationGrid, UniformBodyAndGeometricTail) {
  const auto t = simulation_time_grid(2.0, 100, 0, 1e-4);
  EXPECT_EQ(t.front(), 0.0);
  EXPECT_EQ(t.back(), 2.0);
  for (std::size_t k = 1; k < t.size(); ++k) EXPECT_GT(t[k], t[k - 1]);
  for (std::size_t k = 1; k < 100; ++k) EXPECT_NEAR(t[k] - t[k - 1], 0.02, 1e-14);
  EXPECT_LE(t.back() - t[t.size() - 2], 1e-4 * 2.0);
  EXPECT_GT(t.back() - t[t.size() - 2], 0.5e-4 * 2.0);
  const auto r = simulation_time_grid(2.0, 100, 2, 1e-4);
  EXPECT_EQ(r.size() - 1, 4 * (t.size() - 1));
  for (std::size_t k = 0; k < t.size(); ++k) EXPECT_EQ(r[4 * k], t[k]);
  EXPECT_THROW(simulation_time_grid(1.0, 1), DomainError);
  EXPECT_THROW(simulation_time_grid(1.0, 10, -1), DomainError);
}

TEST(RandomStreams, DeterministicAndCoupledAcrossRefinement) {
  const auto base = simulation_time_grid(1.0, 50);
  const auto a = brownian_increments(base, 0, 5, 3);
  EXPECT_EQ(a, brownian_increments(base, 0, 5, 3));
  EXPECT_NE(a, brownian_increments(base, 0, 5, 4));
  EXPECT_NE(a, brownian_increments(base, 0, 6, 3));
  const auto r2 = brownian_increments(base, 2, 5, 3);
  ASSERT_EQ(r2.size(), 4 * a.size());
  for (std::size_t k = 0; k < a.size(); ++k)
    EXPECT_NEAR(r2[4 * k] + r2[4 * k + 1] + r2[4 * k + 2] + r2[4 * k + 3], a[k], 1e-14);
}

TEST(RandomStreams, IncrementsHaveBrownianMoments) {
  const auto base = simulation_time_grid(1.0, 20);
  const int n = 20000;
  std::vector<double> sum(base.size() - 1, 0.0), sq(base.size() - 1, 0.0);
  for (int p = 0; p < n; ++p) {
    const auto d = brownian_increments(base, 1, 9, static_cast<std::uint64_t>(p));
    for (std::size_t k = 0; k < sum.size(); ++k) {
      sum[k] += d[2 * k] + d[2 * k + 1];
      sq[k] += d[2 * k] * d[2 * k];
    }
  }
  for (std::size_t k = 0; k < sum.size(); ++k) {
    const double dt = base[k + 1] - base[k];
    EXPECT_LE(std::abs(sum[k] / n) / std::sqrt(dt / n), 4.0);
    // Each half carries variance dt / 2.
    EXPECT_NEAR(sq[k] / n / (0.5 * dt), 1.0, 0.05);
  }
}

TEST(RandomStreams, NormalsPassKs) {
  auto eng = path_engine(1, 2, 3);
  std::vector<double> z(100000);
  for (auto& v : z) v = standard_normal(eng);
  EXPECT_LE(ks_statistic(z, normal_cdf), ks_critical_1pct(z.size()));
}

TEST(Statistics, KsOfExactQuantilesIsHalfStep) {
  const std::size_t n = 1000;
  std::vector<double> q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = normal_quantile((i + 0.5) / n);
  EXPECT_NEAR(ks_statistic(q, normal_cdf), 0.5 / n, 1e-12);
  EXPECT_THROW(ks_statistic(std::vector<double>{}, normal_cdf), DomainError);
  EXPECT_NEAR(ks_critical_1pct(10000), 0.0163, 1e-12);
}

// Constant chi_xi = 1 - b (T - t): xi_T is Gaussian with variance
// sigma^2 int_0^T (1 - b (T - s))^{-2} ds = sigma^2 T / (1 - b T).
TEST(SimulateXi0, AffineSurfaceTerminalLaw) {
  const auto& p = kAffineParams;
  const double b = p.gamma * p.sigma * p.sigma * kLam;
  const double var = p.sigma * p.sigma * p.T / (1.0 - b * p.T);
  const auto batch = simulate_xi0(affine_surface(), small_config(20000));
  EXPECT_EQ(batch.exits, 0u);
  const double sd = std::sqrt(var);
  EXPECT_LE(ks_statistic(batch.xi_T, [&](double x) { return normal_cdf(x / sd); }), ks_critical_1pct(20000));
}

TEST(SimulateXi0, PriceIsAMartingale) {
  const auto batch = simulate_xi0(uniform_surface(), small_config(10000));
  const auto m = martingale_check(batch, uniform_surface());
  EXPECT_EQ(m.means.size(), 10u);
  EXPECT_LE(m.max_abs_z, 3.5);
  EXPECT_NEAR(m.reference, 15.0, 1e-3);
}

TEST(SimulateXi0, ThreadCountDoesNotChangeResults) {
  auto cfg = small_config(400);
  const auto one = simulate_xi0(uniform_surface(), cfg);
  cfg.threads = 4;
  const auto four = simulate_xi0(uniform_surface(), cfg);
  EXPECT_EQ(one.xi_T, four.xi_T);
  EXPECT_EQ(one.checkpoint_P, four.checkpoint_P);
}

TEST(SimulateXi0, LeavingTheGridIsAnError) {
  const ModelParams p{1.0, 0.5, 0.1, 4.0};
  const auto pot = ConvexPotential::from_function(XiGrid{0.25, 129}, [](double x) { return x; }, p.l_cap);
  const auto s = build_surface(pot, p);
  auto cfg = small_config(200);
  cfg.exit_tolerance = 0.0;
  EXPECT_THROW(simulate_xi0(s, cfg), GridExitError);
}

TEST(RecoverXi, RiskNeutralStateIsTheFlow) {
  const ModelParams p{1.0, 0.5, 0.0, 4.0};
  const auto pot = ConvexPotential::from_function(XiGrid{4.0, 513}, [](double x) { return 0.5 * x + std::tanh(x); }, p.l_cap);
  const auto s = build_surface(pot, p);
  std::vector<double> times, Y;
  for (int k = 0; k <= 100; ++k) {
    times.push_back(k / 100.0);
    Y.push_back(0.6 * std::sin(5.0 * k / 100.0));
  }
  const auto xi = recover_xi_from_flow(s, times, Y);
  for (std::size_t k = 0; k < xi.size(); ++k) EXPECT_NEAR(xi[k], Y[k], 1e-12);
}

TEST(RecoverXi, AffineRecursionClosedForm) {
  const auto& s = affine_surface();
  const auto& p = kAffineParams;
  const double gs2 = p.gamma * p.sigma * p.sigma;
  std::vector<double> times, Y;
  for (int k = 0; k <= 300; ++k) {
    times.push_back(k / 300.0);
    Y.push_back(0.4 * std::cos(3.0 * k / 300.0) - 0.4 + 0.2 * k / 300.0);
  }
  const auto xi = recover_xi_from_flow(s, times, Y);
  const double c0 = -gs2 * p.T * kM;
  double x = 0.0, acc = 0.0;
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    acc += gs2 * (kLam * x + kM) * (times[k + 1] - times[k]);
    const double tau = p.T - times[k + 1];
    x = (c0 + Y[k + 1] + acc + gs2 * tau * kM) / (1.0 - gs2 * kLam * tau);
    EXPECT_NEAR(xi[k + 1], x, 1e-8) << k;
  }
}

TEST(SimulateBridge, StoredPathsRoundTripThroughRecovery) {
  auto cfg = small_config(20);
  cfg.store_paths = true;
  const auto& fp = uniform_solution();
  const auto b = simulate_bridge(uniform_surface(), fp.potential, kUniform, fp.representation, cfg);
  ASSERT_TRUE(b.has_paths());
  for (std::size_t p = 0; p < b.n_paths; ++p) {
    const auto xi = recover_xi_from_flow(uniform_surface(), b.times, b.path(b.Y, p));
    const auto want = b.path(b.xi, p);
    for (std::size_t k = 0; k < xi.size(); ++k) ASSERT_NEAR(xi[k], want[k], 1e-6);
  }
}

TEST(SimulateBridge, PinsTheMedianValue) {
  auto cfg = small_config(2000);
  cfg.fixed_v = 15.0;
  const auto& fp = uniform_solution();
  const auto b = simulate_bridge(uniform_surface(), fp.potential, kUniform, fp.representation, cfg);
  const auto pin = pinning_summary(b, uniform_params());
  EXPECT_LE(pin.mean_state_gap, 3.0 * pin.scale);
  EXPECT_EQ(b.unreachable_targets, 0u);
  for (double v : b.v_targets) EXPECT_EQ(v, 15.0);
  EXPECT_THROW(wealth_decomposition(simulate_xi0(uniform_surface(), small_config(10)), uniform_params()), DomainError);
}

// Halving every step halves the last step, so the pinning error shrinks by
// about sqrt(2); the wealth discretization gap is first order.
TEST(SimulateBridge, RefinementRates) {
  const auto& fp = uniform_solution();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = small_config(1000, seed);
    cfg.fixed_v = 13.0;
    const auto coarse = simulate_bridge(uniform_surface(), fp.potential, kUniform, fp.representation, cfg);
    cfg.refine = 1;
    const auto fine = simulate_bridge(uniform_surface(), fp.potential, kUniform, fp.representation, cfg);
    const double ratio = pinning_summary(coarse, uniform_params()).mean_state_gap /
                         pinning_summary(fine, uniform_params()).mean_state_gap;
    EXPECT_GE(ratio, 1.2) << seed;
    EXPECT_LE(ratio, 1.7) << seed;
    const double wr = wealth_decomposition(coarse, uniform_params()).mean_gap /
                      wealth_decomposition(fine, uniform_params()).mean_gap;
    EXPECT_GE(wr, 1.5) << seed;
    EXPECT_LE(wr, 2.6) << seed;
  }
}
