#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "kyleback/equilibrium.hpp"

using namespace kyleback;

namespace {

const ModelParams kLinearParams{1.0, 0.5, 0.1, 4.0};
constexpr double kLam = 1.9506249024, kM = 1.0;

const ConvexPotential& affine_potential() {
  static const ConvexPotential pot = ConvexPotential::from_function(
      XiGrid::standard(kLinearParams), [](double x) { return kLam * x + kM; }, kLinearParams.l_cap);
  return pot;
}

const PricingSurface& affine_surface() {
  static const PricingSurface s = build_surface(affine_potential(), kLinearParams);
  return s;
}

ModelParams uniform_params() {
  ModelParams p{1.0, 0.5, 0.1, 0.0};
  p.l_cap = belief_slope_cap(BeliefDistribution::uniform(10.0, 20.0), p.T, p.sigma);
  return p;
}

const FixedPointResult& uniform_solution() {
  static const FixedPointResult r = picard_solve(BeliefDistribution::uniform(10.0, 20.0), uniform_params());
  return r;
}

const PricingSurface& uniform_surface() {
  static const PricingSurface s = build_surface(uniform_solution().potential, uniform_params());
  return s;
}

double normal_density(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

// Variance of a driftless diffusion with volatility sigma / (1 - b (T - s)).
double affine_variance(double r, double t) {
  const auto& p = kLinearParams;
  const double b = p.gamma * p.sigma * p.sigma * kLam;
  const double fr = 1.0 - b * (p.T - r), ft = 1.0 - b * (p.T - t);
  return p.sigma * p.sigma / b * (1.0 / fr - 1.0 / ft);
}

}  // namespace

TEST(TransitionDensity, AffineMapGivesGaussianKernel) {
  const auto& s = affine_surface();
  for (auto [r, x, t] : {std::tuple{0.0, 0.0, 0.5}, {0.2, -0.7, 0.9}, {0.5, 1.1, 1.0}, {0.0, 0.3, 1.0}}) {
    const double var = affine_variance(r, t);
    for (double y = x - 2.0; y <= x + 2.0; y += 0.1) {
      const double want = normal_density(y, x, var);
      EXPECT_NEAR(transition_density(s, r, x, t, y), want, 1e-6 * std::max(want, 1.0)) << r << ' ' << x << ' ' << t << ' ' << y;
    }
  }
}

TEST(TransitionDensity, NormalizedOnUniformSurface) {
  const auto& s = uniform_surface();
  for (auto [r, x] : {std::pair{0.0, 0.0}, {0.3, 0.8}, {0.6, -1.2}}) {
    for (std::size_t j : {s.nt / 2, s.nt - 1}) {
      if (s.t[j] <= r) continue;
      const auto row = transition_density_row(s, r, x, j);
      EXPECT_NEAR(trapezoid(row, s.grid.h()), 1.0, 1e-5) << "r=" << r << " t=" << s.t[j];
      for (double v : row) EXPECT_GE(v, 0.0);
    }
  }
}

TEST(TransitionDensity, ChapmanKolmogorov) {
  const auto& s = uniform_surface();
  const double r = 0.1, x = 0.4;
  const std::size_t jm = s.nt / 2;
  const auto mid = transition_density_row(s, r, x, jm);
  for (double y : {-1.0, 0.0, 0.5, 1.7}) {
    std::vector<double> prod(s.nx);
    for (std::size_t i = 0; i < s.nx; ++i) prod[i] = mid[i] * transition_density(s, s.t[jm], s.xi(i), 1.0, y);
    const double direct = transition_density(s, r, x, 1.0, y);
    EXPECT_NEAR(trapezoid(prod, s.grid.h()), direct, 1e-5 * std::max(direct, 1.0)) << "y=" << y;
  }
}

TEST(TransitionDensity, RejectsBadTimes) {
  const auto& s = affine_surface();
  EXPECT_THROW(transition_density(s, 0.5, 0.0, 0.5, 0.0), DomainError);
  EXPECT_THROW(transition_density(s, 0.6, 0.0, 0.5, 0.0), DomainError);
  EXPECT_THROW(transition_density(s, 0.0, 0.0, 1.5, 0.0), DomainError);
  EXPECT_THROW(transition_density(s, -0.1, 0.0, 0.5, 0.0), DomainError);
}

TEST(ConditionalValue, InitialLawIsThePrior) {
  const auto nu = BeliefDistribution::uniform(10.0, 20.0);
  const auto cv = conditional_value_cdf(uniform_surface(), uniform_solution().potential, nu, 0.0, 0.0);
  double gap = 0.0;
  for (double v = 10.0; v <= 20.0; v += 0.05) gap = std::max(gap, std::abs(cv.cdf(v) - nu.cdf(v)));
  EXPECT_LE(gap, 1e-4);
  EXPECT_NEAR(cv.median(), 15.0, 1e-3);
  EXPECT_NEAR(cv.iqr(), 5.0, 2e-3);
}

TEST(ConditionalValue, MeanIsThePriceAndMedianIncreasing) {
  const auto nu = BeliefDistribution::uniform(10.0, 20.0);
  const auto& s = uniform_surface();
  const auto& pot = uniform_solution().potential;
  double prev = -1.0;
  for (double x : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    const auto cv = conditional_value_cdf(s, pot, nu, 0.5, x);
    EXPECT_NEAR(cv.mean, s.interp(s.P, 0.5, x), 1e-4) << x;
    EXPECT_GT(cv.median(), prev);
    prev = cv.median();
    EXPECT_GE(cv.quantile(0.01), 10.0);
    EXPECT_LE(cv.quantile(0.99), 20.0);
  }
  // Information accumulates: the law concentrates as t approaches T.
  const double early = conditional_value_cdf(s, pot, nu, 0.1, 0.0).iqr();
  const double late = conditional_value_cdf(s, pot, nu, 0.9, 0.0).iqr();
  EXPECT_LT(late, early);
  EXPECT_THROW(conditional_value_cdf(s, pot, nu, 1.0, 0.0), DomainError);
}

TEST(InsiderDrift, SimplifiedMatchesLogDensityGradient) {
  const auto& s = uniform_surface();
  const auto& pot = uniform_solution().potential;
  for (double v : {11.0, 13.5, 15.0, 17.2, 19.0})
    for (double t : {0.0, 0.4, 0.8})
      for (double x : {-0.8, 0.0, 0.6}) {
        const double a = insider_drift(s, pot, v, t, x);
        const double b = insider_drift_unsimplified(s, pot, v, t, x);
        EXPECT_NEAR(a, b, 1e-3 * std::max(1.0, std::abs(a))) << v << ' ' << t << ' ' << x;
      }
  EXPECT_THROW(insider_drift(s, pot, 15.0, 1.0, 0.0), DomainError);
}

TEST(InsiderDrift, AffineMapClosedForm) {
  const auto& s = affine_surface();
  for (double v : {-1.0, 1.0, 3.0}) {
    const double target = (v - kM) / kLam;
    EXPECT_NEAR(insider_drift(s, affine_potential(), v, 0.25, 0.1), (target - 0.1) / 0.75, 1e-10);
  }
}

TEST(ImpactAndDepth, AffineMapClosedForms) {
  const auto rep = impact_and_depth(affine_surface());
  const auto& p = kLinearParams;
  const double gs2 = p.gamma * p.sigma * p.sigma;
  for (std::size_t j = 0; j < rep.nt; j += 37)
    for (std::size_t i = 100; i < rep.nx - 100; i += 211) {
      const double f = 1.0 - gs2 * kLam * (p.T - rep.t[j]);
      EXPECT_NEAR(rep.lambda[rep.idx(j, i)], kLam / f, 1e-8);
      EXPECT_NEAR(rep.zeta[rep.idx(j, i)], f / kLam, 1e-8);
      EXPECT_NEAR(rep.k_diagonal[rep.idx(j, i)], 1.0 / f, 1e-8);
      EXPECT_NEAR(rep.lambda_drift[rep.idx(j, i)], -gs2 * kLam * kLam / (f * f), 1e-6);
      EXPECT_NEAR(rep.zeta_drift[rep.idx(j, i)], gs2, 1e-8);
    }
}

TEST(ImpactAndDepth, DepthRisesAndImpactFallsOnUniformSurface) {
  const auto rep = impact_and_depth(uniform_surface());
  EXPECT_GE(rep.min_zeta_drift(), 0.0);
  EXPECT_LE(rep.max_lambda_drift(), 0.0);
}

TEST(Utility, ConjugateOfAffineMap) {
  const auto& pot = affine_potential();
  for (double v : {-2.0, 0.0, 1.0, 4.5}) {
    const auto c = legendre_conjugate(pot, v);
    EXPECT_FALSE(c.clamped);
    EXPECT_NEAR(c.value, (v - kM) * (v - kM) / (2.0 * kLam), 1e-10);
    EXPECT_NEAR(c.argmax, (v - kM) / kLam, 1e-12);
  }
  const auto& bounded = uniform_solution().potential;
  EXPECT_TRUE(legendre_conjugate(bounded, 25.0).clamped);
  EXPECT_FALSE(legendre_conjugate(bounded, 15.0).clamped);
}

// Linear equilibrium: the exponent collapses to
// -gamma A(0) - gamma (v - m)^2 (1/lambda - gamma sigma^2 T) / 2.
TEST(Utility, AffineMapClosedForm) {
  const auto& p = kLinearParams;
  const auto& pot = affine_potential();
  const auto rep = solve_representation(pot, p);
  const double b = p.gamma * p.sigma * p.sigma * kLam;
  const double A0 = -std::log(1.0 - b * p.T) / (2.0 * p.gamma);
  for (double v : {-1.0, 0.0, 1.0, 2.5, 3.0}) {
    const double want =
        -std::exp(-p.gamma * A0 - 0.5 * p.gamma * (v - kM) * (v - kM) * (1.0 / kLam - p.gamma * p.sigma * p.sigma * p.T));
    const auto u = expected_utility(pot, rep, p, v);
    EXPECT_FALSE(u.clamped);
    EXPECT_NEAR(u.value / want, 1.0, 1e-7) << v;
  }
}

TEST(ImpactKernel, AffineMapAlongAnyPath) {
  const auto& s = affine_surface();
  const auto& p = kLinearParams;
  std::vector<double> times, path;
  for (int k = 0; k <= 4000; ++k) {
    const double u = k / 4000.0;
    times.push_back(u);
    path.push_back(0.8 * std::sin(7.0 * u) - 0.3);
  }
  const double b = p.gamma * p.sigma * p.sigma * kLam;
  for (auto [r, t] : {std::pair{0.0, 0.5}, {0.25, 0.75}, {0.6, 1.0}, {0.4, 0.4}}) {
    EXPECT_NEAR(impact_kernel_K(s, times, path, r, t), 1.0 / (1.0 - b * (p.T - r)), 1e-8) << r << ' ' << t;
  }
  EXPECT_THROW(impact_kernel_K(s, times, path, 0.5, 0.4), DomainError);
}

TEST(GaussianBenchmark, SlopeSolvesVarianceMatch) {
  const ModelParams p{1.0, 0.5, 0.1, 4.0};
  const auto g = gaussian_benchmark(p, 1.0, 1.0);
  EXPECT_NEAR(g.lambda, kLam, 1e-9);
  const LinearSurface ls{p, g.lambda, g.m};
  // The terminal law of g(xi_T) = lambda xi_T + m is N(m, Sigma^2).
  EXPECT_NEAR(g.lambda * g.lambda * ls.terminal_variance(), 1.0, 1e-12);
  EXPECT_THROW(gaussian_benchmark(p, 0.0, 0.0), DomainError);
}
