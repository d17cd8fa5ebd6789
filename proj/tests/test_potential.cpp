#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "kyleback/potential.hpp"

using namespace kyleback;

namespace {

const XiGrid kGrid{4.0, 401};

ConvexPotential smooth_potential() {
  // g = 2 + 1.5 tanh(xi): increasing, slope at most 1.5.
  return ConvexPotential::from_function(kGrid, [](double x) { return 2.0 + 1.5 * std::tanh(x); }, 4.0);
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(XiGrid, StandardGridAndNodes) {
  const ModelParams p{};
  const auto g = XiGrid::standard(p);
  EXPECT_DOUBLE_EQ(g.halfwidth, 4.0);
  EXPECT_EQ(g.nodes, 2049u);
  EXPECT_EQ(g.center(), 1024u);
  EXPECT_EQ(g.xi(g.center()), 0.0);
  EXPECT_NEAR(g.xi(0), -4.0, 1e-14);
  EXPECT_NEAR(g.xi(2048), 4.0, 1e-14);
  EXPECT_NEAR(g.h(), 8.0 / 2048.0, 1e-16);
  EXPECT_THROW((XiGrid{1.0, 4}.validate()), DomainError);
  EXPECT_THROW((XiGrid{0.0, 5}.validate()), DomainError);
}

TEST(ConvexPotential, LinearMapHasQuadraticPotential) {
  const double lam = 1.9, m = -0.4;
  const auto pot = ConvexPotential::from_function(kGrid, [&](double x) { return lam * x + m; }, 4.0);
  for (double x = -6.0; x <= 6.0; x += 0.173) {
    EXPECT_NEAR(pot.eval_g(x), lam * x + m, 1e-12) << x;
    EXPECT_NEAR(pot.eval_phi(x), 0.5 * lam * x * x + m * x, 1e-11) << x;
    EXPECT_NEAR(pot.eval_g_prime(x), lam, 1e-11);
  }
  EXPECT_EQ(pot.eval_phi(0.0), 0.0);
  EXPECT_NEAR(pot.max_slope(), lam, 1e-12);
}

TEST(ConvexPotential, PhiDerivativeIsG) {
  const auto pot = smooth_potential();
  const double d = 1e-6;
  for (double x = -5.0; x <= 5.0; x += 0.0917) {
    const double fd = (pot.eval_phi(x + d) - pot.eval_phi(x - d)) / (2 * d);
    EXPECT_NEAR(fd, pot.eval_g(x), 1e-7) << x;
  }
  // phi is convex: midpoint below the chord.
  for (double a = -5.0; a < 5.0; a += 0.37) {
    const double b = a + 1.3;
    EXPECT_LE(pot.eval_phi(0.5 * (a + b)), 0.5 * (pot.eval_phi(a) + pot.eval_phi(b)) + 1e-14);
  }
}

TEST(ConvexPotential, InterpolatesNodesAndExtrapolatesLinearly) {
  const auto pot = smooth_potential();
  for (std::size_t i = 0; i < kGrid.nodes; i += 13) EXPECT_DOUBLE_EQ(pot.eval_g(kGrid.xi(i)), pot.g_nodes()[i]);
  const double s_hi = (pot.g_nodes()[400] - pot.g_nodes()[399]) / kGrid.h();
  EXPECT_NEAR(pot.eval_g(6.0), pot.g_nodes().back() + s_hi * 2.0, 1e-14);
  const double s_lo = (pot.g_nodes()[1] - pot.g_nodes()[0]) / kGrid.h();
  EXPECT_NEAR(pot.eval_g_prime(-9.0), s_lo, 1e-15);
}

TEST(ConvexPotential, InverseGRoundTrip) {
  const auto pot = smooth_potential();
  for (double x = -3.9; x <= 3.9; x += 0.05) EXPECT_NEAR(pot.inverse_g(pot.eval_g(x)), x, 1e-9);
  EXPECT_TRUE(pot.in_open_range(2.0));
  EXPECT_FALSE(pot.in_open_range(pot.g_nodes().back()));
  EXPECT_THROW(static_cast<void>(pot.inverse_g(10.0)), DomainError);
  // Flat stretch: left end.
  std::vector<double> g(kGrid.nodes);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::max(0.0, kGrid.xi(i) - 1.0) + std::min(0.0, kGrid.xi(i) + 1.0);
  const ConvexPotential flat(kGrid, g, 4.0);
  EXPECT_NEAR(flat.inverse_g(0.0), -1.0, 1e-12);
}

TEST(ConvexPotential, ShiftAndCenter) {
  const auto pot = smooth_potential();
  const auto c = pot.centered();
  EXPECT_EQ(c.g_at_zero(), 0.0);
  const auto s = c.shifted(pot.g_at_zero());
  for (std::size_t i = 0; i < kGrid.nodes; ++i) EXPECT_NEAR(s.g_nodes()[i], pot.g_nodes()[i], 1e-15);
  // phi shifts by c xi.
  for (double x = -3.0; x <= 3.0; x += 0.5) EXPECT_NEAR(pot.shifted(0.7).eval_phi(x), pot.eval_phi(x) + 0.7 * x, 1e-12);
}

TEST(ConvexPotential, RejectsInadmissibleMaps) {
  std::vector<double> dec(kGrid.nodes);
  for (std::size_t i = 0; i < dec.size(); ++i) dec[i] = -kGrid.xi(i);
  EXPECT_THROW(ConvexPotential(kGrid, dec, 4.0), DomainError);
  std::vector<double> steep(kGrid.nodes);
  for (std::size_t i = 0; i < steep.size(); ++i) steep[i] = 5.0 * kGrid.xi(i);
  EXPECT_THROW(ConvexPotential(kGrid, steep, 4.0), BudgetViolation);
  EXPECT_THROW(ConvexPotential(kGrid, std::vector<double>(3, 0.0), 4.0), DomainError);
  std::vector<double> bad(kGrid.nodes, 0.0);
  bad[7] = std::nan("");
  EXPECT_THROW(ConvexPotential(kGrid, bad, 4.0), DomainError);
}

TEST(ConvexPotential, CsvRoundTripIsExact) {
  const auto pot = smooth_potential();
  const auto path = temp_path("kyleback_potential_roundtrip.csv");
  pot.write_csv(path);
  const auto back = ConvexPotential::read_csv(path, 4.0);
  ASSERT_EQ(back.size(), pot.size());
  for (std::size_t i = 0; i < pot.size(); ++i) EXPECT_EQ(back.g_nodes()[i], pot.g_nodes()[i]);
  EXPECT_NEAR(back.grid().halfwidth, kGrid.halfwidth, 1e-14);
  std::remove(path.c_str());
}

TEST(ConvexPotential, CsvReaderIgnoresExtraColumnsAndRejectsGarbage) {
  const auto path = temp_path("kyleback_potential_extra.csv");
  {
    std::ofstream out(path);
    out << "xi,g,slope\n";
    for (int i = -2; i <= 2; ++i) out << i * 0.5 << ',' << i << ",2\n";
  }
  const auto pot = ConvexPotential::read_csv(path, 4.0);
  EXPECT_EQ(pot.size(), 5u);
  EXPECT_DOUBLE_EQ(pot.eval_g(0.25), 0.5);
  {
    std::ofstream out(path);
    out << "xi,g\n0,abc\n";
  }
  EXPECT_THROW(ConvexPotential::read_csv(path, 4.0), DomainError);
  {
    std::ofstream out(path);
    out << "xi,g\n-1,0\n-0.3,0\n0,0\n0.5,0\n1,0\n";
  }
  EXPECT_THROW(ConvexPotential::read_csv(path, 4.0), DomainError);
  std::remove(path.c_str());
  EXPECT_THROW(ConvexPotential::read_csv(path, 4.0), Error);
}
