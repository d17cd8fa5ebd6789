#pragma once

// The market maker's prior on the liquidation value.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "kyleback/errors.hpp"
#include "kyleback/numerics.hpp"

namespace kyleback {

struct GaussianBelief {
  double mean = 0.0;
  double stdev = 1.0;
};

struct UniformBelief {
  double a = 0.0;
  double b = 1.0;
};

/// Lognormal law conditioned on [lo, hi].
struct TruncatedLognormalBelief {
  double mu_log = 0.0;
  double sigma_log = 1.0;
  double lo = 0.0;
  double hi = 1.0;
};

/// Density values on an increasing grid, linear in between; renormalized on
/// construction.
struct TabulatedBelief {
  std::vector<double> grid;
  std::vector<double> density;
};

class BeliefDistribution {
 public:
  using Kind = std::variant<GaussianBelief, UniformBelief, TruncatedLognormalBelief, TabulatedBelief>;

  BeliefDistribution() : BeliefDistribution(GaussianBelief{}) {}

  explicit BeliefDistribution(Kind kind) : kind_(std::move(kind)) { init(); }

  static BeliefDistribution gaussian(double mean, double stdev) {
    return BeliefDistribution(GaussianBelief{mean, stdev});
  }
  static BeliefDistribution uniform(double a, double b) { return BeliefDistribution(UniformBelief{a, b}); }
  static BeliefDistribution truncated_lognormal(double mu_log, double sigma_log, double lo, double hi) {
    return BeliefDistribution(TruncatedLognormalBelief{mu_log, sigma_log, lo, hi});
  }
  static BeliefDistribution tabulated(std::vector<double> grid, std::vector<double> density) {
    return BeliefDistribution(TabulatedBelief{std::move(grid), std::move(density)});
  }

  [[nodiscard]] const Kind& kind() const noexcept { return kind_; }

  [[nodiscard]] std::string kind_name() const {
    return std::visit(
        [](const auto& k) -> std::string {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, GaussianBelief>) return "gaussian";
          else if constexpr (std::is_same_v<K, UniformBelief>) return "uniform";
          else if constexpr (std::is_same_v<K, TruncatedLognormalBelief>) return "truncated_lognormal";
          else return "tabulated";
        },
        kind_);
  }

  [[nodiscard]] bool is_gaussian() const noexcept { return std::holds_alternative<GaussianBelief>(kind_); }

  /// (lo, hi); infinite for the gaussian kind.
  [[nodiscard]] std::pair<double, double> support() const noexcept { return support_; }

  /// Strong-convexity modulus of -ln p. Zero for the compact kinds.
  [[nodiscard]] double kappa() const noexcept {
    if (const auto* g = std::get_if<GaussianBelief>(&kind_)) return 1.0 / (g->stdev * g->stdev);
    return 0.0;
  }

  /// The truncated lognormal does not satisfy the log-concavity or
  /// lower-bounded-density assumptions the existence theory rests on.
  [[nodiscard]] bool assumption_violating() const noexcept {
    return std::holds_alternative<TruncatedLognormalBelief>(kind_);
  }

  /// inf of the density over the support (0 for the gaussian kind).
  [[nodiscard]] double density_lower_bound() const noexcept { return density_floor_; }

  [[nodiscard]] double cdf(double v) const {
    return std::visit([&](const auto& k) { return cdf_impl(k, v); }, kind_);
  }

  /// 1 - cdf(v), computed without cancellation in the upper tail.
  [[nodiscard]] double sf(double v) const {
    if (const auto* g = std::get_if<GaussianBelief>(&kind_)) return normal_sf((v - g->mean) / g->stdev);
    return 1.0 - cdf(v);
  }

  [[nodiscard]] double density(double v) const {
    return std::visit([&](const auto& k) { return density_impl(k, v); }, kind_);
  }

  [[nodiscard]] double quantile(double u) const {
    check_level(u, "quantile");
    return std::visit([&](const auto& k) { return quantile_impl(k, u); }, kind_);
  }

  /// The v with sf(v) = q; the accurate branch for levels close to one.
  [[nodiscard]] double quantile_upper(double q) const {
    check_level(q, "quantile_upper");
    return std::visit([&](const auto& k) { return quantile_upper_impl(k, q); }, kind_);
  }

  [[nodiscard]] double mean() const noexcept { return mean_; }
  [[nodiscard]] double variance() const noexcept { return variance_; }
  [[nodiscard]] double median() const { return quantile(0.5); }

 private:
  static void check_level(double u, const char* what) {
    if (!(u > 0.0 && u < 1.0)) {
      std::ostringstream os;
      os << "belief " << what << ": level " << u << " outside (0,1)";
      throw DomainError(os.str());
    }
  }

  // gaussian ---------------------------------------------------------------
  static double cdf_impl(const GaussianBelief& g, double v) { return normal_cdf((v - g.mean) / g.stdev); }
  static double density_impl(const GaussianBelief& g, double v) {
    return normal_pdf((v - g.mean) / g.stdev) / g.stdev;
  }
  static double quantile_impl(const GaussianBelief& g, double u) { return g.mean + g.stdev * normal_quantile(u); }
  static double quantile_upper_impl(const GaussianBelief& g, double q) {
    return g.mean + g.stdev * normal_quantile_upper(q);
  }

  // uniform ----------------------------------------------------------------
  static double cdf_impl(const UniformBelief& b, double v) {
    if (v <= b.a) return 0.0;
    if (v >= b.b) return 1.0;
    return (v - b.a) / (b.b - b.a);
  }
  static double density_impl(const UniformBelief& b, double v) {
    return (v >= b.a && v <= b.b) ? 1.0 / (b.b - b.a) : 0.0;
  }
  static double quantile_impl(const UniformBelief& b, double u) { return b.a + (b.b - b.a) * u; }
  static double quantile_upper_impl(const UniformBelief& b, double q) { return b.b - (b.b - b.a) * q; }

  // truncated lognormal ----------------------------------------------------
  [[nodiscard]] double cdf_impl(const TruncatedLognormalBelief& b, double v) const {
    if (v <= b.lo) return 0.0;
    if (v >= b.hi) return 1.0;
    const double z = (std::log(v) - b.mu_log) / b.sigma_log;
    return std::clamp((normal_cdf(z) - phi_lo_) / mass_, 0.0, 1.0);
  }
  [[nodiscard]] double density_impl(const TruncatedLognormalBelief& b, double v) const {
    if (v < b.lo || v > b.hi) return 0.0;
    const double z = (std::log(v) - b.mu_log) / b.sigma_log;
    return normal_pdf(z) / (v * b.sigma_log * mass_);
  }
  [[nodiscard]] double quantile_impl(const TruncatedLognormalBelief& b, double u) const {
    const double p = phi_lo_ + u * mass_;
    const double z = p < 0.5 ? normal_quantile(p) : normal_quantile_upper(sf_hi_ + (1.0 - u) * mass_);
    return std::clamp(std::exp(b.mu_log + b.sigma_log * z), b.lo, b.hi);
  }
  [[nodiscard]] double quantile_upper_impl(const TruncatedLognormalBelief& b, double q) const {
    const double tail = sf_hi_ + q * mass_;
    const double z = tail < 0.5 ? normal_quantile_upper(tail) : normal_quantile(phi_lo_ + (1.0 - q) * mass_);
    return std::clamp(std::exp(b.mu_log + b.sigma_log * z), b.lo, b.hi);
  }

  // tabulated --------------------------------------------------------------
  [[nodiscard]] double cdf_impl(const TabulatedBelief& t, double v) const {
    if (v <= t.grid.front()) return 0.0;
    if (v >= t.grid.back()) return 1.0;
    const std::size_t k = tab_cell(t, v);
    const double h = t.grid[k + 1] - t.grid[k], d = v - t.grid[k];
    const double f0 = t.density[k], f1 = t.density[k + 1];
    return std::min(1.0, tab_F_[k] + f0 * d + 0.5 * (f1 - f0) * d * d / h);
  }
  [[nodiscard]] double density_impl(const TabulatedBelief& t, double v) const {
    if (v < t.grid.front() || v > t.grid.back()) return 0.0;
    if (v == t.grid.back()) return t.density.back();
    const std::size_t k = tab_cell(t, v);
    const double w = (v - t.grid[k]) / (t.grid[k + 1] - t.grid[k]);
    return (1.0 - w) * t.density[k] + w * t.density[k + 1];
  }
  // Smallest v with cdf(v) = u: a quadratic root inside the first cell that
  // reaches u.
  [[nodiscard]] double quantile_impl(const TabulatedBelief& t, double u) const {
    const auto it = std::lower_bound(tab_F_.begin(), tab_F_.end(), u);
    const auto j = static_cast<std::size_t>(it - tab_F_.begin());
    if (j < tab_F_.size() && tab_F_[j] == u) return t.grid[j];
    const std::size_t k = j - 1;
    const double h = t.grid[k + 1] - t.grid[k];
    const double f0 = t.density[k], a = 0.5 * (t.density[k + 1] - f0) / h, r = u - tab_F_[k];
    const double d = 2.0 * r / (f0 + std::sqrt(std::max(0.0, f0 * f0 + 4.0 * a * r)));
    return std::clamp(t.grid[k] + d, t.grid[k], t.grid[k + 1]);
  }
  [[nodiscard]] double quantile_upper_impl(const TabulatedBelief& t, double q) const {
    return quantile_impl(t, 1.0 - q);
  }
  static std::size_t tab_cell(const TabulatedBelief& t, double v) {
    const auto it = std::upper_bound(t.grid.begin(), t.grid.end(), v);
    return std::min(static_cast<std::size_t>(it - t.grid.begin()) - 1, t.grid.size() - 2);
  }

  void init() {
    std::visit([this](auto& k) { init_kind(k); }, kind_);
  }

  void init_kind(const GaussianBelief& g) {
    if (!(g.stdev > 0.0) || !std::isfinite(g.mean)) throw DomainError("gaussian belief: stdev must be positive");
    support_ = {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    mean_ = g.mean;
    variance_ = g.stdev * g.stdev;
    density_floor_ = 0.0;
  }

  void init_kind(const UniformBelief& b) {
    if (!(b.b > b.a)) throw DomainError("uniform belief: need a < b");
    support_ = {b.a, b.b};
    mean_ = 0.5 * (b.a + b.b);
    variance_ = (b.b - b.a) * (b.b - b.a) / 12.0;
    density_floor_ = 1.0 / (b.b - b.a);
  }

  void init_kind(const TruncatedLognormalBelief& b) {
    if (!(b.sigma_log > 0.0) || !(b.lo > 0.0) || !(b.hi > b.lo))
      throw DomainError("truncated_lognormal belief: need sigma_log > 0 and 0 < lo < hi");
    support_ = {b.lo, b.hi};
    const double zlo = (std::log(b.lo) - b.mu_log) / b.sigma_log;
    const double zhi = (std::log(b.hi) - b.mu_log) / b.sigma_log;
    phi_lo_ = normal_cdf(zlo);
    sf_hi_ = normal_sf(zhi);
    mass_ = 1.0 - phi_lo_ - sf_hi_;
    if (!(mass_ > 0.0)) throw DomainError("truncated_lognormal belief: no mass on [lo, hi]");
    // E[X^k] for the truncated law.
    auto raw_moment = [&](int k) {
      const double s = b.sigma_log;
      return std::exp(k * b.mu_log + 0.5 * k * k * s * s) *
             (normal_cdf(zhi - k * s) - normal_cdf(zlo - k * s)) / mass_;
    };
    mean_ = raw_moment(1);
    variance_ = raw_moment(2) - mean_ * mean_;
    // The lognormal density is unimodal, so its infimum on [lo, hi] sits at an end.
    density_floor_ = std::min(density_impl(b, b.lo), density_impl(b, b.hi));
  }

  void init_kind(TabulatedBelief& t) {
    if (t.grid.size() != t.density.size() || t.grid.size() < 3)
      throw DomainError("tabulated belief: need at least three (v, density) pairs");
    for (std::size_t i = 0; i < t.grid.size(); ++i) {
      if (i > 0 && !(t.grid[i] > t.grid[i - 1]))
        throw DomainError("tabulated belief: grid must be strictly increasing");
      if (!(t.density[i] >= 0.0) || !std::isfinite(t.density[i]))
        throw DomainError("tabulated belief: density values must be finite and nonnegative");
    }
    const std::size_t n = t.grid.size();
    std::vector<double> cdf(n, 0.0);
    for (std::size_t i = 1; i < n; ++i)
      cdf[i] = cdf[i - 1] + 0.5 * (t.grid[i] - t.grid[i - 1]) * (t.density[i] + t.density[i - 1]);
    const double total = cdf.back();
    if (!(total > 0.0)) throw DomainError("tabulated belief: density has zero mass");
    for (auto& c : cdf) c /= total;
    cdf.back() = 1.0;
    for (auto& d : t.density) d /= total;
    tab_F_ = std::move(cdf);
    support_ = {t.grid.front(), t.grid.back()};
    // Simpson is exact for v f and v^2 f with f linear on each cell.
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      const double x0 = t.grid[i - 1], x1 = t.grid[i], xm = 0.5 * (x0 + x1);
      const double f0 = t.density[i - 1], f1 = t.density[i], fm = 0.5 * (f0 + f1);
      const double w = (x1 - x0) / 6.0;
      m1 += w * (x0 * f0 + 4.0 * xm * fm + x1 * f1);
      m2 += w * (x0 * x0 * f0 + 4.0 * xm * xm * fm + x1 * x1 * f1);
    }
    mean_ = m1;
    variance_ = m2 - m1 * m1;
    density_floor_ = *std::min_element(t.density.begin(), t.density.end());
  }

  Kind kind_;
  std::pair<double, double> support_{};
  double mean_ = 0.0, variance_ = 0.0, density_floor_ = 0.0;
  double phi_lo_ = 0.0, sf_hi_ = 0.0, mass_ = 1.0;
  std::vector<double> tab_F_;  ///< cdf at the tabulated nodes
};

inline double belief_cdf(const BeliefDistribution& nu, double v) { return nu.cdf(v); }
inline double belief_quantile(const BeliefDistribution& nu, double u) { return nu.quantile(u); }

/// Admissible Lipschitz cap for the Brenier map.
///
/// Gaussian: 2 / sqrt(kappa sigma^2 T). Compact support: the map's slope is
/// f / p_nu(g), and any density whose log has second derivative at least
/// -1/(sigma^2 T) is bounded by 1/sqrt(2 pi sigma^2 T), which gives
/// 1 / (sqrt(2 pi sigma^2 T) inf p_nu).
inline double belief_slope_cap(const BeliefDistribution& nu, double T, double sigma) {
  const double s2 = sigma * sigma * T;
  if (nu.kappa() > 0.0) return 2.0 / std::sqrt(nu.kappa() * s2);
  const double floor = nu.density_lower_bound();
  if (!(floor > 0.0)) return std::numeric_limits<double>::infinity();
  return 1.0 / (std::sqrt(2.0 * std::numbers::pi * s2) * floor);
}

/// Risk-aversion bound below which the gaussian branch of the existence
/// result applies: sqrt(kappa) / (4 sqrt(T sigma^2)). Zero for compact kinds.
inline double belief_gamma0(const BeliefDistribution& nu, double T, double sigma) {
  if (nu.kappa() <= 0.0) return 0.0;
  return std::sqrt(nu.kappa()) / (4.0 * std::sqrt(T * sigma * sigma));
}

}  // namespace kyleback
