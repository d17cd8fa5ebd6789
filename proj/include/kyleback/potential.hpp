#pragma once

// Convex potentials phi on a uniform grid, carried by their derivative g.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "kyleback/errors.hpp"
#include "kyleback/model.hpp"
#include "kyleback/numerics.hpp"

namespace kyleback {

/// Uniform grid on [-halfwidth, halfwidth] with an odd node count, so that
/// xi = 0 is the middle node.
struct XiGrid {
  double halfwidth = 4.0;
  std::size_t nodes = 2049;

  static XiGrid standard(const ModelParams& p, std::size_t nodes = 2049) {
    return XiGrid{8.0 * p.sigma * std::sqrt(p.T), nodes};
  }

  [[nodiscard]] double h() const noexcept { return 2.0 * halfwidth / static_cast<double>(nodes - 1); }
  [[nodiscard]] std::size_t center() const noexcept { return (nodes - 1) / 2; }
  [[nodiscard]] double xi(std::size_t i) const noexcept {
    const auto c = static_cast<double>(center());
    return (static_cast<double>(i) - c) * h();
  }
  [[nodiscard]] std::vector<double> points() const {
    std::vector<double> out(nodes);
    for (std::size_t i = 0; i < nodes; ++i) out[i] = xi(i);
    return out;
  }

  void validate() const {
    if (nodes < 5 || nodes % 2 == 0) throw DomainError("xi grid: node count must be odd and at least 5");
    if (!(halfwidth > 0.0)) throw DomainError("xi grid: halfwidth must be positive");
  }
};

/// Largest finite-difference slope (g[i+1]-g[i])/h.
inline double max_slope(const std::vector<double>& g, double h) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < g.size(); ++i) m = std::max(m, (g[i + 1] - g[i]) / h);
  return m;
}

inline double min_slope(const std::vector<double>& g, double h) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < g.size(); ++i) m = std::min(m, (g[i + 1] - g[i]) / h);
  return m;
}

inline constexpr double kSlopeTolerance = 1e-9;

/// phi with phi(0) = 0 and phi' = g, where g is the piecewise-linear
/// interpolant of its node values. phi is then piecewise quadratic and its
/// node values are the cumulative trapezoid sums of g. Outside the grid g
/// continues linearly with the boundary slope clamped to [0, l_cap].
class ConvexPotential {
 public:
  ConvexPotential() = default;

  ConvexPotential(XiGrid grid, std::vector<double> g, double l_cap)
      : grid_(grid), g_(std::move(g)), l_cap_(l_cap) {
    grid_.validate();
    if (g_.size() != grid_.nodes) throw DomainError("potential: g size does not match the grid");
    for (double v : g_)
      if (!std::isfinite(v)) throw DomainError("potential: non-finite g value");
    if (!(l_cap_ > 0.0)) throw DomainError("potential: l_cap must be positive");
    const double h = grid_.h();
    const double lo = kyleback::min_slope(g_, h);
    if (lo < 0.0) {
      std::ostringstream os;
      os << "potential: g decreasing (min slope " << lo << ")";
      throw DomainError(os.str());
    }
    const double hi = kyleback::max_slope(g_, h);
    if (hi > l_cap_ + kSlopeTolerance) {
      std::ostringstream os;
      os << "potential: slope " << hi << " exceeds l_cap " << l_cap_;
      throw BudgetViolation(os.str());
    }
    phi_ = cumulative_trapezoid(g_, h, grid_.center());
    slope_lo_ = std::clamp((g_[1] - g_[0]) / h, 0.0, l_cap_);
    slope_hi_ = std::clamp((g_[g_.size() - 1] - g_[g_.size() - 2]) / h, 0.0, l_cap_);
  }

  template <class F>
  static ConvexPotential from_function(XiGrid grid, F&& f, double l_cap) {
    grid.validate();
    std::vector<double> g(grid.nodes);
    for (std::size_t i = 0; i < grid.nodes; ++i) g[i] = f(grid.xi(i));
    return ConvexPotential(grid, std::move(g), l_cap);
  }

  static ConvexPotential zero(XiGrid grid, double l_cap) {
    grid.validate();
    return ConvexPotential(grid, std::vector<double>(grid.nodes, 0.0), l_cap);
  }

  [[nodiscard]] const XiGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] std::size_t size() const noexcept { return g_.size(); }
  [[nodiscard]] double h() const noexcept { return grid_.h(); }
  [[nodiscard]] double xi(std::size_t i) const noexcept { return grid_.xi(i); }
  [[nodiscard]] const std::vector<double>& g_nodes() const noexcept { return g_; }
  [[nodiscard]] const std::vector<double>& phi_nodes() const noexcept { return phi_; }
  [[nodiscard]] double l_cap() const noexcept { return l_cap_; }
  [[nodiscard]] double g_at_zero() const noexcept { return g_[grid_.center()]; }

  /// Slope of g on the interval [xi_i, xi_{i+1}].
  [[nodiscard]] double interval_slope(std::size_t i) const noexcept { return (g_[i + 1] - g_[i]) / h(); }

  [[nodiscard]] double max_slope() const noexcept { return kyleback::max_slope(g_, h()); }

  /// g - g(0): the same curvature with g(0) = 0.
  [[nodiscard]] ConvexPotential centered() const {
    const double c = g_at_zero();
    std::vector<double> g(g_.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = g_[i] - c;
    return ConvexPotential(grid_, std::move(g), l_cap_);
  }

  [[nodiscard]] ConvexPotential shifted(double c) const {
    std::vector<double> g(g_.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = g_[i] + c;
    return ConvexPotential(grid_, std::move(g), l_cap_);
  }

  [[nodiscard]] double eval_g(double x) const noexcept {
    const double x0 = grid_.xi(0);
    const double x1 = grid_.xi(g_.size() - 1);
    if (x <= x0) return g_.front() + slope_lo_ * (x - x0);
    if (x >= x1) return g_.back() + slope_hi_ * (x - x1);
    const std::size_t i = locate(x);
    const double d = x - grid_.xi(i);
    return g_[i] + interval_slope(i) * d;
  }

  /// Derivative of g (right-continuous at nodes).
  [[nodiscard]] double eval_g_prime(double x) const noexcept {
    const double x0 = grid_.xi(0);
    const double x1 = grid_.xi(g_.size() - 1);
    if (x < x0) return slope_lo_;
    if (x >= x1) return slope_hi_;
    return interval_slope(locate(x));
  }

  [[nodiscard]] double eval_phi(double x) const noexcept {
    const double x0 = grid_.xi(0);
    const double x1 = grid_.xi(g_.size() - 1);
    if (x <= x0) {
      const double d = x - x0;
      return phi_.front() + g_.front() * d + 0.5 * slope_lo_ * d * d;
    }
    if (x >= x1) {
      const double d = x - x1;
      return phi_.back() + g_.back() * d + 0.5 * slope_hi_ * d * d;
    }
    const std::size_t i = locate(x);
    const double d = x - grid_.xi(i);
    return phi_[i] + g_[i] * d + 0.5 * interval_slope(i) * d * d;
  }

  /// Exact inverse of the piecewise-linear g; v must lie strictly inside
  /// (g(xi_min), g(xi_max)). Flat stretches map to their left end.
  [[nodiscard]] double inverse_g(double v) const {
    if (!(v > g_.front() && v < g_.back())) {
      std::ostringstream os;
      os << std::setprecision(17) << "inverse_g: value " << v << " outside the open range (" << g_.front()
         << ", " << g_.back() << ")";
      throw DomainError(os.str());
    }
    const auto it = std::lower_bound(g_.begin(), g_.end(), v);
    const auto j = static_cast<std::size_t>(it - g_.begin());
    if (g_[j] == v) return grid_.xi(j);
    const std::size_t i = j - 1;
    return grid_.xi(i) + (v - g_[i]) / (g_[j] - g_[i]) * h();
  }

  [[nodiscard]] bool in_open_range(double v) const noexcept { return v > g_.front() && v < g_.back(); }

  /// Two-column CSV (xi, g) with 17 significant digits.
  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "xi,g\n" << std::setprecision(17);
    for (std::size_t i = 0; i < g_.size(); ++i) out << grid_.xi(i) << ',' << g_[i] << '\n';
  }

  static ConvexPotential read_csv(const std::string& path, double l_cap) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    std::string line;
    std::getline(in, line);
    std::vector<double> xs, gs;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      // Columns after the second are ignored.
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw DomainError("potential csv: malformed line '" + line + "'");
      const auto next = line.find(',', comma + 1);
      try {
        xs.push_back(std::stod(line.substr(0, comma)));
        gs.push_back(std::stod(line.substr(comma + 1, next == std::string::npos ? std::string::npos : next - comma - 1)));
      } catch (const std::exception&) {
        throw DomainError("potential csv: malformed line '" + line + "'");
      }
    }
    if (xs.size() < 5 || xs.size() % 2 == 0) throw DomainError("potential csv: need an odd node count >= 5");
    XiGrid grid{-xs.front(), xs.size()};
    if (std::abs(xs.front() + xs.back()) > 1e-12 * grid.halfwidth)
      throw DomainError("potential csv: grid must be symmetric about 0");
    for (std::size_t i = 0; i < xs.size(); ++i)
      if (std::abs(xs[i] - grid.xi(i)) > 1e-9 * grid.h())
        throw DomainError("potential csv: grid is not uniform");
    return ConvexPotential(grid, std::move(gs), l_cap);
  }

 private:
  [[nodiscard]] std::size_t locate(double x) const noexcept {
    const double s = (x - grid_.xi(0)) / h();
    auto i = static_cast<std::size_t>(std::floor(s));
    return std::min(i, g_.size() - 2);
  }

  XiGrid grid_;
  std::vector<double> g_, phi_;
  double l_cap_ = 1.0;
  double slope_lo_ = 0.0, slope_hi_ = 0.0;
};

}  // namespace kyleback
