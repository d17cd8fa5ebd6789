#pragma once

// Deterministic numerical kernels shared by the solver: Gauss-Hermite
// expectations, standard normal functions, monotone interpolation and a
// safeguarded 1-D convex minimizer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

#include "kyleback/errors.hpp"

namespace kyleback {

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature
// ---------------------------------------------------------------------------

/// Nodes and weights for expectations against the standard normal law:
/// E[f(Z)] ~= sum_i w_i f(x_i).
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  [[nodiscard]] std::size_t order() const noexcept { return nodes.size(); }
};

inline constexpr std::size_t kDefaultHermiteOrder = 64;

/// Probabilists' Gauss-Hermite rule of the given order. Nodes come from
/// Newton iteration on the orthonormal Hermite recurrence, then the
/// physicists' rule is rescaled to the N(0,1) weight and renormalized so the
/// weights sum to one.
inline QuadratureRule gauss_hermite(std::size_t order = kDefaultHermiteOrder) {
  if (order == 0) throw DomainError("gauss_hermite: order must be positive");
  const int n = static_cast<int>(order);
  std::vector<double> x(order), w(order);
  const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
  double z = 0.0;
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * x[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * x[1];
    } else {
      z = 2.0 * z - x[i - 2];
    }
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = w[n - 1 - i] = 2.0 / (pp * pp);
  }
  QuadratureRule rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  double total = 0.0;
  // Ascending node order.
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = std::numbers::sqrt2 * x[n - 1 - i];
    rule.weights[i] = w[n - 1 - i];
    total += rule.weights[i];
  }
  for (double& wi : rule.weights) wi /= total;
  return rule;
}

/// sum_i w_i f(mean + stdev * x_i), i.e. E[f(mean + stdev Z)] for Z ~ N(0,1).
template <class F>
double gaussian_expectation(F&& f, const QuadratureRule& rule, double mean, double stdev) {
  if (!(stdev > 0.0)) throw DomainError("gaussian_expectation: stdev must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < rule.order(); ++i) {
    const double y = mean + stdev * rule.nodes[i];
    const double v = f(y);
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "gaussian_expectation: non-finite integrand at node " << i << " (x = " << y << ")";
      throw DomainError(os.str());
    }
    acc += rule.weights[i] * v;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Standard normal
// ---------------------------------------------------------------------------

enum class NormalFn { cdf, pdf, quantile };

inline double normal_pdf(double x) noexcept {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Upper tail 1 - Phi(x), accurate deep in the right tail.
inline double normal_sf(double x) noexcept { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    std::ostringstream os;
    os << "normal_quantile: probability " << p << " outside (0,1)";
    throw DomainError(os.str());
  }
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

/// Inverse of normal_sf: the x with 1 - Phi(x) = q.
inline double normal_quantile_upper(double q) {
  if (!(q > 0.0 && q < 1.0)) {
    std::ostringstream os;
    os << "normal_quantile_upper: tail probability " << q << " outside (0,1)";
    throw DomainError(os.str());
  }
  return std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * q);
}

inline double std_normal(NormalFn kind, double x) {
  switch (kind) {
    case NormalFn::cdf:
      return normal_cdf(x);
    case NormalFn::pdf:
      return normal_pdf(x);
    case NormalFn::quantile:
      return normal_quantile(x);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Monotone piecewise-cubic curve (Fritsch-Carlson)
// ---------------------------------------------------------------------------

enum class Extrapolation { clamp, linear };

class MonotoneCurve {
 public:
  MonotoneCurve() = default;

  MonotoneCurve(std::vector<double> xs, std::vector<double> ys,
                Extrapolation extrapolation = Extrapolation::clamp)
      : xs_(std::move(xs)), ys_(std::move(ys)), extrapolation_(extrapolation) {
    if (xs_.size() != ys_.size() || xs_.size() < 2)
      throw DomainError("MonotoneCurve: need at least two knots of matching size");
    for (std::size_t i = 0; i + 1 < xs_.size(); ++i) {
      if (!(xs_[i + 1] > xs_[i])) throw DomainError("MonotoneCurve: xs must be strictly increasing");
      if (ys_[i + 1] < ys_[i]) throw DomainError("MonotoneCurve: ys must be nondecreasing");
    }
    build_slopes();
  }

  [[nodiscard]] double operator()(double x) const noexcept {
    if (x <= xs_.front()) {
      if (extrapolation_ == Extrapolation::clamp) return ys_.front();
      return ys_.front() + slopes_.front() * (x - xs_.front());
    }
    if (x >= xs_.back()) {
      if (extrapolation_ == Extrapolation::clamp) return ys_.back();
      return ys_.back() + slopes_.back() * (x - xs_.back());
    }
    return hermite(interval(x), x);
  }

  [[nodiscard]] double derivative(double x) const noexcept {
    if (x <= xs_.front())
      return extrapolation_ == Extrapolation::clamp ? 0.0 : slopes_.front();
    if (x >= xs_.back())
      return extrapolation_ == Extrapolation::clamp ? 0.0 : slopes_.back();
    const std::size_t k = interval(x);
    const double h = xs_[k + 1] - xs_[k];
    const double t = (x - xs_[k]) / h;
    const double d01 = 6 * t - 6 * t * t, d10 = 3 * t * t - 4 * t + 1;
    const double d11 = 3 * t * t - 2 * t;
    return d01 * (ys_[k + 1] - ys_[k]) / h + d10 * slopes_[k] + d11 * slopes_[k + 1];
  }

  /// Smallest x with curve(x) = y. Inside the knot range the cubic is solved
  /// by safeguarded Newton; outside it, linear tails are inverted and clamped
  /// tails raise.
  [[nodiscard]] double invert(double y) const {
    if (y < ys_.front() || y > ys_.back()) {
      if (extrapolation_ == Extrapolation::linear) {
        if (y < ys_.front() && slopes_.front() > 0.0)
          return xs_.front() + (y - ys_.front()) / slopes_.front();
        if (y > ys_.back() && slopes_.back() > 0.0)
          return xs_.back() + (y - ys_.back()) / slopes_.back();
      }
      std::ostringstream os;
      os << "MonotoneCurve::invert: value " << y << " outside [" << ys_.front() << ", " << ys_.back()
         << "]";
      throw DomainError(os.str());
    }
    const auto it = std::lower_bound(ys_.begin(), ys_.end(), y);
    const auto j = static_cast<std::size_t>(it - ys_.begin());
    if (ys_[j] == y) return xs_[j];
    const std::size_t k = j - 1;
    double lo = xs_[k], hi = xs_[k + 1];
    double x = lo + (hi - lo) * (y - ys_[k]) / (ys_[k + 1] - ys_[k]);
    for (int it2 = 0; it2 < 100; ++it2) {
      const double r = hermite(k, x) - y;
      if (r == 0.0) return x;
      if (r < 0.0) lo = x; else hi = x;
      const double d = derivative(x);
      double next = d > 0.0 ? x - r / d : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - x) <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x)))
        return next;
      x = next;
    }
    return x;
  }

  [[nodiscard]] std::span<const double> xs() const noexcept { return xs_; }
  [[nodiscard]] std::span<const double> ys() const noexcept { return ys_; }
  [[nodiscard]] Extrapolation extrapolation() const noexcept { return extrapolation_; }

 private:
  [[nodiscard]] std::size_t interval(double x) const noexcept {
    const auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
    return static_cast<std::size_t>(it - xs_.begin()) - 1;
  }

  [[nodiscard]] double hermite(std::size_t k, double x) const noexcept {
    const double h = xs_[k + 1] - xs_[k];
    const double t = (x - xs_[k]) / h;
    const double t2 = t * t, t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t;
    const double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
    const double v = h00 * ys_[k] + h10 * h * slopes_[k] + h01 * ys_[k + 1] + h11 * h * slopes_[k + 1];
    // Rounding in the basis can push v a few ulps past the bracket.
    return std::clamp(v, ys_[k], ys_[k + 1]);
  }

  void build_slopes() {
    const std::size_t n = xs_.size();
    std::vector<double> delta(n - 1);
    for (std::size_t k = 0; k + 1 < n; ++k) delta[k] = (ys_[k + 1] - ys_[k]) / (xs_[k + 1] - xs_[k]);
    slopes_.assign(n, 0.0);
    slopes_.front() = delta.front();
    slopes_.back() = delta.back();
    for (std::size_t k = 1; k + 1 < n; ++k)
      slopes_[k] = (delta[k - 1] == 0.0 || delta[k] == 0.0) ? 0.0 : 0.5 * (delta[k - 1] + delta[k]);
    for (std::size_t k = 0; k + 1 < n; ++k) {
      if (delta[k] == 0.0) {
        slopes_[k] = slopes_[k + 1] = 0.0;
        continue;
      }
      const double a = slopes_[k] / delta[k], b = slopes_[k + 1] / delta[k];
      const double s = a * a + b * b;
      if (s > 9.0) {
        const double tau = 3.0 / std::sqrt(s);
        slopes_[k] = tau * a * delta[k];
        slopes_[k + 1] = tau * b * delta[k];
      }
    }
  }

  std::vector<double> xs_, ys_, slopes_;
  Extrapolation extrapolation_ = Extrapolation::clamp;
};

// ---------------------------------------------------------------------------
// 1-D strongly convex minimization
// ---------------------------------------------------------------------------

struct Minimum {
  double argmin = 0.0;
  double min_value = 0.0;
  double derivative = 0.0;  ///< derivative at argmin
  int iterations = 0;
};

struct MinimizeOptions {
  double initial_step = 1.0;
  int max_expansions = 60;
};

/// Minimize a function with strictly increasing derivative. The derivative
/// is first bracketed by doubling steps from `init`, then the root is found
/// by Newton steps (when `second` is supplied) or secant steps, falling back
/// to bisection whenever a step leaves the bracket.
template <class V, class D>
Minimum minimize_convex_1d(V&& value, D&& derivative, double init, double tol, int max_iter,
                           const std::function<double(double)>& second = {},
                           MinimizeOptions opts = {}) {
  if (!(tol > 0.0)) throw DomainError("minimize_convex_1d: tol must be positive");
  Minimum out;
  double d0 = derivative(init);
  if (!std::isfinite(d0)) throw ConvexityError("minimize_convex_1d: non-finite derivative at init");
  if (std::abs(d0) <= tol) {
    out.argmin = init;
    out.derivative = d0;
    out.min_value = value(init);
    return out;
  }

  // Bracket [lo, hi] with d(lo) < 0 < d(hi).
  const double dir = d0 > 0.0 ? -1.0 : 1.0;
  double step = opts.initial_step;
  double a = init, da = d0, b = init, db = d0;
  bool bracketed = false;
  for (int k = 0; k < opts.max_expansions; ++k) {
    b = init + dir * step;
    db = derivative(b);
    if (!std::isfinite(db)) break;
    if ((db > 0.0) != (d0 > 0.0) || db == 0.0) {
      bracketed = true;
      break;
    }
    a = b;
    da = db;
    step *= 2.0;
  }
  if (!bracketed) throw ConvexityError("minimize_convex_1d: not strongly convex on bracket");
  double lo = a, dlo = da, hi = b, dhi = db;
  if (lo > hi) {
    std::swap(lo, hi);
    std::swap(dlo, dhi);
  }
  if (db == 0.0) {
    out.argmin = b;
    out.derivative = 0.0;
    out.min_value = value(b);
    return out;
  }

  // Start from the bracket end with the smaller |derivative|.
  double x = std::abs(dlo) < std::abs(dhi) ? lo : hi;
  double dx = std::abs(dlo) < std::abs(dhi) ? dlo : dhi;
  double xprev = std::abs(dlo) < std::abs(dhi) ? hi : lo;
  double dprev = std::abs(dlo) < std::abs(dhi) ? dhi : dlo;
  int it = 0;
  for (; it < max_iter; ++it) {
    if (std::abs(dx) <= tol) break;
    double next;
    if (second) {
      const double s = second(x);
      next = s > 0.0 ? x - dx / s : 0.5 * (lo + hi);
    } else {
      next = (dx != dprev) ? x - dx * (x - xprev) / (dx - dprev) : 0.5 * (lo + hi);
    }
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    xprev = x;
    dprev = dx;
    x = next;
    dx = derivative(x);
    if (dx < 0.0) {
      lo = x;
      dlo = dx;
    } else {
      hi = x;
      dhi = dx;
    }
    if (hi - lo <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x))) break;
  }
  out.argmin = x;
  out.derivative = dx;
  out.min_value = value(x);
  out.iterations = it;
  return out;
}

// ---------------------------------------------------------------------------
// Small grid helpers
// ---------------------------------------------------------------------------

/// Cumulative trapezoid on a uniform grid, anchored to zero at `anchor`.
inline std::vector<double> cumulative_trapezoid(std::span<const double> y, double h, std::size_t anchor) {
  std::vector<double> out(y.size(), 0.0);
  for (std::size_t i = anchor + 1; i < y.size(); ++i) out[i] = out[i - 1] + 0.5 * h * (y[i - 1] + y[i]);
  for (std::size_t i = anchor; i-- > 0;) out[i] = out[i + 1] - 0.5 * h * (y[i] + y[i + 1]);
  return out;
}

inline double trapezoid(std::span<const double> y, double h) {
  if (y.size() < 2) return 0.0;
  double acc = 0.5 * (y.front() + y.back());
  for (std::size_t i = 1; i + 1 < y.size(); ++i) acc += y[i];
  return acc * h;
}

}  // namespace kyleback
