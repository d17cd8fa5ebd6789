#pragma once

// Equilibrium objects read off an assembled pricing surface.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <sstream>
#include <vector>

#include "kyleback/beliefs.hpp"
#include "kyleback/errors.hpp"
#include "kyleback/fixed_point.hpp"
#include "kyleback/model.hpp"
#include "kyleback/numerics.hpp"
#include "kyleback/pde.hpp"
#include "kyleback/potential.hpp"

namespace kyleback {

/// chi, Gamma and d chi / d xi at a point of the surface (bilinear).
struct SurfaceState {
  double chi = 0.0;
  double gamma = 0.0;
  double chi_xi = 1.0;
  double price = 0.0;
  double R = 0.0;
};

inline SurfaceState surface_state(const PricingSurface& s, double time, double x) {
  return {s.interp(s.Chi, time, x), s.interp(s.Gamma, time, x), s.interp(s.ChiXi, time, x), s.interp(s.P, time, x),
          s.interp(s.R, time, x)};
}

inline SurfaceState surface_node(const PricingSurface& s, std::size_t j, std::size_t i) {
  const std::size_t k = s.idx(j, i);
  return {s.Chi[k], s.Gamma[k], s.ChiXi[k], s.P[k], s.R[k]};
}

namespace detail {

inline double kernel(const SurfaceState& from, const SurfaceState& to, double var, double gamma) {
  const double d = to.chi - from.chi;
  return to.chi_xi * std::exp(gamma * (to.gamma - from.gamma) - d * d / (2.0 * var)) /
         std::sqrt(2.0 * std::numbers::pi * var);
}

inline void check_times(const PricingSurface& s, double r, double t) {
  if (!(r >= 0.0 && r < t && t <= s.params.T)) {
    std::ostringstream os;
    os << "transition density needs 0 <= r < t <= T (r=" << r << ", t=" << t << ")";
    throw DomainError(os.str());
  }
}

}  // namespace detail

/// Density at y of the state xi at time t given xi = x at time r.
inline double transition_density(const PricingSurface& s, double r, double x, double t, double y) {
  detail::check_times(s, r, t);
  const double var = s.params.sigma * s.params.sigma * (t - r);
  return detail::kernel(surface_state(s, r, x), surface_state(s, t, y), var, s.params.gamma);
}

/// The same density on every xi node at output time s.t[j].
inline std::vector<double> transition_density_row(const PricingSurface& s, double r, double x, std::size_t j) {
  const double t = s.t.at(j);
  detail::check_times(s, r, t);
  const double var = s.params.sigma * s.params.sigma * (t - r);
  const SurfaceState from = surface_state(s, r, x);
  std::vector<double> out(s.nx);
  for (std::size_t i = 0; i < s.nx; ++i) out[i] = detail::kernel(from, surface_node(s, j, i), var, s.params.gamma);
  return out;
}

// ---------------------------------------------------------------------------
// Conditional law of the value
// ---------------------------------------------------------------------------

struct ConditionalValue {
  MonotoneCurve cdf;    ///< over v, on the image grid v_i = g(xi_i)
  double mean = 0.0;    ///< E[g(xi_T) | xi_t = xi]
  double mass = 1.0;    ///< grid mass of the transition density before normalization

  [[nodiscard]] double quantile(double u) const { return cdf.invert(u); }
  [[nodiscard]] double median() const { return quantile(0.5); }
  [[nodiscard]] double iqr() const { return quantile(0.75) - quantile(0.25); }
};

/// Law of v = g(xi_T) given xi_t = xi, as the pushforward of the transition
/// density through g. Flat stretches of g collapse onto one atom; the knots
/// are the distinct values of g on the grid, padded with the support of nu.
inline ConditionalValue conditional_value_cdf(const PricingSurface& s, const ConvexPotential& pot,
                                              const BeliefDistribution& nu, double t, double xi) {
  if (!(t < s.params.T))
    throw DomainError("conditional value at t = T is a Dirac mass at g(xi); pick t < T");
  const std::size_t last = s.nt - 1;
  const auto dens = transition_density_row(s, t, xi, last);
  const double h = s.grid.h();
  const auto F = cumulative_trapezoid(dens, h, 0);
  const double mass = F.back();
  if (!(mass > 0.0)) throw GridCoverageError("conditional value: transition density has no mass on the grid");
  const auto& g = pot.g_nodes();
  std::vector<double> gd(dens.size());
  for (std::size_t i = 0; i < dens.size(); ++i) gd[i] = g[i] * dens[i];

  std::vector<double> vs, cs;
  const auto [lo, hi] = nu.support();
  if (std::isfinite(lo) && lo < g.front()) {
    vs.push_back(lo);
    cs.push_back(0.0);
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double c = F[i] / mass;
    if (!vs.empty() && g[i] <= vs.back()) {
      cs.back() = std::max(cs.back(), c);
      continue;
    }
    vs.push_back(g[i]);
    cs.push_back(c);
  }
  if (std::isfinite(hi) && hi > vs.back()) {
    vs.push_back(hi);
    cs.push_back(1.0);
  }
  cs.back() = 1.0;
  ConditionalValue out;
  out.cdf = MonotoneCurve(std::move(vs), std::move(cs));
  out.mean = trapezoid(gd, h) / mass;
  out.mass = mass;
  return out;
}

// ---------------------------------------------------------------------------
// Insider drift
// ---------------------------------------------------------------------------

/// theta = (g^{-1}(v) - xi) / (T - t).
inline double insider_drift(const PricingSurface& s, const ConvexPotential& pot, double v_target, double t,
                            double xi) {
  const double tau = s.params.T - t;
  if (!(tau > 0.0)) throw DomainError("insider drift is singular at t = T");
  return (pot.inverse_g(v_target) - xi) / tau;
}

/// sigma^2 / chi_xi * d/dxi log G(t, xi, T, y*), by central differences of
/// the surface with step `dx`. Agrees with insider_drift up to the
/// discretization of the surface.
inline double insider_drift_unsimplified(const PricingSurface& s, const ConvexPotential& pot, double v_target,
                                         double t, double xi, double dx = 0.0) {
  const double tau = s.params.T - t;
  if (!(tau > 0.0)) throw DomainError("insider drift is singular at t = T");
  if (dx <= 0.0) dx = s.grid.h();
  const double y = pot.inverse_g(v_target);
  const double last = s.params.T;
  auto log_g = [&](double x) { return std::log(transition_density(s, t, x, last, y)); };
  const double dlog = (log_g(xi + dx) - log_g(xi - dx)) / (2.0 * dx);
  const double sig2 = s.params.sigma * s.params.sigma;
  return sig2 / s.interp(s.ChiXi, t, xi) * dlog;
}

// ---------------------------------------------------------------------------
// Impact, depth and their drifts
// ---------------------------------------------------------------------------

struct EquilibriumReport {
  std::vector<double> t;
  XiGrid grid;
  std::size_t nt = 0, nx = 0;
  std::vector<double> lambda;        ///< R / chi_xi
  std::vector<double> zeta;          ///< 1 / lambda, +inf where R = 0
  std::vector<double> lambda_drift;  ///< -gamma sigma^2 lambda^2
  std::vector<double> zeta_drift;    ///< +inf where R = 0
  std::vector<double> k_diagonal;    ///< K(t,t) = 1 / chi_xi
  std::function<double(double)> utility_fn;

  [[nodiscard]] std::size_t idx(std::size_t j, std::size_t i) const noexcept { return j * nx + i; }
  [[nodiscard]] double min_zeta_drift() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : zeta_drift) m = std::min(m, v);
    return m;
  }
  [[nodiscard]] double max_lambda_drift() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : lambda_drift) m = std::max(m, v);
    return m;
  }
};

inline EquilibriumReport impact_and_depth(const PricingSurface& s) {
  const double sig2 = s.params.sigma * s.params.sigma;
  const double gs2 = s.params.gamma * sig2;
  const double h = s.grid.h();
  EquilibriumReport rep;
  rep.t = s.t;
  rep.grid = s.grid;
  rep.nt = s.nt;
  rep.nx = s.nx;
  const std::size_t n = s.nt * s.nx;
  for (auto* f : {&rep.lambda, &rep.zeta, &rep.lambda_drift, &rep.zeta_drift, &rep.k_diagonal}) f->assign(n, 0.0);
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < s.nt; ++j) {
    const double tau = s.tau(j);
    for (std::size_t i = 0; i < s.nx; ++i) {
      const std::size_t k = s.idx(j, i);
      const double R = s.R[k];
      const double cx = s.ChiXi[k];
      rep.k_diagonal[k] = 1.0 / cx;
      const double lam = R / cx;
      rep.lambda[k] = lam;
      rep.lambda_drift[k] = -gs2 * lam * lam;
      if (R <= 0.0) {
        rep.zeta[k] = inf;
        rep.zeta_drift[k] = inf;
        continue;
      }
      rep.zeta[k] = 1.0 / lam;
      double Rx;
      if (i == 0) Rx = (s.R[k + 1] - R) / h;
      else if (i + 1 == s.nx) Rx = (R - s.R[k - 1]) / h;
      else Rx = (s.R[k + 1] - s.R[k - 1]) / (2.0 * h);
      const double q = Rx * Rx;
      rep.zeta_drift[k] =
          gs2 + s.params.gamma * sig2 * sig2 * tau * q / (R * R * cx * cx * cx) + sig2 * q / (cx * cx * R * R * R);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Utility
// ---------------------------------------------------------------------------

struct Conjugate {
  double value = 0.0;
  double argmax = 0.0;
  bool clamped = false;  ///< v was outside the open range of g
};

/// phi^c(v) = sup_x (v x - phi(x)), attained where g(x) = v. Outside the
/// range of g the supremum is taken at the nearest grid end and flagged.
inline Conjugate legendre_conjugate(const ConvexPotential& pot, double v) {
  Conjugate c;
  if (pot.in_open_range(v)) {
    c.argmax = pot.inverse_g(v);
  } else {
    c.clamped = true;
    c.argmax = v <= pot.g_nodes().front() ? pot.xi(0) : pot.xi(pot.size() - 1);
  }
  c.value = v * c.argmax - pot.eval_phi(c.argmax);
  return c;
}

struct UtilityValue {
  double value = 0.0;
  bool clamped = false;
};

/// -exp(v^2 gamma^2 sigma^2 T / 2 + gamma (v chi(0,0) - Gamma(0,0)) - gamma phi^c(v)).
inline UtilityValue expected_utility(const ConvexPotential& pot, const RepresentationPoint& rep,
                                     const ModelParams& p, double v) {
  const auto c = legendre_conjugate(pot, v);
  const double g = p.gamma;
  const double e = 0.5 * v * v * g * g * p.s2() + g * (v * rep.chi00 - rep.gamma00) - g * c.value;
  return {-std::exp(e), c.clamped};
}

/// Impact and depth on the surface together with the utility map.
inline EquilibriumReport equilibrium_report(const PricingSurface& s, const ConvexPotential& pot,
                                            const RepresentationPoint& rep) {
  EquilibriumReport out = impact_and_depth(s);
  out.utility_fn = [pot, rep, p = s.params](double v) { return expected_utility(pot, rep, p, v).value; };
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian benchmark
// ---------------------------------------------------------------------------

struct GaussianEquilibrium {
  double lambda = 0.0;
  double m = 0.0;
};

/// Slope of the linear equilibrium map for nu = N(m, Sigma^2).
inline GaussianEquilibrium gaussian_benchmark(const ModelParams& p, double Sigma, double m) {
  if (!(Sigma > 0.0)) throw DomainError("gaussian benchmark: Sigma must be positive");
  const double S2 = Sigma * Sigma;
  const double a = 0.5 * p.gamma * S2;
  return {-a + std::sqrt(a * a + S2 / (p.sigma * p.sigma)), m};
}

/// Closed-form surface of the linear equilibrium g(xi) = lambda xi + m.
struct LinearSurface {
  ModelParams p;
  double lambda = 0.0;
  double m = 0.0;

  [[nodiscard]] double slope_factor(double t) const { return 1.0 - p.gamma * p.sigma * p.sigma * lambda * (p.T - t); }
  [[nodiscard]] double P(double, double xi) const { return lambda * xi + m; }
  [[nodiscard]] double chi(double t, double xi) const {
    return slope_factor(t) * xi - p.gamma * p.sigma * p.sigma * (p.T - t) * m;
  }
  /// int_t^T sigma^2 lambda / (2 (1 - gamma sigma^2 (T-s) lambda)) ds
  [[nodiscard]] double A(double t) const {
    const double tau = p.T - t;
    if (p.gamma == 0.0) return 0.5 * p.sigma * p.sigma * lambda * tau;
    return -std::log(slope_factor(t)) / (2.0 * p.gamma);
  }
  [[nodiscard]] double Gamma(double t, double xi) const {
    const double s2 = p.sigma * p.sigma * (p.T - t);
    const double chi0 = slope_factor(t) * xi;
    return A(t) + 0.5 * lambda * slope_factor(t) * xi * xi + m * chi0 - 0.5 * p.gamma * s2 * m * m;
  }
  /// xi with chi(t, xi) = c.
  [[nodiscard]] double chi_inverse(double t, double c) const {
    return (c + p.gamma * p.sigma * p.sigma * (p.T - t) * m) / slope_factor(t);
  }
  /// K(r,t) = 1 / (1 - gamma sigma^2 (T-r) lambda).
  [[nodiscard]] double K(double r, double) const { return 1.0 / slope_factor(r); }
  /// Variance of xi0_T: sigma^2 int_0^T (1 - gamma sigma^2 lambda (T-s))^{-2} ds.
  [[nodiscard]] double terminal_variance() const {
    const double b = p.gamma * p.sigma * p.sigma * lambda;
    if (b == 0.0) return p.sigma * p.sigma * p.T;
    return p.sigma * p.sigma / b * (1.0 / (1.0 - b * p.T) - 1.0);
  }
};

// ---------------------------------------------------------------------------
// Impact kernel
// ---------------------------------------------------------------------------

/// K(r,t) = exp(int_r^t gamma sigma^2 lambda(s, xi_s) ds) / chi_xi(t, xi_t)
/// along a sampled path (times increasing, same length as xi). The integral
/// is a trapezoid over the path samples with the endpoints interpolated.
inline double impact_kernel_K(const PricingSurface& s, const std::vector<double>& times,
                              const std::vector<double>& xi, double r, double t) {
  if (times.size() != xi.size() || times.size() < 2) throw DomainError("impact kernel: malformed path");
  if (r > t) throw DomainError("impact kernel: need r <= t");
  if (r < times.front() || t > times.back()) throw DomainError("impact kernel: [r, t] outside the path");
  const double gs2 = s.params.gamma * s.params.sigma * s.params.sigma;
  auto path_at = [&](double u) {
    const auto it = std::upper_bound(times.begin(), times.end(), u);
    if (it == times.end()) return xi.back();
    const auto k = static_cast<std::size_t>(it - times.begin());
    if (k == 0) return xi.front();
    const double w = (u - times[k - 1]) / (times[k] - times[k - 1]);
    return xi[k - 1] * (1.0 - w) + xi[k] * w;
  };
  auto integrand = [&](double u, double x) {
    const double R = s.interp(s.R, u, x);
    return gs2 * R / (1.0 - gs2 * (s.params.T - u) * R);
  };
  double acc = 0.0;
  double u0 = r, f0 = integrand(r, path_at(r));
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (times[k] <= r) continue;
    if (times[k] >= t) break;
    const double f1 = integrand(times[k], xi[k]);
    acc += 0.5 * (times[k] - u0) * (f0 + f1);
    u0 = times[k];
    f0 = f1;
  }
  if (t > u0) acc += 0.5 * (t - u0) * (f0 + integrand(t, path_at(t)));
  return std::exp(acc) / s.interp(s.ChiXi, t, path_at(t));
}

}  // namespace kyleback
