#pragma once

// Picard iteration g <- F_nu^{-1}(F_phi(g)) for the equilibrium Brenier map.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "kyleback/beliefs.hpp"
#include "kyleback/errors.hpp"
#include "kyleback/model.hpp"
#include "kyleback/numerics.hpp"
#include "kyleback/potential.hpp"

namespace kyleback {

inline const QuadratureRule& default_hermite_rule() {
  static const QuadratureRule rule = gauss_hermite(kDefaultHermiteOrder);
  return rule;
}

// ---------------------------------------------------------------------------
// G_g(z) = E[exp(z^2/(2 sigma^2 T) + gamma phi(z + sigma B_T))]
// ---------------------------------------------------------------------------

struct GValues {
  double G = 0.0;
  double dG = 0.0;
  double d2G = 0.0;
};

inline GValues eval_G_and_derivatives(const ConvexPotential& pot, const ModelParams& p, double z,
                                      const QuadratureRule& rule = default_hermite_rule()) {
  p.validate_representation();
  const double s2 = p.s2();
  const double s = std::sqrt(s2);
  GValues out;
  for (std::size_t i = 0; i < rule.order(); ++i) {
    const double y = z + s * rule.nodes[i];
    const double e = std::exp(z * z / (2.0 * s2) + p.gamma * pot.eval_phi(y));
    const double a = z / s2 + p.gamma * pot.eval_g(y);
    out.G += rule.weights[i] * e;
    out.dG += rule.weights[i] * a * e;
    out.d2G += rule.weights[i] * (a * a + 1.0 / s2 + p.gamma * pot.eval_g_prime(y)) * e;
  }
  if (!std::isfinite(out.G) || !std::isfinite(out.dG) || !std::isfinite(out.d2G)) {
    std::ostringstream os;
    os << "G_g(" << z << ") is not finite; the slope budget gamma*sigma^2*T*l_cap = " << p.budget()
       << " is too large for this potential";
    throw BudgetViolation(os.str());
  }
  return out;
}

// ---------------------------------------------------------------------------
// State at (t, xi) from the stochastic representation
// ---------------------------------------------------------------------------

/// chi(t, xi), Gamma(t, xi) and P(t, xi) obtained from the potential alone.
/// chi minimizes z -> E[exp((z - xi)^2/(2 s^2) + gamma phi(z + s Z))] with
/// s^2 = sigma^2 (T - t); exp(gamma Gamma) = E[exp(gamma phi(chi + s Z))]; P
/// is the mean of g(chi + s Z) under the exp(gamma phi) tilt.
struct StatePoint {
  double chi = 0.0;
  double gamma = 0.0;
  double price = 0.0;
  double residual = 0.0;  ///< |d/dz log G| at the minimizer
  int iterations = 0;
};

namespace detail {

struct Tilted {
  double log_mean_exp = 0.0;  ///< ln E[exp(gamma phi)]
  double mean_phi = 0.0;      ///< E[phi], the gamma = 0 limit of the above over gamma
  double m1 = 0.0;            ///< tilted E[g]
  double var = 0.0;           ///< tilted Var[g]
  double mgp = 0.0;           ///< tilted E[g']
};

inline Tilted tilted_moments(const ConvexPotential& pot, double gamma, double w, double s,
                             const QuadratureRule& rule) {
  const std::size_t n = rule.order();
  double amax = -std::numeric_limits<double>::infinity(), aabs = 0.0;
  thread_local std::vector<double> a, gv, gp;
  a.resize(n);
  gv.resize(n);
  gp.resize(n);
  Tilted t;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = w + s * rule.nodes[i];
    const double phi = pot.eval_phi(y);
    a[i] = gamma * phi;
    gv[i] = pot.eval_g(y);
    gp[i] = pot.eval_g_prime(y);
    t.mean_phi += rule.weights[i] * phi;
    amax = std::max(amax, a[i]);
    aabs = std::max(aabs, std::abs(a[i]));
  }
  double S = 0.0, s1 = 0.0, s2 = 0.0, sp = 0.0, em1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = rule.weights[i] * std::exp(a[i] - amax);
    S += e;
    s1 += e * gv[i];
    s2 += e * gv[i] * gv[i];
    sp += e * gp[i];
    em1 += rule.weights[i] * std::expm1(a[i]);
  }
  if (!std::isfinite(S) || !(S > 0.0)) throw BudgetViolation("tilted expectation is not finite");
  t.m1 = s1 / S;
  t.var = std::max(0.0, s2 / S - t.m1 * t.m1);
  t.mgp = sp / S;
  t.log_mean_exp = aabs <= 1.0 ? std::log1p(em1) : amax + std::log(S);
  return t;
}

}  // namespace detail

inline StatePoint represent_state(const ConvexPotential& pot, const ModelParams& p, double t, double xi,
                                  const QuadratureRule& rule = default_hermite_rule()) {
  StatePoint out;
  const double tau = p.T - t;
  if (!(tau > 0.0)) {
    out.chi = xi;
    out.gamma = pot.eval_phi(xi);
    out.price = pot.eval_g(xi);
    return out;
  }
  const double s2 = p.sigma * p.sigma * tau;
  const double s = std::sqrt(s2);
  const double gamma = p.gamma;
  if (gamma == 0.0) {
    const auto m = detail::tilted_moments(pot, 0.0, xi, s, rule);
    out.chi = xi;
    out.gamma = m.mean_phi;
    out.price = m.m1;
    return out;
  }
  auto value = [&](double w) {
    const auto m = detail::tilted_moments(pot, gamma, w, s, rule);
    return (w - xi) * (w - xi) / (2.0 * s2) + m.log_mean_exp;
  };
  auto deriv = [&](double w) {
    const auto m = detail::tilted_moments(pot, gamma, w, s, rule);
    return (w - xi) / s2 + gamma * m.m1;
  };
  std::function<double(double)> second = [&](double w) {
    const auto m = detail::tilted_moments(pot, gamma, w, s, rule);
    return 1.0 / s2 + gamma * m.mgp + gamma * gamma * m.var;
  };
  const auto m0 = detail::tilted_moments(pot, gamma, xi, s, rule);
  const double init = xi - gamma * s2 * m0.m1;
  MinimizeOptions opts;
  opts.initial_step = std::max(1e-3 * s, 2.0 * std::abs(deriv(init)) * s2);
  const double tol = std::max(1e-13 / s2, 1e-13);
  Minimum mn;
  try {
    mn = minimize_convex_1d(value, deriv, init, tol, 200, second, opts);
  } catch (const ConvexityError& e) {
    throw ConvexityError(std::string("representation minimizer: ") + e.what() +
                         " (slope budget breach suspected)");
  }
  const auto m = detail::tilted_moments(pot, gamma, mn.argmin, s, rule);
  out.chi = mn.argmin;
  out.gamma = m.log_mean_exp / gamma;
  out.price = m.m1;
  out.residual = std::abs(mn.derivative);
  out.iterations = mn.iterations;
  return out;
}

// ---------------------------------------------------------------------------
// Initial state chi(0,0), Gamma(0,0)
// ---------------------------------------------------------------------------

struct RepresentationPoint {
  double chi00 = 0.0;
  double gamma00 = 0.0;
  double minimizer_residual = 0.0;  ///< |G_g'(chi00)|
  double price00 = 0.0;             ///< P(0,0) = E[g(xi_T)]
  /// The same quantities for the centered map g - g(0). The terminal density
  /// is built from these so it depends on the curvature of g only; chi00,
  /// gamma00 and price00 follow from them by the exact shift identity.
  double anchor_g0 = 0.0;
  double chi_centered = 0.0;
  double gamma_centered = 0.0;
  /// Minimizer of G_g computed without centering, for diagnostics.
  double chi_direct = 0.0;
  double gamma_direct = 0.0;
};

/// chi and Gamma at (0,0) for g + c, given their values for g.
inline std::pair<double, double> shift_state(double chi, double gamma, double c, const ModelParams& p) {
  const double gs2 = p.gamma * p.s2();
  return {chi - gs2 * c, gamma + c * chi - 0.5 * gs2 * c * c};
}

inline RepresentationPoint solve_representation(const ConvexPotential& pot, const ModelParams& p,
                                                const QuadratureRule& rule = default_hermite_rule()) {
  p.validate_representation();
  if (pot.max_slope() > p.l_cap + kSlopeTolerance)
    throw BudgetViolation("solve_representation: potential slope exceeds the model's l_cap");
  RepresentationPoint rep;
  rep.anchor_g0 = pot.g_at_zero();
  const ConvexPotential c = pot.centered();
  const auto cen = represent_state(c, p, 0.0, 0.0, rule);
  rep.chi_centered = cen.chi;
  rep.gamma_centered = cen.gamma;
  std::tie(rep.chi00, rep.gamma00) = shift_state(cen.chi, cen.gamma, rep.anchor_g0, p);
  rep.price00 = rep.anchor_g0 + cen.price;
  const auto raw = represent_state(pot, p, 0.0, 0.0, rule);
  rep.chi_direct = raw.chi;
  rep.gamma_direct = raw.gamma;
  rep.minimizer_residual = p.gamma == 0.0 ? 0.0 : std::abs(eval_G_and_derivatives(pot, p, rep.chi00, rule).dG);
  return rep;
}

// ---------------------------------------------------------------------------
// Terminal density f_phi
// ---------------------------------------------------------------------------

struct TerminalDensity {
  XiGrid grid;
  std::vector<double> f;  ///< normalized density at the nodes
  std::vector<double> F;  ///< cumulative from the left
  std::vector<double> S;  ///< cumulative from the right (upper tail)
  double raw_integral = 1.0;
  double renormalization = 1.0;  ///< factor applied to reach unit mass
  MonotoneCurve cdf;

  [[nodiscard]] double cdf_at(double x) const { return cdf(x); }
};

inline constexpr double kCoverageTolerance = 1e-3;

/// Integral over a cell of width h of the exponential through (0, a), (h, b).
inline double log_linear_cell(double a, double b, double h) {
  if (!(a > 0.0 && b > 0.0)) return 0.5 * h * (a + b);
  const double r = std::log(b / a);
  if (std::abs(r) < 1e-8) return 0.5 * h * (a + b) * (1.0 + r * r / 24.0);
  return h * (b - a) / r;
}
inline constexpr double kRenormalizationWarn = 1e-4;

inline TerminalDensity terminal_density(const ConvexPotential& pot, const RepresentationPoint& rep,
                                        const ModelParams& p) {
  if (rep.anchor_g0 != pot.g_at_zero())
    throw DomainError("terminal_density: representation was computed for a different potential");
  const XiGrid grid = pot.grid();
  const std::size_t n = grid.nodes;
  const double h = grid.h();
  const double s2 = p.s2();
  const double c = rep.anchor_g0;
  std::vector<double> g0(n);
  for (std::size_t i = 0; i < n; ++i) g0[i] = pot.g_nodes()[i] - c;
  const std::vector<double> phi0 = cumulative_trapezoid(g0, h, grid.center());
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * s2);
  TerminalDensity d;
  d.grid = grid;
  d.f.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = grid.xi(i);
    const double dz = rep.chi_centered - y;
    d.f[i] = norm * std::exp(p.gamma * phi0[i] - p.gamma * rep.gamma_centered - dz * dz / (2.0 * s2));
  }
  d.raw_integral = trapezoid(d.f, h);
  if (!(std::abs(d.raw_integral - 1.0) <= kCoverageTolerance)) {
    std::ostringstream os;
    os << "terminal density integrates to " << d.raw_integral << " on [" << -grid.halfwidth << ", "
       << grid.halfwidth << "]; widen the grid";
    throw GridCoverageError(os.str());
  }
  d.renormalization = 1.0 / d.raw_integral;
  for (auto& v : d.f) v *= d.renormalization;
  // Cell masses treat ln f as linear on each cell, which keeps the relative
  // accuracy of the tails where f decays like a Gaussian.
  std::vector<double> cell(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) cell[i] = log_linear_cell(d.f[i], d.f[i + 1], h);
  // Mass beyond each end: there ln f is quadratic, decaying at rate a away
  // from the grid and curvature b = gamma * (tail slope of g) - 1/s2.
  auto tail_mass = [&](double f0, double a, double slope) {
    const double b = p.gamma * std::clamp(slope, 0.0, pot.l_cap()) - 1.0 / s2;
    if (!(a > 0.0) || !(b < 0.0)) return 0.0;
    return f0 / a * (1.0 + b / (a * a));
  };
  const double y0 = grid.xi(0), y1 = grid.xi(n - 1);
  const double lo_tail = tail_mass(d.f.front(), p.gamma * g0.front() + (rep.chi_centered - y0) / s2,
                                   (g0[1] - g0[0]) / h);
  const double hi_tail = tail_mass(d.f.back(), -(p.gamma * g0.back() + (rep.chi_centered - y1) / s2),
                                   (g0[n - 1] - g0[n - 2]) / h);
  d.F.assign(n, lo_tail);
  d.S.assign(n, hi_tail);
  for (std::size_t i = 1; i < n; ++i) d.F[i] = d.F[i - 1] + cell[i - 1];
  for (std::size_t i = n - 1; i-- > 0;) d.S[i] = d.S[i + 1] + cell[i];
  const double total = d.F.back() + hi_tail;
  for (std::size_t i = 0; i < n; ++i) {
    d.F[i] /= total;
    d.S[i] /= total;
  }
  std::vector<double> Fc(d.F);
  for (auto& v : Fc) v = std::min(v, 1.0);
  d.cdf = MonotoneCurve(grid.points(), Fc, Extrapolation::clamp);
  return d;
}

// ---------------------------------------------------------------------------
// Brenier update g = F_nu^{-1}(F_phi)
// ---------------------------------------------------------------------------

inline constexpr double kDefaultCdfClamp = 1e-12;

struct BrenierValues {
  std::vector<double> g;
  std::size_t clamped_low = 0;   ///< nodes with F below the clamp level
  std::size_t clamped_high = 0;  ///< nodes with 1 - F below the clamp level
};

/// Node values of the monotone map pushing the density onto nu. Nodes whose
/// cumulative mass (from either side) falls below `clamp` are not sent
/// through the quantile; the map continues linearly there with the slope of
/// the last resolved interval, limited to [0, l_cap] and to the closure of
/// the support of nu.
inline BrenierValues brenier_values(const TerminalDensity& d, const BeliefDistribution& nu, double l_cap,
                                    double clamp = kDefaultCdfClamp) {
  const std::size_t n = d.f.size();
  const double h = d.grid.h();
  BrenierValues out;
  out.g.assign(n, 0.0);
  std::size_t first = n, last = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d.F[i] < clamp || d.S[i] < clamp) continue;
    first = std::min(first, i);
    last = std::max(last, i);
    out.g[i] = d.F[i] <= 0.5 ? nu.quantile(d.F[i]) : nu.quantile_upper(d.S[i]);
  }
  if (first >= n || last <= first)
    throw GridCoverageError("brenier update: fewer than two nodes carry resolvable mass");
  // Rounding in the quantile can break monotonicity by an ulp.
  for (std::size_t i = first + 1; i <= last; ++i) out.g[i] = std::max(out.g[i], out.g[i - 1]);
  const auto [lo, hi] = nu.support();
  const double slo = std::clamp((out.g[first + 1] - out.g[first]) / h, 0.0, l_cap);
  const double shi = std::clamp((out.g[last] - out.g[last - 1]) / h, 0.0, l_cap);
  for (std::size_t i = 0; i < first; ++i) {
    out.g[i] = std::max(lo, out.g[first] - slo * static_cast<double>(first - i) * h);
    ++out.clamped_low;
  }
  for (std::size_t i = last + 1; i < n; ++i) {
    out.g[i] = std::min(hi, out.g[last] + shi * static_cast<double>(i - last) * h);
    ++out.clamped_high;
  }
  return out;
}

inline ConvexPotential brenier_update(const TerminalDensity& d, const BeliefDistribution& nu, double l_cap,
                                      double clamp = kDefaultCdfClamp) {
  auto v = brenier_values(d, nu, l_cap, clamp);
  return ConvexPotential(d.grid, std::move(v.g), l_cap);
}

// ---------------------------------------------------------------------------
// Picard loop
// ---------------------------------------------------------------------------

struct FixedPointOptions {
  double tol = 1e-6;
  int max_iter = 200;
  double damping = 1.0;
  double cdf_clamp = kDefaultCdfClamp;
  std::optional<XiGrid> grid;                 ///< default: XiGrid::standard(params)
  std::optional<std::vector<double>> warm_start;  ///< initial g node values; default g = 0
  int divergence_window = 5;
  const QuadratureRule* rule = nullptr;
};

struct FixedPointResult {
  ConvexPotential potential;
  RepresentationPoint representation;
  TerminalDensity mu_density;
  std::vector<double> residuals;             ///< weighted sup-norm per iteration
  std::vector<double> residuals_unweighted;  ///< plain sup-norm per iteration
  std::vector<double> density_integrals;     ///< trapezoid mass of f before renormalization
  int iterations = 0;
  bool converged = false;
  std::size_t clamped_nodes = 0;
};

/// Weight exp(-xi^2 / (2 sigma^2 T)), equal to one at the center.
inline double residual_weight(double xi, const ModelParams& p) { return std::exp(-xi * xi / (2.0 * p.s2())); }

class IterateBudgetViolation : public BudgetViolation {
 public:
  IterateBudgetViolation(const std::string& what, XiGrid grid, std::vector<double> iterate, int iteration)
      : BudgetViolation(what), grid(grid), iterate(std::move(iterate)), iteration(iteration) {}
  XiGrid grid;
  std::vector<double> iterate;
  int iteration;
};

class DivergenceError : public NonConvergence {
 public:
  DivergenceError(const std::string& what, XiGrid grid, std::vector<double> last, std::vector<double> residuals)
      : NonConvergence(what), grid(grid), last_iterate(std::move(last)), residuals(std::move(residuals)) {}
  XiGrid grid;
  std::vector<double> last_iterate;
  std::vector<double> residuals;
};

struct FixedPointResidual {
  double weighted = 0.0;
  double unweighted = 0.0;
};

/// sup over nodes of |g - F_nu^{-1}(F_phi)| at the given potential.
inline FixedPointResidual fixed_point_residual(const ConvexPotential& pot, const BeliefDistribution& nu,
                                               const ModelParams& p, double clamp = kDefaultCdfClamp) {
  const auto rep = solve_representation(pot, p);
  const auto d = terminal_density(pot, rep, p);
  const auto upd = brenier_values(d, nu, p.l_cap, clamp);
  FixedPointResidual r;
  for (std::size_t i = 0; i < pot.size(); ++i) {
    const double diff = std::abs(upd.g[i] - pot.g_nodes()[i]);
    r.unweighted = std::max(r.unweighted, diff);
    r.weighted = std::max(r.weighted, diff * residual_weight(pot.xi(i), p));
  }
  return r;
}

inline FixedPointResult picard_solve(const BeliefDistribution& nu, const ModelParams& p,
                                     const FixedPointOptions& opt = {}) {
  p.validate_representation();
  if (!(opt.tol > 0.0)) throw DomainError("picard_solve: tol must be positive");
  if (opt.max_iter < 1) throw DomainError("picard_solve: max_iter must be at least 1");
  if (!(opt.damping > 0.0 && opt.damping <= 1.0)) throw DomainError("picard_solve: damping must be in (0, 1]");
  const QuadratureRule& rule = opt.rule ? *opt.rule : default_hermite_rule();
  const XiGrid grid = opt.grid.value_or(XiGrid::standard(p));
  grid.validate();
  std::vector<double> g = opt.warm_start.value_or(std::vector<double>(grid.nodes, 0.0));
  if (g.size() != grid.nodes) throw DomainError("picard_solve: warm start does not match the grid");

  FixedPointResult res;
  ConvexPotential pot(grid, g, p.l_cap);
  int rising = 0;
  for (int n = 0;; ++n) {
    const auto rep = solve_representation(pot, p, rule);
    auto dens = terminal_density(pot, rep, p);
    res.density_integrals.push_back(dens.raw_integral);
    auto upd = brenier_values(dens, nu, p.l_cap, opt.cdf_clamp);
    if (opt.damping != 1.0)
      for (std::size_t i = 0; i < upd.g.size(); ++i)
        upd.g[i] = (1.0 - opt.damping) * pot.g_nodes()[i] + opt.damping * upd.g[i];
    const double slope = max_slope(upd.g, grid.h());
    if (slope > p.l_cap + kSlopeTolerance) {
      std::ostringstream os;
      os << "iterate " << n + 1 << " has slope " << slope << " above l_cap " << p.l_cap;
      throw IterateBudgetViolation(os.str(), grid, std::move(upd.g), n + 1);
    }
    double rw = 0.0, ru = 0.0;
    for (std::size_t i = 0; i < upd.g.size(); ++i) {
      const double diff = std::abs(upd.g[i] - pot.g_nodes()[i]);
      ru = std::max(ru, diff);
      rw = std::max(rw, diff * residual_weight(grid.xi(i), p));
    }
    res.residuals.push_back(rw);
    res.residuals_unweighted.push_back(ru);
    // The weighted metric is the reported residual; the plain sup-norm must
    // also be within tol so the returned map is a certified fixed point.
    if (rw <= opt.tol && ru <= opt.tol) {
      res.potential = pot;
      res.representation = rep;
      res.mu_density = std::move(dens);
      res.iterations = n;
      res.converged = true;
      res.clamped_nodes = upd.clamped_low + upd.clamped_high;
      return res;
    }
    const std::size_t k = res.residuals.size();
    rising = (k >= 2 && res.residuals[k - 1] > res.residuals[k - 2]) ? rising + 1 : 0;
    if (rising >= opt.divergence_window) {
      std::ostringstream os;
      os << "Picard residual grew for " << rising << " consecutive iterations (last " << rw << ")";
      throw DivergenceError(os.str(), grid, upd.g, res.residuals);
    }
    res.clamped_nodes = upd.clamped_low + upd.clamped_high;
    pot = ConvexPotential(grid, std::move(upd.g), p.l_cap);
    if (n + 1 >= opt.max_iter) {
      res.representation = solve_representation(pot, p, rule);
      res.mu_density = terminal_density(pot, res.representation, p);
      res.potential = pot;
      res.iterations = n + 1;
      res.converged = false;
      return res;
    }
  }
}

}  // namespace kyleback
