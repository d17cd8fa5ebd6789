#pragma once

// Backward quasilinear PDE for R = dP/dxi and assembly of P, chi, Gamma.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kyleback/errors.hpp"
#include "kyleback/fixed_point.hpp"
#include "kyleback/model.hpp"
#include "kyleback/numerics.hpp"
#include "kyleback/potential.hpp"

namespace kyleback {

/// Increasing times 0 = t_0 < ... < t_M = T, graded quadratically toward T:
/// T - t_j = T ((M - j) / M)^2.
inline std::vector<double> pricing_time_grid(double T, std::size_t M) {
  if (M < 2) throw DomainError("pricing time grid: need at least two steps");
  std::vector<double> t(M + 1);
  for (std::size_t j = 0; j <= M; ++j) {
    const double u = static_cast<double>(M - j) / static_cast<double>(M);
    t[j] = T - T * u * u;
  }
  t[0] = 0.0;
  t[M] = T;
  return t;
}

struct PdeOptions {
  std::size_t t_steps = 512;
  int sweeps = 2;
  /// Sub-steps keep dtau * max D / h^2 at or below this; the Crank-Nicolson
  /// update is then a convex combination and obeys the maximum principle.
  double max_ratio = 1.0;
  std::size_t max_substeps = 50'000'000;
};

/// Cell values of R (between consecutive xi nodes) at every output time.
struct RSolution {
  std::vector<double> t;
  XiGrid grid;
  std::size_t cells = 0;
  std::vector<double> data;  ///< (t index) * cells + cell index
  /// P(t,0) - g(0) = int_t^T sigma^2/2 R_xi(s,0) / (1 - gamma sigma^2 (T-s) R(s,0))^2 ds
  std::vector<double> flux_integral;
  /// int_t^T sigma^2 R(s,0) / (2 (1 - gamma sigma^2 (T-s) R(s,0))) ds
  std::vector<double> a_integral;
  std::size_t substeps = 0;
  std::size_t clamp_activations = 0;
  double max_ratio_used = 0.0;

  [[nodiscard]] double at(std::size_t j, std::size_t c) const { return data[j * cells + c]; }
  [[nodiscard]] const double* slice(std::size_t j) const { return data.data() + j * cells; }
};

namespace detail {

inline void thomas(std::vector<double>& lower, std::vector<double>& diag, std::vector<double>& upper,
                   std::vector<double>& rhs) {
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double m = lower[i] / diag[i - 1];
    diag[i] -= m * upper[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
}

struct Diffusivity {
  double sigma2 = 0.0;
  double gs2 = 0.0;    ///< gamma sigma^2
  double floor = 1.0;  ///< 1 - gamma sigma^2 T l_cap
  std::size_t* clamps = nullptr;

  /// Interface diffusivities D[i] at nodes 0..cells; zero at the two ends.
  void fill(const std::vector<double>& R, double tau, std::vector<double>& D) const {
    const std::size_t nc = R.size();
    D.assign(nc + 1, 0.0);
    for (std::size_t i = 1; i < nc; ++i) {
      const double rbar = 0.5 * (R[i - 1] + R[i]);
      double den = 1.0 - gs2 * tau * rbar;
      if (den < floor) {
        den = floor;
        if (clamps) ++*clamps;
      }
      D[i] = sigma2 / (2.0 * den * den);
    }
  }
};

}  // namespace detail

/// Crank-Nicolson in tau = T - t on the divergence form
/// dR/dtau = d/dxi( sigma^2 R_xi / (2 (1 - gamma sigma^2 tau R)^2) ),
/// finite volumes on the cells of the xi grid with zero-flux ends. The
/// nonlinear coefficient is lagged and refreshed over `sweeps` passes.
inline RSolution solve_R(const ConvexPotential& pot, const ModelParams& p, const PdeOptions& opt = {}) {
  p.validate();
  if (opt.sweeps < 1) throw DomainError("solve_R: sweeps must be at least 1");
  const XiGrid grid = pot.grid();
  const std::size_t nc = grid.nodes - 1;
  const std::size_t M = opt.t_steps;
  const double h = grid.h();
  const double h2 = h * h;

  RSolution sol;
  sol.t = pricing_time_grid(p.T, M);
  sol.grid = grid;
  sol.cells = nc;
  sol.data.assign((M + 1) * nc, 0.0);
  sol.flux_integral.assign(M + 1, 0.0);
  sol.a_integral.assign(M + 1, 0.0);

  detail::Diffusivity dif{p.sigma * p.sigma, p.gamma * p.sigma * p.sigma, p.chi_xi_floor(), &sol.clamp_activations};

  std::vector<double> R(nc);
  for (std::size_t c = 0; c < nc; ++c) R[c] = std::clamp(pot.interval_slope(c), 0.0, p.l_cap);
  std::copy(R.begin(), R.end(), sol.data.begin() + static_cast<std::ptrdiff_t>(M * nc));

  const std::size_t cn = grid.center();  // interface node at xi = 0
  auto center_flux = [&](const std::vector<double>& r, const std::vector<double>& D) {
    return D[cn] * (r[cn] - r[cn - 1]) / h;
  };
  auto a_integrand = [&](const std::vector<double>& r, double tau) {
    const double r0 = 0.5 * (r[cn - 1] + r[cn]);
    const double den = std::max(1.0 - dif.gs2 * tau * r0, dif.floor);
    return dif.sigma2 * r0 / (2.0 * den);
  };

  std::vector<double> Dold, Dnew, lower(nc), diag(nc), upper(nc), rhs(nc), Rn(nc), Rstart(nc);
  double flux_acc = 0.0, a_acc = 0.0;

  for (std::size_t k = 0; k < M; ++k) {
    const double tau0 = p.T - sol.t[M - k];
    const double tau1 = p.T - sol.t[M - k - 1];
    const double span = tau1 - tau0;
    Rstart = R;
    const double flux_start = flux_acc, a_start = a_acc;
    const double rmax = *std::max_element(R.begin(), R.end());
    double den = std::max(1.0 - dif.gs2 * tau1 * rmax, dif.floor);
    const double dmax = dif.sigma2 / (2.0 * den * den);
    auto nsub = static_cast<std::size_t>(std::ceil(span * dmax * 1.02 / (opt.max_ratio * h2)));
    nsub = std::max<std::size_t>(nsub, 1);
    if (sol.substeps + nsub > opt.max_substeps)
      throw StabilityError("solve_R: sub-step cap exceeded while enforcing the stability ratio");
    for (;;) {
      bool ok = true;
      const double dt = span / static_cast<double>(nsub);
      for (std::size_t s = 0; s < nsub && ok; ++s) {
        const double ta = tau0 + dt * static_cast<double>(s);
        const double tb = (s + 1 == nsub) ? tau1 : ta + dt;
        const double step = tb - ta;
        dif.fill(R, ta, Dold);
        const double a = step / (2.0 * h2);
        for (std::size_t c = 0; c < nc; ++c) {
          const double left = c > 0 ? Dold[c] * (R[c] - R[c - 1]) : 0.0;
          const double right = c + 1 < nc ? Dold[c + 1] * (R[c + 1] - R[c]) : 0.0;
          rhs[c] = R[c] + a * (right - left);
        }
        Rn = R;
        for (int sw = 0; sw < opt.sweeps; ++sw) {
          dif.fill(Rn, tb, Dnew);
          for (std::size_t c = 0; c < nc; ++c) {
            lower[c] = -a * Dnew[c];
            upper[c] = -a * Dnew[c + 1];
            diag[c] = 1.0 + a * (Dnew[c] + Dnew[c + 1]);
          }
          std::vector<double> b(rhs);
          detail::thomas(lower, diag, upper, b);
          Rn.swap(b);
        }
        double dm = 0.0;
        for (std::size_t i = 0; i <= nc; ++i) dm = std::max({dm, Dold[i], Dnew[i]});
        const double ratio = step * dm / h2;
        sol.max_ratio_used = std::max(sol.max_ratio_used, ratio);
        if (ratio > opt.max_ratio * (1.0 + 1e-12)) {
          ok = false;
          break;
        }
        flux_acc += 0.5 * step * (center_flux(R, Dold) + center_flux(Rn, Dnew));
        for (auto& v : Rn) v = std::clamp(v, 0.0, p.l_cap);
        a_acc += 0.5 * step * (a_integrand(R, ta) + a_integrand(Rn, tb));
        R.swap(Rn);
        ++sol.substeps;
      }
      if (ok) break;
      R = Rstart;
      flux_acc = flux_start;
      a_acc = a_start;
      nsub *= 2;
      if (sol.substeps + nsub > opt.max_substeps)
        throw StabilityError("solve_R: sub-step cap exceeded while enforcing the stability ratio");
    }
    const std::size_t j = M - k - 1;
    std::copy(R.begin(), R.end(), sol.data.begin() + static_cast<std::ptrdiff_t>(j * nc));
    sol.flux_integral[j] = flux_acc;
    sol.a_integral[j] = a_acc;
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Pricing surface
// ---------------------------------------------------------------------------

/// Integration constants along xi = 0. `integral` uses the time integrals
/// accumulated by the PDE solver. `pinned` adds to them a correction that
/// vanishes at t = T and grows linearly to the gap at t = 0, so that the
/// surface's initial state coincides with the stochastic representation used
/// by the fixed point.
enum class AnchorMode { pinned, integral };

struct PricingSurface {
  std::vector<double> t;
  XiGrid grid;
  ModelParams params;
  std::size_t nt = 0, nx = 0;
  std::vector<double> R, P, Gamma, Chi, ChiXi;  ///< row-major (t index, xi index)
  std::vector<double> anchor_P, anchor_Gamma;   ///< values used at xi = 0
  std::vector<double> integral_P, integral_A;   ///< the PDE's own time integrals
  /// Representation minus integral form at t = 0, for P(0,0) and for the
  /// time integral A(0) entering Gamma(0,0).
  double anchor_gap_P = 0.0, anchor_gap_A = 0.0;
  AnchorMode anchor_mode = AnchorMode::pinned;
  std::size_t clamp_activations = 0;

  [[nodiscard]] std::size_t idx(std::size_t j, std::size_t i) const noexcept { return j * nx + i; }
  [[nodiscard]] double xi(std::size_t i) const noexcept { return grid.xi(i); }
  [[nodiscard]] double tau(std::size_t j) const noexcept { return params.T - t[j]; }

  /// Index j with t[j] <= time < t[j+1] (clamped), and the weight of t[j+1].
  [[nodiscard]] std::pair<std::size_t, double> locate_t(double time) const {
    if (time <= t.front()) return {0, 0.0};
    if (time >= t.back()) return {nt - 2, 1.0};
    const auto it = std::upper_bound(t.begin(), t.end(), time);
    const auto j = static_cast<std::size_t>(it - t.begin()) - 1;
    return {j, (time - t[j]) / (t[j + 1] - t[j])};
  }

  [[nodiscard]] std::pair<std::size_t, double> locate_xi(double x) const {
    const double s = (x - grid.xi(0)) / grid.h();
    if (s <= 0.0) return {0, 0.0};
    if (s >= static_cast<double>(nx - 1)) return {nx - 2, 1.0};
    const auto i = std::min(static_cast<std::size_t>(s), nx - 2);
    return {i, s - static_cast<double>(i)};
  }

  using TimeSlot = std::pair<std::size_t, double>;

  /// Bilinear interpolation of a field; xi is clamped to the grid.
  [[nodiscard]] double interp(const std::vector<double>& f, double time, double x) const {
    return interp_at(f, locate_t(time), x);
  }

  [[nodiscard]] double interp_at(const std::vector<double>& f, TimeSlot slot, double x) const {
    const auto [j, wt] = slot;
    const auto [i, wx] = locate_xi(x);
    const double a = f[idx(j, i)] * (1 - wx) + f[idx(j, i + 1)] * wx;
    const double b = f[idx(j + 1, i)] * (1 - wx) + f[idx(j + 1, i + 1)] * wx;
    return a * (1 - wt) + b * wt;
  }

  [[nodiscard]] bool in_grid(double x) const noexcept { return x >= grid.xi(0) && x <= grid.xi(nx - 1); }

  /// The xi with chi(time, xi) = c, using the bilinear interpolant of chi.
  /// Returns false (and the clamped end) when c lies outside the grid image.
  [[nodiscard]] bool chi_inverse(double time, double c, double& out) const {
    return chi_inverse_at(locate_t(time), c, out);
  }

  [[nodiscard]] bool chi_inverse_at(TimeSlot slot, double c, double& out) const {
    const auto [j, wt] = slot;
    auto chi_at = [&](std::size_t i) { return Chi[idx(j, i)] * (1 - wt) + Chi[idx(j + 1, i)] * wt; };
    const double lo = chi_at(0), hi = chi_at(nx - 1);
    if (c <= lo) {
      out = grid.xi(0);
      return c == lo;
    }
    if (c >= hi) {
      out = grid.xi(nx - 1);
      return c == hi;
    }
    std::size_t a = 0, b = nx - 1;
    while (b - a > 1) {
      const std::size_t m = (a + b) / 2;
      if (chi_at(m) <= c) a = m;
      else b = m;
    }
    const double ca = chi_at(a), cb = chi_at(b);
    out = grid.xi(a) + (c - ca) / (cb - ca) * grid.h();
    return true;
  }

  void write_field_csv(const std::string& path, const std::vector<double>& f, std::size_t t_stride = 1,
                       std::size_t xi_stride = 1) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "t,xi,value\n" << std::setprecision(15);
    auto strided = [](std::size_t n, std::size_t stride) {
      std::vector<std::size_t> out;
      for (std::size_t k = 0; k < n; k += std::max<std::size_t>(stride, 1)) out.push_back(k);
      if (out.back() != n - 1) out.push_back(n - 1);
      return out;
    };
    const auto js = strided(nt, t_stride);
    const auto is = strided(nx, xi_stride);
    for (std::size_t j : js)
      for (std::size_t i : is) out << t[j] << ',' << grid.xi(i) << ',' << f[idx(j, i)] << '\n';
  }
};

struct AssembleOptions {
  AnchorMode anchor = AnchorMode::pinned;
  bool check_invariants = true;
  double identity_tolerance = 5e-4;
  const QuadratureRule* rule = nullptr;
};

struct IdentityResidual {
  double value = 0.0;
  std::size_t j = 0, i = 0;
};

/// sup over interior nodes of |(Gamma_{i+1} - Gamma_{i-1}) / (chi_{i+1} - chi_{i-1}) - P_i|.
inline IdentityResidual identity_residual(const PricingSurface& s) {
  IdentityResidual r;
  for (std::size_t j = 0; j < s.nt; ++j)
    for (std::size_t i = 1; i + 1 < s.nx; ++i) {
      const double dg = s.Gamma[s.idx(j, i + 1)] - s.Gamma[s.idx(j, i - 1)];
      const double dc = s.Chi[s.idx(j, i + 1)] - s.Chi[s.idx(j, i - 1)];
      const double v = std::abs(dg / dc - s.P[s.idx(j, i)]);
      if (v > r.value) r = {v, j, i};
    }
  return r;
}

inline PricingSurface assemble_surfaces(const RSolution& sol, const ConvexPotential& pot, const ModelParams& p,
                                        const AssembleOptions& opt = {}) {
  p.validate();
  if (sol.grid.nodes != pot.size() || sol.grid.halfwidth != pot.grid().halfwidth)
    throw DomainError("assemble_surfaces: R grid does not match the potential");
  const QuadratureRule& rule = opt.rule ? *opt.rule : default_hermite_rule();
  PricingSurface s;
  s.t = sol.t;
  s.grid = sol.grid;
  s.params = p;
  s.nt = sol.t.size();
  s.nx = sol.grid.nodes;
  s.anchor_mode = opt.anchor;
  s.clamp_activations = sol.clamp_activations;
  const std::size_t nt = s.nt, nx = s.nx, nc = sol.cells, cn = s.grid.center();
  const double h = s.grid.h();
  const double gs2 = p.gamma * p.sigma * p.sigma;
  for (auto* f : {&s.R, &s.P, &s.Gamma, &s.Chi, &s.ChiXi}) f->assign(nt * nx, 0.0);
  s.anchor_P.assign(nt, 0.0);
  s.anchor_Gamma.assign(nt, 0.0);
  s.integral_P.assign(nt, 0.0);
  s.integral_A.assign(nt, 0.0);

  const double g0 = pot.g_at_zero();
  RepresentationPoint rep;
  if (opt.anchor == AnchorMode::pinned) {
    rep = solve_representation(pot, p, rule);
    const double p_int0 = g0 + sol.flux_integral[0];
    s.anchor_gap_P = rep.price00 - p_int0;
    s.anchor_gap_A = rep.gamma00 + 0.5 * gs2 * p.T * rep.price00 * rep.price00 - sol.a_integral[0];
  }
  std::vector<double> col(nx);
  for (std::size_t j = 0; j < nt; ++j) {
    const double tau = p.T - s.t[j];
    const double* rc = sol.slice(j);
    double* R = &s.R[s.idx(j, 0)];
    R[0] = rc[0];
    R[nx - 1] = rc[nc - 1];
    for (std::size_t i = 1; i + 1 < nx; ++i) R[i] = 0.5 * (rc[i - 1] + rc[i]);

    const double p_int = g0 + sol.flux_integral[j];
    const double a_int = sol.a_integral[j];
    s.integral_P[j] = p_int;
    s.integral_A[j] = a_int;

    double* P = &s.P[s.idx(j, 0)];
    double* G = &s.Gamma[s.idx(j, 0)];
    double* C = &s.Chi[s.idx(j, 0)];
    double* CX = &s.ChiXi[s.idx(j, 0)];

    if (j + 1 == nt) {
      for (std::size_t i = 0; i < nx; ++i) {
        P[i] = pot.g_nodes()[i];
        G[i] = pot.phi_nodes()[i];
        C[i] = s.grid.xi(i);
        CX[i] = 1.0;
      }
      s.anchor_P[j] = P[cn];
      s.anchor_Gamma[j] = G[cn];
      continue;
    }

    const double w = tau / p.T;
    const double p0 = p_int + w * s.anchor_gap_P;
    const double A = a_int + w * s.anchor_gap_A;
    const double gamma0 = A - 0.5 * gs2 * tau * p0 * p0;
    s.anchor_P[j] = p0;
    s.anchor_Gamma[j] = gamma0;

    P[cn] = p0;
    for (std::size_t i = cn + 1; i < nx; ++i) P[i] = P[i - 1] + h * rc[i - 1];
    for (std::size_t i = cn; i-- > 0;) P[i] = P[i + 1] - h * rc[i];
    for (std::size_t i = 0; i < nx; ++i) col[i] = P[i];
    const auto intP = cumulative_trapezoid(col, h, cn);
    for (std::size_t i = 0; i < nx; ++i) {
      C[i] = s.grid.xi(i) - gs2 * tau * P[i];
      CX[i] = 1.0 - gs2 * tau * R[i];
      G[i] = A + intP[i] - 0.5 * gs2 * tau * P[i] * P[i];
    }
    if (j == 0 && opt.anchor == AnchorMode::pinned) {
      C[cn] = rep.chi00;
      G[cn] = rep.gamma00;
    }
  }

  if (opt.check_invariants) {
    const double floor = p.chi_xi_floor();
    for (std::size_t j = 0; j < nt; ++j)
      for (std::size_t i = 0; i < nx; ++i) {
        const double r = s.R[s.idx(j, i)], cx = s.ChiXi[s.idx(j, i)];
        if (r < 0.0 || r > p.l_cap + kSlopeTolerance || cx < floor - 1e-12 || cx > 1.0 + 1e-12) {
          std::ostringstream os;
          os << "surface bound violated at t=" << s.t[j] << ", xi=" << s.grid.xi(i) << ": R=" << r
             << ", dchi/dxi=" << cx;
          throw AssemblyError(os.str());
        }
      }
    const auto id = identity_residual(s);
    if (id.value > opt.identity_tolerance) {
      std::ostringstream os;
      os << "identity P = Gamma_xi / chi_xi off by " << id.value << " at t=" << s.t[id.j]
         << ", xi=" << s.grid.xi(id.i);
      throw AssemblyError(os.str());
    }
  }
  return s;
}

/// Solve for R and assemble in one call.
inline PricingSurface build_surface(const ConvexPotential& pot, const ModelParams& p, const PdeOptions& pde = {},
                                    const AssembleOptions& assemble = {}) {
  return assemble_surfaces(solve_R(pot, p, pde), pot, p, assemble);
}

// ---------------------------------------------------------------------------
// Residuals of the coupled system
// ---------------------------------------------------------------------------

struct SystemResidual {
  double res_Gamma = 0.0;  ///< Gamma_t + sigma^2 Gamma_xixi / (2 chi_xi^2) - gamma sigma^2 P^2 / 2
  double res_chi = 0.0;    ///< chi_t + sigma^2 chi_xixi / (2 chi_xi^2) - gamma sigma^2 P
  double res_P = 0.0;      ///< P_t + sigma^2 P_xixi / (2 chi_xi^2)
  double res_identity = 0.0;
  double worst_t = 0.0, worst_xi = 0.0;  ///< location of the largest res_Gamma
};

/// Central-difference residuals on interior nodes; nonuniform three-point
/// stencil in time.
inline SystemResidual check_system_residual(const PricingSurface& s) {
  SystemResidual r;
  const double h = s.grid.h();
  const double sig2 = s.params.sigma * s.params.sigma;
  const double gs2 = s.params.gamma * sig2;
  for (std::size_t j = 1; j + 1 < s.nt; ++j) {
    const double h1 = s.t[j] - s.t[j - 1], h2 = s.t[j + 1] - s.t[j];
    const double cm = -h2 / (h1 * (h1 + h2)), c0 = (h2 - h1) / (h1 * h2), cp = h1 / (h2 * (h1 + h2));
    for (std::size_t i = 1; i + 1 < s.nx; ++i) {
      auto dt = [&](const std::vector<double>& f) {
        return cm * f[s.idx(j - 1, i)] + c0 * f[s.idx(j, i)] + cp * f[s.idx(j + 1, i)];
      };
      auto dxx = [&](const std::vector<double>& f) {
        return (f[s.idx(j, i + 1)] - 2.0 * f[s.idx(j, i)] + f[s.idx(j, i - 1)]) / (h * h);
      };
      const double cx = (s.Chi[s.idx(j, i + 1)] - s.Chi[s.idx(j, i - 1)]) / (2.0 * h);
      const double k = sig2 / (2.0 * cx * cx);
      const double Pv = s.P[s.idx(j, i)];
      const double rg = std::abs(dt(s.Gamma) + k * dxx(s.Gamma) - 0.5 * gs2 * Pv * Pv);
      const double rc = std::abs(dt(s.Chi) + k * dxx(s.Chi) - gs2 * Pv);
      const double rp = std::abs(dt(s.P) + k * dxx(s.P));
      if (rg > r.res_Gamma) {
        r.res_Gamma = rg;
        r.worst_t = s.t[j];
        r.worst_xi = s.grid.xi(i);
      }
      r.res_chi = std::max(r.res_chi, rc);
      r.res_P = std::max(r.res_P, rp);
    }
  }
  r.res_identity = identity_residual(s).value;
  return r;
}

}  // namespace kyleback
