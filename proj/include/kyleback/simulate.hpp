#pragma once

// Monte-Carlo paths of the state: the unconditioned diffusion xi0 and the
// insider's bridge, with pathwise recovery of xi from the order flow.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <thread>
#include <vector>

#include "kyleback/beliefs.hpp"
#include "kyleback/equilibrium.hpp"
#include "kyleback/errors.hpp"
#include "kyleback/fixed_point.hpp"
#include "kyleback/pde.hpp"
#include "kyleback/potential.hpp"

namespace kyleback {

struct SimulationConfig {
  std::size_t n_paths = 10000;
  std::size_t n_steps = 500;  ///< uniform steps before the geometric tail
  int refine = 0;             ///< midpoint refinements of the whole grid
  std::uint64_t seed = 20240607;
  double last_step_fraction = 1e-4;  ///< last step <= this * T
  double exit_tolerance = 1e-3;      ///< allowed fraction of clamped steps
  std::size_t checkpoints = 10;
  std::size_t threads = 1;
  bool store_paths = false;
  std::optional<double> fixed_v;  ///< bridge target; drawn from nu when empty
};

/// n_steps uniform steps on [0, T], the last of which is split geometrically
/// toward T until the final step is at most last_step_fraction * T; then
/// `refine` rounds of midpoint insertion.
inline std::vector<double> simulation_time_grid(double T, std::size_t n_steps, int refine = 0,
                                                double last_step_fraction = 1e-4) {
  if (n_steps < 2) throw DomainError("simulation grid: need at least two steps");
  if (refine < 0) throw DomainError("simulation grid: refine must be nonnegative");
  const double hb = T / static_cast<double>(n_steps);
  std::vector<double> t;
  for (std::size_t k = 0; k < n_steps; ++k) t.push_back(hb * static_cast<double>(k));
  double gap = hb;
  while (gap > last_step_fraction * T) {
    gap *= 0.5;
    t.push_back(T - gap);
  }
  t.push_back(T);
  for (int r = 0; r < refine; ++r) {
    std::vector<double> u;
    u.reserve(2 * t.size());
    for (std::size_t k = 0; k + 1 < t.size(); ++k) {
      u.push_back(t[k]);
      u.push_back(0.5 * (t[k] + t[k + 1]));
    }
    u.push_back(T);
    t.swap(u);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for (seed, path, stream); the same triple always
/// yields the same sequence regardless of how paths are scheduled.
inline std::mt19937_64 path_engine(std::uint64_t seed, std::uint64_t path, std::uint64_t stream) {
  const std::uint64_t k = splitmix64(splitmix64(splitmix64(seed) ^ path) ^ (stream * 0xd1b54a32d192ed03ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32),
                    static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

inline double standard_normal(std::mt19937_64& eng) {
  // Inversion keeps the map from engine output to normals fixed across
  // standard libraries.
  const double u = (static_cast<double>(eng() >> 11) + 0.5) * 0x1.0p-53;
  return normal_quantile(u);
}

inline double open_uniform(std::mt19937_64& eng) { return (static_cast<double>(eng() >> 11) + 0.5) * 0x1.0p-53; }

inline constexpr std::uint64_t kValueStream = 1000;

/// Brownian increments on `times` for one path. The grid must come from
/// simulation_time_grid with some refine level r; level-0 increments are
/// drawn first and each refinement splits an increment through its Brownian
/// bridge midpoint, so paths at different levels are coupled.
inline std::vector<double> brownian_increments(const std::vector<double>& base, int refine, std::uint64_t seed,
                                               std::uint64_t path) {
  std::vector<double> t = base;
  std::vector<double> dB(t.size() - 1);
  auto eng = path_engine(seed, path, 0);
  for (std::size_t k = 0; k < dB.size(); ++k) dB[k] = std::sqrt(t[k + 1] - t[k]) * standard_normal(eng);
  for (int r = 1; r <= refine; ++r) {
    auto e = path_engine(seed, path, static_cast<std::uint64_t>(r));
    std::vector<double> u, nb;
    u.reserve(2 * t.size());
    nb.reserve(2 * dB.size());
    for (std::size_t k = 0; k < dB.size(); ++k) {
      const double dt = t[k + 1] - t[k];
      const double first = 0.5 * dB[k] + 0.5 * std::sqrt(dt) * standard_normal(e);
      u.push_back(t[k]);
      u.push_back(0.5 * (t[k] + t[k + 1]));
      nb.push_back(first);
      nb.push_back(dB[k] - first);
    }
    u.push_back(t.back());
    t.swap(u);
    dB.swap(nb);
  }
  return dB;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

struct SimulationBatch {
  std::uint64_t seed = 0;
  std::size_t n_paths = 0;
  std::size_t n_steps = 0;
  std::vector<double> times;
  std::vector<std::size_t> checkpoint_index;
  std::vector<double> xi_T, P_T;
  std::vector<double> checkpoint_P;  ///< path * checkpoints + c
  std::size_t exits = 0;
  bool bridge = false;
  // bridge only
  std::vector<double> v_targets, xi_targets, terminal_gap;
  std::vector<double> wealth_direct, wealth_decomposed;
  std::size_t unreachable_targets = 0;
  // full paths, path * (n_steps + 1) + k, when requested
  std::vector<double> B, Y, xi, P;

  [[nodiscard]] double last_dt() const { return times[times.size() - 1] - times[times.size() - 2]; }
  [[nodiscard]] bool has_paths() const { return !xi.empty(); }
  [[nodiscard]] std::vector<double> path(const std::vector<double>& f, std::size_t p) const {
    const auto b = static_cast<std::ptrdiff_t>(p * (n_steps + 1));
    return {f.begin() + b, f.begin() + b + static_cast<std::ptrdiff_t>(n_steps + 1)};
  }
};

namespace detail {

inline std::vector<std::size_t> checkpoint_indices(const std::vector<double>& t, std::size_t n) {
  std::vector<std::size_t> out;
  const double T = t.back();
  for (std::size_t c = 1; c <= n; ++c) {
    const double target = T * static_cast<double>(c) / static_cast<double>(n);
    const auto it = std::lower_bound(t.begin(), t.end(), target - 1e-12 * T);
    out.push_back(static_cast<std::size_t>(it - t.begin()));
  }
  return out;
}

inline SimulationBatch make_batch(const SimulationConfig& cfg, double T) {
  if (cfg.n_paths == 0) throw DomainError("simulation: n_paths must be positive");
  SimulationBatch b;
  b.seed = cfg.seed;
  b.n_paths = cfg.n_paths;
  b.times = simulation_time_grid(T, cfg.n_steps, cfg.refine, cfg.last_step_fraction);
  b.n_steps = b.times.size() - 1;
  b.checkpoint_index = checkpoint_indices(b.times, cfg.checkpoints);
  b.xi_T.assign(cfg.n_paths, 0.0);
  b.P_T.assign(cfg.n_paths, 0.0);
  b.checkpoint_P.assign(cfg.n_paths * cfg.checkpoints, 0.0);
  if (cfg.store_paths)
    for (auto* f : {&b.B, &b.Y, &b.xi, &b.P}) f->assign(cfg.n_paths * (b.n_steps + 1), 0.0);
  return b;
}

/// Runs body(path, exits&) over contiguous blocks of paths.
template <class Body>
std::size_t run_blocks(std::size_t n, std::size_t threads, Body&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::size_t> exits(threads, 0);
  auto work = [&](std::size_t w) {
    const std::size_t lo = n * w / threads, hi = n * (w + 1) / threads;
    for (std::size_t p = lo; p < hi; ++p) body(p, exits[w]);
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  std::size_t total = 0;
  for (auto e : exits) total += e;
  return total;
}

inline void check_exits(const SimulationBatch& b, double tol) {
  const double steps = static_cast<double>(b.n_paths) * static_cast<double>(b.n_steps);
  if (static_cast<double>(b.exits) > tol * steps) {
    std::ostringstream os;
    os << b.exits << " of " << static_cast<std::size_t>(steps) << " simulated steps left the xi grid (limit "
       << tol * 100 << "%)";
    throw GridExitError(os.str());
  }
}

inline std::vector<PricingSurface::TimeSlot> time_slots(const PricingSurface& s, const std::vector<double>& t) {
  std::vector<PricingSurface::TimeSlot> out(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) out[k] = s.locate_t(t[k]);
  return out;
}

}  // namespace detail

/// Euler-Maruyama for d xi = sigma / chi_xi(t, xi) dB from xi = 0.
inline SimulationBatch simulate_xi0(const PricingSurface& s, const SimulationConfig& cfg) {
  const double T = s.params.T, sigma = s.params.sigma;
  SimulationBatch b = detail::make_batch(cfg, T);
  const auto base = simulation_time_grid(T, cfg.n_steps, 0, cfg.last_step_fraction);
  const auto slots = detail::time_slots(s, b.times);
  const double lo = s.grid.xi(0), hi = s.grid.xi(s.nx - 1);
  const std::size_t nk = cfg.checkpoints, stride = b.n_steps + 1;
  b.exits = detail::run_blocks(cfg.n_paths, cfg.threads, [&](std::size_t p, std::size_t& exits) {
    const auto dB = brownian_increments(base, cfg.refine, cfg.seed, p);
    double x = 0.0, Bv = 0.0;
    std::size_t c = 0;
    auto record = [&](std::size_t k) {
      const double price = s.interp_at(s.P, slots[k], x);
      while (c < nk && b.checkpoint_index[c] == k) b.checkpoint_P[p * nk + c++] = price;
      if (cfg.store_paths) {
        b.B[p * stride + k] = Bv;
        b.Y[p * stride + k] = sigma * Bv;
        b.xi[p * stride + k] = x;
        b.P[p * stride + k] = price;
      }
      return price;
    };
    record(0);
    double price = 0.0;
    for (std::size_t k = 0; k < b.n_steps; ++k) {
      const double cx = s.interp_at(s.ChiXi, slots[k], x);
      x += sigma / cx * dB[k];
      Bv += dB[k];
      if (x < lo || x > hi) {
        x = std::clamp(x, lo, hi);
        ++exits;
      }
      price = record(k + 1);
    }
    b.xi_T[p] = x;
    b.P_T[p] = price;
  });
  detail::check_exits(b, cfg.exit_tolerance);
  return b;
}

// ---------------------------------------------------------------------------
// Wealth
// ---------------------------------------------------------------------------

/// Pieces of the insider's terminal wealth along one bridge path.
struct WealthTerms {
  double direct = 0.0;      ///< sum (v - (P_k + P_{k+1}) / 2) dX_k
  double decomposed = 0.0;  ///< the same wealth from the state functions
  double stochastic = 0.0;  ///< sum (v - P_k) sigma dB_k with a Milstein correction
  double quadratic = 0.0;   ///< sum (v - P_k)^2 dt_k
};

/// W = (v xi_T - phi(xi_T)) - (v chi(0,0) - Gamma(0,0)) - stochastic
///     + gamma sigma^2 / 2 quadratic - gamma sigma^2 v^2 T / 2.
inline double decomposed_wealth(const ConvexPotential& pot, const RepresentationPoint& rep,
                                const ModelParams& p, double v, double xi_T, double stochastic,
                                double quadratic) {
  const double gs2 = p.gamma * p.sigma * p.sigma;
  return (v * xi_T - pot.eval_phi(xi_T)) - (v * rep.chi00 - rep.gamma00) - stochastic + 0.5 * gs2 * quadratic -
         0.5 * gs2 * v * v * p.T;
}

/// Stepping in chi coordinates: chi(t_{k+1}, xi_{k+1}) = chi(0,0) + Y_{k+1}
/// + sum gamma sigma^2 P(t_j, xi_j) dt_j, with dY = theta dt + sigma dB and
/// theta = (g^{-1}(v) - xi) / (T - t). At the last step chi(T,.) is the
/// identity, so xi_T - g^{-1}(v) is sigma times the last Brownian increment.
inline SimulationBatch simulate_bridge(const PricingSurface& s, const ConvexPotential& pot,
                                       const BeliefDistribution& nu, const RepresentationPoint& rep,
                                       const SimulationConfig& cfg) {
  const ModelParams& pr = s.params;
  const double T = pr.T, sigma = pr.sigma, gs2 = pr.gamma * sigma * sigma;
  SimulationBatch b = detail::make_batch(cfg, T);
  b.bridge = true;
  for (auto* f : {&b.v_targets, &b.xi_targets, &b.terminal_gap, &b.wealth_direct, &b.wealth_decomposed})
    f->assign(cfg.n_paths, 0.0);
  const auto base = simulation_time_grid(T, cfg.n_steps, 0, cfg.last_step_fraction);
  const auto slots = detail::time_slots(s, b.times);
  const std::size_t cn = s.grid.center();
  const double c0 = s.Chi[s.idx(0, cn)];
  const std::size_t nk = cfg.checkpoints, stride = b.n_steps + 1;
  std::vector<unsigned char> unreachable(cfg.n_paths, 0);
  b.exits = detail::run_blocks(cfg.n_paths, cfg.threads, [&](std::size_t p, std::size_t& exits) {
    double v;
    if (cfg.fixed_v) {
      v = *cfg.fixed_v;
    } else {
      auto e = path_engine(cfg.seed, p, kValueStream);
      v = nu.quantile(open_uniform(e));
    }
    double target;
    if (pot.in_open_range(v)) {
      target = pot.inverse_g(v);
    } else {
      target = v <= pot.g_nodes().front() ? s.grid.xi(0) : s.grid.xi(s.nx - 1);
      unreachable[p] = 1;
    }
    const auto dB = brownian_increments(base, cfg.refine, cfg.seed, p);
    double x = 0.0, Bv = 0.0, Yv = 0.0, drift_int = 0.0;
    double direct = 0.0, stoch = 0.0, quad = 0.0;
    std::size_t c = 0;
    double price = s.interp_at(s.P, slots[0], x);
    auto record = [&](std::size_t k) {
      while (c < nk && b.checkpoint_index[c] == k) b.checkpoint_P[p * nk + c++] = price;
      if (cfg.store_paths) {
        b.B[p * stride + k] = Bv;
        b.Y[p * stride + k] = Yv;
        b.xi[p * stride + k] = x;
        b.P[p * stride + k] = price;
      }
    };
    record(0);
    for (std::size_t k = 0; k < b.n_steps; ++k) {
      const double dt = b.times[k + 1] - b.times[k];
      const double theta = (target - x) / (T - b.times[k]);
      const double dX = theta * dt;
      const double gap = v - price;
      const double R = s.interp_at(s.R, slots[k], x);
      const double cx = s.interp_at(s.ChiXi, slots[k], x);
      stoch += gap * sigma * dB[k] - 0.5 * (R / cx) * sigma * sigma * (dB[k] * dB[k] - dt);
      quad += gap * gap * dt;
      drift_int += gs2 * price * dt;
      Yv += dX + sigma * dB[k];
      Bv += dB[k];
      if (!s.chi_inverse_at(slots[k + 1], c0 + Yv + drift_int, x)) ++exits;
      price = s.interp_at(s.P, slots[k + 1], x);
      // X has finite variation, so the trapezoid in P is a consistent
      // quadrature of int (v - P) dX; it removes the O(dt) bias the left
      // point picks up from the drift of P along the bridge.
      direct += 0.5 * (gap + (v - price)) * dX;
      record(k + 1);
    }
    b.v_targets[p] = v;
    b.xi_targets[p] = target;
    b.xi_T[p] = x;
    b.P_T[p] = price;
    b.terminal_gap[p] = std::abs(x - target);
    b.wealth_direct[p] = direct;
    b.wealth_decomposed[p] = decomposed_wealth(pot, rep, pr, v, x, stoch, quad);
  });
  for (auto u : unreachable) b.unreachable_targets += u;
  detail::check_exits(b, cfg.exit_tolerance);
  return b;
}

/// xi path from an order-flow path Y on `times` by the same chi recursion
/// the bridge uses. Returns the number of clamped steps in `exits`.
inline std::vector<double> recover_xi_from_flow(const PricingSurface& s, const std::vector<double>& times,
                                                const std::vector<double>& Y, std::size_t* exits = nullptr) {
  if (times.size() != Y.size() || times.size() < 2) throw DomainError("recover_xi: malformed order-flow path");
  const double gs2 = s.params.gamma * s.params.sigma * s.params.sigma;
  const double c0 = s.Chi[s.idx(0, s.grid.center())];
  std::vector<double> xi(times.size(), 0.0);
  double x = 0.0, drift_int = 0.0;
  auto slot = s.locate_t(times[0]);
  double price = s.interp_at(s.P, slot, x);
  std::size_t out = 0;
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    drift_int += gs2 * price * (times[k + 1] - times[k]);
    slot = s.locate_t(times[k + 1]);
    if (!s.chi_inverse_at(slot, c0 + Y[k + 1] + drift_int, x)) ++out;
    price = s.interp_at(s.P, slot, x);
    xi[k + 1] = x;
  }
  if (exits) *exits = out;
  return xi;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// One-sample Kolmogorov-Smirnov distance.
template <class Cdf>
double ks_statistic(std::vector<double> sample, Cdf&& cdf) {
  if (sample.empty()) throw DomainError("ks_statistic: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double F = cdf(sample[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - F, F - static_cast<double>(i) / n});
  }
  return d;
}

/// Asymptotic 1% critical value of the one-sample KS distance.
inline double ks_critical_1pct(std::size_t n) { return 1.63 / std::sqrt(static_cast<double>(n)); }

struct MartingaleCheck {
  std::vector<double> times;
  std::vector<double> means;
  std::vector<double> z;
  double reference = 0.0;  ///< P(0,0)
  double max_abs_z = 0.0;
};

/// z-scores of the sample mean of P(t, xi_t) against P(0,0) at the batch
/// checkpoints.
inline MartingaleCheck martingale_check(const SimulationBatch& b, const PricingSurface& s) {
  MartingaleCheck m;
  m.reference = s.P[s.idx(0, s.grid.center())];
  const std::size_t nk = b.checkpoint_index.size();
  const double n = static_cast<double>(b.n_paths);
  for (std::size_t c = 0; c < nk; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t p = 0; p < b.n_paths; ++p) sum += b.checkpoint_P[p * nk + c];
    const double mean = sum / n;
    for (std::size_t p = 0; p < b.n_paths; ++p) {
      const double d = b.checkpoint_P[p * nk + c] - mean;
      sq += d * d;
    }
    const double se = std::sqrt(sq / (n - 1.0) / n);
    const double z = se > 0.0 ? (mean - m.reference) / se : 0.0;
    m.times.push_back(b.times[b.checkpoint_index[c]]);
    m.means.push_back(mean);
    m.z.push_back(z);
    m.max_abs_z = std::max(m.max_abs_z, std::abs(z));
  }
  return m;
}

struct WealthSummary {
  double mean_gap = 0.0;  ///< mean |direct - decomposed|
  double max_gap = 0.0;
  double utility_mean = 0.0;  ///< mean of -exp(-gamma W)
  double utility_se = 0.0;
  double wealth_mean = 0.0;
};

inline WealthSummary wealth_decomposition(const SimulationBatch& b, const ModelParams& p) {
  if (!b.bridge) throw DomainError("wealth_decomposition: needs a bridge batch");
  WealthSummary w;
  const double n = static_cast<double>(b.n_paths);
  std::vector<double> u(b.n_paths);
  for (std::size_t i = 0; i < b.n_paths; ++i) {
    const double gap = std::abs(b.wealth_direct[i] - b.wealth_decomposed[i]);
    w.mean_gap += gap / n;
    w.max_gap = std::max(w.max_gap, gap);
    w.wealth_mean += b.wealth_direct[i] / n;
    u[i] = -std::exp(-p.gamma * b.wealth_direct[i]);
    w.utility_mean += u[i] / n;
  }
  double sq = 0.0;
  for (double v : u) sq += (v - w.utility_mean) * (v - w.utility_mean);
  w.utility_se = b.n_paths > 1 ? std::sqrt(sq / (n - 1.0) / n) : 0.0;
  return w;
}

/// Mean pinning error |xi_T - g^{-1}(v)| and |P_T - v| of a bridge batch.
struct PinningSummary {
  double mean_state_gap = 0.0;
  double mean_price_gap = 0.0;
  double scale = 0.0;  ///< sigma sqrt(last dt)
};

inline PinningSummary pinning_summary(const SimulationBatch& b, const ModelParams& p) {
  PinningSummary s;
  const double n = static_cast<double>(b.n_paths);
  for (std::size_t i = 0; i < b.n_paths; ++i) {
    s.mean_state_gap += b.terminal_gap[i] / n;
    s.mean_price_gap += std::abs(b.P_T[i] - b.v_targets[i]) / n;
  }
  s.scale = p.sigma * std::sqrt(b.last_dt());
  return s;
}

}  // namespace kyleback
