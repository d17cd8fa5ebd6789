// kyleback: fixed point -> pricing surfaces -> equilibrium report -> Monte Carlo.
//
// Exit codes: 0 ok, 1 usage or config error, 2 non-convergence, 3 budget
// violation, 4 missing artifact, 5 statistical gate failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kyleback/config.hpp"
#include "kyleback/kyleback.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kyleback;

namespace {

enum Exit : int { kOk = 0, kGeneric = 1, kNonConvergence = 2, kBudget = 3, kMissing = 4, kGate = 5 };

class MissingArtifact : public Error {
 public:
  using Error::Error;
};

bool g_quiet = false;

void note(const std::string& msg) {
  if (!g_quiet) std::cerr << "kyleback: " << msg << '\n';
}

std::ofstream open_csv(const fs::path& path, const char* header) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << header << '\n' << std::setprecision(17);
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Non-finite values are not valid JSON numbers.
json num(double x) {
  if (std::isfinite(x)) return x;
  return x > 0 ? "inf" : (x < 0 ? "-inf" : "nan");
}

void echo_config(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  write_json(dir / "resolved_config.json", to_json(c));
}

fs::path gstar_path(const RunConfig& c) { return fs::path(c.out_dir) / "g_star.csv"; }

// Node slopes: central differences inside, one-sided at the ends.
std::vector<double> node_slopes(const std::vector<double>& g, double h) {
  const std::size_t n = g.size();
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = i == 0 ? 0 : i - 1, b = i + 1 == n ? i : i + 1;
    s[i] = (g[b] - g[a]) / (static_cast<double>(b - a) * h);
  }
  return s;
}

void write_gstar(const fs::path& path, const XiGrid& grid, const std::vector<double>& g) {
  auto out = open_csv(path, "xi,g,slope");
  const auto s = node_slopes(g, grid.h());
  for (std::size_t i = 0; i < g.size(); ++i) out << grid.xi(i) << ',' << g[i] << ',' << s[i] << '\n';
}

void write_residuals(const fs::path& path, const std::vector<double>& w, const std::vector<double>& u,
                     const std::vector<double>& mass) {
  auto out = open_csv(path, "iteration,residual,residual_sup,density_integral");
  for (std::size_t k = 0; k < w.size(); ++k) {
    out << k + 1 << ',' << w[k] << ',';
    if (k < u.size()) out << u[k];
    out << ',';
    if (k < mass.size()) out << mass[k];
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

int cmd_fixed_point(const RunConfig& c) {
  const fs::path dir = c.out_dir;
  echo_config(c, dir);
  const auto nu = c.belief.build();
  FixedPointOptions opt;
  opt.tol = c.fp_tol;
  opt.max_iter = c.fp_max_iter;
  opt.damping = c.fp_damping;
  opt.cdf_clamp = c.cdf_clamp;
  opt.grid = c.grid();
  note("fixed point: belief " + nu.kind_name() + ", l_cap " + std::to_string(c.model.l_cap));
  FixedPointResult r;
  try {
    r = picard_solve(nu, c.model, opt);
  } catch (const IterateBudgetViolation& e) {
    write_gstar(dir / "g_checkpoint.csv", e.grid, e.iterate);
    throw;
  } catch (const DivergenceError& e) {
    write_gstar(dir / "g_star.csv", e.grid, e.last_iterate);
    write_residuals(dir / "residuals.csv", e.residuals, {}, {});
    write_json(dir / "fixed_point.json", {{"converged", false}, {"reason", e.what()}});
    std::cerr << "kyleback: " << e.what() << '\n';
    return kNonConvergence;
  }
  const auto& g = r.potential.g_nodes();
  const XiGrid grid = r.potential.grid();
  write_gstar(dir / "g_star.csv", grid, g);
  write_residuals(dir / "residuals.csv", r.residuals, r.residuals_unweighted, r.density_integrals);
  {
    auto out = open_csv(dir / "mu_density.csv", "xi,density,cdf");
    for (std::size_t i = 0; i < grid.nodes; ++i)
      out << grid.xi(i) << ',' << r.mu_density.f[i] << ',' << r.mu_density.F[i] << '\n';
  }
  const auto& rep = r.representation;
  json j = {{"converged", r.converged},
            {"iterations", r.iterations},
            {"residual", r.residuals.empty() ? 0.0 : r.residuals.back()},
            {"residual_sup", r.residuals_unweighted.empty() ? 0.0 : r.residuals_unweighted.back()},
            {"l_cap", c.model.l_cap},
            {"slope_budget", c.model.budget()},
            {"max_slope", r.potential.max_slope()},
            {"g_min", g.front()},
            {"g_max", g.back()},
            {"chi00", rep.chi00},
            {"gamma00", rep.gamma00},
            {"price00", rep.price00},
            {"clamped_nodes", r.clamped_nodes}};
  if (nu.is_gaussian()) {
    const auto gb = gaussian_benchmark(c.model, std::sqrt(nu.variance()), nu.mean());
    j["gaussian_lambda"] = gb.lambda;
    j["gaussian_intercept"] = gb.m;
  }
  write_json(dir / "fixed_point.json", j);
  if (!r.converged) {
    std::cerr << "kyleback: fixed point did not converge in " << r.iterations << " iterations (residual "
              << r.residuals.back() << ")\n";
    return kNonConvergence;
  }
  note("fixed point converged in " + std::to_string(r.iterations) + " iterations");
  return kOk;
}

struct Loaded {
  ConvexPotential pot;
  RepresentationPoint rep;
  PricingSurface surface;
};

Loaded load_pipeline(const RunConfig& c) {
  const fs::path path = gstar_path(c);
  if (!fs::exists(path)) throw MissingArtifact("missing " + path.string() + "; run fixed-point first");
  Loaded L{ConvexPotential::read_csv(path.string(), c.model.l_cap), {}, {}};
  if (L.pot.grid().nodes != c.xi_nodes || std::abs(L.pot.grid().halfwidth - c.grid().halfwidth) > 1e-12)
    throw MissingArtifact(path.string() + " was produced on a different grid; rerun fixed-point");
  L.rep = solve_representation(L.pot, c.model);
  PdeOptions po;
  po.t_steps = c.t_steps;
  // The identity residual is second order in h; the bound is set for the
  // default 2049 nodes and scaled on coarser grids.
  AssembleOptions ao;
  const double coarsen = 2048.0 / static_cast<double>(c.xi_nodes - 1);
  ao.identity_tolerance *= std::max(1.0, coarsen * coarsen);
  note("solving the pricing PDE");
  L.surface = build_surface(L.pot, c.model, po, ao);
  return L;
}

void write_surfaces(const RunConfig& c, const PricingSurface& s, const fs::path& dir) {
  const std::size_t ts = c.surface_t_stride, xs = c.surface_xi_stride;
  s.write_field_csv((dir / "surface_P.csv").string(), s.P, ts, xs);
  s.write_field_csv((dir / "surface_chi.csv").string(), s.Chi, ts, xs);
  s.write_field_csv((dir / "surface_Gamma.csv").string(), s.Gamma, ts, xs);
  s.write_field_csv((dir / "surface_R.csv").string(), s.R, ts, xs);
}

json pde_summary(const PricingSurface& s) {
  const auto r = check_system_residual(s);
  double rmin = s.R.front(), rmax = rmin, cmin = s.ChiXi.front(), cmax = cmin;
  for (double v : s.R) rmin = std::min(rmin, v), rmax = std::max(rmax, v);
  for (double v : s.ChiXi) cmin = std::min(cmin, v), cmax = std::max(cmax, v);
  return {{"res_Gamma", r.res_Gamma},
          {"res_chi", r.res_chi},
          {"res_P", r.res_P},
          {"res_identity", r.res_identity},
          {"R_min", rmin},
          {"R_max", rmax},
          {"chi_xi_min", cmin},
          {"chi_xi_max", cmax},
          {"P00", s.P[s.idx(0, s.grid.center())]},
          {"anchor_gap_P", s.anchor_gap_P},
          {"anchor_gap_A", s.anchor_gap_A},
          {"clamp_activations", s.clamp_activations}};
}

int cmd_pde(const RunConfig& c) {
  const fs::path dir = c.out_dir;
  echo_config(c, dir);
  const auto L = load_pipeline(c);
  write_surfaces(c, L.surface, dir);
  write_json(dir / "pde.json", pde_summary(L.surface));
  return kOk;
}

int cmd_report(const RunConfig& c) {
  const fs::path dir = c.out_dir;
  echo_config(c, dir);
  const auto L = load_pipeline(c);
  const auto& s = L.surface;
  const auto nu = c.belief.build();
  write_surfaces(c, s, dir);
  write_json(dir / "pde.json", pde_summary(s));

  const auto rep = equilibrium_report(s, L.pot, L.rep);
  {
    auto out = open_csv(dir / "lambda_depth.csv", "t,xi,lambda,zeta,zeta_drift,lambda_drift");
    for (std::size_t j = 0; j < s.nt; j += c.surface_t_stride)
      for (std::size_t i = 0; i < s.nx; i += c.surface_xi_stride) {
        const auto k = rep.idx(j, i);
        out << s.t[j] << ',' << s.xi(i) << ',' << rep.lambda[k] << ',' << rep.zeta[k] << ',' << rep.zeta_drift[k]
            << ',' << rep.lambda_drift[k] << '\n';
      }
  }

  const double vlo = L.pot.g_nodes().front(), vhi = L.pot.g_nodes().back();
  const std::size_t nv = 201;
  auto vgrid = [&](std::size_t k) { return vlo + (vhi - vlo) * static_cast<double>(k) / (nv - 1); };
  json probes = json::array();
  {
    auto out = open_csv(dir / "conditional_cdf.csv", "t,xi,v,cdf");
    for (auto [t, x] : c.probes) {
      const auto cv = conditional_value_cdf(s, L.pot, nu, t, x);
      for (std::size_t k = 0; k < nv; ++k) out << t << ',' << x << ',' << vgrid(k) << ',' << cv.cdf(vgrid(k)) << '\n';
      double prior_gap = 0.0;
      for (std::size_t k = 0; k < nv; ++k) prior_gap = std::max(prior_gap, std::abs(cv.cdf(vgrid(k)) - nu.cdf(vgrid(k))));
      probes.push_back({{"t", t},
                        {"xi", x},
                        {"price", s.interp(s.P, t, x)},
                        {"mean", cv.mean},
                        {"median", cv.median()},
                        {"iqr", cv.iqr()},
                        {"sup_gap_to_prior", prior_gap}});
    }
  }
  {
    auto out = open_csv(dir / "utility.csv", "v,utility,clamped");
    for (std::size_t k = 0; k < nv; ++k) {
      const auto u = expected_utility(L.pot, L.rep, c.model, vgrid(k));
      out << vgrid(k) << ',' << u.value << ',' << (u.clamped ? 1 : 0) << '\n';
    }
  }
  const double gs2 = c.model.gamma * c.model.sigma * c.model.sigma;
  write_json(dir / "report.json", {{"gamma_sigma2", gs2},
                                   {"min_zeta_drift", num(rep.min_zeta_drift())},
                                   {"max_lambda_drift", num(rep.max_lambda_drift())},
                                   {"prior_iqr", nu.quantile(0.75) - nu.quantile(0.25)},
                                   {"probes", probes}});
  note("report written to " + dir.string());
  return kOk;
}

void dump_paths(const fs::path& path, const SimulationBatch& b) {
  auto out = open_csv(path, "path,t,B,Y,xi,P");
  for (std::size_t p = 0; p < b.n_paths; ++p)
    for (std::size_t k = 0; k <= b.n_steps; ++k) {
      const std::size_t q = p * (b.n_steps + 1) + k;
      out << p << ',' << b.times[k] << ',' << b.B[q] << ',' << b.Y[q] << ',' << b.xi[q] << ',' << b.P[q] << '\n';
    }
}

int cmd_simulate(const RunConfig& c) {
  const fs::path dir = c.out_dir;
  echo_config(c, dir);
  const auto L = load_pipeline(c);
  const auto& s = L.surface;
  const auto nu = c.belief.build();
  const auto mu = terminal_density(L.pot, L.rep, c.model);
  auto F = [&](double x) { return mu.cdf(x); };

  SimulationConfig sc;
  sc.n_paths = c.n_paths;
  sc.n_steps = c.n_steps;
  sc.seed = c.seed;
  sc.store_paths = c.full_paths;

  json gates = json::object();
  std::vector<std::string> failed;
  auto gate = [&](const std::string& name, double value, double limit, bool pass) {
    gates[name] = {{"value", value}, {"limit", limit}, {"pass", pass}};
    if (!pass) failed.push_back(name);
  };

  note("simulating " + std::to_string(c.n_paths) + " uninformed paths");
  const auto xi0 = simulate_xi0(s, sc);
  note("simulating " + std::to_string(c.n_paths) + " bridge paths");
  const auto br = simulate_bridge(s, L.pot, nu, L.rep, sc);
  if (c.full_paths) {
    dump_paths(dir / "paths_xi0.csv", xi0);
    dump_paths(dir / "paths_bridge.csv", br);
  }
  const double crit = ks_critical_1pct(c.n_paths);
  const double ks0 = ks_statistic(xi0.xi_T, F);
  const auto mart = martingale_check(xi0, s);
  const double ksb = ks_statistic(br.xi_T, F);
  const auto pin = pinning_summary(br, c.model);
  const auto wealth = wealth_decomposition(br, c.model);

  gate("xi0_terminal_ks", ks0, crit, ks0 <= crit);
  gate("martingale_max_abs_z", mart.max_abs_z, 3.0, mart.max_abs_z <= 3.0);
  gate("bridge_terminal_ks", ksb, crit, ksb <= crit);
  gate("price_pinning", pin.mean_price_gap, 10.0 * pin.scale, pin.mean_price_gap <= 10.0 * pin.scale);

  json utility = json::array();
  for (double u : c.utility_levels) {
    SimulationConfig uc = sc;
    uc.store_paths = false;
    uc.fixed_v = nu.quantile(u);
    note("utility check at v = " + std::to_string(*uc.fixed_v));
    const auto b = simulate_bridge(s, L.pot, nu, L.rep, uc);
    const auto w = wealth_decomposition(b, c.model);
    const auto closed = expected_utility(L.pot, L.rep, c.model, *uc.fixed_v);
    const double z = w.utility_se > 0.0 ? (w.utility_mean - closed.value) / w.utility_se : 0.0;
    utility.push_back({{"level", u},
                       {"v", *uc.fixed_v},
                       {"mc_mean", w.utility_mean},
                       {"mc_se", w.utility_se},
                       {"closed_form", closed.value},
                       {"z", z},
                       {"wealth_identity_mean_gap", w.mean_gap}});
    std::ostringstream name;
    name << "utility_q" << u;
    gate(name.str(), std::abs(z), 3.0, std::abs(z) <= 3.0);
  }

  json summary = {{"n_paths", c.n_paths},
                  {"seed", c.seed},
                  {"n_steps", xi0.n_steps},
                  {"last_dt", xi0.last_dt()},
                  {"ks_critical_1pct", crit},
                  {"xi0", {{"ks", ks0}, {"grid_exits", xi0.exits}}},
                  {"martingale", {{"times", mart.times}, {"means", mart.means}, {"z", mart.z}, {"reference", mart.reference}}},
                  {"bridge",
                   {{"ks", ksb},
                    {"mean_state_gap", pin.mean_state_gap},
                    {"mean_price_gap", pin.mean_price_gap},
                    {"pinning_scale", pin.scale},
                    {"wealth_identity_mean_gap", wealth.mean_gap},
                    {"wealth_identity_max_gap", wealth.max_gap},
                    {"unreachable_targets", br.unreachable_targets},
                    {"grid_exits", br.exits}}},
                  {"utility", utility}};
  const bool enough = c.n_paths >= c.min_paths;
  if (enough) {
    summary["gates"] = gates;
  } else {
    summary["gates"] = "skipped";
    summary["note"] = "insufficient sample: " + std::to_string(c.n_paths) + " paths, gates need " +
                      std::to_string(c.min_paths);
  }
  write_json(dir / "simulation.json", summary);
  if (!enough) {
    note("insufficient sample; statistical gates skipped");
    return kOk;
  }
  if (!failed.empty()) {
    std::cerr << "kyleback: statistical gates failed:";
    for (const auto& f : failed) std::cerr << ' ' << f;
    std::cerr << '\n';
    return kGate;
  }
  note("all statistical gates passed");
  return kOk;
}

int cmd_all(const RunConfig& c) {
  for (auto cmd : {cmd_fixed_point, cmd_report, cmd_simulate})
    if (const int rc = cmd(c); rc != kOk) return rc;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kyle-Back equilibrium with a risk-averse insider"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  std::size_t paths = 0;
  app.add_option("--config", config_path, "JSON config file (defaults when omitted)");
  app.add_option("--out", out_dir, "artifact directory (overrides outputs.directory)");
  auto* seed_opt = app.add_option("--seed", seed, "simulation seed (overrides simulate.seed)");
  auto* paths_opt = app.add_option("--paths", paths, "number of simulated paths (overrides simulate.n_paths)");
  app.add_flag("--quiet", g_quiet, "no progress messages");
  auto* fp = app.add_subcommand("fixed-point", "solve for the terminal map g*");
  auto* pde = app.add_subcommand("pde", "solve the pricing PDE from g_star.csv");
  auto* report = app.add_subcommand("report", "surfaces, impact and depth, conditional laws, utility");
  auto* sim = app.add_subcommand("simulate", "Monte Carlo checks with statistical gates");
  auto* all = app.add_subcommand("all", "fixed-point, report and simulate in sequence");
  for (auto* sc : {fp, pde, report, sim, all}) sc->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kGeneric;
  }

  try {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (!out_dir.empty()) c.out_dir = out_dir;
    if (seed_opt->count()) c.seed = seed;
    if (paths_opt->count()) c.n_paths = paths;
    resolve_and_validate(c);
    if (*fp) return cmd_fixed_point(c);
    if (*pde) return cmd_pde(c);
    if (*report) return cmd_report(c);
    if (*sim) return cmd_simulate(c);
    return cmd_all(c);
  } catch (const MissingArtifact& e) {
    std::cerr << "kyleback: " << e.what() << '\n';
    return kMissing;
  } catch (const BudgetViolation& e) {
    std::cerr << "kyleback: budget violation: " << e.what() << '\n';
    return kBudget;
  } catch (const GridExitError& e) {
    std::cerr << "kyleback: statistical gates failed: grid_exits (" << e.what() << ")\n";
    return kGate;
  } catch (const NonConvergence& e) {
    std::cerr << "kyleback: " << e.what() << '\n';
    return kNonConvergence;
  } catch (const std::exception& e) {
    std::cerr << "kyleback: " << e.what() << '\n';
    return kGeneric;
  }
}
