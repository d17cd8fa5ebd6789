#pragma once

// Run configuration: JSON in, fully resolved JSON out.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kyleback/beliefs.hpp"
#include "kyleback/errors.hpp"
#include "kyleback/model.hpp"
#include "kyleback/potential.hpp"

namespace kyleback {

/// Malformed or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct BeliefSpec {
  std::string kind = "uniform";
  double mean = 1.0, stdev = 1.0;              // gaussian
  double a = 10.0, b = 20.0;                   // uniform
  double mu_log = 0.0, sigma_log = 1.0;        // truncated_lognormal
  double lo = 0.0, hi = 1.0;                   // truncated_lognormal
  std::vector<double> grid, density;           // tabulated

  [[nodiscard]] BeliefDistribution build() const {
    if (kind == "gaussian") return BeliefDistribution::gaussian(mean, stdev);
    if (kind == "uniform") return BeliefDistribution::uniform(a, b);
    if (kind == "truncated_lognormal") return BeliefDistribution::truncated_lognormal(mu_log, sigma_log, lo, hi);
    if (kind == "tabulated") return BeliefDistribution::tabulated(grid, density);
    throw ConfigError("belief.kind must be gaussian, uniform, truncated_lognormal or tabulated (got '" + kind +
                      "')");
  }
};

struct RunConfig {
  ModelParams model;
  bool l_cap_given = false;
  BeliefSpec belief;
  std::size_t xi_nodes = 2049;
  double xi_halfwidth = 0.0;  ///< 0: 8 sigma sqrt(T)
  std::size_t t_steps = 512;
  double fp_tol = 1e-6;
  int fp_max_iter = 200;
  double fp_damping = 1.0;
  double cdf_clamp = 1e-12;
  std::size_t n_paths = 10000;
  std::size_t n_steps = 500;
  std::uint64_t seed = 20240607;
  std::size_t min_paths = 1000;
  std::vector<double> utility_levels{0.1, 0.3, 0.5, 0.7, 0.9};  ///< nu quantiles of the fixed targets
  std::vector<std::pair<double, double>> probes{{0.0, 0.0},  {0.5, 0.0},  {0.95, 0.0}, {0.5, -0.5},
                                                {0.5, 0.5},  {0.95, -0.5}, {0.95, 0.5}};
  std::size_t surface_t_stride = 8;
  std::size_t surface_xi_stride = 8;
  std::string out_dir = "kyleback_out";
  bool full_paths = false;

  [[nodiscard]] XiGrid grid() const {
    return XiGrid{xi_halfwidth > 0.0 ? xi_halfwidth : 8.0 * model.sigma * std::sqrt(model.T), xi_nodes};
  }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const char* block, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(std::string(block) + " must be a JSON object");
  std::set<std::string> ok(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError(std::string("unknown key '") + it.key() + "' in " + block);
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

/// Budget and range checks; resolves l_cap from the belief when absent.
inline void resolve_and_validate(RunConfig& c) {
  const BeliefDistribution nu = c.belief.build();
  if (!c.l_cap_given) {
    if (nu.assumption_violating())
      throw ConfigError("belief '" + c.belief.kind +
                        "' has no slope bound for its Brenier map; set model.l_cap explicitly");
    c.model.l_cap = belief_slope_cap(nu, c.model.T, c.model.sigma);
    if (!std::isfinite(c.model.l_cap))
      throw ConfigError("belief density is not bounded below on its support; set model.l_cap explicitly");
  }
  c.model.validate_representation();
  if (c.xi_nodes < 5 || c.xi_nodes % 2 == 0) throw ConfigError("grids.xi_nodes must be odd and at least 5");
  if (c.t_steps < 2) throw ConfigError("grids.t_steps must be at least 2");
  if (!(c.fp_tol > 0.0)) throw ConfigError("fixed_point.tol must be positive");
  if (c.fp_max_iter < 1) throw ConfigError("fixed_point.max_iter must be at least 1");
  if (!(c.fp_damping > 0.0 && c.fp_damping <= 1.0)) throw ConfigError("fixed_point.damping must be in (0, 1]");
  if (c.n_paths == 0) throw ConfigError("simulate.n_paths must be positive");
  if (c.n_steps < 2) throw ConfigError("simulate.n_steps must be at least 2");
  for (double u : c.utility_levels)
    if (!(u > 0.0 && u < 1.0)) throw ConfigError("simulate.utility_levels must lie in (0, 1)");
  for (auto [t, x] : c.probes) {
    if (!(t >= 0.0 && t < c.model.T)) {
      std::ostringstream os;
      os << "probe (" << t << ", " << x << ") refused: the conditional law at t = T is a Dirac mass; use t < T";
      throw ConfigError(os.str());
    }
    if (std::abs(x) > c.grid().halfwidth) throw ConfigError("probe xi outside the grid");
  }
  if (c.surface_t_stride == 0 || c.surface_xi_stride == 0) throw ConfigError("report strides must be positive");
  c.xi_halfwidth = c.grid().halfwidth;
}

inline RunConfig parse_config(const nlohmann::json& j) {
  using detail::read;
  RunConfig c;
  detail::reject_unknown(j, "config", {"model", "belief", "grids", "fixed_point", "simulate", "report", "outputs"});
  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::reject_unknown(m, "model", {"T", "sigma", "gamma", "l_cap"});
    read(m, "T", c.model.T);
    read(m, "sigma", c.model.sigma);
    read(m, "gamma", c.model.gamma);
    if (m.contains("l_cap") && !m["l_cap"].is_null()) {
      read(m, "l_cap", c.model.l_cap);
      c.l_cap_given = true;
    }
  }
  if (j.contains("belief")) {
    const auto& b = j["belief"];
    detail::reject_unknown(b, "belief",
                           {"kind", "mean", "stdev", "a", "b", "mu_log", "sigma_log", "lo", "hi", "grid", "density"});
    read(b, "kind", c.belief.kind);
    read(b, "mean", c.belief.mean);
    read(b, "stdev", c.belief.stdev);
    read(b, "a", c.belief.a);
    read(b, "b", c.belief.b);
    read(b, "mu_log", c.belief.mu_log);
    read(b, "sigma_log", c.belief.sigma_log);
    read(b, "lo", c.belief.lo);
    read(b, "hi", c.belief.hi);
    read(b, "grid", c.belief.grid);
    read(b, "density", c.belief.density);
  }
  if (j.contains("grids")) {
    const auto& g = j["grids"];
    detail::reject_unknown(g, "grids", {"xi_nodes", "xi_halfwidth", "t_steps"});
    read(g, "xi_nodes", c.xi_nodes);
    read(g, "xi_halfwidth", c.xi_halfwidth);
    read(g, "t_steps", c.t_steps);
  }
  if (j.contains("fixed_point")) {
    const auto& f = j["fixed_point"];
    detail::reject_unknown(f, "fixed_point", {"tol", "max_iter", "damping", "cdf_clamp"});
    read(f, "tol", c.fp_tol);
    read(f, "max_iter", c.fp_max_iter);
    read(f, "damping", c.fp_damping);
    read(f, "cdf_clamp", c.cdf_clamp);
  }
  if (j.contains("simulate")) {
    const auto& s = j["simulate"];
    detail::reject_unknown(s, "simulate", {"n_paths", "n_steps", "seed", "min_paths", "utility_levels"});
    read(s, "n_paths", c.n_paths);
    read(s, "n_steps", c.n_steps);
    read(s, "seed", c.seed);
    read(s, "min_paths", c.min_paths);
    read(s, "utility_levels", c.utility_levels);
  }
  if (j.contains("report")) {
    const auto& r = j["report"];
    detail::reject_unknown(r, "report", {"probes", "t_stride", "xi_stride"});
    if (r.contains("probes")) {
      c.probes.clear();
      for (const auto& p : r["probes"]) {
        if (!p.is_array() || p.size() != 2) throw ConfigError("report.probes entries must be [t, xi] pairs");
        c.probes.emplace_back(p[0].get<double>(), p[1].get<double>());
      }
    }
    read(r, "t_stride", c.surface_t_stride);
    read(r, "xi_stride", c.surface_xi_stride);
  }
  if (j.contains("outputs")) {
    const auto& o = j["outputs"];
    detail::reject_unknown(o, "outputs", {"directory", "full_paths"});
    read(o, "directory", c.out_dir);
    read(o, "full_paths", c.full_paths);
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json belief = {{"kind", c.belief.kind}};
  if (c.belief.kind == "gaussian") {
    belief["mean"] = c.belief.mean;
    belief["stdev"] = c.belief.stdev;
  } else if (c.belief.kind == "uniform") {
    belief["a"] = c.belief.a;
    belief["b"] = c.belief.b;
  } else if (c.belief.kind == "truncated_lognormal") {
    belief["mu_log"] = c.belief.mu_log;
    belief["sigma_log"] = c.belief.sigma_log;
    belief["lo"] = c.belief.lo;
    belief["hi"] = c.belief.hi;
  } else {
    belief["grid"] = c.belief.grid;
    belief["density"] = c.belief.density;
  }
  nlohmann::json probes = nlohmann::json::array();
  for (auto [t, x] : c.probes) probes.push_back({t, x});
  return {
      {"model", {{"T", c.model.T}, {"sigma", c.model.sigma}, {"gamma", c.model.gamma}, {"l_cap", c.model.l_cap}}},
      {"belief", belief},
      {"grids", {{"xi_nodes", c.xi_nodes}, {"xi_halfwidth", c.xi_halfwidth}, {"t_steps", c.t_steps}}},
      {"fixed_point",
       {{"tol", c.fp_tol}, {"max_iter", c.fp_max_iter}, {"damping", c.fp_damping}, {"cdf_clamp", c.cdf_clamp}}},
      {"simulate",
       {{"n_paths", c.n_paths},
        {"n_steps", c.n_steps},
        {"seed", c.seed},
        {"min_paths", c.min_paths},
        {"utility_levels", c.utility_levels}}},
      {"report", {{"probes", probes}, {"t_stride", c.surface_t_stride}, {"xi_stride", c.surface_xi_stride}}},
      {"outputs", {{"directory", c.out_dir}, {"full_paths", c.full_paths}}},
  };
}

}  // namespace kyleback
