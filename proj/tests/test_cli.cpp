#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("kyleback_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int run(const std::string& args) {
  const std::string cmd = std::string(KYLEBACK_CLI_PATH) + " --quiet " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json small_config(json overrides = json::object()) {
  json c = {{"grids", {{"xi_nodes", 513}, {"t_steps", 128}}},
            {"simulate", {{"n_paths", 2000}, {"n_steps", 200}, {"min_paths", 1000}}}};
  c.merge_patch(overrides);
  return c;
}

fs::path write_config(const fs::path& dir, const json& c) {
  const auto p = dir / "config.json";
  std::ofstream(p) << c.dump(2);
  return p;
}

std::string with(const fs::path& cfg, const fs::path& out) {
  return "--config " + cfg.string() + " --out " + (out / "run").string();
}

}  // namespace

TEST(Cli, RequiresOneSubcommand) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_NE(run(""), 0);
  EXPECT_NE(run("frobnicate"), 0);
}

TEST(Cli, FullPipelineWritesEveryArtifact) {
  const auto d = scratch("all");
  const auto cfg = write_config(d, small_config());
  ASSERT_EQ(run(with(cfg, d) + " all"), 0);
  const auto out = d / "run";
  for (const char* f : {"resolved_config.json", "g_star.csv", "residuals.csv", "mu_density.csv", "fixed_point.json",
                        "surface_P.csv", "surface_chi.csv", "surface_Gamma.csv", "surface_R.csv", "pde.json",
                        "lambda_depth.csv", "conditional_cdf.csv", "utility.csv", "report.json", "simulation.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto resolved = json::parse(slurp(out / "resolved_config.json"));
  EXPECT_NEAR(resolved["model"]["l_cap"].get<double>(), 10.0 / std::sqrt(2.0 * M_PI * 0.25), 1e-12);
  EXPECT_EQ(resolved["grids"]["xi_nodes"].get<int>(), 513);
  const auto fp = json::parse(slurp(out / "fixed_point.json"));
  EXPECT_TRUE(fp["converged"].get<bool>());
  std::ifstream g(out / "g_star.csv");
  std::string header;
  std::getline(g, header);
  EXPECT_EQ(header, "xi,g,slope");
}

TEST(Cli, RerunsAreByteIdentical) {
  const auto d = scratch("determinism");
  const auto cfg = write_config(d, small_config());
  const std::string a = "--config " + cfg.string() + " --out " + (d / "a").string();
  const std::string b = "--config " + cfg.string() + " --out " + (d / "b").string();
  ASSERT_EQ(run(a + " fixed-point"), 0);
  ASSERT_EQ(run(b + " fixed-point"), 0);
  EXPECT_EQ(slurp(d / "a" / "g_star.csv"), slurp(d / "b" / "g_star.csv"));
  const int ra = run(a + " simulate --seed 5 --paths 1000");
  const int rb = run(b + " simulate --seed 5 --paths 1000");
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(slurp(d / "a" / "simulation.json"), slurp(d / "b" / "simulation.json"));
}

TEST(Cli, GaussianSlopeColumnIsTheLinearSlope) {
  const auto d = scratch("gaussian");
  const auto cfg = write_config(d, small_config({{"belief", {{"kind", "gaussian"}, {"mean", 1.0}, {"stdev", 1.0}}},
                                                 {"model", {{"l_cap", 4.0}}}}));
  ASSERT_EQ(run(with(cfg, d) + " fixed-point"), 0);
  const double lam = json::parse(slurp(d / "run" / "fixed_point.json"))["gaussian_lambda"].get<double>();
  EXPECT_NEAR(lam, 1.9506249024, 1e-9);
  std::ifstream in(d / "run" / "g_star.csv");
  std::string line;
  std::getline(in, line);
  int checked = 0;
  while (std::getline(in, line)) {
    double xi = 0, g = 0, slope = 0;
    char c1 = 0, c2 = 0;
    std::istringstream(line) >> xi >> c1 >> g >> c2 >> slope;
    if (std::abs(xi) > 2.0) continue;
    EXPECT_NEAR(slope, lam, 1e-4) << line;
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(Cli, ExitCodes) {
  const auto d = scratch("codes");
  EXPECT_EQ(run("--config " + write_config(d, small_config({{"model", {{"gamma", 5.0}}}})).string() + " --out " +
                (d / "budget").string() + " fixed-point"),
            3);
  EXPECT_EQ(run("--config " + write_config(d, small_config({{"fixed_point", {{"max_iter", 1}}}})).string() +
                " --out " + (d / "slow").string() + " fixed-point"),
            2);
  EXPECT_TRUE(fs::exists(d / "slow" / "g_star.csv"));
  EXPECT_TRUE(fs::exists(d / "slow" / "residuals.csv"));
  const auto ok = write_config(d, small_config());
  EXPECT_EQ(run("--config " + ok.string() + " --out " + (d / "empty").string() + " pde"), 4);
  EXPECT_EQ(run("--config " + ok.string() + " --out " + (d / "empty").string() + " report"), 4);
  EXPECT_EQ(run("--config " + write_config(d, small_config({{"model", {{"gama", 0.1}}}})).string() + " fixed-point"),
            1);
  EXPECT_EQ(run("--config " + write_config(d, small_config({{"report", {{"probes", {{1.0, 0.0}}}}}})).string() +
                " fixed-point"),
            1);
  EXPECT_EQ(run("--config " + (d / "missing.json").string() + " fixed-point"), 1);
}

TEST(Cli, SmallSampleIsSkippedNotFailed) {
  const auto d = scratch("skip");
  const auto cfg = write_config(d, small_config());
  ASSERT_EQ(run(with(cfg, d) + " fixed-point"), 0);
  ASSERT_EQ(run(with(cfg, d) + " simulate --paths 10"), 0);
  const auto sim = slurp(d / "run" / "simulation.json");
  EXPECT_NE(sim.find("skipped"), std::string::npos);
}
