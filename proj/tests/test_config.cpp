#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssl/config.hpp"
#include "ssl/experiments.hpp"

using namespace ssl;

TEST(Config, DefaultsRoundTrip) {
  const ExperimentConfig c;
  EXPECT_EQ(parse_config(serialize_config(c)), c);
}

TEST(Config, FullRoundTrip) {
  ExperimentConfig c;
  c.kind = "pc";
  c.seed = 99;
  c.threads = 3;
  c.output = "out/pc run";
  c.target.components = {{0.25, {-1.5, 2.0}, 0.3}, {0.75, {0.1, 1e-9}, 2.0}};
  c.target.lsi = 3.5;
  c.model = {"smld", "exponential", 0.5, 2.0, 3.0};
  c.oracle.mode = "linf_perturbed";
  c.oracle.eps1 = 0.1 + 0.2;  // not exactly 0.3
  c.sampler.record = {0, 1, 17};
  c.sampler.plan = "final";
  c.anneal.M1 = 0.25;
  c.anneal.sigma2 = {0.1, 1.0 / 3.0};
  c.bounds.D = {1, 2};
  c.bounds.delta = {0.5, 0.25};
  c.sweep = {4, 6};
  const ExperimentConfig back = parse_config(serialize_config(c));
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.oracle.eps1, 0.1 + 0.2);
}

TEST(Config, ParsesHandWrittenFile) {
  const std::string text = R"(# two modes
kind = "anneal"   # annealed Langevin
seed = 5
[[target.component]]
weight = 1
mean = [-4]
[[target.component]]
weight = 1
mean = [ 4 ]
variance = 1.0
[anneal]
sigma2 = []
steps_per_level = 20
)";
  const ExperimentConfig c = parse_config(text);
  EXPECT_EQ(c.kind, "anneal");
  EXPECT_EQ(c.seed, 5u);
  ASSERT_EQ(c.target.components.size(), 2u);
  EXPECT_EQ(c.target.components[1].mean, std::vector<double>{4.0});
  EXPECT_TRUE(c.anneal.sigma2.empty());
  EXPECT_EQ(c.anneal.steps_per_level, 20u);
}

namespace {
std::size_t error_line(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return 0;
}
}  // namespace

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_EQ(error_line("kind = \"lmc\"\n\n[sampler]\nstep_sise = 0.1\n"), 4u);
  EXPECT_EQ(error_line("kind = \"lmc\"\n[samplr]\n"), 2u);
  EXPECT_EQ(error_line("seed = -1\n"), 1u);
  EXPECT_EQ(error_line("seed = 1.5\n"), 1u);
  EXPECT_EQ(error_line("[sampler]\nsteps = \"ten\"\n"), 2u);
  EXPECT_EQ(error_line("kind = \"lmc\"\nkind = \"pc\"\n"), 2u);
  EXPECT_EQ(error_line("kind = \"walk\"\n"), 1u);
  EXPECT_EQ(error_line("[sampler]\nrecord = [1, , 2]\n"), 2u);
  EXPECT_EQ(error_line("[sampler]\n[sampler]\n"), 2u);
  EXPECT_EQ(error_line("just words\n"), 1u);
  EXPECT_EQ(error_line("x = \"open\n"), 1u);
}

TEST(Config, NumbersIgnoreLocaleAndRoundTrip) {
  for (double v : {0.1, 1e-300, 123456789.125, -2.5e17, 1.0 / 3.0}) {
    EXPECT_EQ(parse_double(format_double(v), 0), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}

TEST(Experiments, BoundsPassThrough) {
  ExperimentConfig c;
  c.kind = "bounds";
  c.bounds.theorem = "lmc";
  c.bounds.h = 1e-4;
  c.bounds.steps = 5;
  c.bounds.chi0 = 2.0;
  const RunOutput out = execute(c);
  EXPECT_EQ(out.exit_code, kExitOk);
  const BoundReport b = lmc_chi2_recursion({1, 1.0, 1.0, 1e-4, 0.0}, 2.0, 5);
  for (std::size_t k = 0; k <= 5; ++k) {
    const std::string row = std::to_string(k) + ",bound," + format_double(b.trajectory[k]) + ",lmc_chi2_recursion\n";
    EXPECT_NE(out.csv.find(row), std::string::npos) << row;
  }
  EXPECT_EQ(out.csv.rfind("# ", 0), 0u);
  EXPECT_NE(out.csv.find("\nstep,statistic,value,method\n"), std::string::npos);
}

TEST(Experiments, LmcOnGaussianChecksTheRecursion) {
  ExperimentConfig c;
  c.kind = "lmc";
  c.sampler.step_size = 1e-4;
  c.sampler.steps = 20;
  c.sampler.chains = 1000;
  c.sampler.init = "gaussian";
  c.sampler.init_mean = {0.5};
  c.sampler.init_variance = 1.2;
  const RunOutput out = execute(c);
  EXPECT_EQ(out.exit_code, kExitOk) << out.summary;
  EXPECT_NE(out.csv.find(",chi2_exact,"), std::string::npos);
  EXPECT_NE(out.csv.find(",histogram_tv,"), std::string::npos);
}

TEST(Experiments, DivergedRunExitsWithThree) {
  ExperimentConfig c;
  c.kind = "lmc";
  c.sampler.step_size = 3.0;  // |1 - h| > 1: the Gaussian chain blows up
  c.sampler.steps = 2000;
  c.sampler.chains = 10;
  EXPECT_EQ(execute(c).exit_code, kExitDiverged);
}

TEST(Experiments, BadSettingsAreConfigErrors) {
  ExperimentConfig c;
  c.kind = "lmc";
  c.oracle.mode = "psychic";
  EXPECT_THROW(execute(c), ConfigError);
  c.oracle.mode = "exact";
  c.target.components = {{1.0, {0.0}, -1.0}};
  EXPECT_THROW(execute(c), ConfigError);
  ExperimentConfig b;
  b.kind = "bounds";
  b.bounds.theorem = "fermat";
  EXPECT_THROW(execute(b), ConfigError);
}

TEST(Experiments, CounterexampleTable) {
  ExperimentConfig c;
  c.kind = "counterexample";
  c.sweep = {4, 8};
  const RunOutput out = execute(c);
  EXPECT_EQ(out.exit_code, kExitOk);
  const auto rows = counterexample_table({4, 8});
  EXPECT_GT(rows[0].l2_error_sq, rows[1].l2_error_sq);
  EXPECT_LT(rows[0].tv, rows[1].tv);
}

TEST(Experiments, ScheduleExplicitLevels) {
  ExperimentConfig c;
  c.kind = "schedule";
  c.anneal.sigma2 = {4.0, 1.0, 2.0};
  c.anneal.step_scale = 0.05;
  c.anneal.steps_per_level = 7;
  const AnnealSchedule s = build_schedule(c, build_mixture(c.target), nullptr);
  EXPECT_EQ(s.sigma2, (std::vector<double>{1.0, 2.0, 4.0}));
  EXPECT_DOUBLE_EQ(s.step_size[2], 0.05 * 5.0);
  EXPECT_EQ(s.num_steps[0], 7u);
}

TEST(Experiments, RunWritesArtifacts) {
  ExperimentConfig c;
  c.kind = "schedule";
  const auto dir = std::filesystem::temp_directory_path() / "ssl_run_artifacts";
  std::filesystem::remove_all(dir);
  std::ostringstream log;
  EXPECT_EQ(run(c, dir, log), kExitOk);
  for (const char* f : {"manifest.txt", "results.csv", "summary.txt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  std::ifstream m(dir / "manifest.txt");
  std::stringstream ss;
  ss << m.rdbuf();
  EXPECT_NE(ss.str().find("kind = \"schedule\""), std::string::npos);
  std::filesystem::remove_all(dir);
}
