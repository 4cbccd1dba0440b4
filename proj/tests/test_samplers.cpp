#include <gtest/gtest.h>

#include <cmath>

#include "ssl/divergences.hpp"
#include "ssl/samplers.hpp"

using namespace ssl;

namespace {
auto minus_x = [](const double* x, double* out) { out[0] = -x[0]; };
}

TEST(LmcStep, WorkedValues) {
  const Vector x = Vector::Constant(1, 1.0), xi = Vector::Zero(1);
  EXPECT_NEAR(lmc_step(x, minus_x, 0.1, xi)[0], 0.9, 1e-15);
  EXPECT_EQ(lmc_step(x, minus_x, 0.0, Vector::Constant(1, 3.0))[0], 1.0);
}

TEST(PredictorStep, WorkedValues) {
  const DiffusionModel ddpm(Family::kDDPM, DiffusionSchedule::constant(1.0), 1.0);
  const Vector z = Vector::Constant(1, 1.0), xi = Vector::Zero(1);
  auto minus_one = [](const double*, double* out) { out[0] = -1.0; };
  EXPECT_NEAR(predictor_step(z, minus_one, ddpm, 0.0, 0.1, xi)[0], 0.95, 1e-15);
  EXPECT_EQ(predictor_step(z, minus_one, ddpm, 0.3, 0.0, Vector::Constant(1, 2.0))[0], 1.0);
  const DiffusionModel smld(Family::kSMLD, DiffusionSchedule::constant(2.0), 1.0);
  EXPECT_NEAR(predictor_step(z, minus_one, smld, 0.0, 0.1, xi)[0], 1.0 - 0.4, 1e-15);
  EXPECT_THROW(predictor_step(z, minus_one, smld, 0.95, 0.1, xi), std::domain_error);
}

TEST(LmcRun, ZeroStepsIsInitialLaw) {
  SamplerConfig cfg{0.1, 0, 5000, 3, 1, {}};
  const auto init = GaussianMixture::gaussian(Vector::Constant(1, 2.0), 4.0);
  const auto run = lmc_run(cfg, 1, start_from(init), minus_x);
  const double m = run.final_states.mean();
  EXPECT_NEAR(m, 2.0, 4 * 2.0 / std::sqrt(5000.0));
}

TEST(LmcRun, ConstantShiftMovesStationaryMean) {
  const auto o = make_linf_oracle(GaussianMixture::standard(1), std::nullopt, 0.3, PerturbationShape::kConstantRotation);
  SamplerConfig cfg{0.05, 400, 20000, 5, 2, {}};
  const auto run = lmc_run(cfg, 1, start_gaussian(1, 1.0), o.at(0.0));
  EXPECT_NEAR(run.final_states.mean(), 0.3, 4 * 1.03 / std::sqrt(20000.0));
}

TEST(LmcRun, MatchesExactChainMoments) {
  const auto target = GaussianMixture::standard(1);
  const auto o = make_linf_oracle(target, std::nullopt, 0.2, PerturbationShape::kConstantRotation);
  const std::size_t n = 100000;
  SamplerConfig cfg{0.05, 40, n, 11, 4, {0, 10, 20, 40}};
  const auto run = lmc_run(cfg, 1, start_from(GaussianMixture::gaussian(Vector::Constant(1, 2.0), 0.5)), o.at(0.0));
  const auto exact = gaussian_exact_chain_lmc(o, Vector::Constant(1, 2.0), 0.5, 0.05, 40);
  for (std::size_t k : {0, 10, 20, 40}) {
    const Matrix& s = run.at_step(k);
    const double m = s.mean();
    const double v = (s.array() - m).square().sum() / (n - 1);
    EXPECT_NEAR(m, exact.mean(0, static_cast<Eigen::Index>(k)), 4 * std::sqrt(exact.variance[k] / n));
    EXPECT_NEAR(v, exact.variance[k], 4 * exact.variance[k] * std::sqrt(2.0 / n));
  }
}

TEST(ExactChain, LmcFixedPointAndUnsupported) {
  const auto o = ScoreOracle::exact(GaussianMixture::standard(1));
  const auto g = gaussian_exact_chain_lmc(o, Vector::Zero(1), 4.0, 0.1, 2000);
  EXPECT_NEAR(g.variance.back(), 1.0 / (1.0 - 0.05), 1e-12);
  const auto z = gaussian_exact_chain_lmc(o, Vector::Constant(1, 1.0), 1.5, 0.1, 0);
  EXPECT_EQ(z.chi2.size(), 1u);
  EXPECT_EQ(z.chi2[0], chi2_gaussians(0.0, 1.0, 1.0, 1.5, 1));
  EXPECT_THROW(gaussian_exact_chain_lmc(make_bump_oracle(4.0), Vector::Zero(1), 1.0, 0.1, 1), std::invalid_argument);
  const auto smooth = make_linf_oracle(GaussianMixture::standard(1), std::nullopt, 0.1, PerturbationShape::kSmoothField, 1);
  EXPECT_THROW(gaussian_exact_chain_lmc(smooth, Vector::Zero(1), 1.0, 0.1, 1), std::invalid_argument);
}

TEST(ExactChain, DdpmChi2Decreases) {
  const DiffusionModel m(Family::kDDPM, DiffusionSchedule::constant(1.0), 2.0);
  const auto o = ScoreOracle::exact(GaussianMixture::gaussian(Vector::Zero(1), 4.0), m);
  const auto g = gaussian_exact_chain(m, o, 2.0 / 4000, 4000);
  for (std::size_t k = 1; k < g.chi2.size(); ++k) EXPECT_LT(g.chi2[k], g.chi2[k - 1]);
}

TEST(Predictor, MatchesExactChainAndHalving) {
  const DiffusionModel m(Family::kDDPM, DiffusionSchedule::constant(1.0), 2.0);
  const auto o = ScoreOracle::exact(GaussianMixture::gaussian(Vector::Zero(1), 4.0), m);
  const std::size_t n = 100000;
  SamplerConfig cfg{0.1, 20, n, 3, 4, {0, 5, 20}};
  const auto run = predictor_corrector(m, o, cfg, CorrectorPlan::none(20));
  const auto exact = gaussian_exact_chain(m, o, 0.1, 20);
  for (std::size_t k : {0, 5, 20}) {
    const Matrix& s = run.at_step(k);
    const double mean = s.mean();
    const double v = (s.array() - mean).square().sum() / (n - 1);
    EXPECT_NEAR(mean, 0.0, 4 * std::sqrt(exact.variance[k] / n));
    EXPECT_NEAR(v, exact.variance[k], 4 * exact.variance[k] * std::sqrt(2.0 / n));
  }
  double prev = kInf;
  for (int lvl = 0; lvl < 4; ++lvl) {
    const std::size_t N = 20u << lvl;
    const auto g = gaussian_exact_chain(m, o, 2.0 / N, N);
    const double no_disc = gaussian_exact_chain(m, o, 2.0 / 40000, 40000).variance.back();
    const double err = std::abs(g.variance.back() - no_disc);
    if (lvl > 0) {
      EXPECT_GE(prev / err, 1.8);
    }
    prev = err;
  }
}

TEST(PredictorCorrector, FinalCorrectorHelps) {
  const DiffusionModel m(Family::kDDPM, DiffusionSchedule::constant(1.0), 2.0);
  const auto o = ScoreOracle::exact(GaussianMixture::gaussian(Vector::Zero(1), 4.0), m);
  const std::size_t N = 10;
  const auto plain = gaussian_exact_chain(m, o, 0.2, N);
  const auto pc = gaussian_exact_chain(m, o, 0.2, N, CorrectorPlan::final_only(N, 200, 0.05));
  EXPECT_LE(std::abs(pc.variance.back() - 4.0), std::abs(plain.variance.back() - 4.0));
  SamplerConfig cfg{0.2, N, 50000, 8, 2, {}};
  const auto run = predictor_corrector(m, o, cfg, CorrectorPlan::interleaved(N, 3, 0.02));
  const auto ex = gaussian_exact_chain(m, o, 0.2, N, CorrectorPlan::interleaved(N, 3, 0.02));
  const double mean = run.final_states.mean();
  const double v = (run.final_states.array() - mean).square().sum() / (50000 - 1);
  EXPECT_NEAR(v, ex.variance.back(), 4 * ex.variance.back() * std::sqrt(2.0 / 50000));
}

TEST(Annealed, SingleLevelEqualsLmcRun) {
  const auto target = GaussianMixture::standard(1);
  const auto o = ScoreOracle::exact(target);
  AnnealSchedule s{{0.5}, {0.1}, {30}, 2.0};
  const auto a = annealed_lmc(s, o, 2000, 9, 1);
  EXPECT_NEAR(a.final_states.mean(), 0.0, 0.1);
  const auto b = annealed_lmc(s, o, 2000, 9, 3);
  EXPECT_EQ(a.final_states, b.final_states);
}

TEST(Annealed, GaussianOutputVariance) {
  const auto o = ScoreOracle::exact(GaussianMixture::standard(1));
  auto [s, r] = noise_schedule({1, 0.25, 1.0, 0.0, 0.3, 1.0, 0.9});
  for (auto& n : s.num_steps) n = 200;
  for (auto& h : s.step_size) h = 0.01;
  const auto run = annealed_lmc(s, o, 40000, 2, 4);
  const double m = run.final_states.mean();
  const double v = (run.final_states.array() - m).square().sum() / (40000 - 1);
  const double stat = (1.0 + 0.25) / (1.0 - 0.01 / (2.0 * 1.25));
  EXPECT_NEAR(v, stat, 0.05);
}

TEST(Coupled, ExactOracleNeverDisagrees) {
  const auto p = GaussianMixture::standard(1);
  const auto s = ScoreOracle::exact(p);
  const auto [b, bad] = splice_badset(s, 0.1);
  SamplerConfig cfg{0.05, 50, 2000, 1, 2, {}};
  const auto r = coupled_run(cfg, 1, start_from(p), s.at(0.0), b.at(0.0), bad);
  for (double v : r.disagreement) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(coupled_run(cfg, 1, start_from(p), b.at(0.0), b.at(0.0), bad), std::invalid_argument);
}

TEST(Determinism, ThreadCountInvariant) {
  const auto o = make_linf_oracle(GaussianMixture::symmetric_pair_1d(2.0, 1.0), std::nullopt, 0.1,
                                  PerturbationShape::kSmoothField, 4);
  SamplerConfig a{0.05, 30, 1001, 77, 1, {10}};
  SamplerConfig b = a;
  b.threads = 8;
  const auto ra = lmc_run(a, 1, start_gaussian(1, 2.0), o.at(0.0));
  const auto rb = lmc_run(b, 1, start_gaussian(1, 2.0), o.at(0.0));
  EXPECT_EQ(ra.final_states, rb.final_states);
  EXPECT_EQ(ra.at_step(10), rb.at_step(10));
}

TEST(Divergence, NonFiniteChainsAreFlagged) {
  auto explode = [](const double* x, double* out) { out[0] = x[0] * x[0] * x[0]; };
  SamplerConfig cfg{0.5, 50, 10, 1, 1, {}};
  const auto run = lmc_run(cfg, 1, start_at(Vector::Constant(1, 3.0)), explode);
  EXPECT_EQ(run.divergence_count(), 10u);
  EXPECT_EQ(run.healthy(run.final_states).cols(), 0);
}

TEST(DensityPropagation, MatchesGaussianRecurrence) {
  std::vector<double> grid(2001), q0(2001);
  for (int i = 0; i <= 2000; ++i) {
    grid[i] = -10.0 + 0.01 * i;
    q0[i] = std::exp(-0.5 * (grid[i] - 1.0) * (grid[i] - 1.0) / 0.5) / std::sqrt(2 * kPi * 0.5);
  }
  const auto q = lmc_density_1d(grid, q0, minus_x, 0.1, 5);
  const auto o = ScoreOracle::exact(GaussianMixture::standard(1));
  const auto g = gaussian_exact_chain_lmc(o, Vector::Constant(1, 1.0), 0.5, 0.1, 5);
  for (int i = 0; i <= 2000; i += 50) {
    const double v = g.variance[5], m = g.mean(0, 5);
    const double expect = std::exp(-0.5 * (grid[i] - m) * (grid[i] - m) / v) / std::sqrt(2 * kPi * v);
    EXPECT_NEAR(q[5][i], expect, 1e-8);
  }
}
