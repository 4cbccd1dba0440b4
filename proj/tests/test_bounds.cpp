#include <gtest/gtest.h>

#include <cmath>

#include "ssl/bounds.hpp"
#include "ssl/divergences.hpp"

using namespace ssl;

TEST(PredictorConstants, WorkedValues) {
  const auto c = predictor_constants(Family::kDDPM, 2, 1.0, 1.0, 1.0);
  EXPECT_EQ(c.C_dL, 194.0);
  EXPECT_EQ(c.E, 1597.0);
  EXPECT_EQ(c.C_tL, 488.0);
  EXPECT_EQ(c.R_tilde, 18.0);
  EXPECT_EQ(c.R_d, 612.0);
  const auto s = predictor_constants(Family::kSMLD, 1, 1.0, 1.0, 1.0);
  EXPECT_EQ(s.C_tL, 32.0);
  EXPECT_EQ(s.C_dL, 76.0);
  for (std::size_t d : {1, 3, 50}) {
    for (double L : {1.0, 2.5, 10.0}) {
      EXPECT_LE(predictor_constants(Family::kDDPM, d, L, 1.0, 3.0).C_dL, 100.0 * L * L * d);
      EXPECT_LE(predictor_constants(Family::kSMLD, d, L, 1.0, 3.0).C_dL, 100.0 * L * L * d);
    }
  }
}

TEST(PredictorCeiling, Scaling) {
  PredictorInputs in{DiffusionModel(Family::kDDPM, DiffusionSchedule::constant(1.0), 1.0), 1, 1.0, 1.0, 1.0, 1.0};
  const double c1 = predictor_step_ceiling(in, 0.0, 0.01);
  // all params 1, d = 1, g = 1: 1/(28 + 10 + 1 + 64*488 + 128*100 + 360*(18 + 2*312))
  EXPECT_NEAR(c1, 1.0 / (28.0 + 10.0 + 1.0 + 64.0 * 488.0 + 128.0 * 100.0 + 360.0 * (18.0 + 2.0 * 312.0)), 1e-18);
  PredictorInputs in2 = in;
  in2.model = DiffusionModel(Family::kDDPM, DiffusionSchedule::constant(2.0), 1.0);
  // the second moment at t is unchanged only at t = 0, so compare with M2 = d
  EXPECT_NEAR(predictor_step_ceiling(in2, 0.0, 0.0), c1 / 4.0, 1e-15);
}

TEST(LmcRecursion, WorkedValues) {
  LmcRecursionParams p{3, 2.0, 1.0, 1e-5, 0.0};
  const auto r = lmc_chi2_recursion(p, 0.0, 1);
  EXPECT_NEAR(r.trajectory[1], 170.0 * 3 * 4 * 1e-10, 1e-22);
  const auto z = lmc_chi2_recursion({1, 1.0, 1.0, 0.0, 0.0}, 0.7, 10);
  EXPECT_EQ(z.trajectory.back(), 0.7);
  LmcRecursionParams q{1, 1.0, 2.0, 1e-4, 0.05};
  const auto far = lmc_chi2_recursion(q, 3.0, 2000000);
  // the stated limit replaces 1/(1 - e^{-x}) by 1/x, so the recursion settles slightly above it
  const double fixed_point = far.value("additive") / (1.0 - far.value("contraction"));
  EXPECT_NEAR(far.trajectory.back(), fixed_point, 1e-9 * fixed_point);
  EXPECT_NEAR(far.value("limit"), fixed_point, 1e-4 * fixed_point);
  EXPECT_TRUE(far.all_hypotheses_hold());
  EXPECT_FALSE(lmc_chi2_recursion({1, 1.0, 1.0, 0.1, 0.0}, 0.0, 1).holds("h<=1/(4392 d C L^2)"));
}

TEST(LmcRecursion, ClampsSmallConstants) {
  const auto r = lmc_chi2_recursion({1, 0.5, 0.25, 1e-5, 0.0}, 0.0, 1);
  EXPECT_FALSE(r.holds("L>=1"));
  EXPECT_FALSE(r.holds("C_LS>=1"));
  EXPECT_NEAR(r.trajectory[1], 170.0 * 1e-10, 1e-22);
}

TEST(PredictorRecursion, SmallStepLimit) {
  PredictorInputs in{DiffusionModel(Family::kDDPM, DiffusionSchedule::constant(1.0), 1.0), 1, 1.0, 1.0, 2.0, 1.0};
  const double h = 1e-4;
  const auto r = predictor_chi2_recursion(in, 1.0, h, 1);
  EXPECT_NEAR(r.trajectory[1], (1.0 + 1597.0 / 2 * 0 + predictor_constants(Family::kDDPM, 1, 1, 1, 2).E * h * h / 2) *
                                   std::exp(-h / 16.0),
              1e-14);
}

TEST(PredictorRecursion, SmldExactExponent) {
  PredictorInputs in{DiffusionModel(Family::kSMLD, DiffusionSchedule::constant(1.0), 2.0), 1, 1.0, 1.0, 1.0, 1.0};
  const auto r = predictor_chi2_recursion(in, 1.0, 0.5, 4);
  double expect = 1.0;
  for (int k = 0; k < 4; ++k) {
    const double kh = 0.5 * k;
    const double add = predictor_constants(Family::kSMLD, 1, 1, 1, 1.0 + 2.0 - kh).E * 0.125;
    expect = (expect + add) * std::pow((1.0 + 2.0 - kh - 0.5) / (1.0 + 2.0 - kh), 1.0 / 8.0);
  }
  EXPECT_NEAR(r.trajectory.back(), expect, 1e-10 * expect);
  EXPECT_FALSE(r.holds("h<=step ceiling (every step)"));
}

TEST(FrameworkBudget, WorkedValues) {
  const auto a = framework_tv_budget({0.3, 0.1, 0.2}, {0, 0, 0});
  EXPECT_EQ(a.coupling_tv, 0.0);
  EXPECT_EQ(a.total_tv, 0.2);
  const auto b = framework_tv_budget(std::vector<double>(5, 0.0), std::vector<double>(5, 0.01));
  EXPECT_NEAR(b.coupling_tv, 0.4, 1e-15);
  EXPECT_THROW(framework_tv_budget({0.0}, {0.0, 1.0}), std::invalid_argument);
}

TEST(Chi2Gaussians, ClosedFormAndQuadrature) {
  EXPECT_EQ(chi2_gaussians(0.0, 1.0, 0.0, 1.0, 3), 0.0);
  EXPECT_NEAR(chi2_gaussians(0.0, 1.0, 0.0, 1.5, 2), 1.0 / 0.75 - 1.0, 1e-15);
  EXPECT_EQ(chi2_gaussians(0.0, 1.0, 0.0, 2.0, 1), kInf);
  EXPECT_TRUE(std::isfinite(chi2_gaussians(0.0, 1.0, 0.0, 1.999, 1)));
  for (auto [m1, v1, m2, v2] : {std::array{0.0, 1.0, 0.5, 1.3}, std::array{1.0, 2.0, -0.5, 0.7},
                                std::array{0.0, 1.0, 0.0, 1.5}}) {
    const auto p = GaussianMixture::gaussian(Vector::Constant(1, m1), v1);
    const auto q = GaussianMixture::gaussian(Vector::Constant(1, m2), v2);
    const auto r = quadrature_divergence(q, p, DivergenceKind::kChi2, QuadratureGrid::line(-30, 30, 14));
    EXPECT_NEAR(r.value, chi2_gaussians(m1, v1, m2, v2, 1), 1e-8);
  }
}

TEST(WarmStart, Limits) {
  const auto w = warm_start_bound(0.5, 1.0, 2, 1e12);
  EXPECT_NEAR(w.statement, 4.0, 1e-9);
  EXPECT_NEAR(w.proof, 4.0, 1e-9);
  const auto v = warm_start_bound(3.0, 1.0, 1, 10.0);
  EXPECT_GT(v.proof, v.statement);
  EXPECT_GE(v.conservative, v.proof);
}

TEST(Perturbation, GaussianGridAndReduction) {
  const double s2 = 0.1, sigma = std::sqrt(s2);
  for (int i = 0; i <= 200; ++i) {
    const double x = -10.0 + 0.1 * i;
    const double gap = std::abs(x) * s2 / (1.0 + s2);
    const auto b = score_perturbation_bound(Family::kSMLD, 1.0, sigma, 1.0, 1, std::abs(x));
    EXPECT_LE(gap, b.value);
    EXPECT_TRUE(b.hypothesis);
    const auto dd = score_perturbation_bound(Family::kDDPM, 1.0, sigma, 1.0, 1, std::abs(x), std::abs(x));
    EXPECT_DOUBLE_EQ(dd.value, b.value);
  }
}

TEST(NoiseSchedule, WorkedValues) {
  auto [s, r] = noise_schedule({1, 1.0, 1.0, 0.0, 0.1, 1.0, 1.0});
  ASSERT_EQ(s.levels(), 2u);
  EXPECT_EQ(s.sigma2[0], 1.0);
  EXPECT_EQ(s.sigma2[1], 2.0);
  EXPECT_FALSE(r.holds("ratio<2"));
  EXPECT_EQ(r.value("max successive chi2"), kInf);
  auto [one, r1] = noise_schedule({1, 5.0, 1.0, 0.0, 0.1, 1.0, 1.0});
  EXPECT_EQ(one.levels(), 1u);
  auto [many, rm] = noise_schedule({16, 0.01, 2.0, 1.0, 0.1, 1.0, 1.0});
  EXPECT_TRUE(rm.holds("ratio<2"));
  EXPECT_TRUE(rm.holds("sigma_M^2>=d(M1+C_LS)"));
  const double eps = 0.25;  // c / sqrt(d)
  EXPECT_NEAR(rm.value("max successive chi2"), std::pow(1.0 - eps * eps, -8.0) - 1.0, 1e-12);
}

TEST(BudgetPlanner, WorkedValues) {
  BudgetParams p;
  const auto r = budget_planner(p);
  const double expect = 0.1 * 1e-3 / (174080.0 * std::sqrt(5.0) * std::max(std::log(200.0), 2.0));
  EXPECT_NEAR(r[0].value("eps_ceiling"), expect, 1e-12 * expect);
  BudgetParams q;
  q.eps_chi = 0.999999;
  EXPECT_NEAR(budget_planner(q)[0].value("h"), 0.999998 / 2720.0, 1e-9);
  BudgetParams k = p;
  k.K_chi = 10.0;
  EXPECT_LT(budget_planner(k)[0].value("eps_ceiling"), r[0].value("eps_ceiling"));
  EXPECT_TRUE(r[1].shape_only);
  EXPECT_FALSE(r[0].shape_only);
}
