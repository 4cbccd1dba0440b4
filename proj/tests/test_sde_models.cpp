#include <gtest/gtest.h>

#include <cmath>

#include "ssl/sde_models.hpp"
#include "ssl/targets.hpp"

using namespace ssl;

namespace {

DiffusionModel ddpm_unit(double T) { return {Family::kDDPM, DiffusionSchedule::constant(1.0), T}; }
DiffusionModel smld_unit(double T) { return {Family::kSMLD, DiffusionSchedule::constant(1.0), T}; }

}  // namespace

TEST(AccumulatedDiffusion, WorkedValues) {
  EXPECT_DOUBLE_EQ(accumulated_diffusion(smld_unit(2.0), 0.0, 2.0), 2.0);
  const DiffusionModel aff(Family::kSMLD, DiffusionSchedule::affine_sq(0.1, 0.2), 1.0);
  EXPECT_NEAR(accumulated_diffusion(aff, 0.0, 1.0), 0.2, 1e-15);
  const DiffusionModel ex(Family::kSMLD, DiffusionSchedule::exponential(1.0, std::exp(0.5)), std::log(4.0));
  EXPECT_NEAR(accumulated_diffusion(ex, 0.0, std::log(4.0)), 3.0, 1e-14);
}

TEST(AccumulatedDiffusion, Additive) {
  const DiffusionSchedule kinds[] = {DiffusionSchedule::constant(1.3), DiffusionSchedule::exponential(0.7, 1.9),
                                     DiffusionSchedule::affine_sq(0.1, 3.0)};
  for (const auto& s : kinds) {
    const DiffusionModel m(Family::kDDPM, s, 4.0);
    for (double a : {0.0, 0.3}) {
      for (double b : {0.5, 1.7}) {
        for (double c : {2.0, 4.0}) {
          const double whole = accumulated_diffusion(m, a, c);
          const double parts = accumulated_diffusion(m, a, b) + accumulated_diffusion(m, b, c);
          EXPECT_NEAR(whole, parts, 1e-12 * whole) << s.name();
        }
      }
    }
  }
}

TEST(AccumulatedDiffusion, OutOfRangeThrows) {
  EXPECT_THROW(accumulated_diffusion(smld_unit(1.0), 0.0, 2.0), std::domain_error);
  EXPECT_THROW(accumulated_diffusion(smld_unit(1.0), 0.5, 0.2), std::domain_error);
  EXPECT_THROW(accumulated_diffusion(smld_unit(1.0), -0.1, 0.2), std::domain_error);
}

TEST(Schedules, InvalidParametersThrow) {
  EXPECT_THROW(DiffusionSchedule::constant(0.0), std::invalid_argument);
  EXPECT_THROW(DiffusionSchedule::exponential(1.0, 0.5), std::invalid_argument);
  EXPECT_THROW(DiffusionSchedule::affine_sq(-1.0, 1.0), std::invalid_argument);
}

TEST(MarginalParams, WorkedValues) {
  auto s = marginal_params(smld_unit(2.0), 2.0);
  EXPECT_EQ(s.scale, 1.0);
  EXPECT_DOUBLE_EQ(s.noise_var, 2.0);
  auto z = marginal_params(ddpm_unit(1.0), 0.0);
  EXPECT_EQ(z.scale, 1.0);
  EXPECT_EQ(z.noise_var, 0.0);
  auto d = marginal_params(ddpm_unit(2.0), std::log(4.0));
  EXPECT_NEAR(d.scale, 0.5, 1e-15);
  EXPECT_NEAR(d.noise_var, 0.75, 1e-15);
}

TEST(MarginalParams, Ranges) {
  const DiffusionModel m(Family::kDDPM, DiffusionSchedule::exponential(0.5, 1.5), 5.0);
  const DiffusionModel v(Family::kSMLD, DiffusionSchedule::affine_sq(0.2, 1.0), 5.0);
  double prev = 0.0;
  for (int i = 0; i <= 50; ++i) {
    const double t = 0.1 * i;
    const auto p = marginal_params(m, t);
    EXPECT_GE(p.noise_var, 0.0);
    EXPECT_LT(p.noise_var, 1.0);
    const auto q = marginal_params(v, t);
    EXPECT_EQ(q.scale, 1.0);
    EXPECT_GE(q.noise_var, prev);
    prev = q.noise_var;
  }
}

TEST(BridgeParams, WorkedValues) {
  auto s = bridge_params(smld_unit(1.0), 0.0, 0.1);
  EXPECT_EQ(s.alpha, 1.0);
  EXPECT_NEAR(s.sigma2, 0.1, 1e-15);
  auto e = bridge_params(ddpm_unit(1.0), 0.4, 0.4);
  EXPECT_EQ(e.alpha, 1.0);
  EXPECT_EQ(e.sigma2, 0.0);
  auto d = bridge_params(ddpm_unit(1.0), 0.0, std::log(2.0));
  EXPECT_NEAR(d.alpha, std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(d.sigma2, 0.5, 1e-15);
  EXPECT_THROW(bridge_params(ddpm_unit(1.0), 0.5, 0.2), std::domain_error);
}

TEST(BridgeParams, ComposesWithMarginals) {
  // Reverse-clock bridge from t to kh takes p at forward T - t to forward T - kh.
  const DiffusionModel m(Family::kDDPM, DiffusionSchedule::affine_sq(0.1, 2.0), 3.0);
  const auto p0 = GaussianMixture::gaussian(Vector::Constant(1, 1.5), 0.7);
  const double kh = 0.8, t = 2.1;
  const auto at_t = noised(p0, m, m.horizon() - t);
  const auto via = bridged(at_t, bridge_params(m, kh, t));
  const auto direct = noised(p0, m, m.horizon() - kh);
  EXPECT_NEAR(via.components()[0].mean[0], direct.components()[0].mean[0], 1e-10);
  EXPECT_NEAR(via.components()[0].variance, direct.components()[0].variance, 1e-10);
}

TEST(Prior, Variances) {
  EXPECT_DOUBLE_EQ(prior(smld_unit(3.0)).variance, 3.0);
  const auto big = prior(ddpm_unit(50.0));
  EXPECT_NEAR(big.variance, 1.0, 1e-15);
  EXPECT_FALSE(big.degenerate);
  const auto zero = prior(ddpm_unit(0.0));
  EXPECT_EQ(zero.variance, 0.0);
  EXPECT_TRUE(zero.degenerate);
}

TEST(Prior, RescalingRemark) {
  // SMLD with g(t) = e^{t/2}, rescaled by e^{-t/2}, has DDPM (g = 1) marginals.
  const DiffusionModel smld(Family::kSMLD, DiffusionSchedule::exponential(1.0, std::exp(0.5)), 3.0);
  for (double t : {0.0, 0.5, 1.0, 2.5}) {
    const auto s = marginal_params(smld, t);
    const double y_var = std::exp(-t) * (1.0 + s.noise_var);  // data variance 1
    const auto d = marginal_params(ddpm_unit(3.0), t);
    EXPECT_NEAR(std::exp(-t) * s.scale * s.scale, d.scale * d.scale, 1e-12);
    EXPECT_NEAR(y_var, d.scale * d.scale + d.noise_var, 1e-10);
  }
}

TEST(ReverseWeighted, MatchesQuadrature) {
  const DiffusionSchedule kinds[] = {DiffusionSchedule::constant(1.3), DiffusionSchedule::exponential(0.7, 1.9),
                                     DiffusionSchedule::exponential(0.7, 1.00001),
                                     DiffusionSchedule::affine_sq(0.1, 3.0)};
  for (const auto& s : kinds) {
    const DiffusionModel m(Family::kSMLD, s, 4.0);
    const double kh = 1.2, h = 0.3;
    const int n = 2000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double t = kh + (i + 0.5) * h / n;
      acc += (t - kh) * s.g2(m.horizon() - t) * h / n;
    }
    EXPECT_NEAR(reverse_weighted_accumulated(m, kh, h), acc, 1e-7 * acc) << s.name();
  }
}
