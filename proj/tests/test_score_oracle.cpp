#include <gtest/gtest.h>

#include <cmath>

#include "ssl/score_oracle.hpp"

using namespace ssl;

TEST(ScoreOracle, ExactIsExact) {
  const auto p = GaussianMixture::symmetric_pair_1d(2.0, 1.0);
  const auto o = ScoreOracle::exact(p);
  EXPECT_EQ(measure_error(o, 0.0, ErrorNorm::kL2), 0.0);
  EXPECT_EQ(measure_error(o, 0.0, ErrorNorm::kLinf), 0.0);
  const auto z = make_linf_oracle(p, std::nullopt, 0.0, PerturbationShape::kSmoothField, 3);
  EXPECT_EQ(measure_error(z, 0.0, ErrorNorm::kLinf), 0.0);
}

TEST(ScoreOracle, ConstantShift) {
  const auto o = make_linf_oracle(GaussianMixture::standard(1), std::nullopt, 0.3, PerturbationShape::kConstantRotation);
  const double x = 1.0;
  double s;
  o.at(0.0)(&x, &s);
  EXPECT_NEAR(s, -0.7, 1e-15);
  EXPECT_NEAR(measure_error(o, 0.0, ErrorNorm::kL2), 0.3, 1e-10);
  EXPECT_NEAR(measure_error(o, 0.0, ErrorNorm::kLinf), 0.3, 1e-15);
  EXPECT_TRUE(o.is_affine());
}

TEST(ScoreOracle, SmoothFieldSupRange) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto o = make_linf_oracle(GaussianMixture::standard(1), std::nullopt, 0.1, PerturbationShape::kSmoothField, seed);
    const double e = measure_error(o, 0.0, ErrorNorm::kLinf);
    EXPECT_LE(e, 0.1 + 1e-12);
    EXPECT_GE(e, 0.05);
    const auto o2 = make_linf_oracle(GaussianMixture::standard(2), std::nullopt, 0.1, PerturbationShape::kSmoothField, seed);
    EXPECT_LE(measure_error(o2, 0.0, ErrorNorm::kLinf), 0.1 + 1e-12);
    const double Ls = measure_lipschitz([&](const double* x, double* out) { o2.at(0.0)(x, out); }, 2, -5, 5, 500);
    EXPECT_TRUE(std::isfinite(Ls));
  }
}

TEST(ScoreOracle, L2BadSetCalibrated) {
  const auto p = GaussianMixture::standard(1);
  const auto o = make_l2_badset_oracle(p, std::nullopt, 0.2, Vector::Constant(1, 1.5), 0.5);
  EXPECT_NEAR(measure_error(o, 0.0, ErrorNorm::kL2), 0.2, 1e-6);
  const auto p2 = GaussianMixture::standard(2);
  const auto o2 = make_l2_badset_oracle(p2, std::nullopt, 0.2, Vector::Constant(2, 1.0), 0.7);
  EXPECT_NEAR(measure_error(o2, 0.0, ErrorNorm::kL2), 0.2, 1e-3);
}

TEST(ScoreOracle, MonteCarloNeedsSamples) {
  const auto o = ScoreOracle::exact(GaussianMixture::standard(3));
  EXPECT_THROW(measure_error(o, 0.0, ErrorNorm::kL2, ErrorMethod::monte_carlo(0, 1)), std::invalid_argument);
  EXPECT_EQ(measure_error(o, 0.0, ErrorNorm::kL2, ErrorMethod::monte_carlo(100, 1)), 0.0);
  EXPECT_THROW(measure_error(o, 0.0, ErrorNorm::kL2), std::invalid_argument);
}

TEST(Splice, LinfBoundAndChebyshev) {
  const auto p = GaussianMixture::standard(1);
  std::vector<ScoreOracle> oracles = {
      make_bump_oracle(4.0), make_bump_oracle(10.0),
      make_l2_badset_oracle(p, std::nullopt, 0.3, Vector::Constant(1, 1.0), 0.8),
      make_linf_oracle(p, std::nullopt, 0.4, PerturbationShape::kSmoothField, 9)};
  for (const auto& s : oracles) {
    for (double eps1 : {0.05, 0.2, 0.5}) {
      const auto [b, bad] = splice_badset(s, eps1);
      const auto f = b.at(0.0);
      double worst = 0.0;
      for (int i = 0; i <= 100000; ++i) {
        const double x = -10.0 + 30.0 * i / 100000.0;
        worst = std::max(worst, f.error(&x));
      }
      EXPECT_LE(worst, eps1 + 1e-12);
      const double pb = bad_set_mass(s, 0.0, bad);
      const double l2 = measure_error(s, 0.0, ErrorNorm::kL2);
      EXPECT_LE(pb, (l2 / eps1) * (l2 / eps1) + 1e-6);
    }
  }
}

TEST(Splice, TrivialCases) {
  const auto s = ScoreOracle::exact(GaussianMixture::standard(1));
  const auto [b, bad] = splice_badset(s, 0.1);
  EXPECT_EQ(bad_set_mass(s, 0.0, bad), 0.0);
  const auto bump = make_bump_oracle(10.0);
  const auto [bb, huge] = splice_badset(bump, 1e300);
  EXPECT_EQ(bad_set_mass(bump, 0.0, huge), 0.0);
  const double x = 10.0;
  double u, v;
  bb.at(0.0)(&x, &u);
  bump.at(0.0)(&x, &v);
  EXPECT_EQ(u, v);
}

TEST(Splice, BumpBadSetInsideSupport) {
  const auto s = make_bump_oracle(10.0);
  const auto [b, bad] = splice_badset(s, 0.5);
  const auto f = b.at(0.0);
  for (int i = 0; i <= 10000; ++i) {
    const double x = -20.0 + 50.0 * i / 10000.0;
    if (bad.contains(f, &x)) {
      EXPECT_GT(x, 5.0);
      EXPECT_LT(x, 15.0);
    }
  }
  EXPECT_GT(bad_set_mass(s, 0.0, bad), 0.0);
  EXPECT_LE(std::pow(measure_error(s, 0.0, ErrorNorm::kL2), 2), bump_l2_error_bound(BumpTarget(10.0)).bound);
}

TEST(ScoreOracle, Deterministic) {
  const auto a = make_linf_oracle(GaussianMixture::standard(3), std::nullopt, 0.2, PerturbationShape::kSmoothField, 5);
  const auto b = make_linf_oracle(GaussianMixture::standard(3), std::nullopt, 0.2, PerturbationShape::kSmoothField, 5);
  const double x[3] = {0.3, -1.2, 2.0};
  double u[3], v[3];
  a.at(0.0)(x, u);
  b.at(0.0)(x, v);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(u[j], v[j]);
}
