#include <gtest/gtest.h>

#include <cmath>

#include "ssl/bounds.hpp"
#include "ssl/divergences.hpp"

using namespace ssl;

namespace {
const DivergenceKind kAll[] = {DivergenceKind::kChi2, DivergenceKind::kKL, DivergenceKind::kTV, DivergenceKind::kFisher};
}

TEST(Quadrature, IdenticalIsZero) {
  const auto p = GaussianMixture::symmetric_pair_1d(2.0, 1.0, 0.3);
  for (auto k : kAll) {
    EXPECT_NEAR(quadrature_divergence(p, p, k, QuadratureGrid::line(-15, 15)).value, 0.0, 1e-10);
  }
  Vector m(2);
  m << 0.5, -0.5;
  const auto q = GaussianMixture::gaussian(m, 1.2);
  for (auto k : kAll) {
    EXPECT_NEAR(quadrature_divergence(q, q, k, QuadratureGrid::square(-10, 10)).value, 0.0, 1e-10);
  }
}

TEST(Quadrature, GaussianChi2WorkedValue) {
  const auto p = GaussianMixture::standard(1);
  const auto q = GaussianMixture::gaussian(Vector::Zero(1), 1.5);
  const auto r = quadrature_divergence(q, p, DivergenceKind::kChi2, QuadratureGrid::line(-20, 20, 13));
  EXPECT_NEAR(r.value, std::pow(1.5, -0.5) * std::pow(0.5, -0.5) - 1.0, 1e-10);
  EXPECT_NEAR(r.value, 0.1547005383792515, 1e-10);
}

TEST(Quadrature, KLClosedForm) {
  for (auto [m1, v1, m2, v2] : {std::array{0.0, 1.0, 0.5, 1.3}, std::array{1.0, 2.0, -0.5, 0.7}}) {
    const auto p = GaussianMixture::gaussian(Vector::Constant(1, m1), v1);
    const auto q = GaussianMixture::gaussian(Vector::Constant(1, m2), v2);
    const double kl = 0.5 * (v2 / v1 + (m2 - m1) * (m2 - m1) / v1 - 1.0 + std::log(v1 / v2));
    EXPECT_NEAR(quadrature_divergence(q, p, DivergenceKind::kKL, QuadratureGrid::line(-25, 25, 14)).value, kl, 1e-8);
    // Fisher of Gaussians: int q^2/p |s_q - s_p|^2 against a plain sum over a fine Riemann grid
    double acc = 0.0;
    for (int i = 0; i < 400000; ++i) {
      const double x = -25.0 + 50.0 * (i + 0.5) / 400000.0;
      const double g = -(x - m2) / v2 + (x - m1) / v1;
      acc += std::exp(2.0 * q.log_density(&x) - p.log_density(&x)) * g * g * 50.0 / 400000.0;
    }
    EXPECT_NEAR(quadrature_divergence(q, p, DivergenceKind::kFisher, QuadratureGrid::line(-25, 25, 14)).value, acc,
                1e-7 * acc);
  }
}

TEST(Quadrature, TvSymmetryPinskerAsymmetry) {
  const auto p = GaussianMixture::symmetric_pair_1d(2.0, 1.0);
  const auto q = GaussianMixture::gaussian(Vector::Constant(1, 0.7), 2.5);
  const auto g = QuadratureGrid::line(-25, 25, 13);
  const double tv1 = quadrature_divergence(q, p, DivergenceKind::kTV, g).value;
  const double tv2 = quadrature_divergence(p, q, DivergenceKind::kTV, g).value;
  EXPECT_NEAR(tv1, tv2, 1e-12);
  const double kl1 = quadrature_divergence(q, p, DivergenceKind::kKL, g).value;
  const double kl2 = quadrature_divergence(p, q, DivergenceKind::kKL, g).value;
  EXPECT_GT(std::abs(kl1 - kl2), 1e-3);
  EXPECT_LE(tv1, std::sqrt(kl1 / 2) + 1e-9);
  EXPECT_LE(tv1, std::sqrt(kl2 / 2) + 1e-9);
  EXPECT_GT(std::abs(quadrature_divergence(q, p, DivergenceKind::kChi2, g).value -
                     quadrature_divergence(p, q, DivergenceKind::kChi2, g).value),
            1e-3);
}

TEST(Quadrature, ConvergenceWithinErrorEstimate) {
  const auto p = GaussianMixture::symmetric_pair_1d(2.0, 1.0);
  const auto q = GaussianMixture::gaussian(Vector::Constant(1, 0.7), 1.5);
  for (auto k : {DivergenceKind::kChi2, DivergenceKind::kKL, DivergenceKind::kFisher}) {
    const auto a = quadrature_divergence(q, p, k, QuadratureGrid::line(-20, 20, 8));
    const auto b = quadrature_divergence(q, p, k, QuadratureGrid::line(-20, 20, 9));
    EXPECT_LE(std::abs(a.value - b.value), std::max(a.error, 1e-12));
  }
}

TEST(Quadrature, BumpFarInTv) {
  const BumpTarget q(10.0);
  const auto p = GaussianMixture::standard(1);
  const auto r = quadrature_divergence(p, q, DivergenceKind::kTV, QuadratureGrid::line(-20, 30, 16));
  EXPECT_GE(r.value, 0.9);
}

TEST(Quadrature, AutoWiden) {
  const auto p = GaussianMixture::standard(1);
  const auto q = GaussianMixture::gaussian(Vector::Zero(1), 1.2);
  const auto r = quadrature_divergence(q, p, DivergenceKind::kChi2, QuadratureGrid::line(-3, 3, 12));
  EXPECT_NE(r.diagnostic.find("widened"), std::string::npos);
}

TEST(Quadrature, UnderflowIsInfinite) {
  const auto p = GaussianMixture::gaussian(Vector::Zero(1), 1e-4);
  const auto q = GaussianMixture::gaussian(Vector::Constant(1, 3.0), 1.0);
  const auto r = quadrature_divergence(q, p, DivergenceKind::kChi2, QuadratureGrid::line(-10, 10, 14));
  EXPECT_EQ(r.value, kInf);
}

TEST(ExactSampler, Moments) {
  const auto one = exact_sampler(GaussianMixture::standard(1), 1, 42);
  EXPECT_EQ(one(0, 0), exact_sampler(GaussianMixture::standard(1), 1, 42)(0, 0));
  const auto x = exact_sampler(GaussianMixture::standard(1), 1000000, 7);
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / (x.cols() - 1);
  EXPECT_NEAR(var, 1.0, 0.005);
  const auto pair = GaussianMixture::symmetric_pair_1d(4.0, 1.0, 0.3);
  const auto r = empirical_vs_analytic(exact_sampler(pair, 100000, 9), pair, 1);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_LE(std::abs(r.mode_mass[k] - r.mode_weight[k]), 4 * r.mode_stderr[k]);
}

TEST(Empirical, SelfDistanceAtNoiseFloor) {
  const auto p = GaussianMixture::symmetric_pair_1d(2.0, 1.0);
  const auto r = empirical_vs_analytic(exact_sampler(p, 20000, 3), p, 4);
  EXPECT_LE(r.histogram_tv, 2.0 * r.tv_noise_floor);
  const auto far = empirical_vs_analytic(exact_sampler(GaussianMixture::standard(1), 20000, 3), p, 4);
  EXPECT_GT(far.histogram_tv, 5.0 * far.tv_noise_floor);
  EXPECT_THROW(empirical_vs_analytic(exact_sampler(p, 999, 3), p), std::invalid_argument);
}
