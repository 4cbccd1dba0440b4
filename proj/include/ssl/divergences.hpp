#pragma once

// Divergences between analytic densities by composite Simpson quadrature
// (d <= 2), and distances between samples and an analytic mixture.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ssl/core.hpp"
#include "ssl/rng.hpp"
#include "ssl/targets.hpp"

namespace ssl {

enum class DivergenceKind { kChi2, kKL, kTV, kFisher };

inline std::string divergence_name(DivergenceKind k) {
  switch (k) {
    case DivergenceKind::kChi2: return "chi2";
    case DivergenceKind::kKL: return "kl";
    case DivergenceKind::kTV: return "tv";
    case DivergenceKind::kFisher: return "fisher";
  }
  return "unknown";
}

struct QuadratureGrid {
  std::size_t dim = 1;
  double lo[2] = {-10.0, -10.0};
  double hi[2] = {10.0, 10.0};
  std::size_t points = (1u << 12) + 1;  // per axis, 2^k + 1

  static QuadratureGrid line(double lo, double hi, unsigned k = 12) {
    QuadratureGrid g;
    g.dim = 1;
    g.lo[0] = lo;
    g.hi[0] = hi;
    g.points = (std::size_t{1} << k) + 1;
    return g;
  }
  static QuadratureGrid square(double lo, double hi, unsigned k = 9) {
    QuadratureGrid g;
    g.dim = 2;
    g.lo[0] = g.lo[1] = lo;
    g.hi[0] = g.hi[1] = hi;
    g.points = (std::size_t{1} << k) + 1;
    return g;
  }

  QuadratureGrid widened() const {
    QuadratureGrid g = *this;
    for (std::size_t a = 0; a < dim; ++a) {
      const double c = 0.5 * (lo[a] + hi[a]), w = hi[a] - lo[a];
      g.lo[a] = c - w;
      g.hi[a] = c + w;
    }
    g.points = 2 * (points - 1) + 1;
    return g;
  }

  void validate() const {
    if (dim != 1 && dim != 2) throw std::invalid_argument("quadrature grid supports d = 1 or 2");
    if (points < 5 || ((points - 1) & (points - 2)) != 0) {
      throw std::invalid_argument("quadrature grid needs 2^k + 1 points per axis");
    }
    for (std::size_t a = 0; a < dim; ++a) {
      if (!(hi[a] > lo[a])) throw std::invalid_argument("quadrature grid bounds must satisfy lo < hi");
    }
  }

  /// Simpson-weighted sum of f over the grid; `stride` 2 uses every other
  /// node (the coarse rule for the error estimate).
  template <typename F>
  double integrate(F&& f, std::size_t stride = 1) const {
    const std::size_t n = (points - 1) / stride + 1;
    auto w = [n](std::size_t i) { return (i == 0 || i + 1 == n) ? 1.0 : (i % 2 ? 4.0 : 2.0); };
    const double h0 = (hi[0] - lo[0]) / static_cast<double>(n - 1);
    if (dim == 1) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double x = lo[0] + h0 * static_cast<double>(i);
        acc += w(i) * f(&x);
      }
      return acc * h0 / 3.0;
    }
    const double h1 = (hi[1] - lo[1]) / static_cast<double>(n - 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double x[2] = {lo[0] + h0 * static_cast<double>(i), lo[1] + h1 * static_cast<double>(j)};
        acc += w(i) * w(j) * f(x);
      }
    }
    return acc * h0 * h1 / 9.0;
  }
};

struct DivergenceReport {
  DivergenceKind kind;
  double value;
  double error;  // |fine - coarse| / 15
  std::string method;
  std::string diagnostic;
};

namespace detail {

template <typename Q, typename P>
double divergence_integrand(DivergenceKind kind, const Q& q, const P& p, const double* x, bool& underflow) {
  const double lq = q.log_density(x);
  const double lp = p.log_density(x);
  const double qv = std::exp(lq);
  if (lp == -kInf || !std::isfinite(lp)) {
    if (qv > 1e-12) underflow = true;
    return 0.0;
  }
  switch (kind) {
    case DivergenceKind::kChi2: return std::exp(2.0 * lq - lp);
    case DivergenceKind::kKL: return qv == 0.0 ? 0.0 : qv * (lq - lp);
    case DivergenceKind::kTV: return 0.5 * std::abs(qv - std::exp(lp));
    case DivergenceKind::kFisher: {
      double sq[2] = {0.0, 0.0}, sp[2] = {0.0, 0.0};
      q.score(x, sq);
      p.score(x, sp);
      double g = 0.0;
      for (std::size_t j = 0; j < q.dim(); ++j) g += (sq[j] - sp[j]) * (sq[j] - sp[j]);
      return g == 0.0 ? 0.0 : std::exp(2.0 * lq - lp) * g;
    }
  }
  return 0.0;
}

}  // namespace detail

/// chi2 = int q^2/p - 1, kl = int q ln(q/p), tv = 1/2 int |q - p|,
/// fisher = int q^2/p |grad ln(q/p)|^2. The grid is widened once when either
/// density's grid mass is off by more than 1e-6.
template <Density Q, Density P>
DivergenceReport quadrature_divergence(const Q& q, const P& p, DivergenceKind kind, QuadratureGrid grid) {
  grid.validate();
  if (q.dim() != grid.dim || p.dim() != grid.dim) {
    throw std::invalid_argument("quadrature_divergence: density dimension does not match the grid");
  }
  std::string diag;
  auto mass_ok = [&](const QuadratureGrid& g) {
    const double mq = g.integrate([&](const double* x) { return std::exp(q.log_density(x)); });
    const double mp = g.integrate([&](const double* x) { return std::exp(p.log_density(x)); });
    return std::abs(mq - 1.0) <= 1e-6 && std::abs(mp - 1.0) <= 1e-6;
  };
  if (!mass_ok(grid)) {
    grid = grid.widened();
    diag = "grid widened once";
    if (!mass_ok(grid)) diag += "; grid mass still off by more than 1e-6";
  }
  bool underflow = false;
  auto f = [&](const double* x) { return detail::divergence_integrand(kind, q, p, x, underflow); };
  double fine = grid.integrate(f);
  const double coarse = grid.integrate(f, 2);
  const double err = std::abs(fine - coarse) / 15.0;
  std::string method = "simpson d=" + std::to_string(grid.dim) + " n=" + std::to_string(grid.points);
  if (underflow && kind != DivergenceKind::kTV) {
    if (!diag.empty()) diag += "; ";
    diag += "p underflows where q carries mass";
    return {kind, kInf, 0.0, method, diag};
  }
  double value = fine;
  if (kind == DivergenceKind::kChi2) value = fine - 1.0;
  if (kind == DivergenceKind::kChi2 || kind == DivergenceKind::kKL || kind == DivergenceKind::kFisher) {
    if (value < 0.0 && value >= -1e-9) value = 0.0;
  }
  if (kind == DivergenceKind::kTV) value = std::clamp(value, 0.0, 1.0);
  return {kind, value, err, method, diag};
}

/// Draws n points of p; column i depends only on (seed, i).
inline Matrix exact_sampler(const GaussianMixture& p, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("exact_sampler needs n >= 1");
  Matrix out(static_cast<Eigen::Index>(p.dim()), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    NoiseStream rng(seed, Stream::kExact, i, 0);
    p.sample(rng, out.col(static_cast<Eigen::Index>(i)).data());
  }
  return out;
}

struct EmpiricalReport {
  std::size_t n = 0;
  double mean_error = 0.0;        // |sample mean - E_p x|
  double covariance_error = 0.0;  // Frobenius norm of the covariance gap
  Vector sample_mean;
  Matrix sample_covariance;
  double histogram_tv = kNaN;   // d <= 2 only
  double tv_noise_floor = kNaN;  // same estimator on exact draws of p
  double bin_width = kNaN;
  std::vector<double> mode_mass;    // fraction assigned to each component
  std::vector<double> mode_weight;  // analytic weights
  std::vector<double> mode_stderr;  // binomial standard errors
};

namespace detail {

struct HistogramLayout {
  std::size_t dim;
  double lo[2];
  double width[2];
  std::size_t bins[2];
};

inline HistogramLayout histogram_layout(const GaussianMixture& p, std::size_t n) {
  HistogramLayout h{};
  h.dim = p.dim();
  const Matrix cov = p.covariance();
  for (std::size_t a = 0; a < h.dim; ++a) {
    double lo = kInf, hi = -kInf;
    for (const auto& c : p.components()) {
      const double s = std::sqrt(c.variance);
      lo = std::min(lo, c.mean[static_cast<Eigen::Index>(a)] - 6.0 * s);
      hi = std::max(hi, c.mean[static_cast<Eigen::Index>(a)] + 6.0 * s);
    }
    const double sd = std::sqrt(cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)));
    const double w = 3.49 * sd * std::pow(static_cast<double>(n), -1.0 / (2.0 + static_cast<double>(h.dim)));
    h.bins[a] = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((hi - lo) / w)));
    h.width[a] = (hi - lo) / static_cast<double>(h.bins[a]);
    h.lo[a] = lo;
  }
  return h;
}

inline double rect_probability(const GaussianMixture& p, const double* lo, const double* hi) {
  double total = 0.0;
  for (const auto& c : p.components()) {
    const double s = std::sqrt(c.variance);
    double q = c.weight;
    for (std::size_t a = 0; a < p.dim(); ++a) {
      const double m = c.mean[static_cast<Eigen::Index>(a)];
      q *= normal_cdf((hi[a] - m) / s) - normal_cdf((lo[a] - m) / s);
    }
    total += q;
  }
  return total;
}

/// 1/2 sum |empirical - analytic| over the bins plus the outside region.
inline double histogram_tv(const Matrix& samples, const GaussianMixture& p, const HistogramLayout& h) {
  const auto n = static_cast<std::size_t>(samples.cols());
  const std::size_t nb = h.dim == 1 ? h.bins[0] : h.bins[0] * h.bins[1];
  std::vector<std::size_t> counts(nb, 0);
  std::size_t outside = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t idx[2] = {0, 0};
    bool in = true;
    for (std::size_t a = 0; a < h.dim && in; ++a) {
      const double u = (samples(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(i)) - h.lo[a]) / h.width[a];
      if (!(u >= 0.0) || u >= static_cast<double>(h.bins[a])) {
        in = false;
      } else {
        idx[a] = static_cast<std::size_t>(u);
      }
    }
    if (!in) {
      ++outside;
      continue;
    }
    ++counts[h.dim == 1 ? idx[0] : idx[0] * h.bins[1] + idx[1]];
  }
  const double nn = static_cast<double>(n);
  double tv = 0.0, inside_prob = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t i0 = h.dim == 1 ? b : b / h.bins[1];
    const std::size_t i1 = h.dim == 1 ? 0 : b % h.bins[1];
    const double lo[2] = {h.lo[0] + h.width[0] * static_cast<double>(i0),
                          h.dim == 2 ? h.lo[1] + h.width[1] * static_cast<double>(i1) : 0.0};
    const double hi[2] = {lo[0] + h.width[0], h.dim == 2 ? lo[1] + h.width[1] : 0.0};
    const double pb = rect_probability(p, lo, hi);
    inside_prob += pb;
    tv += std::abs(static_cast<double>(counts[b]) / nn - pb);
  }
  tv += std::abs(static_cast<double>(outside) / nn - std::max(0.0, 1.0 - inside_prob));
  return 0.5 * tv;
}

}  // namespace detail

/// Moments, histogram TV and mode masses of samples (one column per sample)
/// against p. The histogram uses a Scott-rule width on a range covering every
/// component; its noise floor is the same estimator on n exact draws of p
/// (seeded by `calibration_seed`). The estimator is biased upward.
inline EmpiricalReport empirical_vs_analytic(const Matrix& samples, const GaussianMixture& p,
                                             std::uint64_t calibration_seed = 0, bool calibrate = true) {
  const auto n = static_cast<std::size_t>(samples.cols());
  if (n < 1000) throw std::invalid_argument("empirical_vs_analytic needs at least 1000 samples");
  if (static_cast<std::size_t>(samples.rows()) != p.dim()) {
    throw std::invalid_argument("empirical_vs_analytic: sample dimension does not match the target");
  }
  EmpiricalReport r;
  r.n = n;
  r.sample_mean = samples.rowwise().mean();
  const Matrix centered = samples.colwise() - r.sample_mean;
  r.sample_covariance = centered * centered.transpose() / static_cast<double>(n - 1);
  r.mean_error = (r.sample_mean - p.mean()).norm();
  r.covariance_error = (r.sample_covariance - p.covariance()).norm();
  if (p.dim() <= 2) {
    const auto layout = detail::histogram_layout(p, n);
    r.bin_width = layout.width[0];
    r.histogram_tv = detail::histogram_tv(samples, p, layout);
    if (calibrate) {
      r.tv_noise_floor = detail::histogram_tv(exact_sampler(p, n, hash_combine(calibration_seed, 0x5eed)), p, layout);
    }
  }
  r.mode_mass.assign(p.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    r.mode_mass[p.nearest_component(samples.col(static_cast<Eigen::Index>(i)).data())] += 1.0;
  }
  for (std::size_t k = 0; k < p.size(); ++k) {
    r.mode_mass[k] /= static_cast<double>(n);
    const double w = p.components()[k].weight;
    r.mode_weight.push_back(w);
    r.mode_stderr.push_back(std::sqrt(w * (1.0 - w) / static_cast<double>(n)));
  }
  return r;
}

}  // namespace ssl
