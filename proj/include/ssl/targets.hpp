#pragma once

// Analytic targets: isotropic Gaussian mixtures with closed-form noising, and
// the one-dimensional bump target whose score is close to N(0,1)'s in L2(p)
// while the law itself is far away in TV.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ssl/core.hpp"
#include "ssl/rng.hpp"
#include "ssl/sde_models.hpp"

namespace ssl {

template <typename T>
concept Density = requires(const T& p, const double* x, double* out) {
  { p.dim() } -> std::convertible_to<std::size_t>;
  { p.log_density(x) } -> std::convertible_to<double>;
  p.score(x, out);
};

struct MixtureComponent {
  double weight;
  Vector mean;
  double variance;

  bool operator==(const MixtureComponent& o) const {
    return weight == o.weight && variance == o.variance && mean == o.mean;
  }
};

class GaussianMixture {
 public:
  GaussianMixture(std::vector<MixtureComponent> components) : components_(std::move(components)) {
    if (components_.empty()) throw std::invalid_argument("mixture needs at least one component");
    dim_ = static_cast<std::size_t>(components_.front().mean.size());
    if (dim_ == 0) throw std::invalid_argument("mixture dimension must be positive");
    double total = 0.0;
    for (const auto& c : components_) {
      if (!(c.weight > 0) || !std::isfinite(c.weight)) throw std::invalid_argument("mixture weights must be > 0");
      if (!(c.variance > 0) || !std::isfinite(c.variance)) {
        throw std::invalid_argument("mixture variances must be > 0");
      }
      if (static_cast<std::size_t>(c.mean.size()) != dim_) {
        throw std::invalid_argument("mixture component means differ in dimension");
      }
      if (!c.mean.allFinite()) throw std::invalid_argument("mixture means must be finite");
      total += c.weight;
    }
    log_norm_.reserve(components_.size());
    for (auto& c : components_) {
      c.weight /= total;
      log_norm_.push_back(std::log(c.weight) -
                          0.5 * static_cast<double>(dim_) * std::log(2.0 * kPi * c.variance));
    }
  }

  static GaussianMixture gaussian(Vector mean, double variance) {
    return GaussianMixture({{1.0, std::move(mean), variance}});
  }
  static GaussianMixture standard(std::size_t d) {
    return gaussian(Vector::Zero(static_cast<Eigen::Index>(d)), 1.0);
  }
  /// (1 - w) N(-a, v) + w N(a, v) in one dimension.
  static GaussianMixture symmetric_pair_1d(double a, double v, double w = 0.5) {
    return GaussianMixture({{1.0 - w, Vector::Constant(1, -a), v}, {w, Vector::Constant(1, a), v}});
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return components_.size(); }
  const std::vector<MixtureComponent>& components() const { return components_; }

  double log_density(const double* x) const {
    double acc = -kInf;
    for (std::size_t k = 0; k < components_.size(); ++k) {
      acc = log_sum_exp(acc, component_log(k, x));
    }
    return acc;
  }
  double log_density(const Vector& x) const { return log_density(x.data()); }
  double density(const double* x) const { return std::exp(log_density(x)); }
  double density(const Vector& x) const { return density(x.data()); }

  /// Exact gradient of log_density; no allocation for the usual small sizes.
  void score(const double* x, double* out) const {
    const std::size_t d = dim_;
    if (components_.size() == 1) {
      const auto& c = components_.front();
      for (std::size_t j = 0; j < d; ++j) out[j] = (c.mean[j] - x[j]) / c.variance;
      return;
    }
    double lmax = -kInf;
    double logs_small[8];
    std::vector<double> logs_big;
    double* logs = logs_small;
    if (components_.size() > 8) {
      logs_big.resize(components_.size());
      logs = logs_big.data();
    }
    for (std::size_t k = 0; k < components_.size(); ++k) {
      logs[k] = component_log(k, x);
      lmax = std::max(lmax, logs[k]);
    }
    for (std::size_t j = 0; j < d; ++j) out[j] = 0.0;
    double wsum = 0.0;
    for (std::size_t k = 0; k < components_.size(); ++k) {
      const double r = std::exp(logs[k] - lmax);
      wsum += r;
      const auto& c = components_[k];
      for (std::size_t j = 0; j < d; ++j) out[j] += r * (c.mean[j] - x[j]) / c.variance;
    }
    for (std::size_t j = 0; j < d; ++j) out[j] /= wsum;
  }
  Vector score(const Vector& x) const {
    Vector out(x.size());
    score(x.data(), out.data());
    return out;
  }

  Vector mean() const {
    Vector m = Vector::Zero(static_cast<Eigen::Index>(dim_));
    for (const auto& c : components_) m += c.weight * c.mean;
    return m;
  }

  /// E|x|^2.
  double second_moment() const {
    double s = 0.0;
    for (const auto& c : components_) {
      s += c.weight * (c.mean.squaredNorm() + static_cast<double>(dim_) * c.variance);
    }
    return s;
  }

  Matrix covariance() const {
    const Vector m = mean();
    const auto d = static_cast<Eigen::Index>(dim_);
    Matrix cov = Matrix::Zero(d, d);
    for (const auto& c : components_) {
      const Vector e = c.mean - m;
      cov += c.weight * (c.variance * Matrix::Identity(d, d) + e * e.transpose());
    }
    return cov;
  }

  double min_variance() const {
    double v = kInf;
    for (const auto& c : components_) v = std::min(v, c.variance);
    return v;
  }
  double max_variance() const {
    double v = 0.0;
    for (const auto& c : components_) v = std::max(v, c.variance);
    return v;
  }
  bool equal_variances() const { return min_variance() == max_variance(); }

  /// Largest distance between two component means.
  double mean_diameter() const {
    double D = 0.0;
    for (std::size_t a = 0; a < components_.size(); ++a) {
      for (std::size_t b = a + 1; b < components_.size(); ++b) {
        D = std::max(D, (components_[a].mean - components_[b].mean).norm());
      }
    }
    return D;
  }

  /// Upper bound on the Lipschitz constant of the score. The Hessian of
  /// ln p is -I/v + Cov_post(mean)/v^2 when variances agree, and the posterior
  /// covariance of the means is at most D^2/4, so 1/v + D^2/(4v^2) bounds it.
  /// With unequal variances the same expression at v_min is used but is not a
  /// proven bound.
  double lipschitz_bound() const {
    const double v = min_variance();
    if (components_.size() == 1) return 1.0 / v;
    const double D = mean_diameter();
    return 1.0 / v + D * D / (4.0 * v * v);
  }
  bool lipschitz_bound_rigorous() const { return components_.size() == 1 || equal_variances(); }

  void sample(NoiseStream& rng, double* out) const {
    std::size_t k = 0;
    if (components_.size() > 1) {
      const double u = rng.uniform();
      double acc = 0.0;
      k = components_.size() - 1;
      for (std::size_t i = 0; i < components_.size(); ++i) {
        acc += components_[i].weight;
        if (u < acc) {
          k = i;
          break;
        }
      }
    }
    const auto& c = components_[k];
    const double s = std::sqrt(c.variance);
    for (std::size_t j = 0; j < dim_; ++j) out[j] = c.mean[j] + s * rng.normal();
  }

  /// P(lo <= x_j <= hi for every coordinate).
  double box_probability(double lo, double hi) const {
    double p = 0.0;
    for (const auto& c : components_) {
      const double s = std::sqrt(c.variance);
      double q = c.weight;
      for (std::size_t j = 0; j < dim_; ++j) {
        q *= normal_cdf((hi - c.mean[j]) / s) - normal_cdf((lo - c.mean[j]) / s);
      }
      p += q;
    }
    return p;
  }

  std::size_t nearest_component(const double* x) const {
    std::size_t best = 0;
    double bd = kInf;
    for (std::size_t k = 0; k < components_.size(); ++k) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) {
        const double e = x[j] - components_[k].mean[j];
        d2 += e * e;
      }
      if (d2 < bd) {
        bd = d2;
        best = k;
      }
    }
    return best;
  }

  bool operator==(const GaussianMixture& o) const { return components_ == o.components_; }

 private:
  double component_log(std::size_t k, const double* x) const {
    const auto& c = components_[k];
    double r2 = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      const double e = x[j] - c.mean[j];
      r2 += e * e;
    }
    return log_norm_[k] - 0.5 * r2 / c.variance;
  }

  std::vector<MixtureComponent> components_;
  std::vector<double> log_norm_;
  std::size_t dim_ = 0;
};

static_assert(Density<GaussianMixture>);

namespace detail {
inline GaussianMixture affine_map(const GaussianMixture& p, double scale, double add_var) {
  std::vector<MixtureComponent> out;
  out.reserve(p.size());
  for (const auto& c : p.components()) {
    out.push_back({c.weight, scale * c.mean, scale * scale * c.variance + add_var});
  }
  return GaussianMixture(std::move(out));
}
}  // namespace detail

/// Forward marginal p_t of the model started at p (forward clock).
inline GaussianMixture noised(const GaussianMixture& p, const DiffusionModel& m, double t) {
  const MarginalParams mp = marginal_params(m, t);
  if (mp.scale == 1.0 && mp.noise_var == 0.0) return p;
  return detail::affine_map(p, mp.scale, mp.noise_var);
}

/// p * N(0, sigma2 I).
inline GaussianMixture convolved(const GaussianMixture& p, double sigma2) {
  if (!(sigma2 >= 0)) throw std::invalid_argument("convolution variance must be >= 0");
  return detail::affine_map(p, 1.0, sigma2);
}

/// (p)_alpha * N(0, sigma2): law of X / alpha + sqrt(sigma2) Z.
inline GaussianMixture bridged(const GaussianMixture& p, const BridgeParams& b) {
  return detail::affine_map(p, 1.0 / b.alpha, b.sigma2);
}

struct SmoothnessInfo {
  double lipschitz = 1.0;
  double lsi_constant = 1.0;
  double mean_norm = 0.0;
  double second_moment = 0.0;
  bool lipschitz_rigorous = true;
  bool lsi_exact = true;
  std::string provenance;
};

/// Smoothness metadata. A single Gaussian gets its exact values; for a
/// mixture the LSI constant is only known when supplied (diagnostic mode),
/// otherwise it is NaN.
inline SmoothnessInfo smoothness(const GaussianMixture& p, std::optional<double> lsi_override = {}) {
  SmoothnessInfo s;
  s.lipschitz = p.lipschitz_bound();
  s.lipschitz_rigorous = p.lipschitz_bound_rigorous();
  s.mean_norm = p.mean().norm();
  s.second_moment = p.second_moment();
  if (lsi_override) {
    s.lsi_constant = *lsi_override;
    s.lsi_exact = false;
    s.provenance = "user-supplied C_LS (diagnostic)";
  } else if (p.size() == 1) {
    s.lsi_constant = p.components().front().variance;
    s.lsi_exact = true;
    s.provenance = "exact (single Gaussian)";
  } else {
    s.lsi_constant = std::numeric_limits<double>::quiet_NaN();
    s.lsi_exact = false;
    s.provenance = "unknown C_LS (mixture without override)";
  }
  return s;
}

/// Propagates C_LS, M1 and M2 to forward time t. L is carried over as is.
inline SmoothnessInfo smoothness_of_noised(const SmoothnessInfo& base, std::size_t d,
                                           const DiffusionModel& m, double t) {
  const double beta = accumulated_diffusion(m, 0.0, t);
  SmoothnessInfo s = base;
  const double dd = static_cast<double>(d);
  if (m.family() == Family::kSMLD) {
    s.lsi_constant = base.lsi_constant + beta;
    s.second_moment = base.second_moment + dd * beta;
  } else {
    const double e = std::exp(-beta);
    s.lsi_constant = (base.lsi_constant - 1.0) * e + 1.0;
    s.second_moment = e * base.second_moment - dd * std::expm1(-beta);
    s.mean_norm = base.mean_norm * std::exp(-0.5 * beta);
  }
  return s;
}

/// Same propagation, with L recomputed from the noised mixture itself.
inline SmoothnessInfo smoothness_of_noised(const GaussianMixture& p, const DiffusionModel& m, double t,
                                           std::optional<double> lsi_override = {}) {
  SmoothnessInfo s = smoothness_of_noised(smoothness(p, lsi_override), p.dim(), m, t);
  const GaussianMixture pt = noised(p, m, t);
  s.lipschitz = pt.lipschitz_bound();
  s.lipschitz_rigorous = pt.lipschitz_bound_rigorous();
  return s;
}

inline double radical_inverse(std::uint64_t i, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (i > 0) {
    r += f * static_cast<double>(i % base);
    i /= base;
    f *= inv;
  }
  return r;
}

/// Largest spectral norm of the finite-difference Jacobian of a vector field
/// over n Halton points in [lo, hi]^d.
inline double measure_lipschitz(const std::function<void(const double*, double*)>& field, std::size_t d,
                                double lo, double hi, std::size_t n, double step = 1e-5) {
  static constexpr unsigned kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  const auto di = static_cast<Eigen::Index>(d);
  Vector x(di), xp(di), xm(di), fp(di), fm(di);
  Matrix J(di, di);
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const unsigned b = kPrimes[j % 16] + (j >= 16 ? static_cast<unsigned>(2 * j + 1) : 0u);
      x[static_cast<Eigen::Index>(j)] = lo + (hi - lo) * radical_inverse(i + 1, b);
    }
    for (Eigen::Index j = 0; j < di; ++j) {
      xp = x;
      xm = x;
      xp[j] += step;
      xm[j] -= step;
      field(xp.data(), fp.data());
      field(xm.data(), fm.data());
      J.col(j) = (fp - fm) / (2.0 * step);
    }
    const double s = d == 1 ? std::abs(J(0, 0))
                            : Eigen::JacobiSVD<Matrix>(J).singularValues()(0);
    best = std::max(best, s);
  }
  return best;
}

namespace bump {

/// g(y) = exp(1 - 1/(1 - y^2)) on |y| < 1, zero outside.
inline double g(double y) {
  const double u = 1.0 - y * y;
  if (!(u > 0.0)) return 0.0;
  return std::exp(1.0 - 1.0 / u);
}

inline double g1(double y) {
  const double u = 1.0 - y * y;
  if (!(u > 0.0)) return 0.0;
  return g(y) * (-2.0 * y / (u * u));
}

inline double g2(double y) {
  const double u = 1.0 - y * y;
  if (!(u > 0.0)) return 0.0;
  const double u2 = u * u;
  return g(y) * (4.0 * y * y / (u2 * u2) - 2.0 / u2 - 8.0 * y * y / (u2 * u));
}

/// Integral of g'(y)^2 over [-1, 1].
inline double g1_squared_integral() {
  static const double value = [] {
    using boost::math::quadrature::gauss_kronrod;
    return gauss_kronrod<double, 61>::integrate([](double y) { return g1(y) * g1(y); }, -1.0, 1.0, 20,
                                                1e-14);
  }();
  return value;
}

/// max |g''| over [-1, 1].
inline double max_abs_g2() {
  static const double value = [] {
    const int n = 20000;
    double best = 0.0, at = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double y = -1.0 + 2.0 * i / n;
      const double v = std::abs(g2(y));
      if (v > best) {
        best = v;
        at = y;
      }
    }
    double a = std::max(-1.0, at - 2.0 / n), b = std::min(1.0, at + 2.0 / n);
    const double r = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 100; ++it) {
      const double c = b - r * (b - a), d = a + r * (b - a);
      if (std::abs(g2(c)) > std::abs(g2(d))) b = d; else a = c;
    }
    return std::max(best, std::abs(g2(0.5 * (a + b))));
  }();
  return value;
}

}  // namespace bump

/// q_L proportional to exp(-V_L), V_L(x) = x^2/2 - L^2 g(2(x - L)/L).
class BumpTarget {
 public:
  explicit BumpTarget(double offset) : L_(offset) {
    if (!(offset > 0) || !std::isfinite(offset)) throw std::invalid_argument("bump offset L must be > 0");
    log_norm_ = compute_log_normalizer();
  }

  double offset() const { return L_; }
  std::size_t dim() const { return 1; }
  double support_lo() const { return 0.5 * L_; }
  double support_hi() const { return 1.5 * L_; }

  double potential(double x) const { return 0.5 * x * x - L_ * L_ * bump::g(arg(x)); }
  double potential_derivative(double x) const { return x - 2.0 * L_ * bump::g1(arg(x)); }
  double potential_second_derivative(double x) const { return 1.0 - 4.0 * bump::g2(arg(x)); }

  double score(double x) const { return -potential_derivative(x); }
  void score(const double* x, double* out) const { out[0] = score(x[0]); }

  double log_density(double x) const { return -potential(x) - log_norm_; }
  double log_density(const double* x) const { return log_density(x[0]); }
  double density(double x) const { return std::exp(log_density(x)); }
  double density(const double* x) const { return density(x[0]); }
  double log_normalizer() const { return log_norm_; }

  /// Bound on |V_L''|, hence on the Lipschitz constant of the score.
  double smoothness_bound() const { return 1.0 + 4.0 * bump::max_abs_g2(); }

 private:
  double arg(double x) const { return 2.0 * (x - L_) / L_; }

  double compute_log_normalizer() const {
    // Z = sqrt(2 pi) + int_{L/2}^{3L/2} e^{-x^2/2} (e^{L^2 g} - 1) dx
    using boost::math::quadrature::gauss_kronrod;
    const double lo = support_lo(), hi = support_hi();
    double shift = -kInf;
    for (int i = 0; i <= 2000; ++i) {
      const double x = lo + (hi - lo) * i / 2000.0;
      shift = std::max(shift, -potential(x));
    }
    const double inner = gauss_kronrod<double, 61>::integrate(
        [&](double x) { return std::exp(-0.5 * x * x - shift) * std::expm1(L_ * L_ * bump::g(arg(x))); },
        lo, hi, 25, 1e-13);
    return log_sum_exp(0.5 * std::log(2.0 * kPi), std::log(inner) + shift);
  }

  double L_;
  double log_norm_;
};

static_assert(Density<BumpTarget>);

struct BumpL2Error {
  double value;  // E_p (V_L'(x) - x)^2 with p = N(0, 1)
  double bound;  // 2 L^3 e^{-L^2/8} int g'^2 / sqrt(2 pi)
  bool holds() const { return value <= bound; }
};

inline BumpL2Error bump_l2_error_bound(const BumpTarget& q) {
  using boost::math::quadrature::gauss_kronrod;
  const double L = q.offset();
  const double value = gauss_kronrod<double, 61>::integrate(
      [&](double x) {
        const double e = 2.0 * L * bump::g1(2.0 * (x - L) / L);
        return e * e * std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
      },
      q.support_lo(), q.support_hi(), 25, 1e-13);
  const double bound = 2.0 * L * L * L * std::exp(-L * L / 8.0) * bump::g1_squared_integral() /
                       std::sqrt(2.0 * kPi);
  return {value, bound};
}

}  // namespace ssl
