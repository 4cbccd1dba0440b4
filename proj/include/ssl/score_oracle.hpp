#pragma once

// Score estimates with a controlled error profile. A ScoreOracle is the
// time-indexed description; `at(t)` freezes it at one noise time and returns
// the cheap callable the samplers evaluate per chain.

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssl/core.hpp"
#include "ssl/rng.hpp"
#include "ssl/sde_models.hpp"
#include "ssl/targets.hpp"

namespace ssl {

enum class OracleMode { kExact, kLinfPerturbed, kL2BadSet, kBumpMismatch };
enum class PerturbationShape { kConstantRotation, kSmoothField };

inline std::string oracle_mode_name(OracleMode m) {
  switch (m) {
    case OracleMode::kExact: return "exact";
    case OracleMode::kLinfPerturbed: return "linf_perturbed";
    case OracleMode::kL2BadSet: return "l2_badset";
    case OracleMode::kBumpMismatch: return "bump_mismatch";
  }
  return "unknown";
}

/// Time-independent additive error field delta(x).
class Perturbation {
 public:
  enum class Kind { kNone, kConstant, kSinusoids, kLocalized };

  struct Sinusoid {
    double amplitude;
    Vector direction;  // unit
    Vector frequency;
    double phase;
  };

  static Perturbation none() { return {}; }

  static Perturbation constant(Vector shift) {
    Perturbation p;
    p.kind_ = Kind::kConstant;
    p.shift_ = std::move(shift);
    return p;
  }

  static Perturbation sinusoids(std::vector<Sinusoid> terms) {
    Perturbation p;
    p.kind_ = Kind::kSinusoids;
    p.terms_ = std::move(terms);
    return p;
  }

  /// height * bump(|x - center| / radius) * direction.
  static Perturbation localized(Vector center, double radius, double height, Vector direction) {
    Perturbation p;
    p.kind_ = Kind::kLocalized;
    p.shift_ = std::move(center);
    p.radius_ = radius;
    p.height_ = height;
    p.direction_ = std::move(direction);
    return p;
  }

  Kind kind() const { return kind_; }
  bool is_affine() const { return kind_ == Kind::kNone || kind_ == Kind::kConstant; }
  const Vector& shift() const { return shift_; }
  double height() const { return height_; }

  void add_to(const double* x, double* out, std::size_t d) const {
    switch (kind_) {
      case Kind::kNone: return;
      case Kind::kConstant:
        for (std::size_t j = 0; j < d; ++j) out[j] += shift_[j];
        return;
      case Kind::kSinusoids:
        for (const auto& t : terms_) {
          double arg = t.phase;
          for (std::size_t j = 0; j < d; ++j) arg += t.frequency[j] * x[j];
          const double a = t.amplitude * std::sin(arg);
          for (std::size_t j = 0; j < d; ++j) out[j] += a * t.direction[j];
        }
        return;
      case Kind::kLocalized: {
        double r2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double e = x[j] - shift_[j];
          r2 += e * e;
        }
        const double a = height_ * bump::g(std::sqrt(r2) / radius_);
        if (a == 0.0) return;
        for (std::size_t j = 0; j < d; ++j) out[j] += a * direction_[j];
        return;
      }
    }
  }

  /// Upper bound on sup_x |delta(x)|.
  double sup_bound() const {
    switch (kind_) {
      case Kind::kNone: return 0.0;
      case Kind::kConstant: return shift_.norm();
      case Kind::kSinusoids: {
        double s = 0.0;
        for (const auto& t : terms_) s += std::abs(t.amplitude);
        return s;
      }
      case Kind::kLocalized: return std::abs(height_);
    }
    return 0.0;
  }

  Perturbation scaled(double factor) const {
    Perturbation p = *this;
    p.shift_ = kind_ == Kind::kConstant ? Vector(shift_ * factor) : shift_;
    p.height_ *= factor;
    for (auto& t : p.terms_) t.amplitude *= factor;
    return p;
  }

 private:
  Kind kind_ = Kind::kNone;
  Vector shift_;
  std::vector<Sinusoid> terms_;
  double radius_ = 1.0;
  double height_ = 0.0;
  Vector direction_;
};

/// Score oracle frozen at one noise time: exact reference p_t plus the error
/// model. Optionally spliced: wherever the estimate is more than
/// `splice_threshold` away from the exact score, the exact score is returned.
class FrozenOracle {
 public:
  FrozenOracle(GaussianMixture reference, std::shared_ptr<const Perturbation> perturbation,
               std::optional<BumpTarget> bump, double splice_threshold)
      : reference_(std::move(reference)),
        perturbation_(std::move(perturbation)),
        bump_(std::move(bump)),
        splice_threshold_(splice_threshold) {}

  std::size_t dim() const { return reference_.dim(); }
  const GaussianMixture& reference() const { return reference_; }
  bool spliced() const { return std::isfinite(splice_threshold_); }
  double splice_threshold() const { return splice_threshold_; }

  void exact_score(const double* x, double* out) const { reference_.score(x, out); }

  /// The unspliced estimate s(x).
  void raw_estimate(const double* x, double* out) const {
    if (bump_) {
      out[0] = bump_->score(x[0]);
      return;
    }
    reference_.score(x, out);
    if (perturbation_) perturbation_->add_to(x, out, dim());
  }

  void operator()(const double* x, double* out) const {
    raw_estimate(x, out);
    if (!spliced()) return;
    double err2 = 0.0;
    double exact[16];
    std::vector<double> big;
    double* ex = exact;
    if (dim() > 16) {
      big.resize(dim());
      ex = big.data();
    }
    exact_score(x, ex);
    for (std::size_t j = 0; j < dim(); ++j) err2 += (out[j] - ex[j]) * (out[j] - ex[j]);
    if (std::sqrt(err2) > splice_threshold_) {
      for (std::size_t j = 0; j < dim(); ++j) out[j] = ex[j];
    }
  }
  Vector operator()(const Vector& x) const {
    Vector out(x.size());
    (*this)(x.data(), out.data());
    return out;
  }

  /// |s(x) - grad ln p_t(x)| for the unspliced estimate.
  double raw_error(const double* x) const {
    const std::size_t d = dim();
    std::vector<double> a(d), b(d);
    raw_estimate(x, a.data());
    exact_score(x, b.data());
    double e = 0.0;
    for (std::size_t j = 0; j < d; ++j) e += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(e);
  }

  /// |oracle(x) - grad ln p_t(x)| for what this oracle actually returns.
  double error(const double* x) const {
    const std::size_t d = dim();
    std::vector<double> a(d), b(d);
    (*this)(x, a.data());
    exact_score(x, b.data());
    double e = 0.0;
    for (std::size_t j = 0; j < d; ++j) e += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(e);
  }

 private:
  GaussianMixture reference_;
  std::shared_ptr<const Perturbation> perturbation_;
  std::optional<BumpTarget> bump_;
  double splice_threshold_;
};

/// B = {x : |s(x) - grad ln p(x)| > threshold}.
struct BadSet {
  double threshold = kInf;
  bool contains(const FrozenOracle& oracle, const double* x) const {
    return std::isfinite(threshold) && oracle.raw_error(x) > threshold;
  }
};

class ScoreOracle {
 public:
  /// Exact score of the data law, or of its forward marginals when a model is
  /// given (then `at(t)` uses the forward time t).
  static ScoreOracle exact(GaussianMixture base, std::optional<DiffusionModel> model = {}) {
    ScoreOracle o(std::move(base), std::move(model));
    o.mode_ = OracleMode::kExact;
    return o;
  }

  OracleMode mode() const { return mode_; }
  double declared_eps() const { return declared_eps_; }
  const GaussianMixture& base() const { return base_; }
  const std::optional<DiffusionModel>& model() const { return model_; }
  const Perturbation& perturbation() const { return *perturbation_; }
  std::optional<double> bump_offset() const {
    return bump_ ? std::optional<double>(bump_->offset()) : std::nullopt;
  }
  double splice_threshold() const { return splice_threshold_; }
  bool is_affine() const {
    return !bump_ && perturbation_->is_affine() && !std::isfinite(splice_threshold_);
  }

  /// Exact reference law p_t.
  GaussianMixture reference_at(double t) const {
    return model_ ? noised(base_, *model_, t) : base_;
  }

  FrozenOracle at(double t) const { return freeze(reference_at(t)); }

  /// Frozen against base * N(0, sigma2 I) (annealing levels).
  FrozenOracle at_convolved(double sigma2) const { return freeze(convolved(base_, sigma2)); }

  FrozenOracle freeze(GaussianMixture reference) const {
    return FrozenOracle(std::move(reference), perturbation_, bump_, splice_threshold_);
  }

 private:
  ScoreOracle(GaussianMixture base, std::optional<DiffusionModel> model)
      : base_(std::move(base)),
        model_(std::move(model)),
        perturbation_(std::make_shared<const Perturbation>()) {}

  friend ScoreOracle make_linf_oracle(const GaussianMixture&, std::optional<DiffusionModel>, double,
                                      PerturbationShape, std::uint64_t);
  friend ScoreOracle make_l2_badset_oracle(const GaussianMixture&, std::optional<DiffusionModel>,
                                           double, const Vector&, double, double, std::uint64_t);
  friend ScoreOracle make_bump_oracle(double);
  friend struct SplicedOracle splice_badset(const ScoreOracle&, double);

  GaussianMixture base_;
  std::optional<DiffusionModel> model_;
  OracleMode mode_ = OracleMode::kExact;
  double declared_eps_ = 0.0;
  std::shared_ptr<const Perturbation> perturbation_;
  std::optional<BumpTarget> bump_;
  double splice_threshold_ = kInf;
};

/// Sup-norm perturbed oracle.
///   constant_rotation: delta = eps1 * u with a fixed unit vector u (e1 for
///     seed 0, a seeded direction otherwise); sup error exactly eps1.
///   smooth_field: eight seeded low-frequency sinusoidal fields whose
///     amplitudes sum to eps1 (one term carries half of it).
inline ScoreOracle make_linf_oracle(const GaussianMixture& target, std::optional<DiffusionModel> model,
                                    double eps1, PerturbationShape shape, std::uint64_t seed = 0) {
  if (!(eps1 >= 0) || !std::isfinite(eps1)) throw std::invalid_argument("eps1 must be finite and >= 0");
  ScoreOracle o(target, std::move(model));
  o.mode_ = OracleMode::kLinfPerturbed;
  o.declared_eps_ = eps1;
  const auto d = static_cast<Eigen::Index>(target.dim());
  NoiseStream rng(seed, Stream::kOracle, 0, 0);
  auto unit = [&] {
    Vector u(d);
    do {
      for (Eigen::Index j = 0; j < d; ++j) u[j] = rng.normal();
    } while (u.norm() < 1e-12);
    return Vector(u / u.norm());
  };
  if (shape == PerturbationShape::kConstantRotation) {
    Vector u = Vector::Zero(d);
    if (seed == 0) u[0] = 1.0; else u = unit();
    o.perturbation_ = std::make_shared<const Perturbation>(Perturbation::constant(eps1 * u));
  } else {
    constexpr int kTerms = 8;
    std::vector<Perturbation::Sinusoid> terms;
    for (int k = 0; k < kTerms; ++k) {
      const double amp = k == 0 ? 0.5 * eps1 : 0.5 * eps1 / (kTerms - 1);
      Vector dir = unit();
      Vector freq = unit() * (0.2 + 0.8 * rng.uniform());
      const double phase = 2.0 * kPi * rng.uniform();
      terms.push_back({amp, std::move(dir), std::move(freq), phase});
    }
    o.perturbation_ = std::make_shared<const Perturbation>(Perturbation::sinusoids(std::move(terms)));
  }
  return o;
}

namespace detail {

/// E_p[bump(|x - c| / r)^2] for the calibration of localized perturbations.
inline double localized_second_moment(const GaussianMixture& p, const Vector& center, double radius,
                                      std::uint64_t seed) {
  const std::size_t d = p.dim();
  auto psi2 = [&](const double* x) {
    double r2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) r2 += (x[j] - center[j]) * (x[j] - center[j]);
    const double b = bump::g(std::sqrt(r2) / radius);
    return b * b;
  };
  if (d == 1) {
    using boost::math::quadrature::gauss_kronrod;
    return gauss_kronrod<double, 61>::integrate(
        [&](double x) { return psi2(&x) * p.density(&x); }, center[0] - radius, center[0] + radius, 20,
        1e-13);
  }
  if (d == 2) {
    const int n = 513;
    const double h = 2.0 * radius / (n - 1);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double wi = (i == 0 || i == n - 1) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      for (int j = 0; j < n; ++j) {
        const double wj = (j == 0 || j == n - 1) ? 1.0 : (j % 2 ? 4.0 : 2.0);
        const double x[2] = {center[0] - radius + i * h, center[1] - radius + j * h};
        acc += wi * wj * psi2(x) * p.density(x);
      }
    }
    return acc * h * h / 9.0;
  }
  const std::size_t n = 200000;
  std::vector<double> x(d);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    NoiseStream rng(seed, Stream::kOracle, i, 1);
    p.sample(rng, x.data());
    acc += psi2(x.data());
  }
  return acc / static_cast<double>(n);
}

}  // namespace detail

/// Oracle whose error is a localized bump at `center` of the given radius,
/// scaled so that E_{p_t}|s - grad ln p_t|^2 = eps^2 at calibration time t.
inline ScoreOracle make_l2_badset_oracle(const GaussianMixture& target,
                                         std::optional<DiffusionModel> model, double eps,
                                         const Vector& center, double radius,
                                         double calibration_time = 0.0, std::uint64_t seed = 0) {
  if (!(eps >= 0)) throw std::invalid_argument("eps must be >= 0");
  if (!(radius > 0)) throw std::invalid_argument("bad-set radius must be > 0");
  if (static_cast<std::size_t>(center.size()) != target.dim()) {
    throw std::invalid_argument("bad-set center has the wrong dimension");
  }
  ScoreOracle o(target, std::move(model));
  o.mode_ = OracleMode::kL2BadSet;
  o.declared_eps_ = eps;
  const GaussianMixture pt = o.reference_at(calibration_time);
  const double m2 = detail::localized_second_moment(pt, center, radius, seed);
  if (!(m2 > 0)) throw std::invalid_argument("bad-set region carries no probability mass");
  Vector dir = Vector::Zero(center.size());
  dir[0] = 1.0;
  o.perturbation_ = std::make_shared<const Perturbation>(
      Perturbation::localized(center, radius, eps / std::sqrt(m2), dir));
  return o;
}

/// Score of the bump target q_L, posing as an estimate of the N(0,1) score.
inline ScoreOracle make_bump_oracle(double offset) {
  ScoreOracle o(GaussianMixture::standard(1), std::nullopt);
  o.mode_ = OracleMode::kBumpMismatch;
  o.bump_.emplace(offset);
  o.declared_eps_ = std::sqrt(bump_l2_error_bound(*o.bump_).value);
  return o;
}

struct SplicedOracle {
  ScoreOracle oracle;
  BadSet bad_set;
};

/// b(z) = s(z) off the bad set, grad ln p(z) on it; sup error <= eps1.
inline SplicedOracle splice_badset(const ScoreOracle& s, double eps1) {
  if (!(eps1 > 0)) throw std::invalid_argument("splice threshold must be > 0");
  ScoreOracle b = s;
  b.splice_threshold_ = eps1;
  return {std::move(b), BadSet{eps1}};
}

enum class ErrorNorm { kL2, kLinf };

struct ErrorMethod {
  enum class Kind { kQuadrature, kMonteCarlo };
  Kind kind = Kind::kQuadrature;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::size_t points_per_axis = (1u << 13) + 1;

  static ErrorMethod quadrature(std::size_t points = (1u << 13) + 1) {
    return {Kind::kQuadrature, 0, 0, points};
  }
  static ErrorMethod monte_carlo(std::size_t n, std::uint64_t seed) {
    return {Kind::kMonteCarlo, n, seed, 0};
  }
};

namespace detail {

/// Box covering the reference law (and the bump support, when present).
inline std::pair<double, double> error_box(const FrozenOracle& f, std::optional<double> bump_offset) {
  const auto& p = f.reference();
  double lo = kInf, hi = -kInf;
  const double w = 12.0 * std::sqrt(p.max_variance());
  for (const auto& c : p.components()) {
    lo = std::min(lo, c.mean.minCoeff() - w);
    hi = std::max(hi, c.mean.maxCoeff() + w);
  }
  if (bump_offset) {
    lo = std::min(lo, 0.5 * *bump_offset - 1.0);
    hi = std::max(hi, 1.5 * *bump_offset + 1.0);
  }
  return {lo, hi};
}

inline double simpson_weight(std::size_t i, std::size_t n) {
  if (i == 0 || i + 1 == n) return 1.0;
  return i % 2 ? 4.0 : 2.0;
}

/// Integrates fn(x) p(x) (returned as first) and the sup of sup_fn(x) over the
/// grid (second) on a Simpson grid over [lo, hi]^d, d <= 2.
template <typename Fn, typename SupFn>
std::pair<double, double> grid_reduce(const GaussianMixture& p, double lo, double hi, std::size_t n,
                                      Fn&& fn, SupFn&& sup_fn) {
  if (n % 2 == 0) ++n;
  const std::size_t d = p.dim();
  const double h = (hi - lo) / static_cast<double>(n - 1);
  double acc = 0.0, sup = 0.0;
  if (d == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      const double x = lo + h * static_cast<double>(i);
      acc += simpson_weight(i, n) * fn(&x) * p.density(&x);
      sup = std::max(sup, sup_fn(&x));
    }
    return {acc * h / 3.0, sup};
  }
  if (d == 2) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double x[2] = {lo + h * static_cast<double>(i), lo + h * static_cast<double>(j)};
        acc += simpson_weight(i, n) * simpson_weight(j, n) * fn(x) * p.density(x);
        sup = std::max(sup, sup_fn(x));
      }
    }
    return {acc * h * h / 9.0, sup};
  }
  throw std::invalid_argument("quadrature measurement requires d <= 2");
}

}  // namespace detail

/// Realized error of the oracle against grad ln p_t. L2 is the root of the
/// p_t-weighted mean squared error; Linf is the sup over grid points/samples.
inline double measure_error(const ScoreOracle& oracle, double t, ErrorNorm norm,
                            const ErrorMethod& method = ErrorMethod::quadrature()) {
  const FrozenOracle f = oracle.at(t);
  const std::size_t d = f.dim();
  if (method.kind == ErrorMethod::Kind::kMonteCarlo) {
    if (method.samples == 0) throw std::invalid_argument("monte_carlo error measurement needs n > 0");
    std::vector<double> x(d);
    double acc = 0.0, sup = 0.0;
    for (std::size_t i = 0; i < method.samples; ++i) {
      NoiseStream rng(method.seed, Stream::kExact, i, 0);
      f.reference().sample(rng, x.data());
      const double e = f.error(x.data());
      acc += e * e;
      sup = std::max(sup, e);
    }
    return norm == ErrorNorm::kL2 ? std::sqrt(acc / static_cast<double>(method.samples)) : sup;
  }
  if (d > 2) throw std::invalid_argument("quadrature measurement requires d <= 2");
  const auto [lo, hi] = detail::error_box(f, oracle.bump_offset());
  const std::size_t n = d == 1 ? method.points_per_axis : std::min<std::size_t>(method.points_per_axis, 1025);
  const auto [l2, sup] = detail::grid_reduce(
      f.reference(), lo, hi, n,
      [&](const double* x) {
        const double e = f.error(x);
        return e * e;
      },
      [&](const double* x) { return f.error(x); });
  return norm == ErrorNorm::kL2 ? std::sqrt(std::max(0.0, l2)) : sup;
}

/// p_t(B) by grid quadrature, d <= 2.
inline double bad_set_mass(const ScoreOracle& oracle, double t, const BadSet& bad,
                           std::size_t points_per_axis = (1u << 16) + 1) {
  const FrozenOracle f = oracle.at(t);
  const auto [lo, hi] = detail::error_box(f, oracle.bump_offset());
  const std::size_t n = f.dim() == 1 ? points_per_axis : std::min<std::size_t>(points_per_axis, 1025);
  return detail::grid_reduce(
             f.reference(), lo, hi, n,
             [&](const double* x) { return bad.contains(f, x) ? 1.0 : 0.0; },
             [](const double*) { return 0.0; })
      .first;
}

}  // namespace ssl
