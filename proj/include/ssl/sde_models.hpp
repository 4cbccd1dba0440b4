#pragma once

// Forward SDE families used by score-based samplers.
//
//   SMLD (variance exploding):   dx = g(t) dw
//   DDPM (variance preserving):  dx = -1/2 g(t)^2 x dt + g(t) dw
//
// Every integral of g^2 is evaluated from the closed-form antiderivative of
// the schedule kind. Sampler-facing code works in the reverse clock
// t in [0, T], which corresponds to forward time T - t; `forward_time` is the
// single conversion point.
//
// The two families are related by a space-time rescaling: with g(t) = e^{t/2}
// in SMLD, y = e^{-t/2} x follows DDPM with g = 1. No automatic conversion
// between models is provided.

#include <cmath>
#include <stdexcept>
#include <string>

#include "ssl/core.hpp"

namespace ssl {

enum class ScheduleKind { kConstant, kExponential, kAffineSquared };

/// Diffusion coefficient g(t).
///   constant:     g = c
///   exponential:  g = a * b^t      (b >= 1 so that g is non-decreasing)
///   affine_sq:    g = sqrt(b + alpha t)
class DiffusionSchedule {
 public:
  static DiffusionSchedule constant(double c) {
    if (!(c > 0)) throw std::invalid_argument("constant schedule needs c > 0");
    return DiffusionSchedule(ScheduleKind::kConstant, c, 0.0);
  }
  static DiffusionSchedule exponential(double a, double b) {
    if (!(a > 0)) throw std::invalid_argument("exponential schedule needs a > 0");
    if (!(b >= 1)) throw std::invalid_argument("exponential schedule needs b >= 1 (non-decreasing g)");
    return DiffusionSchedule(ScheduleKind::kExponential, a, b);
  }
  static DiffusionSchedule affine_sq(double b, double alpha) {
    if (!(b > 0)) throw std::invalid_argument("affine_sq schedule needs b > 0");
    if (!(alpha >= 0)) throw std::invalid_argument("affine_sq schedule needs alpha >= 0");
    return DiffusionSchedule(ScheduleKind::kAffineSquared, b, alpha);
  }

  ScheduleKind kind() const { return kind_; }
  double p1() const { return p1_; }
  double p2() const { return p2_; }

  double g(double t) const { return std::sqrt(g2(t)); }

  double g2(double t) const {
    switch (kind_) {
      case ScheduleKind::kConstant: return p1_ * p1_;
      case ScheduleKind::kExponential: return p1_ * p1_ * std::exp(2.0 * std::log(p2_) * t);
      case ScheduleKind::kAffineSquared: return p1_ + p2_ * t;
    }
    return 0.0;
  }

  /// Closed-form integral of g(s)^2 over [t0, t1].
  double integral_g2(double t0, double t1) const {
    switch (kind_) {
      case ScheduleKind::kConstant: return p1_ * p1_ * (t1 - t0);
      case ScheduleKind::kExponential: {
        const double lam = 2.0 * std::log(p2_);
        if (lam == 0.0) return p1_ * p1_ * (t1 - t0);
        return p1_ * p1_ * std::exp(lam * t0) * std::expm1(lam * (t1 - t0)) / lam;
      }
      case ScheduleKind::kAffineSquared:
        return (t1 - t0) * (p1_ + 0.5 * p2_ * (t0 + t1));
    }
    return 0.0;
  }

  /// Lipschitz constant of g^2 on [0, T].
  double g2_lipschitz(double T) const {
    switch (kind_) {
      case ScheduleKind::kConstant: return 0.0;
      case ScheduleKind::kExponential: return 2.0 * std::log(p2_) * g2(T);
      case ScheduleKind::kAffineSquared: return p2_;
    }
    return 0.0;
  }

  /// All supported kinds are non-decreasing by construction.
  bool non_decreasing() const { return true; }

  std::string name() const {
    switch (kind_) {
      case ScheduleKind::kConstant: return "constant";
      case ScheduleKind::kExponential: return "exponential";
      case ScheduleKind::kAffineSquared: return "affine_sq";
    }
    return "unknown";
  }

  bool operator==(const DiffusionSchedule&) const = default;

 private:
  DiffusionSchedule(ScheduleKind kind, double p1, double p2) : kind_(kind), p1_(p1), p2_(p2) {}

  ScheduleKind kind_;
  double p1_;
  double p2_;
};

enum class Family { kSMLD, kDDPM };

inline std::string family_name(Family f) { return f == Family::kSMLD ? "smld" : "ddpm"; }

class DiffusionModel {
 public:
  DiffusionModel(Family family, DiffusionSchedule schedule, double horizon)
      : family_(family), schedule_(schedule), horizon_(horizon) {
    if (!(horizon >= 0) || !std::isfinite(horizon)) {
      throw std::invalid_argument("diffusion horizon must be finite and >= 0");
    }
  }

  Family family() const { return family_; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  double horizon() const { return horizon_; }

  /// Forward drift coefficient: f(x, t) = drift_coefficient(t) * x.
  double drift_coefficient(double t) const {
    return family_ == Family::kSMLD ? 0.0 : -0.5 * schedule_.g2(t);
  }

  bool operator==(const DiffusionModel&) const = default;

 private:
  Family family_;
  DiffusionSchedule schedule_;
  double horizon_;
};

struct MarginalParams {
  double scale;      // multiplies the data point
  double noise_var;  // per-coordinate Gaussian variance added
};

struct BridgeParams {
  double alpha;   // >= 1
  double sigma2;  // >= 0
};

struct PriorSpec {
  double variance;
  bool degenerate;  // zero-variance prior; never sampled
};

namespace detail {
[[noreturn, gnu::noinline, gnu::cold]] inline void time_out_of_range(double t, double T, const char* what) {
  throw std::domain_error(std::string(what) + ": time " + std::to_string(t) + " outside [0, " +
                          std::to_string(T) + "]");
}
inline void check_time(const DiffusionModel& m, double t, const char* what) {
  const double tol = 1e-12 * std::max(1.0, m.horizon());
  if (!(t >= -tol && t <= m.horizon() + tol)) [[unlikely]] {
    time_out_of_range(t, m.horizon(), what);
  }
}
inline double clamp_time(const DiffusionModel& m, double t) {
  return std::clamp(t, 0.0, m.horizon());
}
}  // namespace detail

/// Reverse clock -> forward clock.
inline double forward_time(const DiffusionModel& m, double reverse_t) {
  detail::check_time(m, reverse_t, "forward_time");
  return detail::clamp_time(m, m.horizon() - reverse_t);
}

/// Integral of g(s)^2 over [t0, t1] in forward time.
inline double accumulated_diffusion(const DiffusionModel& m, double t0, double t1) {
  detail::check_time(m, t0, "accumulated_diffusion");
  detail::check_time(m, t1, "accumulated_diffusion");
  if (t1 < t0) throw std::domain_error("accumulated_diffusion: t1 < t0");
  return m.schedule().integral_g2(detail::clamp_time(m, t0), detail::clamp_time(m, t1));
}

/// G_{kh,t}: integral of g(T - s)^2 over reverse times [kh, t].
inline double reverse_accumulated(const DiffusionModel& m, double kh, double t) {
  if (t < kh) throw std::domain_error("reverse_accumulated: t < kh");
  return accumulated_diffusion(m, forward_time(m, t), forward_time(m, kh));
}

/// Integral of (t - kh) g(T - t)^2 over reverse times [kh, kh + h].
inline double reverse_weighted_accumulated(const DiffusionModel& m, double kh, double h) {
  detail::check_time(m, kh, "reverse_weighted_accumulated");
  detail::check_time(m, kh + h, "reverse_weighted_accumulated");
  const DiffusionSchedule& s = m.schedule();
  const double tf = forward_time(m, kh);  // g(T - kh - u) = g(tf - u)
  switch (s.kind()) {
    case ScheduleKind::kConstant: return s.g2(0.0) * h * h / 2.0;
    case ScheduleKind::kAffineSquared:
      return (s.p1() + s.p2() * tf) * h * h / 2.0 - s.p2() * h * h * h / 3.0;
    case ScheduleKind::kExponential: {
      const double lam = 2.0 * std::log(s.p2());
      const double a = s.g2(tf);
      const double x = lam * h;
      if (std::abs(x) < 1e-4) {
        // series of (1 - e^{-x}(1 + x)) / lam^2 = h^2 (1/2 - x/3 + x^2/8 - ...)
        return a * h * h * (0.5 - x / 3.0 + x * x / 8.0 - x * x * x / 30.0);
      }
      return a * (1.0 - std::exp(-x) * (1.0 + x)) / (lam * lam);
    }
  }
  return 0.0;
}

inline MarginalParams marginal_params(const DiffusionModel& m, double t) {
  const double beta = accumulated_diffusion(m, 0.0, t);
  if (m.family() == Family::kSMLD) return {1.0, beta};
  return {std::exp(-0.5 * beta), -std::expm1(-beta)};
}

/// Parameters with p_{kh} = (p_t)_alpha * N(0, sigma2), reverse clock.
inline BridgeParams bridge_params(const DiffusionModel& m, double kh, double t) {
  if (t < kh) throw std::domain_error("bridge_params: t < kh");
  const double G = reverse_accumulated(m, kh, t);
  if (m.family() == Family::kSMLD) return {1.0, G};
  return {std::exp(0.5 * G), -std::expm1(-G)};
}

inline PriorSpec prior(const DiffusionModel& m) {
  const double beta = m.schedule().integral_g2(0.0, m.horizon());
  const double var = m.family() == Family::kSMLD ? beta : -std::expm1(-beta);
  return {var, !(var > 0.0)};
}

}  // namespace ssl
