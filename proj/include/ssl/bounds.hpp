#pragma once

// Closed-form constants, step-size ceilings, chi-square recursions and budget
// formulas for the Langevin and reverse-SDE samplers. Nothing here throws on
// a bad parameter set: hypotheses that fail are recorded as flags and the
// value is still evaluated.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ssl/core.hpp"
#include "ssl/sde_models.hpp"

namespace ssl {

struct BoundReport {
  std::string name;
  std::vector<std::pair<std::string, double>> values;
  std::vector<std::pair<std::string, bool>> flags;
  std::vector<double> trajectory;  // per-step bound values, when the bound is a recursion
  bool shape_only = false;
  std::vector<std::string> notes;

  void set(std::string key, double v) { values.emplace_back(std::move(key), v); }
  void flag(std::string key, bool ok) { flags.emplace_back(std::move(key), ok); }

  double value(const std::string& key) const {
    for (const auto& [k, v] : values) {
      if (k == key) return v;
    }
    throw std::out_of_range("no value named " + key + " in report " + name);
  }
  bool holds(const std::string& key) const {
    for (const auto& [k, v] : flags) {
      if (k == key) return v;
    }
    throw std::out_of_range("no flag named " + key + " in report " + name);
  }
  bool all_hypotheses_hold() const {
    return std::all_of(flags.begin(), flags.end(), [](const auto& f) { return f.second; });
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "[" << name << "]" << (shape_only ? "  (shape only: hidden constants set to the configured value)" : "")
       << "\n";
    for (const auto& [k, v] : values) os << "  " << k << " = " << v << "\n";
    for (const auto& [k, v] : flags) os << "  hypothesis " << k << ": " << (v ? "holds" : "FAILS") << "\n";
    if (!trajectory.empty()) {
      os << "  steps = " << trajectory.size() - 1 << ", final = " << trajectory.back() << "\n";
    }
    for (const auto& n : notes) os << "  note: " << n << "\n";
    return os.str();
  }
};

namespace detail {
/// Clamp to the standing assumption x >= 1 and record whether it was needed.
inline double at_least_one(BoundReport& r, const std::string& what, double x) {
  r.flag(what + ">=1", x >= 1.0);
  return std::max(x, 1.0);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Gaussian chi-square

/// chi^2(N(m2, v2 I) || N(m1, v1 I)) given |m2 - m1|^2. +inf when v2 >= 2 v1.
inline double chi2_gaussians_sq(double mean_gap_sq, double v1, double v2, std::size_t d) {
  if (!(v1 > 0) || !(v2 > 0)) throw std::invalid_argument("chi2_gaussians needs positive variances");
  if (v2 >= 2.0 * v1) return kInf;
  const double r = v2 / v1;
  const double log_ratio = -0.5 * static_cast<double>(d) * std::log1p(-(r - 1.0) * (r - 1.0));
  const double log_val = log_ratio + mean_gap_sq / (2.0 * v1 - v2);
  return std::expm1(log_val);
}

/// Isotropic Gaussians with every coordinate of the means equal to m1, m2.
inline double chi2_gaussians(double m1, double v1, double m2, double v2, std::size_t d) {
  const double gap = m2 - m1;
  return chi2_gaussians_sq(static_cast<double>(d) * gap * gap, v1, v2, d);
}

inline double chi2_gaussians(const Vector& m1, double v1, const Vector& m2, double v2) {
  if (m1.size() != m2.size()) throw std::invalid_argument("chi2_gaussians: mean dimensions differ");
  return chi2_gaussians_sq((m2 - m1).squaredNorm(), v1, v2, static_cast<std::size_t>(m1.size()));
}

// ---------------------------------------------------------------------------
// LMC with a sup-norm score error

struct LmcRecursionParams {
  std::size_t d = 1;
  double L = 1.0;
  double C_LS = 1.0;
  double h = 0.0;
  double eps1 = 0.0;
};

inline double lmc_step_ceiling(std::size_t d, double L, double C_LS) {
  return 1.0 / (4392.0 * static_cast<double>(d) * C_LS * L * L);
}

/// chi2_{k+1} <= e^{-h/(4C)} chi2_k + 170 d L^2 h^2 + 5 eps1^2 h, unrolled for
/// `steps` steps, plus the closed-form N-step bound and its limit.
inline BoundReport lmc_chi2_recursion(const LmcRecursionParams& p, double chi0, std::size_t steps) {
  BoundReport r;
  r.name = "lmc_chi2_recursion";
  const double L = detail::at_least_one(r, "L", p.L);
  const double C = detail::at_least_one(r, "C_LS", p.C_LS);
  const double d = static_cast<double>(p.d);
  const double ceiling = lmc_step_ceiling(p.d, L, C);
  r.flag("h<=1/(4392 d C L^2)", p.h <= ceiling);
  r.flag("eps1<=sqrt(1/(48 C))", p.eps1 <= std::sqrt(1.0 / (48.0 * C)));
  const double contraction = std::exp(-p.h / (4.0 * C));
  const double additive = 170.0 * d * L * L * p.h * p.h + 5.0 * p.eps1 * p.eps1 * p.h;
  r.trajectory.reserve(steps + 1);
  r.trajectory.push_back(chi0);
  double chi = chi0;
  for (std::size_t k = 0; k < steps; ++k) {
    chi = contraction * chi + additive;
    r.trajectory.push_back(chi);
  }
  const double limit = 680.0 * d * L * L * p.h * C + 20.0 * p.eps1 * p.eps1 * C;
  r.set("h", p.h);
  r.set("step_ceiling", ceiling);
  r.set("contraction", contraction);
  r.set("additive", additive);
  r.set("closed_form_N_step", std::exp(-static_cast<double>(steps) * p.h / (4.0 * C)) * chi0 + limit);
  r.set("limit", limit);
  return r;
}

// ---------------------------------------------------------------------------
// Predictor constants and recursion

struct PredictorConstants {
  double E;
  double C_tL;
  double C_dL;
  double R_tilde;
  double R_d;
};

inline PredictorConstants predictor_constants(Family family, std::size_t d, double L, double L_s, double C_t) {
  const double dd = static_cast<double>(d);
  PredictorConstants c{};
  if (family == Family::kSMLD) {
    c.C_tL = 32.0 * L * L;
    c.C_dL = 76.0 * L * L * dd;
  } else {
    c.C_tL = (88.0 * C_t * C_t + 400.0) * L * L;
    c.C_dL = 6.0 + 94.0 * L * L * dd;
  }
  c.E = 9.0 * (4.0 * L_s * L_s + 1.0) + 8.0 * c.C_dL;
  c.R_tilde = 9.0 * (C_t + 1.0);
  c.R_d = 300.0 * dd + 12.0;
  return c;
}

struct PredictorInputs {
  DiffusionModel model;
  std::size_t d = 1;
  double L = 1.0;
  double L_s = 1.0;
  double C_LS = 1.0;
  double M2 = 1.0;  // E|x|^2 of the data law
};

/// LSI constant used at reverse time t: C_LS + beta(T - t) for SMLD, the
/// uniform max{C_LS, 1} for DDPM.
inline double predictor_lsi_at(const PredictorInputs& in, double t) {
  if (in.model.family() == Family::kDDPM) return std::max(in.C_LS, 1.0);
  return in.C_LS + accumulated_diffusion(in.model, 0.0, forward_time(in.model, t));
}

/// E_{p_t}|x|^2 at reverse time t from the second-moment lemma.
inline double predictor_second_moment_at(const PredictorInputs& in, double t) {
  const double beta = accumulated_diffusion(in.model, 0.0, forward_time(in.model, t));
  const double d = static_cast<double>(in.d);
  if (in.model.family() == Family::kSMLD) return in.M2 + d * beta;
  return std::exp(-beta) * in.M2 - d * std::expm1(-beta);
}

namespace detail {
inline double predictor_ceiling_inner(const PredictorInputs& in, double t) {
  const double L = std::max(in.L, 1.0), Ls = std::max(in.L_s, 1.0);
  const double Ct = predictor_lsi_at(in, t);
  const PredictorConstants c = predictor_constants(in.model.family(), in.d, L, Ls, Ct);
  const double inner = 28.0 * L * L + 10.0 * Ct + predictor_second_moment_at(in, t) + 64.0 * c.C_tL +
                       128.0 * c.C_dL + 360.0 * Ls * Ls * (c.R_tilde + 2.0 * Ct * c.R_d);
  return inner;
}

inline double predictor_ceiling_denominator(const PredictorInputs& in, double g2_start, double t) {
  return g2_start * predictor_ceiling_inner(in, t);
}
}  // namespace detail

/// Step-size ceiling for the step starting at reverse time kh, minimized over
/// [kh, kh + h]. C_t and E|x|^2 at t are monotone in t for both families, so
/// the minimum sits at an endpoint.
inline double predictor_step_ceiling(const PredictorInputs& in, double kh, double h) {
  const double T = in.model.horizon();
  const double g2 = in.model.schedule().g2(forward_time(in.model, kh));
  return std::min(1.0 / detail::predictor_ceiling_denominator(in, g2, kh),
                  1.0 / detail::predictor_ceiling_denominator(in, g2, std::min(T, kh + h)));
}

/// A single h that satisfies every per-step ceiling on [0, T].
inline double predictor_ceiling_over_horizon(const PredictorInputs& in, std::size_t grid = 1025) {
  const double T = in.model.horizon();
  const double g2max = in.model.schedule().g2(T);
  double best = kInf;
  for (std::size_t i = 0; i < grid; ++i) {
    const double t = T * static_cast<double>(i) / static_cast<double>(grid - 1);
    best = std::min(best, 1.0 / detail::predictor_ceiling_denominator(in, g2max, t));
  }
  return best;
}

/// chi2_{k+1} <= (chi2_k + int C_{t,kh} dt) * exp(int (-1/(8 C_t) + 8 eps_k^2) g(T-t)^2 dt)
/// with int C_{t,kh} = 8 eps_k^2 G + E g(T-kh)^2 int (t - kh) g(T-t)^2 dt.
/// `eps` holds one sup-error per step or a single value used for every step.
inline BoundReport predictor_chi2_recursion(const PredictorInputs& in, double chi0, double h,
                                            std::size_t steps, const std::vector<double>& eps = {0.0}) {
  BoundReport r;
  r.name = "predictor_chi2_recursion";
  const double L = detail::at_least_one(r, "L", in.L);
  const double Ls = detail::at_least_one(r, "L_s", in.L_s);
  detail::at_least_one(r, "C_LS", in.C_LS);
  if (eps.empty() || (eps.size() != 1 && eps.size() != steps)) {
    throw std::invalid_argument("predictor_chi2_recursion: eps must have 1 or `steps` entries");
  }
  const DiffusionModel& m = in.model;
  const double T = m.horizon();
  r.flag("g non-decreasing", m.schedule().non_decreasing());
  r.flag("N h <= T", static_cast<double>(steps) * h <= T * (1.0 + 1e-12));
  bool ceiling_ok = true;
  double min_ceiling = kInf;
  r.trajectory.reserve(steps + 1);
  r.trajectory.push_back(chi0);
  double chi = chi0;
  // the end of one step is usually the start of the next
  double prev_end_t = kNaN, prev_end_inner = kNaN;
  for (std::size_t k = 0; k < steps; ++k) {
    const double kh = std::min(T, static_cast<double>(k) * h);
    const double step = std::min(h, T - kh);
    const double e = eps.size() == 1 ? eps[0] : eps[k];
    const double g2_start = m.schedule().g2(forward_time(m, kh));
    const double inner_start = kh == prev_end_t ? prev_end_inner : detail::predictor_ceiling_inner(in, kh);
    prev_end_t = std::min(T, kh + step);
    prev_end_inner = detail::predictor_ceiling_inner(in, prev_end_t);
    const double ceil_k = 1.0 / (g2_start * std::max(inner_start, prev_end_inner));
    min_ceiling = std::min(min_ceiling, ceil_k);
    ceiling_ok = ceiling_ok && h <= ceil_k;
    const double G = reverse_accumulated(m, kh, kh + step);
    const double W = reverse_weighted_accumulated(m, kh, step);
    const PredictorConstants c = predictor_constants(m.family(), in.d, L, Ls, predictor_lsi_at(in, kh));
    const double additive = 8.0 * e * e * G + c.E * g2_start * W;
    double decay;
    if (m.family() == Family::kDDPM) {
      decay = -G / (8.0 * std::max(in.C_LS, 1.0));
    } else {
      const double hi = in.C_LS + accumulated_diffusion(m, 0.0, forward_time(m, kh));
      const double lo = in.C_LS + accumulated_diffusion(m, 0.0, forward_time(m, kh + step));
      decay = -std::log(hi / lo) / 8.0;
    }
    chi = (chi + additive) * std::exp(decay + 8.0 * e * e * G);
    r.trajectory.push_back(chi);
  }
  r.flag("h<=step ceiling (every step)", ceiling_ok);
  r.set("h", h);
  r.set("min_step_ceiling", min_ceiling);
  r.set("final", chi);
  return r;
}

inline BoundReport predictor_constants_report(Family family, std::size_t d, double L, double L_s, double C_t) {
  BoundReport r;
  r.name = "predictor_constants";
  const double Lc = detail::at_least_one(r, "L", L);
  const double Lsc = detail::at_least_one(r, "L_s", L_s);
  const auto c = predictor_constants(family, d, Lc, Lsc, C_t);
  r.set("E", c.E);
  r.set("C_tL", c.C_tL);
  r.set("C_dL", c.C_dL);
  r.set("R_tilde", c.R_tilde);
  r.set("R_d", c.R_d);
  r.flag("C_dL<=100 L^2 d", c.C_dL <= 100.0 * Lc * Lc * static_cast<double>(d));
  return r;
}

// ---------------------------------------------------------------------------
// Coupling framework

struct FrameworkBudget {
  double coupling_tv;  // sum_{k<n} (D_k^2 + 1)^{1/2} delta_k^{1/2}
  double total_tv;     // D_n + coupling_tv
};

/// D and delta are indexed 0..n (length n + 1); the coupling sum runs over
/// k < n and the total adds D_n.
inline FrameworkBudget framework_tv_budget(const std::vector<double>& D, const std::vector<double>& delta) {
  if (D.size() != delta.size()) throw std::invalid_argument("framework_tv_budget: sequences differ in length");
  if (D.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (std::size_t k = 0; k + 1 < D.size(); ++k) {
    if (D[k] < 0 || delta[k] < 0) throw std::invalid_argument("framework_tv_budget: entries must be >= 0");
    sum += std::sqrt(D[k] * D[k] + 1.0) * std::sqrt(delta[k]);
  }
  return {sum, D.back() + sum};
}

// ---------------------------------------------------------------------------
// Warm start and score perturbation lemmas

struct WarmStartBound {
  double statement;     // 4 exp(d (2 M1 + 8 C) / sigma^2)
  double proof;         // 4 exp(d (8 C + 2 M1^2) / sigma^2)
  double conservative;  // exponent with max(2 M1, 2 M1^2)
};

inline WarmStartBound warm_start_bound(double M1, double C_LS, std::size_t d, double sigma2) {
  const double dd = static_cast<double>(d);
  return {4.0 * std::exp(dd * (2.0 * M1 + 8.0 * C_LS) / sigma2),
          4.0 * std::exp(dd * (8.0 * C_LS + 2.0 * M1 * M1) / sigma2),
          4.0 * std::exp(dd * (std::max(2.0 * M1, 2.0 * M1 * M1) + 8.0 * C_LS) / sigma2)};
}

struct PerturbationBound {
  double value;
  bool hypothesis;  // L <= 1/(2 sigma^2) (SMLD) or L <= 1/(2 alpha^2 sigma^2) (DDPM)
};

/// Pointwise bound on |grad ln p(x) - grad ln ((p)_alpha * N(0, sigma^2))(x)|
/// for p = e^{-V}. `x_norm` is only used by the DDPM form.
inline PerturbationBound score_perturbation_bound(Family family, double L, double sigma, double alpha,
                                                  std::size_t d, double gradV_norm, double x_norm = 0.0) {
  const double s2 = sigma * sigma;
  const double sd = std::sqrt(static_cast<double>(d));
  if (family == Family::kSMLD) {
    return {6.0 * L * sigma * sd + 2.0 * L * s2 * gradV_norm, L <= 1.0 / (2.0 * s2)};
  }
  const double a = alpha, a2 = a * a, a3 = a2 * a;
  const double v = 6.0 * a2 * L * sigma * sd + (a + 2.0 * a3 * L * s2) * (a - 1.0) * L * x_norm +
                   (a - 1.0 + 2.0 * a3 * L * s2) * gradV_norm;
  return {v, L <= 1.0 / (2.0 * a2 * s2)};
}

// ---------------------------------------------------------------------------
// Annealing schedule

struct AnnealSchedule {
  std::vector<double> sigma2;    // increasing: sigma_1^2 < ... < sigma_M^2
  std::vector<double> step_size;  // h_m
  std::vector<std::size_t> num_steps;  // N_m
  double ratio = 2.0;

  std::size_t levels() const { return sigma2.size(); }

  void validate() const {
    if (sigma2.empty()) throw std::invalid_argument("anneal schedule needs at least one level");
    if (step_size.size() != sigma2.size() || num_steps.size() != sigma2.size()) {
      throw std::invalid_argument("anneal schedule: per-level lists differ in length");
    }
    if (!(sigma2.front() > 0)) throw std::invalid_argument("anneal schedule: sigma_1 must be > 0");
    for (std::size_t m = 1; m < sigma2.size(); ++m) {
      if (!(sigma2[m] > sigma2[m - 1])) throw std::invalid_argument("anneal schedule: sigmas must increase");
    }
    for (double h : step_size) {
      if (!(h > 0)) throw std::invalid_argument("anneal schedule: step sizes must be > 0");
    }
  }

  /// Largest ratio between successive variances.
  double max_ratio() const {
    double r = 0.0;
    for (std::size_t m = 1; m < sigma2.size(); ++m) r = std::max(r, sigma2[m] / sigma2[m - 1]);
    return r;
  }
};

struct NoiseScheduleParams {
  std::size_t d = 1;
  double sigma_min2 = 1.0;
  double C_LS = 1.0;
  double M1 = 0.0;
  double eps_tv = 0.1;
  double L = 1.0;
  double c = 1.0;  // ratio is 1 + c / sqrt(d)
};

/// Geometric variances sigma_min^2 (1 + c/sqrt d)^m, extended while the top
/// level is still <= d (M1 + C_LS). Per-level defaults use the proof shapes
/// with constants 1: h_1 = eps^2/(d L^2 C_1), h_m = 1/(d L^2 C_m), and
/// N_m h_m = C_m ln(M/eps) (C_1 ln(1/eps) at the bottom), C_m = C_LS + sigma_m^2.
inline std::pair<AnnealSchedule, BoundReport> noise_schedule(const NoiseScheduleParams& p) {
  if (!(p.sigma_min2 > 0)) throw std::invalid_argument("noise_schedule: sigma_min must be > 0");
  if (!(p.c > 0)) throw std::invalid_argument("noise_schedule: c must be > 0");
  BoundReport r;
  r.name = "noise_schedule";
  r.shape_only = true;
  const double dd = static_cast<double>(p.d);
  AnnealSchedule s;
  s.ratio = 1.0 + p.c / std::sqrt(dd);
  const double top = dd * (p.M1 + p.C_LS);
  double v = p.sigma_min2;
  s.sigma2.push_back(v);
  while (v <= top) {
    v *= s.ratio;
    s.sigma2.push_back(v);
    if (s.sigma2.size() > 100000) throw std::invalid_argument("noise_schedule: too many levels");
  }
  const std::size_t M = s.sigma2.size();
  const double eps = std::clamp(p.eps_tv, 1e-12, 0.999);
  const double L = std::max(p.L, 1.0);
  for (std::size_t m = 0; m < M; ++m) {
    const double Cm = std::max(p.C_LS + s.sigma2[m], 1.0);
    const double h = (m == 0 ? eps * eps : 1.0) / (dd * L * L * Cm);
    const double time = Cm * std::log((m == 0 ? 1.0 : static_cast<double>(M)) / eps);
    s.step_size.push_back(h);
    s.num_steps.push_back(static_cast<std::size_t>(std::ceil(std::max(time, h) / h)));
  }
  double worst = 0.0;
  for (std::size_t m = 1; m < M; ++m) {
    worst = std::max(worst, chi2_gaussians(0.0, s.sigma2[m - 1], 0.0, s.sigma2[m], p.d));
  }
  r.set("M", static_cast<double>(M));
  r.set("ratio", s.ratio);
  r.set("sigma_M^2", s.sigma2.back());
  r.set("max successive chi2", worst);
  r.set("M shape sqrt(d) ln(d C/sigma_min^2)",
        std::sqrt(dd) * std::log(std::max(dd * p.C_LS / p.sigma_min2, 1.0 + 1e-12)));
  r.flag("ratio<2", s.ratio < 2.0);
  r.flag("sigma_M^2>=d(M1+C_LS)", s.sigma2.back() >= top);
  return {std::move(s), std::move(r)};
}

// ---------------------------------------------------------------------------
// Budget planner

struct BudgetParams {
  double eps_tv = 0.1;
  double eps_chi = 0.1;
  double K_chi = 1.0;
  std::size_t d = 1;
  double L = 1.0;
  double L_s = 1.0;
  double C_LS = 1.0;
  double C_T = 1.0;
  double hidden_constant = 1.0;  // multiplies every Theta-shaped formula
};

inline std::vector<BoundReport> budget_planner(const BudgetParams& p) {
  std::vector<BoundReport> out;
  const double d = static_cast<double>(p.d);
  {
    BoundReport r;
    r.name = "lmc_l2 (precise constants)";
    r.flag("eps_tv in (0,1)", p.eps_tv > 0 && p.eps_tv < 1);
    r.flag("eps_chi in (0,1)", p.eps_chi > 0 && p.eps_chi < 1);
    const double L = detail::at_least_one(r, "L", p.L);
    const double C = detail::at_least_one(r, "C_LS", p.C_LS);
    const double lg = std::log(2.0 * p.K_chi / (p.eps_chi * p.eps_chi));
    const double denom = 174080.0 * std::sqrt(5.0) * d * L * L * std::pow(C, 2.5) *
                         std::max(p.C_T * lg, 2.0 * p.K_chi);
    r.set("eps_ceiling", p.eps_tv * std::pow(p.eps_chi, 3) / denom);
    r.set("h", p.eps_chi * p.eps_chi / (2720.0 * d * L * L * C));
    r.set("T_min", 4.0 * C * lg);
    r.set("T_max", p.C_T * 4.0 * C * lg);
    out.push_back(std::move(r));
  }
  const double k = p.hidden_constant;
  const double C = std::max(p.C_LS, 1.0);
  const double LL = std::max({p.L, p.L_s, 1.0});
  const double tail = std::max(std::log(C * d), C * std::log(1.0 / (p.eps_tv * p.eps_tv)));
  {
    BoundReport r;
    r.name = "predictor (DDPM, g=1)";
    r.shape_only = true;
    r.set("eps_ceiling", k * std::pow(p.eps_tv, 4) / ((C + d) * std::pow(C, 2.5) * LL * LL * tail));
    r.set("h", k * p.eps_tv * p.eps_tv / (C * (C + d) * LL * LL));
    r.set("T", k * std::max(std::log(C * d), C * std::log(1.0 / p.eps_tv)));
    out.push_back(std::move(r));
  }
  {
    BoundReport r;
    r.name = "predictor-corrector (DDPM, g=1)";
    r.shape_only = true;
    const double L = std::max(p.L, 1.0);
    r.set("eps_ceiling",
          k * std::pow(p.eps_tv, 4) / (d * L * L * std::pow(C, 2.5) * std::log(1.0 / (p.eps_chi * p.eps_chi))));
    r.set("T", k * std::max(std::log(C * d), C * std::log(1.0 / p.eps_tv)));
    const double cond = 1.0 / ((1.0 + p.L_s / L) * (1.0 + p.L_s / L) * (1.0 + C / d) *
                               std::max(std::log(C * d), C));
    r.flag("eps_tv^3 <= shape condition", std::pow(p.eps_tv, 3) <= k * cond);
    out.push_back(std::move(r));
  }
  {
    BoundReport r;
    r.name = "annealed LMC";
    r.shape_only = true;
    const double L = std::max(p.L, 1.0);
    r.set("eps_ceiling", k * std::pow(p.eps_tv, 4.5) / (std::pow(d, 2.5) * L * L * std::pow(C, 2.5)));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ssl
