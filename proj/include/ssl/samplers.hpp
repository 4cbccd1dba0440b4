#pragma once

// Langevin and reverse-SDE samplers driven by a score oracle.
//
// Every chain draws its noise from NoiseStream(seed, purpose, chain, step), so
// a run is a pure function of its configuration regardless of how chains are
// spread over threads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ssl/bounds.hpp"
#include "ssl/core.hpp"
#include "ssl/rng.hpp"
#include "ssl/score_oracle.hpp"
#include "ssl/sde_models.hpp"
#include "ssl/targets.hpp"

namespace ssl {

template <typename S>
concept ScoreField = requires(const S& s, const double* x, double* out) { s(x, out); };

struct SamplerConfig {
  double step_size = 0.01;
  std::size_t num_steps = 0;
  std::size_t chains = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::vector<std::size_t> record_steps;  // states are kept after these steps (0 = initial)

  void validate() const {
    if (!(step_size >= 0) || !std::isfinite(step_size)) throw std::invalid_argument("step size must be >= 0");
    if (chains < 1) throw std::invalid_argument("need at least one chain");
  }
};

struct Snapshot {
  std::size_t step;
  Matrix states;  // d x chains
};

struct SamplerRun {
  Matrix final_states;  // d x chains
  std::vector<Snapshot> snapshots;
  std::vector<std::uint8_t> diverged;
  std::vector<std::size_t> diverged_step;

  std::size_t divergence_count() const {
    return static_cast<std::size_t>(std::count(diverged.begin(), diverged.end(), std::uint8_t{1}));
  }

  /// Columns of `states` whose chain stayed finite.
  Matrix healthy(const Matrix& states) const {
    std::vector<Eigen::Index> keep;
    for (std::size_t i = 0; i < diverged.size(); ++i) {
      if (!diverged[i]) keep.push_back(static_cast<Eigen::Index>(i));
    }
    Matrix out(states.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = states.col(keep[j]);
    return out;
  }

  const Matrix& at_step(std::size_t step) const {
    for (const auto& s : snapshots) {
      if (s.step == step) return s.states;
    }
    throw std::out_of_range("no snapshot recorded at step " + std::to_string(step));
  }
};

/// Initial law: writes chain `i`'s starting point using the given stream.
using Initializer = std::function<void(std::size_t chain, NoiseStream& rng, double* out)>;

inline Initializer start_from(const GaussianMixture& p) {
  return [p](std::size_t, NoiseStream& rng, double* out) { p.sample(rng, out); };
}
inline Initializer start_at(const Vector& x0) {
  return [x0](std::size_t, NoiseStream&, double* out) {
    for (Eigen::Index j = 0; j < x0.size(); ++j) out[j] = x0[j];
  };
}
inline Initializer start_gaussian(std::size_t d, double variance) {
  const double s = std::sqrt(variance);
  return [d, s](std::size_t, NoiseStream& rng, double* out) {
    for (std::size_t j = 0; j < d; ++j) out[j] = s * rng.normal();
  };
}

// ---------------------------------------------------------------------------
// Single steps

/// out = x + h s(x) + sqrt(2h) xi. `out` may alias `x`.
template <ScoreField S>
void lmc_step(const double* x, const S& score, double h, const double* xi, std::size_t d, double* out,
              double* scratch) {
  score(x, scratch);
  const double c = std::sqrt(2.0 * h);
  for (std::size_t j = 0; j < d; ++j) out[j] = x[j] + h * scratch[j] + c * xi[j];
}

template <ScoreField S>
Vector lmc_step(const Vector& x, const S& score, double h, const Vector& xi) {
  Vector out(x.size()), tmp(x.size());
  lmc_step(x.data(), score, h, xi.data(), static_cast<std::size_t>(x.size()), out.data(), tmp.data());
  return out;
}

/// One step of the exact-integral predictor, with the score frozen at the
/// step start. SMLD: z + G s + sqrt(G) xi; DDPM: z + G (z/2 + s) + sqrt(G) xi,
/// with G the integral of g(T - t)^2 over [kh, kh + h].
template <ScoreField S>
void predictor_step(const double* z, const S& score, const DiffusionModel& m, double kh, double h,
                    const double* xi, std::size_t d, double* out, double* scratch) {
  if (kh + h > m.horizon() * (1.0 + 1e-12) + 1e-15) throw std::domain_error("predictor_step: kh + h > T");
  const double G = reverse_accumulated(m, kh, std::min(kh + h, m.horizon()));
  score(z, scratch);
  const double c = std::sqrt(G);
  const double half = m.family() == Family::kDDPM ? 0.5 * G : 0.0;
  for (std::size_t j = 0; j < d; ++j) out[j] = z[j] + half * z[j] + G * scratch[j] + c * xi[j];
}

template <ScoreField S>
Vector predictor_step(const Vector& z, const S& score, const DiffusionModel& m, double kh, double h,
                      const Vector& xi) {
  Vector out(z.size()), tmp(z.size());
  predictor_step(z.data(), score, m, kh, h, xi.data(), static_cast<std::size_t>(z.size()), out.data(), tmp.data());
  return out;
}

namespace detail {

inline std::uint64_t level_key(std::size_t level, std::size_t step) {
  return (static_cast<std::uint64_t>(level) << 40) ^ static_cast<std::uint64_t>(step);
}

struct ChainBuffers {
  std::vector<double> x, y, xi, scratch;
  explicit ChainBuffers(std::size_t d) : x(d), y(d), xi(d), scratch(d) {}
};

inline SamplerRun make_run(std::size_t d, std::size_t chains, const std::vector<std::size_t>& record) {
  SamplerRun run;
  run.final_states.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(chains));
  run.diverged.assign(chains, 0);
  run.diverged_step.assign(chains, 0);
  std::vector<std::size_t> steps = record;
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  for (std::size_t s : steps) {
    run.snapshots.push_back({s, Matrix::Constant(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(chains), kNaN)});
  }
  return run;
}

inline void record(SamplerRun& run, std::size_t step, std::size_t chain, const double* x, std::size_t d) {
  for (auto& s : run.snapshots) {
    if (s.step == step) {
      for (std::size_t j = 0; j < d; ++j) s.states(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(chain)) = x[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Runs

/// N steps of LMC per chain.
template <ScoreField S>
SamplerRun lmc_run(const SamplerConfig& cfg, std::size_t d, const Initializer& init, const S& score) {
  cfg.validate();
  SamplerRun run = detail::make_run(d, cfg.chains, cfg.record_steps);
  parallel_for(cfg.chains, resolve_threads(cfg.threads), [&](std::size_t lo, std::size_t hi) {
    detail::ChainBuffers b(d);
    for (std::size_t i = lo; i < hi; ++i) {
      NoiseStream r0(cfg.seed, Stream::kInit, i, 0);
      init(i, r0, b.x.data());
      detail::record(run, 0, i, b.x.data(), d);
      for (std::size_t k = 0; k < cfg.num_steps; ++k) {
        NoiseStream rng(cfg.seed, Stream::kStep, i, k);
        rng.fill_normal(b.xi.data(), d);
        lmc_step(b.x.data(), score, cfg.step_size, b.xi.data(), d, b.y.data(), b.scratch.data());
        if (!all_finite(b.y.data(), d)) {
          run.diverged[i] = 1;
          run.diverged_step[i] = k + 1;
          break;
        }
        std::swap(b.x, b.y);
        detail::record(run, k + 1, i, b.x.data(), d);
      }
      for (std::size_t j = 0; j < d; ++j) {
        run.final_states(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = b.x[j];
      }
    }
  });
  return run;
}

/// Draws x ~ N(0, sigma_M^2 I) and runs level M down to level 1, each with
/// N_m LMC steps of size h_m against the score of p * N(0, sigma_m^2 I);
/// level m's output starts level m - 1. Snapshots are taken after each level
/// (record step M - m + 1 is the output of level m). Throws DivergenceError
/// naming the level when any chain leaves the finite range.
inline SamplerRun annealed_lmc(const AnnealSchedule& schedule, const ScoreOracle& oracle, std::size_t chains,
                               std::uint64_t seed, unsigned threads = 1, bool record_levels = false) {
  schedule.validate();
  const std::size_t M = schedule.levels();
  const std::size_t d = oracle.base().dim();
  std::vector<FrozenOracle> frozen;
  frozen.reserve(M);
  for (std::size_t m = 0; m < M; ++m) frozen.push_back(oracle.at_convolved(schedule.sigma2[m]));
  std::vector<std::size_t> rec;
  if (record_levels) {
    for (std::size_t s = 0; s <= M; ++s) rec.push_back(s);
  }
  SamplerRun run = detail::make_run(d, chains, rec);
  std::vector<std::size_t> bad_level(chains, 0);
  parallel_for(chains, resolve_threads(threads), [&](std::size_t lo, std::size_t hi) {
    detail::ChainBuffers b(d);
    for (std::size_t i = lo; i < hi; ++i) {
      NoiseStream r0(seed, Stream::kInit, i, 0);
      const double s = std::sqrt(schedule.sigma2.back());
      for (std::size_t j = 0; j < d; ++j) b.x[j] = s * r0.normal();
      detail::record(run, 0, i, b.x.data(), d);
      for (std::size_t lvl = M; lvl-- > 0 && !run.diverged[i];) {
        const double h = schedule.step_size[lvl];
        for (std::size_t k = 0; k < schedule.num_steps[lvl]; ++k) {
          NoiseStream rng(seed, Stream::kLevel, i, detail::level_key(lvl, k));
          rng.fill_normal(b.xi.data(), d);
          lmc_step(b.x.data(), frozen[lvl], h, b.xi.data(), d, b.y.data(), b.scratch.data());
          if (!all_finite(b.y.data(), d)) {
            run.diverged[i] = 1;
            run.diverged_step[i] = k + 1;
            bad_level[i] = lvl + 1;
            break;
          }
          std::swap(b.x, b.y);
        }
        detail::record(run, M - lvl, i, b.x.data(), d);
      }
      for (std::size_t j = 0; j < d; ++j) {
        run.final_states(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = b.x[j];
      }
    }
  });
  for (std::size_t i = 0; i < chains; ++i) {
    if (run.diverged[i]) {
      throw DivergenceError("annealed LMC diverged at level " + std::to_string(bad_level[i]), i,
                            run.diverged_step[i]);
    }
  }
  return run;
}

/// Corrector schedule: after predictor step m (1-based) run counts[m-1] LMC
/// steps of size step_sizes[m-1] with the score at reverse time m h.
struct CorrectorPlan {
  std::vector<std::size_t> counts;
  std::vector<double> step_sizes;

  static CorrectorPlan none(std::size_t steps) { return {std::vector<std::size_t>(steps, 0), std::vector<double>(steps, 0.0)}; }
  static CorrectorPlan final_only(std::size_t steps, std::size_t n, double h) {
    CorrectorPlan p = none(steps);
    if (steps > 0) {
      p.counts.back() = n;
      p.step_sizes.back() = h;
    }
    return p;
  }
  static CorrectorPlan interleaved(std::size_t steps, std::size_t n, double h) {
    return {std::vector<std::size_t>(steps, n), std::vector<double>(steps, h)};
  }
  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

/// Algorithm: z_0 ~ prior; for m = 1..N a predictor step from (m-1)h, then
/// the planned corrector steps. cfg.step_size is the predictor h and
/// cfg.num_steps is N (N h <= T). Snapshots are taken after step m's
/// correctors.
inline SamplerRun predictor_corrector(const DiffusionModel& model, const ScoreOracle& oracle,
                                      const SamplerConfig& cfg, const CorrectorPlan& plan) {
  cfg.validate();
  const std::size_t N = cfg.num_steps;
  const double h = cfg.step_size;
  if (plan.counts.size() != N || plan.step_sizes.size() != N) {
    throw std::invalid_argument("corrector plan length must equal the number of predictor steps");
  }
  if (static_cast<double>(N) * h > model.horizon() * (1.0 + 1e-12)) {
    throw std::invalid_argument("predictor needs N h <= T");
  }
  const PriorSpec pr = prior(model);
  if (pr.degenerate) throw std::invalid_argument("degenerate prior (T = 0) cannot be sampled");
  const std::size_t d = oracle.base().dim();
  // frozen[m] is the score at reverse time m h
  std::vector<FrozenOracle> frozen;
  frozen.reserve(N + 1);
  for (std::size_t m = 0; m <= N; ++m) {
    const double t = std::min(model.horizon(), static_cast<double>(m) * h);
    frozen.push_back(oracle.at(forward_time(model, t)));
  }
  SamplerRun run = detail::make_run(d, cfg.chains, cfg.record_steps);
  const double s0 = std::sqrt(pr.variance);
  parallel_for(cfg.chains, resolve_threads(cfg.threads), [&](std::size_t lo, std::size_t hi) {
    detail::ChainBuffers b(d);
    for (std::size_t i = lo; i < hi; ++i) {
      NoiseStream r0(cfg.seed, Stream::kInit, i, 0);
      for (std::size_t j = 0; j < d; ++j) b.x[j] = s0 * r0.normal();
      detail::record(run, 0, i, b.x.data(), d);
      for (std::size_t m = 1; m <= N && !run.diverged[i]; ++m) {
        const double kh = static_cast<double>(m - 1) * h;
        NoiseStream rng(cfg.seed, Stream::kStep, i, m - 1);
        rng.fill_normal(b.xi.data(), d);
        predictor_step(b.x.data(), frozen[m - 1], model, kh, std::min(h, model.horizon() - kh), b.xi.data(), d,
                       b.y.data(), b.scratch.data());
        if (!all_finite(b.y.data(), d)) {
          run.diverged[i] = 1;
          run.diverged_step[i] = m;
          break;
        }
        std::swap(b.x, b.y);
        for (std::size_t c = 0; c < plan.counts[m - 1]; ++c) {
          NoiseStream rc(cfg.seed, Stream::kCorrector, i, detail::level_key(m, c));
          rc.fill_normal(b.xi.data(), d);
          lmc_step(b.x.data(), frozen[m], plan.step_sizes[m - 1], b.xi.data(), d, b.y.data(), b.scratch.data());
          if (!all_finite(b.y.data(), d)) {
            run.diverged[i] = 1;
            run.diverged_step[i] = m;
            break;
          }
          std::swap(b.x, b.y);
        }
        detail::record(run, m, i, b.x.data(), d);
      }
      for (std::size_t j = 0; j < d; ++j) {
        run.final_states(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = b.x[j];
      }
    }
  });
  return run;
}

struct CoupledResult {
  std::vector<double> disagreement;  // P(Z_k != Zbar_k), k = 0..N
  std::vector<double> hit_by;        // P(Zbar_j in B for some j < k), k = 0..N
  std::vector<double> in_bad_set;    // P(Zbar_k in B), k = 0..N
  std::size_t chains = 0;
  std::size_t diverged = 0;
};

/// LMC with the raw oracle s (Z) and with its spliced version b (Zbar) on
/// shared noise. The two chains agree until Zbar first visits the bad set.
inline CoupledResult coupled_run(const SamplerConfig& cfg, std::size_t d, const Initializer& init,
                                 const FrozenOracle& s, const FrozenOracle& b, const BadSet& bad) {
  cfg.validate();
  if (s.spliced() || !b.spliced()) {
    throw std::invalid_argument("coupled_run expects an unspliced oracle and its spliced version");
  }
  if (!(s.reference() == b.reference()) || s.dim() != d || b.dim() != d) {
    throw std::invalid_argument("coupled_run: oracles do not share the same exact score");
  }
  const std::size_t N = cfg.num_steps;
  std::vector<std::uint32_t> first_diff(cfg.chains, 0), first_hit(cfg.chains, 0);
  std::vector<std::vector<std::uint8_t>> in_b(cfg.chains);
  std::vector<std::uint8_t> div(cfg.chains, 0);
  constexpr std::uint32_t kNever = ~std::uint32_t{0};
  parallel_for(cfg.chains, resolve_threads(cfg.threads), [&](std::size_t lo, std::size_t hi) {
    detail::ChainBuffers z(d), zb(d);
    for (std::size_t i = lo; i < hi; ++i) {
      NoiseStream r0(cfg.seed, Stream::kInit, i, 0);
      init(i, r0, z.x.data());
      zb.x = z.x;
      std::uint32_t diff = kNever, hit = kNever;
      auto& mark = in_b[i];
      mark.assign(N + 1, 0);
      for (std::size_t k = 0; k <= N; ++k) {
        if (diff == kNever && z.x != zb.x) diff = static_cast<std::uint32_t>(k);
        if (bad.contains(b, zb.x.data())) {
          mark[k] = 1;
          if (hit == kNever) hit = static_cast<std::uint32_t>(k);
        }
        if (k == N) break;
        NoiseStream rng(cfg.seed, Stream::kStep, i, k);
        rng.fill_normal(z.xi.data(), d);
        lmc_step(z.x.data(), s, cfg.step_size, z.xi.data(), d, z.y.data(), z.scratch.data());
        lmc_step(zb.x.data(), b, cfg.step_size, z.xi.data(), d, zb.y.data(), zb.scratch.data());
        if (!all_finite(z.y.data(), d) || !all_finite(zb.y.data(), d)) {
          div[i] = 1;
          break;
        }
        std::swap(z.x, z.y);
        std::swap(zb.x, zb.y);
      }
      first_diff[i] = diff;
      first_hit[i] = hit;
    }
  });
  CoupledResult r;
  r.chains = cfg.chains;
  r.disagreement.assign(N + 1, 0.0);
  r.hit_by.assign(N + 1, 0.0);
  r.in_bad_set.assign(N + 1, 0.0);
  for (std::size_t i = 0; i < cfg.chains; ++i) {
    if (div[i]) ++r.diverged;
    for (std::size_t k = 0; k <= N; ++k) {
      if (first_diff[i] != kNever && first_diff[i] <= k) r.disagreement[k] += 1.0;
      if (first_hit[i] != kNever && first_hit[i] < k) r.hit_by[k] += 1.0;
      r.in_bad_set[k] += in_b[i][k];
    }
  }
  const double n = static_cast<double>(cfg.chains);
  for (std::size_t k = 0; k <= N; ++k) {
    r.disagreement[k] /= n;
    r.hit_by[k] /= n;
    r.in_bad_set[k] /= n;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Exact Gaussian chains

/// Mean, variance and exact chi2 to the tracked law at every step.
struct GaussianChain {
  Matrix mean;  // d x (steps + 1), column k is the mean after k steps
  std::vector<double> variance;  // per coordinate
  std::vector<double> chi2;      // chi2(q_k || p_k)
};

namespace detail {
inline Vector constant_shift(const ScoreOracle& oracle) {
  if (!oracle.is_affine()) {
    throw std::invalid_argument("gaussian_exact_chain is unsupported for non-affine oracles");
  }
  if (oracle.base().size() != 1) {
    throw std::invalid_argument("gaussian_exact_chain is unsupported for mixtures; the target must be one Gaussian");
  }
  const auto& pert = oracle.perturbation();
  const auto d = static_cast<Eigen::Index>(oracle.base().dim());
  return pert.kind() == Perturbation::Kind::kConstant ? pert.shift() : Vector::Zero(d);
}
}  // namespace detail

/// LMC on the data law with an affine oracle, started from N(m0, v0 I).
inline GaussianChain gaussian_exact_chain_lmc(const ScoreOracle& oracle, const Vector& m0, double v0, double h,
                                              std::size_t steps) {
  const Vector delta = detail::constant_shift(oracle);
  const auto& c = oracle.base().components().front();
  GaussianChain g;
  g.mean.resize(m0.size(), static_cast<Eigen::Index>(steps + 1));
  Vector m = m0;
  double v = v0;
  const double a = 1.0 - h / c.variance;
  for (std::size_t k = 0;; ++k) {
    g.mean.col(static_cast<Eigen::Index>(k)) = m;
    g.variance.push_back(v);
    g.chi2.push_back(chi2_gaussians(c.mean, c.variance, m, v));
    if (k == steps) break;
    m = m + h * ((c.mean - m) / c.variance + delta);
    v = a * a * v + 2.0 * h;
  }
  return g;
}

/// Predictor (plus optional corrector plan) on the reverse SDE for Gaussian
/// data, started from the prior. chi2 is against the forward marginal at
/// T - k h.
inline GaussianChain gaussian_exact_chain(const DiffusionModel& model, const ScoreOracle& oracle, double h,
                                          std::size_t steps, const std::optional<CorrectorPlan>& plan = {}) {
  const Vector delta = detail::constant_shift(oracle);
  if (plan && (plan->counts.size() != steps || plan->step_sizes.size() != steps)) {
    throw std::invalid_argument("corrector plan length must equal the number of predictor steps");
  }
  const auto d = static_cast<Eigen::Index>(oracle.base().dim());
  const MixtureComponent& data = oracle.base().components().front();
  const Vector& mu = data.mean;
  // p at reverse time t is N(scale mu, var I)
  auto marginal = [&](double reverse_t, double& scale, double& var) {
    const MarginalParams mp = marginal_params(model, forward_time(model, std::min(reverse_t, model.horizon())));
    scale = mp.scale;
    var = mp.scale * mp.scale * data.variance + mp.noise_var;
  };
  GaussianChain g;
  g.mean.resize(d, static_cast<Eigen::Index>(steps + 1));
  g.variance.reserve(steps + 1);
  g.chi2.reserve(steps + 1);
  Vector m = Vector::Zero(d);
  double v = prior(model).variance;
  if (!(v > 0)) throw std::invalid_argument("degenerate prior (T = 0)");
  for (std::size_t k = 0;; ++k) {
    const double t = std::min(model.horizon(), static_cast<double>(k) * h);
    double sk, vk;
    marginal(t, sk, vk);
    g.mean.col(static_cast<Eigen::Index>(k)) = m;
    g.variance.push_back(v);
    g.chi2.push_back(chi2_gaussians_sq((m - sk * mu).squaredNorm(), vk, v, static_cast<std::size_t>(d)));
    if (k == steps) break;
    const double step = std::min(h, model.horizon() - t);
    const double G = reverse_accumulated(model, t, t + step);
    const double c = 1.0 + (model.family() == Family::kDDPM ? 0.5 * G : 0.0) - G / vk;
    m = c * m + G * ((sk / vk) * mu + delta);
    v = c * c * v + G;
    if (plan) {
      double sn, vn;
      marginal(t + step, sn, vn);
      const double hc = plan->step_sizes[k];
      const double a = 1.0 - hc / vn;
      for (std::size_t j = 0; j < plan->counts[k]; ++j) {
        m = m + hc * ((sn * mu - m) / vn + delta);
        v = a * a * v + 2.0 * hc;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// One-dimensional density propagation

/// Density of an LMC chain on a uniform grid: q_{k+1}(y) = int q_k(x)
/// N(y; x + h s(x), 2h) dx, by the trapezoid rule. Returns q_0..q_N.
template <ScoreField S>
std::vector<std::vector<double>> lmc_density_1d(const std::vector<double>& grid, std::vector<double> q0,
                                                const S& score, double h, std::size_t steps, unsigned threads = 1) {
  const std::size_t n = grid.size();
  if (n < 3 || q0.size() != n) throw std::invalid_argument("lmc_density_1d: bad grid");
  const double dx = grid[1] - grid[0];
  std::vector<double> mu(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s;
    score(&grid[i], &s);
    mu[i] = grid[i] + h * s;
  }
  const double inv = 1.0 / (4.0 * h);
  const double norm = 1.0 / std::sqrt(4.0 * kPi * h);
  const double reach = 12.0 * std::sqrt(2.0 * h);
  std::vector<std::vector<double>> out;
  out.reserve(steps + 1);
  out.push_back(std::move(q0));
  for (std::size_t k = 0; k < steps; ++k) {
    const auto& q = out.back();
    std::vector<double> next(n, 0.0);
    parallel_for(n, threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t j = lo; j < hi; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (q[i] == 0.0) continue;
          const double e = grid[j] - mu[i];
          if (std::abs(e) > reach) continue;
          const double w = (i == 0 || i + 1 == n) ? 0.5 : 1.0;
          acc += w * q[i] * std::exp(-e * e * inv);
        }
        next[j] = acc * norm * dx;
      }
    });
    out.push_back(std::move(next));
  }
  return out;
}

}  // namespace ssl
