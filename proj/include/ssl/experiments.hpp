#pragma once

// Experiment runner: builds targets, oracles and samplers from an
// ExperimentConfig, runs them and renders results as a long-format CSV plus
// a manifest and a plain-text summary.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ssl/bounds.hpp"
#include "ssl/config.hpp"
#include "ssl/core.hpp"
#include "ssl/divergences.hpp"
#include "ssl/samplers.hpp"
#include "ssl/score_oracle.hpp"
#include "ssl/sde_models.hpp"
#include "ssl/targets.hpp"

namespace ssl {

enum ExitCode : int { kExitOk = 0, kExitBadConfig = 1, kExitBoundViolated = 2, kExitDiverged = 3 };

/// Long-format table: step,statistic,value,method, preceded by '#' lines
/// describing the quantities.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> notes = {}) : notes_(std::move(notes)) {}

  void note(std::string line) { notes_.push_back(std::move(line)); }
  void add(std::size_t step, const std::string& statistic, double value, const std::string& method) {
    rows_.push_back(std::to_string(step) + "," + statistic + "," + format_double(value) + "," + method);
  }
  std::size_t size() const { return rows_.size(); }

  std::string str() const {
    std::string out;
    for (const auto& n : notes_) out += "# " + n + "\n";
    out += "step,statistic,value,method\n";
    for (const auto& r : rows_) out += r + "\n";
    return out;
  }

 private:
  std::vector<std::string> notes_;
  std::vector<std::string> rows_;
};

struct RunOutput {
  int exit_code = kExitOk;
  std::string csv;
  std::string summary;
};

// ---------------------------------------------------------------------------
// Construction from config

inline GaussianMixture build_mixture(const TargetSpec& t) {
  if (t.type == "bump") return GaussianMixture::standard(1);
  if (t.type != "gaussian_mixture") throw ConfigError("unknown target type '" + t.type + "'", 0);
  std::vector<MixtureComponent> comps;
  for (const auto& c : t.components) {
    if (c.mean.empty()) throw ConfigError("mixture component needs a non-empty mean", 0);
    comps.push_back({c.weight, Eigen::Map<const Vector>(c.mean.data(), static_cast<Eigen::Index>(c.mean.size())),
                     c.variance});
  }
  try {
    return GaussianMixture(std::move(comps));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), 0);
  }
}

inline DiffusionModel build_model(const ModelSpec& m) {
  Family f;
  if (m.family == "ddpm") {
    f = Family::kDDPM;
  } else if (m.family == "smld") {
    f = Family::kSMLD;
  } else {
    throw ConfigError("unknown model family '" + m.family + "'", 0);
  }
  try {
    if (m.schedule == "constant") return DiffusionModel(f, DiffusionSchedule::constant(m.a), m.horizon);
    if (m.schedule == "exponential") return DiffusionModel(f, DiffusionSchedule::exponential(m.a, m.b), m.horizon);
    if (m.schedule == "affine_sq") return DiffusionModel(f, DiffusionSchedule::affine_sq(m.a, m.b), m.horizon);
  } catch (const std::exception& e) {
    throw ConfigError(e.what(), 0);
  }
  throw ConfigError("unknown schedule '" + m.schedule + "'", 0);
}

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline ScoreOracle build_oracle(const ExperimentConfig& c, const GaussianMixture& p,
                                std::optional<DiffusionModel> model) {
  const auto& o = c.oracle;
  if (c.target.type == "bump") {
    if (o.mode != "exact" && o.mode != "bump_mismatch") {
      throw ConfigError("a bump target only supports the bump_mismatch oracle", 0);
    }
    return make_bump_oracle(c.target.bump_offset);
  }
  try {
    if (o.mode == "exact") return ScoreOracle::exact(p, std::move(model));
    if (o.mode == "linf_perturbed") {
      PerturbationShape shape;
      if (o.shape == "constant_rotation") {
        shape = PerturbationShape::kConstantRotation;
      } else if (o.shape == "smooth_field") {
        shape = PerturbationShape::kSmoothField;
      } else {
        throw ConfigError("unknown perturbation shape '" + o.shape + "'", 0);
      }
      return make_linf_oracle(p, std::move(model), o.eps1, shape, o.seed);
    }
    if (o.mode == "l2_badset") {
      const Vector center = o.center.empty() ? Vector::Zero(static_cast<Eigen::Index>(p.dim())) : to_vector(o.center);
      return make_l2_badset_oracle(p, std::move(model), o.eps, center, o.radius, o.calibration_time, o.seed);
    }
    if (o.mode == "bump_mismatch") {
      if (p.dim() != 1 || !(p == GaussianMixture::standard(1))) {
        throw ConfigError("bump_mismatch needs the standard normal target in d = 1", 0);
      }
      return make_bump_oracle(o.bump_offset);
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), 0);
  }
  throw ConfigError("unknown oracle mode '" + o.mode + "'", 0);
}

inline Initializer build_init(const SamplerSpec& s, const GaussianMixture& p) {
  const std::size_t d = p.dim();
  if (s.init == "target") return start_from(p);
  if (s.init == "point") {
    if (s.init_point.size() != d) throw ConfigError("init_point must have the target dimension", 0);
    return start_at(to_vector(s.init_point));
  }
  if (s.init == "gaussian") {
    if (!(s.init_variance > 0)) throw ConfigError("init_variance must be > 0", 0);
    Vector m = s.init_mean.empty() ? Vector::Zero(static_cast<Eigen::Index>(d)) : to_vector(s.init_mean);
    if (static_cast<std::size_t>(m.size()) != d) throw ConfigError("init_mean must have the target dimension", 0);
    const double sd = std::sqrt(s.init_variance);
    return [m, sd, d](std::size_t, NoiseStream& rng, double* out) {
      for (std::size_t j = 0; j < d; ++j) out[j] = m[static_cast<Eigen::Index>(j)] + sd * rng.normal();
    };
  }
  throw ConfigError("unknown init '" + s.init + "' for this kind", 0);
}

inline std::vector<std::size_t> to_steps(const std::vector<double>& v, std::size_t max_step) {
  std::set<std::size_t> s;
  for (double x : v) {
    if (!(x >= 0) || x != std::floor(x)) throw ConfigError("record steps must be non-negative integers", 0);
    s.insert(std::min(static_cast<std::size_t>(x), max_step));
  }
  return {s.begin(), s.end()};
}

inline AnnealSchedule build_schedule(const ExperimentConfig& c, const GaussianMixture& p, BoundReport* report) {
  const auto& a = c.anneal;
  AnnealSchedule s;
  if (a.sigma2.empty()) {
    NoiseScheduleParams np;
    np.d = p.dim();
    np.sigma_min2 = a.sigma_min2;
    np.C_LS = a.lsi;
    np.M1 = a.M1 ? *a.M1 : p.mean().norm();
    np.eps_tv = a.eps_tv;
    np.L = p.lipschitz_bound();
    np.c = a.c;
    try {
      auto [sched, rep] = noise_schedule(np);
      s = std::move(sched);
      if (report) *report = std::move(rep);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), 0);
    }
  } else {
    s.sigma2 = a.sigma2;
    std::sort(s.sigma2.begin(), s.sigma2.end());
    s.step_size.assign(s.sigma2.size(), 0.0);
    s.num_steps.assign(s.sigma2.size(), 100);
    for (std::size_t m = 0; m < s.sigma2.size(); ++m) {
      s.step_size[m] = 0.1 * (1.0 + s.sigma2[m]);
    }
    s.ratio = s.max_ratio();
  }
  for (std::size_t m = 0; m < s.sigma2.size(); ++m) {
    if (a.step_scale > 0) s.step_size[m] = a.step_scale * (1.0 + s.sigma2[m]);
    if (a.steps_per_level > 0) s.num_steps[m] = a.steps_per_level;
  }
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), 0);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Reusable studies

/// Statistics of a cloud of samples against a reference law.
inline void describe_samples(CsvTable& csv, std::size_t step, const Matrix& states, const GaussianMixture& ref,
                             std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(states.cols());
  const std::size_t d = ref.dim();
  if (n == 0) return;
  const Vector mean = states.rowwise().mean();
  for (std::size_t j = 0; j < d; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double var = n > 1 ? (states.row(jj).array() - mean[jj]).square().sum() / static_cast<double>(n - 1) : 0.0;
    csv.add(step, "mean_" + std::to_string(j), mean[jj], "empirical");
    csv.add(step, "variance_" + std::to_string(j), var, "empirical");
  }
  if (n >= 1000) {
    const EmpiricalReport r = empirical_vs_analytic(states, ref, hash_combine(seed, step));
    if (d <= 2) {
      csv.add(step, "histogram_tv", r.histogram_tv, "histogram");
      csv.add(step, "histogram_tv_noise_floor", r.tv_noise_floor, "histogram_exact_draws");
    }
    if (ref.size() > 1) {
      for (std::size_t k = 0; k < ref.size(); ++k) {
        csv.add(step, "mode_mass_" + std::to_string(k), r.mode_mass[k], "nearest_component");
      }
    }
  }
}

struct CounterexampleRow {
  double L;
  double l2_error_sq;  // E_p |s - grad ln p|^2
  double bound;
  double tv;  // TV(p, q_L) by quadrature
};

inline std::vector<CounterexampleRow> counterexample_table(const std::vector<double>& Ls) {
  std::vector<CounterexampleRow> rows;
  const GaussianMixture p = GaussianMixture::standard(1);
  for (double L : Ls) {
    if (!(L > 0)) throw ConfigError("bump offsets must be > 0", 0);
    const BumpTarget q(L);
    const BumpL2Error e = bump_l2_error_bound(q);
    const auto tv = quadrature_divergence(q, p, DivergenceKind::kTV,
                                          QuadratureGrid::line(-20.0, std::max(30.0, 1.5 * L + 20.0), 16));
    rows.push_back({L, e.value, e.bound, tv.value});
  }
  return rows;
}

struct CouplingStudy {
  CoupledResult run;
  std::vector<double> D;            // sqrt(chi2(law of Zbar_k || p)), k = 0..N
  std::vector<double> delta;        // p(B)
  std::vector<double> budget;       // coupling sum of the framework up to n, n = 0..N
  std::vector<double> upper95;      // Wilson upper bound on P(Z_n != Zbar_n)
};

inline double wilson_upper(double phat, std::size_t n, double z = 1.959963984540054) {
  const double nn = static_cast<double>(n);
  const double z2 = z * z;
  const double centre = phat + z2 / (2.0 * nn);
  const double half = z * std::sqrt(phat * (1.0 - phat) / nn + z2 / (4.0 * nn * nn));
  return std::min(1.0, (centre + half) / (1.0 + z2 / nn));
}

/// LMC on p = N(0, 1) started from p with the bump oracle, coupled to its
/// spliced version. D_k comes from propagating the spliced chain's density
/// on a grid; delta_k = p(B) by quadrature (B does not depend on k).
inline CouplingStudy coupling_study(double L, double eps1, double h, std::size_t steps, std::size_t chains,
                                    std::uint64_t seed, unsigned threads) {
  const ScoreOracle s = make_bump_oracle(L);
  const SplicedOracle sb = splice_badset(s, eps1);
  const FrozenOracle fs = s.at(0.0), fb = sb.oracle.at(0.0);
  const GaussianMixture p = s.base();
  CouplingStudy out;
  SamplerConfig cfg;
  cfg.step_size = h;
  cfg.num_steps = steps;
  cfg.chains = chains;
  cfg.seed = seed;
  cfg.threads = threads;
  out.run = coupled_run(cfg, 1, start_from(p), fs, fb, sb.bad_set);

  const double lo = -10.0, hi = std::max(10.0, 1.5 * L + 6.0), dx = 0.01;
  std::vector<double> grid;
  for (double x = lo; x <= hi + 1e-12; x += dx) grid.push_back(x);
  std::vector<double> p0(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) p0[i] = p.density(&grid[i]);
  const auto dens = lmc_density_1d(grid, p0, fb, h, steps, threads);
  const double pB = bad_set_mass(s, 0.0, sb.bad_set);
  for (const auto& q : dens) {
    double acc = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double w = (i == 0 || i + 1 == grid.size()) ? 0.5 : 1.0;
      if (q[i] > 0) acc += w * q[i] * q[i] / p0[i];
    }
    out.D.push_back(std::sqrt(std::max(0.0, acc * dx - 1.0)));
    out.delta.push_back(pB);
  }
  for (std::size_t n = 0; n <= steps; ++n) {
    const std::vector<double> Dn(out.D.begin(), out.D.begin() + static_cast<std::ptrdiff_t>(n + 1));
    const std::vector<double> dn(out.delta.begin(), out.delta.begin() + static_cast<std::ptrdiff_t>(n + 1));
    out.budget.push_back(framework_tv_budget(Dn, dn).coupling_tv);
    out.upper95.push_back(wilson_upper(out.run.disagreement[n], chains));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment kinds

namespace detail {

inline std::string fmt(double v) { return format_double(v); }

inline void bound_rows(CsvTable& csv, const BoundReport& r) {
  for (std::size_t k = 0; k < r.trajectory.size(); ++k) csv.add(k, "bound", r.trajectory[k], r.name);
  for (const auto& [k, v] : r.values) csv.add(0, k, v, r.name);
  for (const auto& [k, v] : r.flags) csv.add(0, "hypothesis " + k, v ? 1.0 : 0.0, r.name);
}

inline SamplerConfig sampler_config(const ExperimentConfig& c) {
  SamplerConfig cfg;
  cfg.step_size = c.sampler.step_size;
  cfg.num_steps = c.sampler.steps;
  cfg.chains = c.sampler.chains;
  cfg.seed = c.seed;
  cfg.threads = static_cast<unsigned>(c.threads);
  if (!(cfg.step_size > 0) || !std::isfinite(cfg.step_size)) throw ConfigError("step_size must be > 0", 0);
  if (cfg.chains < 1) throw ConfigError("chains must be >= 1", 0);
  return cfg;
}

/// Exact chain of an LMC run when the target is one Gaussian, the oracle is
/// affine and the start is Gaussian.
inline std::optional<GaussianChain> lmc_exact(const ExperimentConfig& c, const ScoreOracle& o) {
  const GaussianMixture& p = o.base();
  if (p.size() != 1 || !o.is_affine()) return std::nullopt;
  const auto d = static_cast<Eigen::Index>(p.dim());
  const auto& s = c.sampler;
  if (s.init == "target") {
    return gaussian_exact_chain_lmc(o, p.components().front().mean, p.components().front().variance, s.step_size,
                                    s.steps);
  }
  if (s.init == "gaussian") {
    const Vector m = s.init_mean.empty() ? Vector::Zero(d) : to_vector(s.init_mean);
    return gaussian_exact_chain_lmc(o, m, s.init_variance, s.step_size, s.steps);
  }
  return std::nullopt;
}

inline RunOutput run_lmc(const ExperimentConfig& c) {
  const GaussianMixture p = build_mixture(c.target);
  const ScoreOracle o = build_oracle(c, p, std::nullopt);
  SamplerConfig cfg = sampler_config(c);
  std::vector<double> rec = c.sampler.record;
  std::vector<std::pair<std::size_t, double>> runtime_steps;
  for (double T : c.sampler.runtimes) {
    if (!(T >= 0)) throw ConfigError("runtimes must be >= 0", 0);
    const auto k = static_cast<std::size_t>(std::llround(T / cfg.step_size));
    runtime_steps.emplace_back(k, T);
    cfg.num_steps = std::max(cfg.num_steps, k);
    rec.push_back(static_cast<double>(k));
  }
  if (rec.empty()) rec = {0.0, static_cast<double>(cfg.num_steps)};
  cfg.record_steps = to_steps(rec, cfg.num_steps);

  CsvTable csv({"kind: lmc (unadjusted Langevin x <- x + h s(x) + sqrt(2h) xi)",
                "step: iteration index k; runtime T = k h in the same time units as h",
                "mean_j, variance_j: per-coordinate empirical moments of the chains",
                "histogram_tv: total variation between a histogram of the chains and the target (dimensionless)",
                "chi2_exact / chi2_bound: exact chi-square of the Gaussian chain and its one-step recursion bound"});
  const FrozenOracle f = o.at(0.0);
  const SamplerRun run = lmc_run(cfg, p.dim(), build_init(c.sampler, p), f);
  for (const auto& snap : run.snapshots) {
    describe_samples(csv, snap.step, run.healthy(snap.states), p, c.seed);
    for (const auto& [k, T] : runtime_steps) {
      if (k == snap.step) csv.add(k, "runtime", T, "k*h");
    }
  }
  csv.add(cfg.num_steps, "diverged_chains", static_cast<double>(run.divergence_count()), "count");

  std::ostringstream sum;
  sum << "lmc: " << cfg.chains << " chains, " << cfg.num_steps << " steps of h = " << fmt(cfg.step_size) << "\n";
  int code = kExitOk;
  if (auto exact = lmc_exact(c, o)) {
    const auto& comp = p.components().front();
    LmcRecursionParams lp;
    lp.d = p.dim();
    lp.L = 1.0 / comp.variance;
    lp.C_LS = comp.variance;
    lp.h = cfg.step_size;
    lp.eps1 = o.declared_eps();
    const BoundReport b = lmc_chi2_recursion(lp, exact->chi2.front(), cfg.num_steps);
    bool violated = false;
    for (std::size_t k = 0; k <= cfg.num_steps; ++k) {
      if (k < exact->chi2.size()) csv.add(k, "chi2_exact", exact->chi2[k], "exact_chain");
      csv.add(k, "chi2_bound", b.trajectory[k], b.name);
      if (b.all_hypotheses_hold() && exact->chi2[k] > b.trajectory[k] * (1.0 + 1e-12)) violated = true;
    }
    for (const auto& [k, v] : b.flags) sum << "  hypothesis " << k << ": " << (v ? "holds" : "fails") << "\n";
    sum << "  exact chi2 at the last step " << fmt(exact->chi2.back()) << ", bound " << fmt(b.trajectory.back())
        << "\n";
    if (violated) {
      sum << "  BOUND VIOLATED\n";
      code = kExitBoundViolated;
    }
  }
  if (run.divergence_count() > 0) {
    sum << "  " << run.divergence_count() << " chains diverged\n";
    code = kExitDiverged;
  }
  return {code, csv.str(), sum.str()};
}

inline RunOutput run_anneal(const ExperimentConfig& c) {
  const GaussianMixture p = build_mixture(c.target);
  const ScoreOracle o = build_oracle(c, p, std::nullopt);
  BoundReport rep;
  const AnnealSchedule s = build_schedule(c, p, &rep);
  CsvTable csv({"kind: anneal (annealed Langevin over noise levels sigma_M^2 > ... > sigma_1^2)",
                "step: number of completed levels (0 = draw from N(0, sigma_M^2 I))",
                "sigma2, step_size, level_steps: the level finished at this step",
                "mode_mass_k: fraction of chains nearest to component k"});
  std::ostringstream sum;
  sum << "anneal: " << s.levels() << " levels, " << c.sampler.chains << " chains\n";
  SamplerRun run;
  try {
    run = annealed_lmc(s, o, c.sampler.chains, c.seed, static_cast<unsigned>(c.threads), true);
  } catch (const DivergenceError& e) {
    sum << "  " << e.what() << "\n";
    return {kExitDiverged, csv.str(), sum.str()};
  }
  const std::size_t M = s.levels();
  for (const auto& snap : run.snapshots) {
    if (snap.step > 0) {
      const std::size_t lvl = M - snap.step;
      csv.add(snap.step, "sigma2", s.sigma2[lvl], "schedule");
      csv.add(snap.step, "step_size", s.step_size[lvl], "schedule");
      csv.add(snap.step, "level_steps", static_cast<double>(s.num_steps[lvl]), "schedule");
    }
    // after level m the chains approximate p * N(0, sigma_m^2)
    const double s2 = snap.step == 0 ? s.sigma2.back() : s.sigma2[M - snap.step];
    describe_samples(csv, snap.step, snap.states, convolved(p, s2), c.seed);
  }
  if (p.size() > 1) {
    const EmpiricalReport r = empirical_vs_analytic(run.final_states, p, c.seed, false);
    for (std::size_t k = 0; k < p.size(); ++k) {
      sum << "  mode " << k << ": mass " << fmt(r.mode_mass[k]) << " (weight " << fmt(r.mode_weight[k])
          << ", standard error " << fmt(r.mode_stderr[k]) << ")\n";
    }
  }
  return {kExitOk, csv.str(), sum.str()};
}

inline RunOutput run_predictor(const ExperimentConfig& c, bool with_corrector) {
  const GaussianMixture p = build_mixture(c.target);
  const DiffusionModel model = build_model(c.model);
  const ScoreOracle o = build_oracle(c, p, model);
  SamplerConfig cfg = sampler_config(c);
  const std::size_t N = cfg.num_steps;
  std::vector<double> rec = c.sampler.record;
  if (rec.empty()) rec = {0.0, static_cast<double>(N)};
  cfg.record_steps = to_steps(rec, N);
  CorrectorPlan plan = CorrectorPlan::none(N);
  if (with_corrector) {
    const double hc = c.sampler.corrector_step_size > 0 ? c.sampler.corrector_step_size : cfg.step_size;
    if (c.sampler.plan == "final") {
      plan = CorrectorPlan::final_only(N, c.sampler.corrector_steps, hc);
    } else if (c.sampler.plan == "interleaved") {
      plan = CorrectorPlan::interleaved(N, c.sampler.corrector_steps, hc);
    } else if (c.sampler.plan != "none") {
      throw ConfigError("unknown corrector plan '" + c.sampler.plan + "'", 0);
    }
  }
  CsvTable csv({std::string("kind: ") + (with_corrector ? "pc" : "predictor") +
                    " (reverse-SDE sampler from the prior; corrector = Langevin at the current noise level)",
                "step: predictor step k; reverse time k h, compared with the forward marginal at T - k h",
                "chi2_exact / chi2_bound: exact chi-square of the Gaussian chain and the predictor recursion bound"});
  SamplerRun run;
  try {
    run = predictor_corrector(model, o, cfg, plan);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), 0);
  }
  for (const auto& snap : run.snapshots) {
    const double t = std::min(model.horizon(), static_cast<double>(snap.step) * cfg.step_size);
    describe_samples(csv, snap.step, run.healthy(snap.states), o.reference_at(forward_time(model, t)), c.seed);
  }
  csv.add(N, "diverged_chains", static_cast<double>(run.divergence_count()), "count");
  std::ostringstream sum;
  sum << (with_corrector ? "pc" : "predictor") << ": " << cfg.chains << " chains, " << N << " steps of h = "
      << fmt(cfg.step_size) << ", " << plan.total() << " corrector steps\n";
  int code = kExitOk;
  if (p.size() == 1 && o.is_affine()) {
    const GaussianChain g = gaussian_exact_chain(model, o, cfg.step_size, N,
                                                 with_corrector ? std::optional<CorrectorPlan>(plan) : std::nullopt);
    for (std::size_t k = 0; k <= N; ++k) csv.add(k, "chi2_exact", g.chi2[k], "exact_chain");
    if (!with_corrector) {
      const auto& comp = p.components().front();
      PredictorInputs in{model, p.dim(), 0.0, 0.0, comp.variance, p.second_moment()};
      in.L = model.family() == Family::kDDPM ? std::max(1.0 / comp.variance, 1.0) : 1.0 / comp.variance;
      in.L_s = in.L;
      const BoundReport b = predictor_chi2_recursion(in, g.chi2.front(), cfg.step_size, N, {o.declared_eps()});
      bool violated = false;
      for (std::size_t k = 0; k <= N; ++k) {
        csv.add(k, "chi2_bound", b.trajectory[k], b.name);
        if (b.all_hypotheses_hold() && g.chi2[k] > b.trajectory[k] * (1.0 + 1e-12)) violated = true;
      }
      for (const auto& [k, v] : b.flags) sum << "  hypothesis " << k << ": " << (v ? "holds" : "fails") << "\n";
      if (violated) {
        sum << "  BOUND VIOLATED\n";
        code = kExitBoundViolated;
      }
    }
    sum << "  exact chi2 at the last step " << fmt(g.chi2.back()) << "\n";
  }
  if (run.divergence_count() > 0) {
    sum << "  " << run.divergence_count() << " chains diverged\n";
    code = kExitDiverged;
  }
  return {code, csv.str(), sum.str()};
}

inline RunOutput run_coupled(const ExperimentConfig& c) {
  if (c.target.type != "bump" && c.oracle.mode != "bump_mismatch") {
    throw ConfigError("coupled runs use the bump oracle (target type = \"bump\")", 0);
  }
  const double L = c.target.type == "bump" ? c.target.bump_offset : c.oracle.bump_offset;
  if (!(c.oracle.eps1 > 0)) throw ConfigError("coupled runs need oracle.eps1 > 0 (the bad-set threshold)", 0);
  const SamplerConfig cfg = sampler_config(c);
  const CouplingStudy st =
      coupling_study(L, c.oracle.eps1, cfg.step_size, cfg.num_steps, cfg.chains, c.seed, cfg.threads);
  CsvTable csv({"kind: coupled (Langevin with the raw oracle and with its bad-set splice, shared noise)",
                "step: iteration index k",
                "disagreement: fraction of chains with Z_k != Zbar_k; wilson_upper_95: its 95% upper bound",
                "D: sqrt of chi-square between the spliced chain's law and p (grid propagation)",
                "delta: p-mass of the bad set (quadrature); budget: framework coupling sum up to k"});
  bool violated = false;
  for (std::size_t k = 0; k <= cfg.num_steps; ++k) {
    csv.add(k, "disagreement", st.run.disagreement[k], "monte_carlo");
    csv.add(k, "wilson_upper_95", st.upper95[k], "wilson");
    csv.add(k, "hit_by", st.run.hit_by[k], "monte_carlo");
    csv.add(k, "in_bad_set", st.run.in_bad_set[k], "monte_carlo");
    csv.add(k, "D", st.D[k], "grid_density");
    csv.add(k, "delta", st.delta[k], "quadrature");
    csv.add(k, "budget", st.budget[k], "framework");
    if (k == 0 ? st.run.disagreement[0] > 0.0 : st.upper95[k] > st.budget[k]) violated = true;
  }
  std::ostringstream sum;
  sum << "coupled: L = " << fmt(L) << ", eps1 = " << fmt(c.oracle.eps1) << ", " << cfg.chains << " chains\n"
      << "  final disagreement " << fmt(st.run.disagreement.back()) << " (95% upper " << fmt(st.upper95.back())
      << "), budget " << fmt(st.budget.back()) << "\n";
  if (violated) sum << "  BOUND VIOLATED\n";
  return {violated ? kExitBoundViolated : kExitOk, csv.str(), sum.str()};
}

inline RunOutput run_counterexample(const ExperimentConfig& c) {
  const std::vector<double> Ls = c.sweep.empty() ? std::vector<double>{4, 6, 8, 10} : c.sweep;
  const auto rows = counterexample_table(Ls);
  CsvTable csv({"kind: counterexample (bump-perturbed Gaussian q_L versus p = N(0, 1))",
                "step: row index; L: bump offset",
                "l2_error_sq: E_p |s - grad ln p|^2 (quadrature); l2_error_bound: closed-form bound on it",
                "tv: TV(p, q_L) by quadrature (dimensionless)"});
  std::ostringstream sum;
  sum << "counterexample:\n";
  bool violated = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv.add(i, "L", rows[i].L, "config");
    csv.add(i, "l2_error_sq", rows[i].l2_error_sq, "gauss_kronrod");
    csv.add(i, "l2_error_bound", rows[i].bound, "closed_form");
    csv.add(i, "tv", rows[i].tv, "simpson");
    sum << "  L = " << fmt(rows[i].L) << ": error^2 " << fmt(rows[i].l2_error_sq) << " (bound "
        << fmt(rows[i].bound) << "), TV " << fmt(rows[i].tv) << "\n";
    if (rows[i].l2_error_sq > rows[i].bound) violated = true;
  }
  return {violated ? kExitBoundViolated : kExitOk, csv.str(), sum.str()};
}

inline RunOutput run_bounds(const ExperimentConfig& c) {
  const auto& b = c.bounds;
  CsvTable csv({"kind: bounds (closed-form evaluation, no sampling)",
                "step: recursion step k for trajectories, 0 for scalar values",
                "hypothesis rows: 1 = holds, 0 = fails"});
  std::vector<BoundReport> reports;
  if (b.theorem == "lmc") {
    reports.push_back(lmc_chi2_recursion({b.d, b.L, b.lsi, b.h, b.eps1}, b.chi0, b.steps));
  } else if (b.theorem == "predictor") {
    const DiffusionModel m = build_model(c.model);
    PredictorInputs in{m, b.d, b.L, b.L_s, b.lsi, b.M2};
    if (static_cast<double>(b.steps) * b.h > m.horizon() * (1 + 1e-12)) {
      throw ConfigError("bounds.steps * bounds.h exceeds the model horizon", 0);
    }
    reports.push_back(predictor_chi2_recursion(in, b.chi0, b.h, b.steps, {b.eps}));
  } else if (b.theorem == "constants") {
    reports.push_back(predictor_constants_report(build_model(c.model).family(), b.d, b.L, b.L_s, b.lsi));
  } else if (b.theorem == "budget") {
    reports = budget_planner({b.eps_tv, b.eps_chi, b.K_chi, b.d, b.L, b.L_s, b.lsi, b.C_T, b.hidden_constant});
  } else if (b.theorem == "warm") {
    const WarmStartBound w = warm_start_bound(b.M1, b.lsi, b.d, b.sigma2);
    BoundReport r;
    r.name = "warm_start";
    r.set("statement", w.statement);
    r.set("proof", w.proof);
    r.set("conservative", w.conservative);
    reports.push_back(r);
  } else if (b.theorem == "framework") {
    try {
      const FrameworkBudget f = framework_tv_budget(b.D, b.delta);
      BoundReport r;
      r.name = "framework_tv_budget";
      r.set("coupling_tv", f.coupling_tv);
      r.set("total_tv", f.total_tv);
      reports.push_back(r);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), 0);
    }
  } else {
    throw ConfigError("unknown bounds.theorem '" + b.theorem + "'", 0);
  }
  std::ostringstream sum;
  for (const auto& r : reports) {
    detail::bound_rows(csv, r);
    sum << r.to_text();
  }
  return {kExitOk, csv.str(), sum.str()};
}

inline RunOutput run_schedule(const ExperimentConfig& c) {
  const GaussianMixture p = build_mixture(c.target);
  BoundReport rep;
  const AnnealSchedule s = build_schedule(c, p, &rep);
  CsvTable csv({"kind: schedule (annealing levels, no sampling)",
                "step: level index m = 1..M (1 = smallest noise)",
                "sigma2: noise variance; step_size: h_m; level_steps: N_m"});
  std::ostringstream sum;
  sum << "schedule: " << s.levels() << " levels, ratio " << fmt(s.ratio) << "\n";
  for (std::size_t m = 0; m < s.levels(); ++m) {
    csv.add(m + 1, "sigma2", s.sigma2[m], "schedule");
    csv.add(m + 1, "step_size", s.step_size[m], "schedule");
    csv.add(m + 1, "level_steps", static_cast<double>(s.num_steps[m]), "schedule");
    sum << "  level " << m + 1 << ": sigma2 " << fmt(s.sigma2[m]) << ", h " << fmt(s.step_size[m]) << ", N "
        << s.num_steps[m] << "\n";
  }
  if (!rep.name.empty()) {
    detail::bound_rows(csv, rep);
    sum << rep.to_text();
  }
  return {kExitOk, csv.str(), sum.str()};
}

}  // namespace detail

/// Runs one experiment in memory. Configuration problems raise ConfigError;
/// everything else is reported through the exit code.
inline RunOutput execute(const ExperimentConfig& c) {
  if (c.kind == "lmc") return detail::run_lmc(c);
  if (c.kind == "anneal") return detail::run_anneal(c);
  if (c.kind == "predictor") return detail::run_predictor(c, false);
  if (c.kind == "pc") return detail::run_predictor(c, true);
  if (c.kind == "coupled") return detail::run_coupled(c);
  if (c.kind == "counterexample") return detail::run_counterexample(c);
  if (c.kind == "bounds") return detail::run_bounds(c);
  if (c.kind == "schedule") return detail::run_schedule(c);
  throw ConfigError("unknown experiment kind '" + c.kind + "'", 0);
}

inline std::string manifest_text(const ExperimentConfig& c, unsigned threads_used) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << "# run manifest\n# started " << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << "\n# seed " << c.seed
     << "\n# worker threads " << threads_used << "\n\n"
     << serialize_config(c);
  return os.str();
}

/// Runs the experiment and writes manifest.txt, results.csv and summary.txt
/// into `dir`. Returns the exit status.
inline int run(const ExperimentConfig& c, const std::filesystem::path& dir, std::ostream& log) {
  RunOutput out;
  try {
    out = execute(c);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitBadConfig;
  } catch (const DivergenceError& e) {
    log << "diverged: " << e.what() << "\n";
    return kExitDiverged;
  }
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "manifest.txt") << manifest_text(c, resolve_threads(static_cast<unsigned>(c.threads)));
  std::ofstream(dir / "results.csv", std::ios::binary) << out.csv;
  std::ofstream(dir / "summary.txt") << out.summary;
  log << out.summary;
  return out.exit_code;
}

}  // namespace ssl
