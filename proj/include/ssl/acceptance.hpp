#pragma once

// Acceptance criteria. Each check returns its verdict, a one-line detail and
// its wall time; a check that exceeds its runtime budget fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ssl/bounds.hpp"
#include "ssl/divergences.hpp"
#include "ssl/experiments.hpp"
#include "ssl/samplers.hpp"
#include "ssl/score_oracle.hpp"
#include "ssl/sde_models.hpp"
#include "ssl/targets.hpp"

namespace ssl {

struct CriterionResult {
  int id = 0;
  std::string name;
  std::string suite;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  double budget_seconds = 0.0;
};

struct Criterion {
  int id;
  std::string name;
  std::string suite;  // closed_forms | soundness | simulation
  double budget_seconds;
  std::function<bool(std::ostream& detail)> check;
};

namespace acceptance {

inline std::string g(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

/// Sets SSL_THREADS for the lifetime of the object and restores it after.
class ScopedThreads {
 public:
  explicit ScopedThreads(unsigned n) {
    if (const char* v = std::getenv("SSL_THREADS")) saved_ = v;
    setenv("SSL_THREADS", std::to_string(n).c_str(), 1);
  }
  ~ScopedThreads() {
    if (saved_) {
      setenv("SSL_THREADS", saved_->c_str(), 1);
    } else {
      unsetenv("SSL_THREADS");
    }
  }
  ScopedThreads(const ScopedThreads&) = delete;
  ScopedThreads& operator=(const ScopedThreads&) = delete;

 private:
  std::optional<std::string> saved_;
};

inline bool closed_form_chi2(std::ostream& out) {
  double worst_rel = 0.0, worst_quad = 0.0;
  for (double eps : {0.1, 0.5, 0.9}) {
    for (std::size_t d : {1u, 2u, 5u, 50u}) {
      for (double s1 : {1.0, 2.5}) {
        const double want = std::pow(1.0 - eps * eps, -0.5 * static_cast<double>(d)) - 1.0;
        const double got = chi2_gaussians(0.0, s1, 0.0, (1.0 + eps) * s1, d);
        worst_rel = std::max(worst_rel, std::abs(got - want) / std::abs(want));
      }
    }
    const auto q = GaussianMixture::gaussian(Vector::Zero(1), 1.0 + eps);
    const auto p = GaussianMixture::standard(1);
    const auto r = quadrature_divergence(q, p, DivergenceKind::kChi2, QuadratureGrid::line(-120.0, 120.0, 16));
    worst_quad = std::max(worst_quad, std::abs(r.value - chi2_gaussians(0.0, 1.0, 0.0, 1.0 + eps, 1)));
  }
  out << "max relative gap to (1-eps^2)^(-d/2)-1: " << g(worst_rel) << "; max gap to 1D quadrature: "
      << g(worst_quad);
  return worst_rel <= 1e-12 && worst_quad <= 1e-8;
}

inline bool lmc_stationary_variance(std::ostream& out) {
  const double h = 0.1;
  SamplerConfig cfg;
  cfg.step_size = h;
  cfg.num_steps = 50;
  cfg.chains = 1000000;
  cfg.seed = 2;
  const auto p = GaussianMixture::standard(1);
  const SamplerRun run = lmc_run(cfg, 1, start_from(p), ScoreOracle::exact(p).at(0.0));
  const auto x = run.final_states.row(0).array();
  const double m = x.mean();
  const double var = (x - m).square().sum() / static_cast<double>(cfg.chains - 1);
  const double want = 1.0 / (1.0 - h / 2.0);
  const double rel = std::abs(var / want - 1.0);
  out << cfg.chains << " chains x " << cfg.num_steps << " steps: variance " << g(var) << " vs " << g(want)
      << " (relative gap " << g(rel) << ")";
  return rel <= 0.01 && run.divergence_count() == 0;
}

inline bool lemma_propagation(std::ostream& out) {
  const DiffusionModel ddpm(Family::kDDPM, DiffusionSchedule::constant(1.0), 1.0);
  const double t = std::log(2.0);  // beta = ln 2 with g = 1
  SmoothnessInfo base;
  base.lsi_constant = 5.0;
  base.second_moment = 10.0;
  const SmoothnessInfo s = smoothness_of_noised(base, 2, ddpm, t);
  const bool worked = std::abs(s.lsi_constant - 3.0) <= 1e-12 && std::abs(s.second_moment - 6.0) <= 1e-12;
  out << "C_LS 5 -> " << g(s.lsi_constant) << ", M2 10 -> " << g(s.second_moment) << "; ";

  // forward-noise data draws and compare E|x_t|^2 with the propagated M2
  const GaussianMixture data({{0.3, Vector::Constant(2, -1.5), 0.5}, {0.7, (Vector(2) << 2.0, 0.5).finished(), 1.5}});
  const SmoothnessInfo sd = smoothness_of_noised(smoothness(data, 1.0), 2, ddpm, t);
  const MarginalParams mp = marginal_params(ddpm, t);
  const std::size_t n = 100000;
  const Matrix x0 = exact_sampler(data, n, 33);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    NoiseStream rng(34, Stream::kExact, i, 1);
    double r2 = 0.0;
    for (Eigen::Index j = 0; j < 2; ++j) {
      const double xt = mp.scale * x0(j, static_cast<Eigen::Index>(i)) + std::sqrt(mp.noise_var) * rng.normal();
      r2 += xt * xt;
    }
    sum += r2;
    sum2 += r2 * r2;
  }
  const double nn = static_cast<double>(n);
  const double mean = sum / nn;
  const double se = std::sqrt((sum2 / nn - mean * mean) / (nn - 1.0));
  const double z = std::abs(mean - sd.second_moment) / se;
  out << "empirical E|x_t|^2 " << g(mean) << " vs " << g(sd.second_moment) << " (" << g(z) << " standard errors)";
  return worked && z <= 4.0;
}

inline bool lmc_bound_soundness(std::ostream& out) {
  std::size_t checked = 0, cases = 0;
  double tightest = kInf;
  bool ok = true;
  for (std::size_t d : {1u, 2u}) {
    for (double eps1 : {0.0, 0.05}) {
      for (double frac : {1.0, 0.25}) {
        const auto p = GaussianMixture::standard(d);
        const ScoreOracle o = eps1 == 0.0 ? ScoreOracle::exact(p)
                                          : make_linf_oracle(p, std::nullopt, eps1, PerturbationShape::kConstantRotation);
        const double h = frac * lmc_step_ceiling(d, 1.0, 1.0);
        const std::size_t steps = 20000;
        const Vector m0 = Vector::Constant(static_cast<Eigen::Index>(d), 1.0 / std::sqrt(static_cast<double>(d)));
        const GaussianChain ex = gaussian_exact_chain_lmc(o, m0, 1.5, h, steps);
        const BoundReport b = lmc_chi2_recursion({d, 1.0, 1.0, h, eps1}, ex.chi2.front(), steps);
        if (!b.all_hypotheses_hold()) {
          out << "hypotheses fail for d=" << d << " eps1=" << eps1 << "; ";
          ok = false;
          continue;
        }
        ++cases;
        for (std::size_t k = 0; k <= steps; ++k) {
          ++checked;
          if (ex.chi2[k] > b.trajectory[k]) ok = false;
          if (k > 0) tightest = std::min(tightest, b.trajectory[k] - ex.chi2[k]);
        }
      }
    }
  }
  out << cases << " cases, " << checked << " steps checked; smallest slack " << g(tightest);
  return ok && cases == 8;
}

inline bool predictor_bound_soundness(std::ostream& out) {
  bool ok = true;
  std::ostringstream parts;
  for (std::size_t d : {1u, 2u}) {
    const DiffusionModel model(Family::kDDPM, DiffusionSchedule::constant(1.0), 2.0);
    const auto data = GaussianMixture::gaussian(Vector::Zero(static_cast<Eigen::Index>(d)), 4.0);
    const ScoreOracle o = ScoreOracle::exact(data, model);
    // p_t has variance in [1, 4]: its score is 1-Lipschitz
    const PredictorInputs in{model, d, 1.0, 1.0, 4.0, data.second_moment()};
    const double h = 0.5 * predictor_ceiling_over_horizon(in);
    const auto steps = static_cast<std::size_t>(std::floor(model.horizon() / h));
    const GaussianChain ex = gaussian_exact_chain(model, o, h, steps);
    const BoundReport b = predictor_chi2_recursion(in, ex.chi2.front(), h, steps, {0.0});
    if (!b.all_hypotheses_hold()) ok = false;
    std::size_t bad = 0;
    for (std::size_t k = 0; k <= steps; ++k) {
      if (ex.chi2[k] > b.trajectory[k]) ++bad;
    }
    if (bad) ok = false;
    parts << "d=" << d << ": h=" << g(h) << ", " << steps << " steps, " << bad << " violations, final exact "
          << g(ex.chi2.back()) << " <= bound " << g(b.trajectory.back()) << "; ";
  }
  out << parts.str();
  return ok;
}

inline bool counterexample(std::ostream& out) {
  const std::vector<double> Ls = {4, 6, 8, 10};
  const auto rows = counterexample_table(Ls);
  std::vector<double> err;
  for (double L : Ls) {
    const double e = measure_error(make_bump_oracle(L), 0.0, ErrorNorm::kL2, ErrorMethod::quadrature((1u << 15) + 1));
    err.push_back(e * e);
  }
  bool ok = err.back() <= rows.back().bound && rows.back().tv >= 0.9;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ok = ok && err[i] < err[i - 1] && rows[i].tv > rows[i - 1].tv;
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << "L=" << g(rows[i].L) << ": err^2 " << g(err[i]) << " tv " << g(rows[i].tv) << (i + 1 < rows.size() ? "; " : "");
  }
  out << "; bound at L=10: " << g(rows.back().bound);
  return ok;
}

inline bool coupling_bound(std::ostream& out) {
  const CouplingStudy st = coupling_study(4.0, 0.5, 0.05, 100, 100000, 7, 1);
  bool ok = st.run.diverged == 0;
  double worst = kInf;
  // both chains start at the same point: no disagreement at n = 0
  ok = ok && st.run.disagreement.front() == 0.0;
  for (std::size_t n = 1; n < st.budget.size(); ++n) {
    worst = std::min(worst, st.budget[n] - st.upper95[n]);
    if (st.upper95[n] > st.budget[n]) ok = false;
    if (st.run.disagreement[n] > st.run.hit_by[n]) ok = false;  // disagreement needs a prior bad-set visit
  }
  out << "final disagreement " << g(st.run.disagreement.back()) << " (95% upper " << g(st.upper95.back())
      << ") vs budget " << g(st.budget.back()) << "; p(B) = " << g(st.delta.front()) << ", D_N = " << g(st.D.back())
      << "; smallest slack " << g(worst);
  return ok;
}

inline bool u_shape(std::ostream& out) {
  const std::vector<double> Ts = {0.5, 1, 2, 4, 8, 16, 32, 64, 128};
  const double h = 0.05;
  const ScoreOracle o = make_bump_oracle(4.0);
  const GaussianMixture p = o.base();
  SamplerConfig cfg;
  cfg.step_size = h;
  cfg.chains = 10000;
  cfg.seed = 8;
  for (double T : Ts) cfg.record_steps.push_back(static_cast<std::size_t>(std::llround(T / h)));
  cfg.num_steps = cfg.record_steps.back();
  const SamplerRun run = lmc_run(cfg, 1, start_at(Vector::Constant(1, -4.0)), o.at(0.0));
  std::vector<double> tv;
  double floor_tv = kNaN;
  for (std::size_t i = 0; i < Ts.size(); ++i) {
    const EmpiricalReport r = empirical_vs_analytic(run.at_step(cfg.record_steps[i]), p, 9, i == 0);
    if (i == 0) floor_tv = r.tv_noise_floor;
    tv.push_back(r.histogram_tv);
    out << "T=" << g(Ts[i]) << ":" << g(r.histogram_tv) << " ";
  }
  const auto it = std::min_element(tv.begin(), tv.end());
  out << "(noise floor " << g(floor_tv) << ")";
  return *it < tv.front() && *it < tv.back() && run.divergence_count() == 0;
}

inline bool warm_start(std::ostream& out) {
  bool ok = true;
  struct Case {
    GaussianMixture p;
    double C;
    std::string label;
  };
  const std::vector<Case> cases = {
      {GaussianMixture::standard(1), 1.0, "N(0,1)"},
      {GaussianMixture({{0.3, Vector::Constant(1, -1.0), 0.5}, {0.7, Vector::Constant(1, 1.5), 1.0}}), 4.0,
       "mixture (C_LS = 4 supplied)"}};
  for (const auto& c : cases) {
    const double M1 = c.p.mean().norm();
    for (double s2 : {1.0, 10.0, 100.0}) {
      const auto q = GaussianMixture::gaussian(Vector::Zero(1), s2);
      const auto pc = convolved(c.p, s2);
      const double w = 14.0 * std::sqrt(s2 + c.p.max_variance()) + 3.0;
      const auto r = quadrature_divergence(q, pc, DivergenceKind::kChi2, QuadratureGrid::line(-w, w, 14));
      const double bound = warm_start_bound(M1, c.C, 1, s2).proof;
      if (!(r.value <= bound)) ok = false;
      out << c.label << " s2=" << g(s2) << ": " << g(r.value) << " <= " << g(bound) << "; ";
    }
  }
  // exact value for the Gaussian case as a check on the quadrature
  const auto r = quadrature_divergence(GaussianMixture::gaussian(Vector::Zero(1), 10.0),
                                       GaussianMixture::gaussian(Vector::Zero(1), 11.0), DivergenceKind::kChi2,
                                       QuadratureGrid::line(-60, 60, 14));
  ok = ok && std::abs(r.value - chi2_gaussians(0.0, 11.0, 0.0, 10.0, 1)) <= 1e-9;
  return ok;
}

inline bool mode_coverage(std::ostream& out) {
  const auto p = GaussianMixture::symmetric_pair_1d(4.0, 1.0);
  const ScoreOracle o = ScoreOracle::exact(p);
  AnnealSchedule s;
  for (double v = 0.01; s.sigma2.empty() || s.sigma2.back() <= 17.0; v *= 2.0) {
    s.sigma2.push_back(v);
    s.step_size.push_back(0.1 * (1.0 + v));
    s.num_steps.push_back(50);
  }
  const std::size_t chains = 100000;
  const SamplerRun a = annealed_lmc(s, o, chains, 10, 1);
  const EmpiricalReport ra = empirical_vs_analytic(a.final_states, p, 10, false);

  SamplerConfig cfg;
  cfg.step_size = 0.1;
  cfg.num_steps = 50 * s.levels();
  cfg.chains = chains;
  cfg.seed = 11;
  const SamplerRun b = lmc_run(cfg, 1, start_at(Vector::Constant(1, 4.0)), o.at(0.0));
  const EmpiricalReport rb = empirical_vs_analytic(b.final_states, p, 11, false);
  const double left = -4.0;
  const double far = rb.mode_mass[p.nearest_component(&left)];
  bool ok = true;
  for (std::size_t k = 0; k < 2; ++k) ok = ok && std::abs(ra.mode_mass[k] - 0.5) <= 3.0 * ra.mode_stderr[k];
  out << s.levels() << " levels: annealed masses " << g(ra.mode_mass[0]) << " / " << g(ra.mode_mass[1])
      << " (3 SE = " << g(3.0 * ra.mode_stderr[0]) << "); single-level far-mode mass " << g(far) << " after "
      << cfg.num_steps << " steps";
  return ok && far < 0.4 && b.divergence_count() == 0;
}

inline std::vector<ExperimentConfig> determinism_configs() {
  std::vector<ExperimentConfig> out;
  {
    ExperimentConfig c;
    c.kind = "lmc";
    c.seed = 21;
    c.target.components = {{0.4, {-2.0}, 0.5}, {0.6, {2.5}, 1.0}};
    c.sampler.step_size = 0.05;
    c.sampler.steps = 200;
    c.sampler.chains = 4000;
    c.sampler.init = "point";
    c.sampler.init_point = {0.0};
    c.sampler.record = {0, 50, 200};
    out.push_back(c);
  }
  {
    ExperimentConfig c;
    c.kind = "lmc";
    c.seed = 22;
    c.target.type = "bump";
    c.target.bump_offset = 4.0;
    c.oracle.mode = "bump_mismatch";
    c.sampler.step_size = 0.05;
    c.sampler.chains = 3000;
    c.sampler.init = "point";
    c.sampler.init_point = {-4.0};
    c.sampler.runtimes = {1, 4, 16};
    out.push_back(c);
  }
  {
    ExperimentConfig c;
    c.kind = "anneal";
    c.seed = 23;
    c.target.components = {{0.5, {-4.0}, 1.0}, {0.5, {4.0}, 1.0}};
    c.anneal.sigma2 = {0.05, 0.2, 0.8, 3.2, 12.8, 25.6};
    c.anneal.steps_per_level = 30;
    c.sampler.chains = 3000;
    out.push_back(c);
  }
  {
    ExperimentConfig c;
    c.kind = "pc";
    c.seed = 24;
    c.target.components = {{1.0, {0.5, -0.5}, 2.0}};
    c.model.horizon = 2.0;
    c.sampler.step_size = 0.02;
    c.sampler.steps = 100;
    c.sampler.chains = 2000;
    c.sampler.plan = "interleaved";
    c.sampler.corrector_steps = 1;
    c.sampler.corrector_step_size = 0.01;
    c.sampler.record = {0, 50, 100};
    out.push_back(c);
  }
  {
    ExperimentConfig c;
    c.kind = "coupled";
    c.seed = 25;
    c.target.type = "bump";
    c.oracle.eps1 = 0.5;
    c.sampler.step_size = 0.05;
    c.sampler.steps = 40;
    c.sampler.chains = 5000;
    out.push_back(c);
  }
  return out;
}

inline bool determinism(std::ostream& out) {
  bool ok = true;
  std::size_t bytes = 0;
  for (const auto& c : determinism_configs()) {
    std::string one, again, eight;
    {
      ScopedThreads t(1);
      one = execute(c).csv;
      again = execute(c).csv;
    }
    {
      ScopedThreads t(8);
      eight = execute(c).csv;
    }
    bytes += one.size();
    if (one != again || one != eight) {
      ok = false;
      out << c.kind << " differs; ";
    }
  }
  out << determinism_configs().size() << " experiment kinds, " << bytes
      << " CSV bytes each identical across repeats and 1 vs 8 threads";
  return ok;
}

}  // namespace acceptance

inline const std::vector<Criterion>& acceptance_criteria() {
  using namespace acceptance;
  static const std::vector<Criterion> all = {
      {1, "closed-form Gaussian chi-square", "closed_forms", 1.0, closed_form_chi2},
      {2, "LMC stationary variance", "simulation", 30.0, lmc_stationary_variance},
      {3, "LSI and second-moment propagation", "closed_forms", 30.0, lemma_propagation},
      {4, "LMC recursion dominates the exact chain", "soundness", 5.0, lmc_bound_soundness},
      {5, "predictor recursion dominates the exact chain", "soundness", 5.0, predictor_bound_soundness},
      {6, "bump counterexample", "closed_forms", 10.0, counterexample},
      {7, "coupling disagreement within the framework budget", "simulation", 120.0, coupling_bound},
      {8, "U-shaped error of LMC with a biased score", "simulation", 300.0, u_shape},
      {9, "warm-start chi-square bound", "closed_forms", 10.0, warm_start},
      {10, "annealing recovers both modes", "simulation", 180.0, mode_coverage},
      {11, "CSV determinism across repeats and thread counts", "simulation", 300.0, determinism},
  };
  return all;
}

inline CriterionResult run_criterion(const Criterion& c) {
  CriterionResult r;
  r.id = c.id;
  r.name = c.name;
  r.suite = c.suite;
  r.budget_seconds = c.budget_seconds;
  std::ostringstream detail;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    r.passed = c.check(detail);
  } catch (const std::exception& e) {
    detail << "exception: " << e.what();
    r.passed = false;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (r.seconds > c.budget_seconds) {
    detail << " [over the " << c.budget_seconds << " s budget]";
    r.passed = false;
  }
  r.detail = detail.str();
  return r;
}

inline bool is_suite(const std::string& s) {
  return s == "closed_forms" || s == "soundness" || s == "simulation" || s == "all";
}

/// Runs the criteria of one suite ("all" for every criterion), printing one
/// line per criterion. Returns true when all of them pass.
inline bool verify_suite(const std::string& suite, std::ostream& os) {
  bool all = true;
  for (const auto& c : acceptance_criteria()) {
    if (suite != "all" && c.suite != suite) continue;
    const CriterionResult r = run_criterion(c);
    os << (r.passed ? "PASS" : "FAIL") << " [" << r.id << "] " << r.name << " (" << std::fixed
       << std::setprecision(2) << r.seconds << " s): " << r.detail << "\n";
    os.unsetf(std::ios::fixed);
    os.flush();
    all = all && r.passed;
  }
  return all;
}

}  // namespace ssl
