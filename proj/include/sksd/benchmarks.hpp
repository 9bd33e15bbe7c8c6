#pragma once

#include "sksd/gof.hpp"
#include "sksd/parallel.hpp"
#include "sksd/sliced.hpp"
#include "sksd/targets.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace sksd {

// ---------------------------------------------------------------------------
// Gaussian benchmarks: p = N(0, I) against four alternatives q.

enum class Alternative { null, laplace, multivariate_t, diffusion };

inline std::string to_string(Alternative a) {
  switch (a) {
    case Alternative::null: return "null";
    case Alternative::laplace: return "laplace";
    case Alternative::multivariate_t: return "multivariate-t";
    case Alternative::diffusion: return "diffusion";
  }
  return "?";
}

inline Alternative alternative_from_string(const std::string& s) {
  if (s == "null") return Alternative::null;
  if (s == "laplace") return Alternative::laplace;
  if (s == "multivariate-t") return Alternative::multivariate_t;
  if (s == "diffusion") return Alternative::diffusion;
  throw InvalidArgument("unknown alternative '" + s + "' (expected null, laplace, multivariate-t or diffusion)");
}

struct BenchmarkPair {
  ScoreModel p;
  ScoreModel q;
};

/// Model p and sampling distribution q. The alternatives match the first two
/// moments of p; for the t case p is widened to the t5 variance instead.
inline BenchmarkPair make_benchmark(Alternative alt, Index dim) {
  require(dim >= 1, "benchmark: dimension must be at least 1");
  switch (alt) {
    case Alternative::null: return {standard_gaussian(dim), standard_gaussian(dim)};
    case Alternative::laplace: return {standard_gaussian(dim), laplace_target(dim, 1.0 / std::sqrt(2.0))};
    case Alternative::multivariate_t: return {standard_gaussian(dim, 5.0 / 3.0), student_t_target(dim, 5.0)};
    case Alternative::diffusion: return {standard_gaussian(dim), diffusion_gaussian(dim, 0.3)};
  }
  throw InvalidArgument("benchmark: unknown alternative");
}

struct BenchmarkSpec {
  Alternative alternative = Alternative::null;
  Index dim = 2;
  std::size_t n_samples = 1000;
  std::size_t n_train = 200;
  std::size_t n_test = 800;
  std::size_t trials = 200;
  double alpha = 0.05;
  std::size_t bootstrap = 1000;
  std::size_t direction_steps = 500;
  AdamConfig adam{};
  BandwidthPolicy policy{};
  /// Number of free (r, g) pairs for maxSKSD-rg.
  Index rg_slices = 1;

  void validate() const {
    require(dim >= 1, "field 'dim' must be at least 1");
    require(n_train + n_test <= n_samples, "fields 'n_train' + 'n_test' must not exceed 'n_samples'");
    require(n_test >= 2, "field 'n_test' must be at least 2");
    require(n_samples >= 2, "field 'n_samples' must be at least 2");
    require(trials >= 1, "field 'trials' must be at least 1");
    require(alpha > 0.0 && alpha < 1.0, "field 'alpha' must lie in (0, 1)");
    require(bootstrap >= 1, "field 'bootstrap' must be at least 1");
    require(rg_slices >= 1, "field 'rg_slices' must be at least 1");
  }
};

struct TrialRecord {
  DiscrepancyVariant method = DiscrepancyVariant::ksd;
  std::string benchmark;
  double level = 0.0;  // dimension for Gaussian benchmarks, noise level for RBM
  std::size_t trial = 0;
  double statistic = 0.0;
  double p_value = 1.0;
  bool reject = false;
  /// Directions used by the test (empty for KSD).
  SliceConfig slices;
};

struct RateSummary {
  DiscrepancyVariant method = DiscrepancyVariant::ksd;
  std::string benchmark;
  double level = 0.0;
  std::size_t trials = 0;
  double rejection_rate = 0.0;
  double mean_statistic = 0.0;
  double sd_statistic = 0.0;
};

/// One row per (method, benchmark, level) in first-seen order.
inline std::vector<RateSummary> summarize(const std::vector<TrialRecord>& records) {
  std::vector<RateSummary> out;
  std::vector<std::vector<double>> stats;
  for (const auto& r : records) {
    std::size_t k = 0;
    while (k < out.size() &&
           !(out[k].method == r.method && out[k].benchmark == r.benchmark && out[k].level == r.level))
      ++k;
    if (k == out.size()) {
      out.push_back({r.method, r.benchmark, r.level, 0, 0.0, 0.0, 0.0});
      stats.emplace_back();
    }
    out[k].trials += 1;
    out[k].rejection_rate += r.reject ? 1.0 : 0.0;
    stats[k].push_back(r.statistic);
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].rejection_rate /= static_cast<double>(out[k].trials);
    out[k].mean_statistic = mean(stats[k]);
    out[k].sd_statistic = stats[k].size() >= 2 ? std::sqrt(variance(stats[k])) : 0.0;
  }
  return out;
}

/// Rejection rate of one method over a record set.
inline double rejection_rate(const std::vector<TrialRecord>& records, DiscrepancyVariant method) {
  std::size_t n = 0, k = 0;
  for (const auto& r : records)
    if (r.method == method) {
      ++n;
      k += r.reject ? 1 : 0;
    }
  require(n > 0, "rejection_rate: no records for method " + to_string(method));
  return static_cast<double>(k) / static_cast<double>(n);
}

inline SliceConfig initial_slices(DiscrepancyVariant method, Index dim, Index rg_slices, Rng& rng) {
  if (method == DiscrepancyVariant::maxsksd_g) return SliceConfig::random_g(dim, rng);
  return SliceConfig::random_rg(dim, rg_slices, rng);
}

/// Seed of trial t: the base seed XOR the trial index.
inline std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial) { return seed ^ static_cast<std::uint64_t>(trial); }

/// Observes the rows each method fits on and tests on.
struct TrialProbe {
  std::function<void(DiscrepancyVariant, const Matrix&)> on_fit;
  std::function<void(DiscrepancyVariant, const Matrix&)> on_test;
};

/// One trial: draws n_samples from q once and runs every method on those
/// samples. KSD uses all of them; maxSKSD fits directions on the first
/// n_train rows and tests on the last n_test rows.
inline std::vector<TrialRecord> run_benchmark_trial(const BenchmarkSpec& spec,
                                                    const std::vector<DiscrepancyVariant>& methods,
                                                    std::uint64_t seed, std::size_t trial,
                                                    const TrialProbe* probe = nullptr) {
  const auto pair = make_benchmark(spec.alternative, spec.dim);
  Rng rng(trial_seed(seed, trial));
  const Matrix samples = pair.q.sample(spec.n_samples, rng);
  const Index n_train = static_cast<Index>(spec.n_train), n_test = static_cast<Index>(spec.n_test);
  const Matrix train = samples.topRows(n_train);
  const Matrix test = samples.bottomRows(n_test);
  std::vector<TrialRecord> out;
  for (const auto method : methods) {
    Rng mrng = rng.split(static_cast<std::uint64_t>(method));
    TrialRecord rec;
    rec.method = method;
    rec.benchmark = to_string(spec.alternative);
    rec.level = static_cast<double>(spec.dim);
    rec.trial = trial;
    GofOutcome res;
    if (method == DiscrepancyVariant::ksd) {
      if (probe && probe->on_test) probe->on_test(method, samples);
      res = ksd_gof_test(pair.p, samples, spec.alpha, spec.bootstrap, mrng, spec.policy);
    } else {
      const SliceConfig init = initial_slices(method, spec.dim, spec.rg_slices, mrng);
      if (probe && probe->on_fit) probe->on_fit(method, train);
      if (probe && probe->on_test) probe->on_test(method, test);
      rec.slices = optimize_directions(pair.p, train, init, spec.direction_steps, spec.adam, spec.policy);
      res = gof_test(pair.p, test, rec.slices, spec.alpha, spec.bootstrap, mrng, spec.policy);
    }
    rec.statistic = res.statistic;
    rec.p_value = res.p_value;
    rec.reject = res.reject;
    out.push_back(std::move(rec));
  }
  return out;
}

/// Records ordered by trial, then by method in the order given.
inline std::vector<TrialRecord> run_benchmark(const BenchmarkSpec& spec, const std::vector<DiscrepancyVariant>& methods,
                                              std::uint64_t seed, std::size_t workers = 1) {
  spec.validate();
  require(!methods.empty(), "run_benchmark: no methods given");
  std::vector<std::vector<TrialRecord>> per_trial(spec.trials);
  parallel_for(spec.trials, workers,
               [&](std::size_t t) { per_trial[t] = run_benchmark_trial(spec, methods, seed, t); });
  std::vector<TrialRecord> out;
  for (auto& v : per_trial)
    for (auto& r : v) out.push_back(std::move(r));
  return out;
}

// ---------------------------------------------------------------------------
// RBM study: p is a random RBM, q the same RBM with Gaussian noise on B.

struct RbmGofSpec {
  Index dim = 50;
  Index hidden = 40;
  double weight_scale = 1.0;
  std::vector<double> levels{0.0, 0.01, 0.02, 0.04, 0.06};
  std::size_t trials = 100;
  std::size_t chains = 1000;
  std::size_t burn_in = 2000;
  std::size_t n_train = 200;
  double alpha = 0.05;
  std::size_t bootstrap = 1000;
  AdamConfig adam{};
  BandwidthPolicy policy{};
  Index rg_slices = 1;

  void validate() const {
    require(rg_slices >= 1, "field 'rg_slices' must be at least 1");
    require(dim >= 1 && hidden >= 1, "fields 'dim' and 'hidden' must be at least 1");
    require(!levels.empty(), "field 'levels' must not be empty");
    for (double l : levels) require(l >= 0.0, "field 'levels' must be non-negative");
    require(trials >= 1, "field 'trials' must be at least 1");
    require(n_train + 2 <= chains, "field 'chains' must exceed 'n_train' by at least 2");
    require(burn_in >= 1, "field 'burn_in' must be at least 1");
    require(alpha > 0.0 && alpha < 1.0, "field 'alpha' must lie in (0, 1)");
    require(bootstrap >= 1, "field 'bootstrap' must be at least 1");
  }
};

/// One (trial, level) cell. Every method sees the same Gibbs run: maxSKSD
/// optimizers take one Adam step per burn-in sweep on the first n_train
/// chains, then test on the remaining chains' final state; KSD tests on all
/// chains.
inline std::vector<TrialRecord> run_rbm_cell(const RbmGofSpec& spec, const std::vector<DiscrepancyVariant>& methods,
                                             std::uint64_t seed, std::size_t trial, std::size_t level_index) {
  Rng rng(trial_seed(seed, trial));
  const RbmTarget clean = random_rbm(spec.dim, spec.hidden, rng, spec.weight_scale);
  Rng cell = rng.split(1000 + level_index);
  const RbmTarget perturbed = perturb_rbm(clean, spec.levels[level_index], cell);
  const ScoreModel p(clean);

  std::vector<DirectionOptimizer> optimizers;
  std::vector<std::size_t> slot(methods.size(), 0);
  for (std::size_t m = 0; m < methods.size(); ++m) {
    if (methods[m] == DiscrepancyVariant::ksd) continue;
    Rng init = cell.split(static_cast<std::uint64_t>(methods[m]));
    slot[m] = optimizers.size();
    optimizers.emplace_back(initial_slices(methods[m], spec.dim, spec.rg_slices, init), spec.adam, spec.policy);
  }
  const Index n_train = static_cast<Index>(spec.n_train);
  GibbsConfig gibbs{spec.chains, spec.burn_in, 1, 1};
  Rng gibbs_rng = cell.split(7);
  const Matrix final_state = rbm_gibbs(perturbed, gibbs, gibbs_rng, [&](std::size_t, const Matrix& state) {
    if (optimizers.empty()) return;
    const Matrix train = state.topRows(n_train);
    const Matrix scores = p.scores(train);
    for (auto& opt : optimizers) opt.step_with_scores(train, scores);
  });
  const Matrix test = final_state.bottomRows(final_state.rows() - n_train);

  std::vector<TrialRecord> out;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    Rng trng = cell.split(100 + static_cast<std::uint64_t>(methods[m]));
    TrialRecord rec;
    rec.method = methods[m];
    rec.benchmark = "rbm";
    rec.level = spec.levels[level_index];
    rec.trial = trial;
    GofOutcome res;
    if (methods[m] == DiscrepancyVariant::ksd) {
      res = ksd_gof_test(p, final_state, spec.alpha, spec.bootstrap, trng, spec.policy);
    } else {
      rec.slices = optimizers[slot[m]].slices();
      res = gof_test(p, test, rec.slices, spec.alpha, spec.bootstrap, trng, spec.policy);
    }
    rec.statistic = res.statistic;
    rec.p_value = res.p_value;
    rec.reject = res.reject;
    out.push_back(std::move(rec));
  }
  return out;
}

/// Records ordered by level, then trial, then method.
inline std::vector<TrialRecord> run_rbm_gof(const RbmGofSpec& spec, const std::vector<DiscrepancyVariant>& methods,
                                            std::uint64_t seed, std::size_t workers = 1) {
  spec.validate();
  require(!methods.empty(), "run_rbm_gof: no methods given");
  const std::size_t cells = spec.levels.size() * spec.trials;
  std::vector<std::vector<TrialRecord>> per_cell(cells);
  parallel_for(cells, workers, [&](std::size_t c) {
    per_cell[c] = run_rbm_cell(spec, methods, seed, c % spec.trials, c / spec.trials);
  });
  std::vector<TrialRecord> out;
  for (auto& v : per_cell)
    for (auto& r : v) out.push_back(std::move(r));
  return out;
}

}  // namespace sksd
