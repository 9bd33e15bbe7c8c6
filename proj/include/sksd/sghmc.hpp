#pragma once

#include "sksd/kernel.hpp"
#include "sksd/parallel.hpp"
#include "sksd/sliced.hpp"
#include "sksd/targets.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace sksd {

struct SghmcConfig {
  double step_size = 0.01;
  double friction = 0.1;
  std::size_t chains = 100;
  std::size_t burn_in = 2000;
  std::size_t thinning = 5;
  std::size_t n_samples = 1500;
  double divergence_radius = 1e8;

  void validate() const {
    require(step_size > 0.0 && std::isfinite(step_size), "field 'step_size' must be positive");
    require(friction >= 0.0, "field 'friction' must be non-negative");
    require(chains >= 1, "field 'chains' must be at least 1");
    require(thinning >= 1, "field 'thinning' must be at least 1");
    require(n_samples >= 1, "field 'n_samples' must be at least 1");
  }
};

/// Parallel SGHMC chains on the exact score:
///   v <- (1 - a h) v + h s(x) + N(0, 2 a h),  x <- x + h v,
/// with unit mass and momenta started from N(0, I).
/// The callback sees the chain state after every burn-in sweep. After
/// burn-in the state is recorded every `thinning` sweeps until n_samples rows
/// are collected (row-major over chains, the last batch truncated).
inline Matrix sghmc_chain(const ScoreModel& model, const SghmcConfig& cfg, const Matrix& initial, Rng& rng,
                          const std::function<void(std::size_t, const Matrix&)>& on_burn_in_sweep = {}) {
  cfg.validate();
  require(initial.rows() == static_cast<Index>(cfg.chains) && initial.cols() == model.dim(),
          "sghmc_chain: initial state must be chains x D");
  const double h = cfg.step_size;
  const double noise_sd = std::sqrt(2.0 * cfg.friction * h);
  Matrix x = initial;
  Matrix v = rng.normal_matrix(x.rows(), x.cols());
  auto sweep = [&] {
    const Matrix noise = rng.normal_matrix(x.rows(), x.cols());
    v = (1.0 - cfg.friction * h) * v + h * model.scores(x) + noise_sd * noise;
    x += h * v;
    const double radius = x.rowwise().norm().maxCoeff();
    if (!(radius <= cfg.divergence_radius)) {
      std::ostringstream msg;
      msg << "SGHMC diverged with step size " << h << " (|x| = " << radius << "); use a smaller step size";
      throw Diverged(msg.str());
    }
  };
  for (std::size_t s = 0; s < cfg.burn_in; ++s) {
    sweep();
    if (on_burn_in_sweep) on_burn_in_sweep(s, x);
  }
  Matrix out(static_cast<Index>(cfg.n_samples), x.cols());
  Index filled = 0;
  while (filled < out.rows()) {
    for (std::size_t t = 0; t < cfg.thinning; ++t) sweep();
    const Index take = std::min<Index>(x.rows(), out.rows() - filled);
    out.middleRows(filled, take) = x.topRows(take);
    filled += take;
  }
  return out;
}

/// KL(N(mu_q, S_q) || p) for a Gaussian p.
inline double gaussian_kl(const Vector& mu_q, const Matrix& cov_q, const GaussianTarget& p) {
  const Index d = p.dim();
  Eigen::LLT<Matrix> llt(cov_q);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const double log_det_q = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  const Vector diff = p.mean() - mu_q;
  return 0.5 * ((p.precision() * cov_q).trace() + diff.dot(p.precision() * diff) - static_cast<double>(d) +
                p.log_det() - log_det_q);
}

/// Moment-matched Gaussian KL of samples against a Gaussian target.
inline double moment_matched_kl(const Matrix& samples, const GaussianTarget& p) {
  const Vector mu = samples.colwise().mean();
  const Matrix centered = samples.rowwise() - mu.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
  return gaussian_kl(mu, cov, p);
}

/// Zero-mean Gaussian with covariance Q diag(lambda) Q', Q a random rotation
/// and lambda log-uniform on [min_eig, max_eig].
inline GaussianTarget correlated_gaussian(Index dim, Rng& rng, double min_eig = 0.01, double max_eig = 1.0) {
  require(min_eig > 0.0 && max_eig >= min_eig, "correlated_gaussian: need 0 < min_eig <= max_eig");
  Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(dim, dim));
  const Matrix q = qr.householderQ();
  Vector lambda(dim);
  for (Index i = 0; i < dim; ++i) {
    const double t = dim == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(dim - 1);
    lambda(i) = std::exp(std::log(min_eig) + t * (std::log(max_eig) - std::log(min_eig)));
  }
  Matrix cov = q * lambda.asDiagonal() * q.transpose();
  cov = 0.5 * (cov + cov.transpose());
  return GaussianTarget(Vector::Zero(dim), cov);
}

struct StepSizeRow {
  double step_size = 0.0;
  bool diverged = false;
  double ksd = 0.0;
  double maxsksd_g = 0.0;
  double maxsksd_rg = 0.0;
  double kl = 0.0;  // NaN unless the target is Gaussian
};

struct StepSizeSelection {
  std::vector<StepSizeRow> rows;
  double chosen_ksd = 0.0;
  double chosen_maxsksd_g = 0.0;
  double chosen_maxsksd_rg = 0.0;
  double chosen_kl = 0.0;

  double chosen(DiscrepancyVariant v) const {
    switch (v) {
      case DiscrepancyVariant::ksd: return chosen_ksd;
      case DiscrepancyVariant::maxsksd_g: return chosen_maxsksd_g;
      case DiscrepancyVariant::maxsksd_rg: return chosen_maxsksd_rg;
    }
    return chosen_ksd;
  }
};

struct StepSizeSpec {
  std::vector<double> candidates;
  SghmcConfig sghmc{};
  /// Chains start from N(init_mean, init_scale^2 I).
  double init_mean = 0.0;
  double init_scale = 3.0;
  AdamConfig adam{};
  BandwidthPolicy policy{};
  Index rg_slices = 1;

  void validate() const {
    require(!candidates.empty(), "field 'candidates' must not be empty");
    for (double c : candidates) require(c > 0.0 && std::isfinite(c), "field 'candidates' must be positive");
    require(init_scale >= 0.0, "field 'init_scale' must be non-negative");
    require(rg_slices >= 1, "field 'rg_slices' must be at least 1");
  }
};

/// Runs the chains for one candidate, training maxSKSD directions on the
/// chain state during burn-in, and scores the collected samples with
/// U-statistics. Divergent chains score +inf.
inline StepSizeRow evaluate_step_size(const ScoreModel& model, const StepSizeSpec& spec, double step_size,
                                      std::uint64_t seed) {
  StepSizeRow row;
  row.step_size = step_size;
  row.kl = std::numeric_limits<double>::quiet_NaN();
  Rng rng(seed);
  // Chains and direction initializations are shared by every candidate.
  Rng init_rng = rng.split(1);
  const Matrix init =
      (spec.init_scale * init_rng.normal_matrix(static_cast<Index>(spec.sghmc.chains), model.dim())).array() +
      spec.init_mean;
  Rng dir_rng = rng.split(2);
  DirectionOptimizer g_opt(SliceConfig::random_g(model.dim(), dir_rng), spec.adam, spec.policy);
  DirectionOptimizer rg_opt(SliceConfig::random_rg(model.dim(), spec.rg_slices, dir_rng), spec.adam, spec.policy);
  SghmcConfig cfg = spec.sghmc;
  cfg.step_size = step_size;
  Rng chain_rng = rng.split(3);
  Matrix samples;
  try {
    samples = sghmc_chain(model, cfg, init, chain_rng, [&](std::size_t, const Matrix& x) {
      if (!x.allFinite()) return;
      const Matrix s = model.scores(x);
      g_opt.step_with_scores(x, s);
      rg_opt.step_with_scores(x, s);
    });
  } catch (const Diverged&) {
    row.diverged = true;
  } catch (const NonFinite&) {
    row.diverged = true;
  }
  if (row.diverged || !samples.allFinite()) {
    const double inf = std::numeric_limits<double>::infinity();
    row.diverged = true;
    row.ksd = row.maxsksd_g = row.maxsksd_rg = row.kl = inf;
    return row;
  }
  row.ksd = ksd_estimate(model, samples, Statistic::U, spec.policy).value;
  row.maxsksd_g = sksd_ustat(model, samples, g_opt.slices(), spec.policy).value;
  row.maxsksd_rg = sksd_ustat(model, samples, rg_opt.slices(), spec.policy).value;
  if (const auto* gauss = model.as<GaussianTarget>()) row.kl = moment_matched_kl(samples, *gauss);
  return row;
}

/// Evaluates every candidate (same seed, so the same initial chains) and
/// picks the argmin of each discrepancy.
inline StepSizeSelection select_step_size(const ScoreModel& model, const StepSizeSpec& spec, std::uint64_t seed,
                                          std::size_t workers = 1) {
  spec.validate();
  StepSizeSelection sel;
  sel.rows.resize(spec.candidates.size());
  parallel_for(spec.candidates.size(), workers,
               [&](std::size_t i) { sel.rows[i] = evaluate_step_size(model, spec, spec.candidates[i], seed); });
  auto argmin = [&](auto field) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < sel.rows.size(); ++i)
      if (field(sel.rows[i]) < field(sel.rows[best])) best = i;
    return sel.rows[best].step_size;
  };
  sel.chosen_ksd = argmin([](const StepSizeRow& r) { return r.ksd; });
  sel.chosen_maxsksd_g = argmin([](const StepSizeRow& r) { return r.maxsksd_g; });
  sel.chosen_maxsksd_rg = argmin([](const StepSizeRow& r) { return r.maxsksd_rg; });
  sel.chosen_kl = argmin([](const StepSizeRow& r) { return std::isnan(r.kl) ? std::numeric_limits<double>::infinity() : r.kl; });
  return sel;
}

}  // namespace sksd
