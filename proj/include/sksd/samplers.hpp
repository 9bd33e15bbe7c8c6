#pragma once

#include "sksd/optim.hpp"
#include "sksd/parallel.hpp"
#include "sksd/rng.hpp"
#include "sksd/sliced.hpp"
#include "sksd/stats.hpp"
#include "sksd/targets.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace sksd {

// ---------------------------------------------------------------------------
// Shared kernel-update core. Both samplers reduce to, per output coordinate,
//   phi_i = (1/N) sum_j [K_ij s_j + coef * c * K_ij (b_i - b_j) / sigma^2]
// with SVGD using the full-input kernel, b = x_d and c = 1, and S-SVGD using
// the kernel on x'g_d, b = x'g_d and c = g_dd. Routing both through the same
// code makes the one-dimensional cases agree exactly.

namespace detail {

/// Squared distances between rows, accumulated column by column.
inline Matrix sq_distances_exact(const Matrix& p) {
  const Index n = p.rows();
  Matrix d2 = Matrix::Zero(n, n);
  for (Index c = 0; c < p.cols(); ++c)
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < n; ++i) {
        const double diff = p(i, c) - p(j, c);
        d2(i, j) += diff * diff;
      }
  return d2;
}

inline double bandwidth_from_sq(const Matrix& d2, const BandwidthPolicy& policy) {
  const Index n = d2.rows();
  if (n < 2) return policy.floor.value_or(1.0);
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index j = 0; j < n; ++j)
    for (Index i = j + 1; i < n; ++i) dists.push_back(std::sqrt(d2(i, j)));
  return finish_median(lower_median(dists), policy.factor, policy.floor).sigma();
}

inline Matrix rbf_from_sq(const Matrix& d2, double sigma) {
  const double inv_s2 = 1.0 / (sigma * sigma);
  return (-0.5 * inv_s2 * d2.array()).exp().matrix();
}

/// Driving term and repulsive term of one output coordinate.
inline void stein_coordinate(const Matrix& k, const Vector& s, const Vector& b, double c, double sigma, double coef,
                             Vector& phi, Vector& repulsive) {
  const Index n = k.rows();
  const double inv_s2 = 1.0 / (sigma * sigma);
  const double inv_n = 1.0 / static_cast<double>(n);
  phi.resize(n);
  repulsive.resize(n);
  for (Index i = 0; i < n; ++i) {
    double drive = 0.0, rep = 0.0;
    for (Index j = 0; j < n; ++j) {
      const double kij = k(j, i);
      drive += kij * s(j);
      rep += kij * (b(i) - b(j));
    }
    const double r = c * inv_s2 * rep * inv_n;
    repulsive(i) = r;
    phi(i) = drive * inv_n + coef * r;
  }
}

inline void check_update(const Matrix& update) {
  for (Index i = 0; i < update.rows(); ++i)
    for (Index d = 0; d < update.cols(); ++d)
      if (!std::isfinite(update(i, d)))
        throw NonFinite("particle update is not finite for particle " + std::to_string(i) + " (coordinate " +
                        std::to_string(d) + ")");
}

}  // namespace detail

/// Stein update direction for a particle set, plus its repulsive part.
struct SteinField {
  Matrix phi;        // N x D
  Matrix repulsive;  // N x D, already divided by N
  std::vector<double> sigma;
};

/// SVGD direction with the multivariate RBF kernel; sigma from the median
/// heuristic on full inputs.
inline SteinField svgd_field(const Matrix& x, const Matrix& scores, const BandwidthPolicy& policy,
                             double repulsive_coefficient = 1.0) {
  require(x.rows() >= 1, "svgd_step: need at least one particle");
  require(scores.rows() == x.rows() && scores.cols() == x.cols(), "svgd_step: score shape mismatch");
  const Matrix d2 = detail::sq_distances_exact(x);
  const double sigma = detail::bandwidth_from_sq(d2, policy);
  const Matrix k = detail::rbf_from_sq(d2, sigma);
  SteinField f{Matrix(x.rows(), x.cols()), Matrix(x.rows(), x.cols()), {sigma}};
  Vector phi, rep;
  for (Index d = 0; d < x.cols(); ++d) {
    detail::stein_coordinate(k, scores.col(d), x.col(d), 1.0, sigma, repulsive_coefficient, phi, rep);
    f.phi.col(d) = phi;
    f.repulsive.col(d) = rep;
  }
  return f;
}

/// S-SVGD direction: coordinate d uses the kernel on x'g_d with its own
/// median-heuristic bandwidth. The basis is one-hot, so r_d = e_d.
inline SteinField ssvgd_field(const Matrix& x, const Matrix& scores, const Matrix& g, const BandwidthPolicy& policy,
                              double repulsive_coefficient = 1.0) {
  require(x.rows() >= 1, "ssvgd_step: need at least one particle");
  require(g.rows() == x.cols() && g.cols() == x.cols(), "ssvgd_step: G must be D x D");
  require(scores.rows() == x.rows() && scores.cols() == x.cols(), "ssvgd_step: score shape mismatch");
  SteinField f{Matrix(x.rows(), x.cols()), Matrix(x.rows(), x.cols()), {}};
  Vector phi, rep;
  for (Index d = 0; d < x.cols(); ++d) {
    const Vector a = x * g.row(d).transpose();
    const Matrix d2 = detail::sq_distances_exact(a);
    const double sigma = detail::bandwidth_from_sq(d2, policy);
    const Matrix k = detail::rbf_from_sq(d2, sigma);
    detail::stein_coordinate(k, scores.col(d), a, g(d, d), sigma, repulsive_coefficient, phi, rep);
    f.phi.col(d) = phi;
    f.repulsive.col(d) = rep;
    f.sigma.push_back(sigma);
  }
  return f;
}

/// x_i <- x_i + eps * phi(x_i), all particles from the same snapshot.
inline Matrix svgd_step(const ScoreModel& model, const Matrix& x, double step_size, const BandwidthPolicy& policy = {},
                        double repulsive_coefficient = 1.0) {
  const auto f = svgd_field(x, model.scores(x), policy, repulsive_coefficient);
  const Matrix update = step_size * f.phi;
  detail::check_update(update);
  return x + update;
}

inline Matrix ssvgd_step(const ScoreModel& model, const Matrix& x, const SliceConfig& slices, double step_size,
                         const BandwidthPolicy& policy = {}, double repulsive_coefficient = 1.0) {
  require(slices.variant == SliceVariant::g_only, "ssvgd_step: slices must use the one-hot basis");
  const auto f = ssvgd_field(x, model.scores(x), slices.directions, policy, repulsive_coefficient);
  const Matrix update = step_size * f.phi;
  detail::check_update(update);
  return x + update;
}

enum class SamplerKind { svgd, ssvgd };

inline std::string to_string(SamplerKind k) { return k == SamplerKind::svgd ? "svgd" : "ssvgd"; }

inline SamplerKind sampler_from_string(const std::string& s) {
  if (s == "svgd") return SamplerKind::svgd;
  if (s == "ssvgd" || s == "s-svgd") return SamplerKind::ssvgd;
  throw InvalidArgument("unknown sampler '" + s + "' (expected svgd or ssvgd)");
}

/// Particle-averaged repulsive force: mean over particles of the sup-norm of
/// the repulsive term.
inline double parf(const Matrix& x, SamplerKind kind, const Matrix& g = Matrix(), const BandwidthPolicy& policy = {}) {
  require(x.rows() >= 1, "parf: need at least one particle");
  const Matrix zero = Matrix::Zero(x.rows(), x.cols());
  const auto f = kind == SamplerKind::svgd ? svgd_field(x, zero, policy) : ssvgd_field(x, zero, g, policy);
  return f.repulsive.rowwise().lpNorm<Eigen::Infinity>().mean();
}

// ---------------------------------------------------------------------------
// Samplers with state.

struct SamplerConfig {
  double step_size = 0.1;
  BandwidthPolicy policy{1.0, kDefaultBandwidthFloor};
  /// Repulsive coefficient ramps linearly from `repulsive_start` to 1 over
  /// `repulsive_ramp` steps; the default is a constant 1.
  double repulsive_start = 1.0;
  std::size_t repulsive_ramp = 0;
  // S-SVGD direction updates.
  std::size_t g_update_every = 1;
  std::size_t adam_steps_per_update = 1;
  AdamConfig adam{};
  /// Only refresh G once particles moved (RMS per particle) more than delta
  /// since the last refresh. A negative delta selects 0.1 * sqrt(D) * eps.
  bool staleness = false;
  double staleness_delta = -1.0;
  /// Bandwidth policy of the G objective.
  BandwidthPolicy slice_policy{1.0, kDefaultBandwidthFloor};

  void validate() const {
    require(step_size > 0.0 && std::isfinite(step_size), "field 'step_size' must be positive");
    require(repulsive_start > 0.0 && repulsive_start <= 1.0, "field 'repulsive_start' must lie in (0, 1]");
    require(g_update_every >= 1, "field 'g_update_every' must be at least 1");
    require(policy.factor > 0.0 && slice_policy.factor > 0.0, "bandwidth factors must be positive");
  }

  double repulsive_coefficient(std::size_t iteration) const {
    if (repulsive_ramp == 0 || iteration >= repulsive_ramp) return 1.0;
    return repulsive_start + (1.0 - repulsive_start) * static_cast<double>(iteration) / static_cast<double>(repulsive_ramp);
  }
};

/// Ascends the V-statistic (the KL-decrease magnitude of S-SVGD) in G.
inline void update_slices_for_sampler(const ScoreModel& model, const Matrix& x, DirectionOptimizer& optimizer,
                                      std::size_t adam_steps) {
  const Matrix scores = model.scores(x);
  for (std::size_t s = 0; s < adam_steps; ++s) optimizer.step_with_scores(x, scores);
}

/// SVGD or S-SVGD with persistent state.
class ParticleSampler {
 public:
  ParticleSampler(ScoreModel model, Matrix initial, SamplerKind kind, SamplerConfig config,
                  std::optional<SliceConfig> slices = std::nullopt)
      : model_(std::move(model)),
        x_(std::move(initial)),
        kind_(kind),
        config_(config),
        optimizer_(slices ? *slices : SliceConfig::identity(x_.cols()), config.adam, config.slice_policy),
        last_refresh_(x_) {
    config_.validate();
    require(x_.rows() >= 1, "sampler: need at least one particle");
    require(x_.cols() == model_.dim(), "sampler: particle dimension does not match the model");
    require(optimizer_.slices().variant == SliceVariant::g_only, "sampler: S-SVGD slices must use the one-hot basis");
    require_finite(x_, "initial particles");
  }

  /// One particle step; for S-SVGD the G schedule runs first.
  void step() {
    if (kind_ == SamplerKind::ssvgd && iteration_ % config_.g_update_every == 0 && x_.rows() >= 2 && refresh_due()) {
      update_slices_for_sampler(model_, x_, optimizer_, config_.adam_steps_per_update);
      last_refresh_ = x_;
      ++g_updates_;
    }
    const double coef = config_.repulsive_coefficient(iteration_);
    x_ = kind_ == SamplerKind::svgd
             ? svgd_step(model_, x_, config_.step_size, config_.policy, coef)
             : ssvgd_step(model_, x_, optimizer_.slices(), config_.step_size, config_.policy, coef);
    ++iteration_;
  }

  void run(std::size_t steps, const std::function<void(const ParticleSampler&)>& after_step = {}) {
    for (std::size_t s = 0; s < steps; ++s) {
      step();
      if (after_step) after_step(*this);
    }
  }

  double current_parf() const {
    return parf(x_, kind_, optimizer_.slices().directions, config_.policy);
  }

  const Matrix& particles() const { return x_; }
  const SliceConfig& slices() const { return optimizer_.slices(); }
  std::size_t iteration() const { return iteration_; }
  std::size_t g_updates() const { return g_updates_; }
  SamplerKind kind() const { return kind_; }

 private:
  bool refresh_due() const {
    if (!config_.staleness || g_updates_ == 0) return true;
    const double delta = config_.staleness_delta >= 0.0
                             ? config_.staleness_delta
                             : 0.1 * std::sqrt(static_cast<double>(x_.cols())) * config_.step_size;
    const double rms = (x_ - last_refresh_).norm() / std::sqrt(static_cast<double>(x_.rows()));
    return rms > delta;
  }

  ScoreModel model_;
  Matrix x_;
  SamplerKind kind_;
  SamplerConfig config_;
  DirectionOptimizer optimizer_;
  Matrix last_refresh_;
  std::size_t iteration_ = 0;
  std::size_t g_updates_ = 0;
};

// ---------------------------------------------------------------------------
// Variance-collapse experiment: target N(0, I), particles from N(2, 2I).

struct VarianceSpec {
  std::vector<Index> dims{2, 20, 50, 100};
  std::vector<Index> particles{50};
  std::vector<SamplerKind> samplers{SamplerKind::svgd, SamplerKind::ssvgd};
  std::size_t steps = 6000;
  /// Diagnostics are recorded every `trace_every` steps (0 disables).
  std::size_t trace_every = 100;
  SamplerConfig sampler = default_sampler();

  /// The study runs with the staleness rule and a smaller step than the
  /// sampler default; refreshing G every step on 50 particles overfits it.
  static SamplerConfig default_sampler() {
    SamplerConfig c;
    c.step_size = 0.05;
    c.staleness = true;
    return c;
  }

  void validate() const {
    require(!dims.empty() && !particles.empty() && !samplers.empty(), "variance: empty sweep");
    for (Index d : dims) require(d >= 1, "field 'dims' must be positive");
    for (Index n : particles) require(n >= 2, "field 'particles' must be at least 2");
    sampler.validate();
  }
};

struct VarianceTracePoint {
  std::size_t iteration = 0;
  double parf = 0.0;
  double var_avg = 0.0;
};

struct VarianceResult {
  SamplerKind sampler = SamplerKind::svgd;
  Index dim = 0;
  Index particles = 0;
  double var_avg = 0.0;
  double parf = 0.0;
  /// Mean over dimensions of |sample mean|.
  double mean_abs_mean = 0.0;
  std::vector<VarianceTracePoint> trace;
};

inline Matrix variance_initial_particles(Index n, Index dim, Rng& rng) {
  return (std::sqrt(2.0) * rng.normal_matrix(n, dim)).array() + 2.0;
}

inline VarianceResult run_variance_config(const VarianceSpec& spec, SamplerKind kind, Index dim, Index n,
                                          std::uint64_t seed) {
  // Both samplers start from the same particles for a given (dim, n).
  Rng rng(seed ^ (static_cast<std::uint64_t>(dim) << 32) ^ static_cast<std::uint64_t>(n));
  const ScoreModel target = standard_gaussian(dim);
  ParticleSampler sampler(target, variance_initial_particles(n, dim, rng), kind, spec.sampler);
  VarianceResult res{kind, dim, n, 0.0, 0.0, 0.0, {}};
  auto record = [&](const ParticleSampler& s) {
    res.trace.push_back({s.iteration(), s.current_parf(), average_variance(s.particles())});
  };
  if (spec.trace_every > 0) record(sampler);
  sampler.run(spec.steps, [&](const ParticleSampler& s) {
    if (spec.trace_every > 0 && s.iteration() % spec.trace_every == 0) record(s);
  });
  res.var_avg = average_variance(sampler.particles());
  res.parf = sampler.current_parf();
  res.mean_abs_mean = sampler.particles().colwise().mean().cwiseAbs().mean();
  return res;
}

/// Results ordered sampler-major, then dimension, then particle count.
inline std::vector<VarianceResult> run_variance_experiment(const VarianceSpec& spec, std::uint64_t seed,
                                                           std::size_t workers = 1) {
  spec.validate();
  struct Job {
    SamplerKind kind;
    Index dim;
    Index n;
  };
  std::vector<Job> jobs;
  for (auto k : spec.samplers)
    for (Index d : spec.dims)
      for (Index n : spec.particles) jobs.push_back({k, d, n});
  std::vector<VarianceResult> out(jobs.size());
  parallel_for(jobs.size(), workers,
               [&](std::size_t i) { out[i] = run_variance_config(spec, jobs[i].kind, jobs[i].dim, jobs[i].n, seed); });
  return out;
}

}  // namespace sksd
