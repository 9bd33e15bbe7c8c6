#pragma once

#include "sksd/kernel.hpp"
#include "sksd/sliced.hpp"
#include "sksd/targets.hpp"

#include <json.hpp>

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace sksd {

enum class IcaObjective { ksd, maxsksd_g, maxsksd_rg };

inline std::string to_string(IcaObjective o) {
  switch (o) {
    case IcaObjective::ksd: return "ksd";
    case IcaObjective::maxsksd_g: return "maxsksd-g";
    case IcaObjective::maxsksd_rg: return "maxsksd-rg";
  }
  return "ksd";
}

inline IcaObjective ica_objective_from_string(const std::string& s) {
  if (s == "ksd") return IcaObjective::ksd;
  if (s == "maxsksd-g") return IcaObjective::maxsksd_g;
  if (s == "maxsksd-rg") return IcaObjective::maxsksd_rg;
  throw InvalidArgument("field 'objective' must be ksd, maxsksd-g or maxsksd-rg (got '" + s + "')");
}

/// Standard normal D x D matrix, redrawn until its condition number is below D.
inline Matrix well_conditioned_matrix(Index dim, Rng& rng, std::size_t max_attempts = 100000) {
  require(dim >= 1, "well_conditioned_matrix: dim must be positive");
  for (std::size_t a = 0; a < max_attempts; ++a) {
    Matrix m = rng.normal_matrix(dim, dim);
    if (dim == 1 ? m(0, 0) != 0.0 : condition_number(m) < static_cast<double>(dim)) return m;
  }
  throw Error("well_conditioned_matrix: no draw with condition number below " + std::to_string(dim));
}

/// Mixing matrix with a well-conditioned standard normal inverse, i.e.
/// z = A x with A drawn as above.
inline Matrix random_ica_mixing(Index dim, Rng& rng) { return well_conditioned_matrix(dim, rng).inverse(); }

struct IcaData {
  Matrix mixing;
  Matrix train;
  Matrix test;
};

inline IcaData make_ica_data(Index dim, std::size_t n_train, std::size_t n_test, Rng& rng) {
  IcaData data;
  data.mixing = random_ica_mixing(dim, rng);
  const ScoreModel truth = IcaTarget(data.mixing);
  data.train = truth.sample(n_train, rng);
  data.test = truth.sample(n_test, rng);
  return data;
}

/// Mean negative log-likelihood of the rows of `test` under x = W z,
/// z ~ prod Laplace(0, 1).
inline double test_nll(const Matrix& w, const Matrix& test) {
  const IcaTarget model(w);
  require(test.cols() == model.dim(), "test_nll: sample dimension does not match W");
  require(test.rows() >= 1, "test_nll: no test samples");
  const Matrix z = test * model.unmixing().transpose();
  const double d = static_cast<double>(model.dim());
  return z.cwiseAbs().sum() / static_cast<double>(test.rows()) + d * std::numbers::ln2 + model.log_abs_det();
}

/// Gradient of the KSD U- or V-statistic with respect to the per-sample
/// scores, bandwidth fixed. Row i is sum_j c k_ij (s_j + (x_i - x_j) / sigma^2).
inline Matrix ksd_score_gradient(const Matrix& x, const Matrix& scores, double sigma, Statistic stat) {
  const Index n = x.rows();
  const double inv_s2 = 1.0 / (sigma * sigma);
  Matrix k = (-0.5 * inv_s2 * pairwise_sq_distances(x)).array().exp().matrix();
  if (stat == Statistic::U) k.diagonal().setZero();
  const Vector row_k = k.rowwise().sum();
  const Matrix out = k * scores + inv_s2 * (row_k.asDiagonal() * x - k * x);
  return 2.0 * out / statistic_pairs(stat, n);
}

struct IcaObjectiveValue {
  double value = 0.0;
  Matrix grad_w;
  SlicedGradient slices;  // empty for KSD
};

namespace detail {
/// dL/dW from dL/dS for S = -sign(X U') U, U = W^-1; sign has zero derivative.
inline Matrix ica_chain_rule(const IcaTarget& model, const Matrix& x, const Matrix& d_scores) {
  const Matrix& u = model.unmixing();
  const Matrix signs = (x * u.transpose()).unaryExpr(&detail::sign0);
  return u.transpose() * signs.transpose() * d_scores * u.transpose();
}
}  // namespace detail

/// maxSKSD V-statistic of the ICA model W on `samples`, with the gradient
/// with respect to W and the slice gradients.
inline IcaObjectiveValue ica_sliced_objective(const Matrix& w, const Matrix& samples, const SliceConfig& slices,
                                              const BandwidthPolicy& policy = {}) {
  const IcaTarget target(w);
  const ScoreModel model(target);
  IcaObjectiveValue out;
  out.slices = sliced_gradient(samples, model.scores(samples), slices, policy, Statistic::V);
  out.value = out.slices.value;
  out.grad_w = detail::ica_chain_rule(target, samples, out.slices.scores);
  require_finite(out.grad_w, "grad_ica_wrt_W");
  return out;
}

inline double ica_objective(const Matrix& w, const Matrix& samples, const SliceConfig& slices,
                            const BandwidthPolicy& policy = {}) {
  return sksd_vstat(ScoreModel(IcaTarget(w)), samples, slices, policy).value;
}

inline Matrix grad_ica_wrt_W(const Matrix& w, const Matrix& samples, const SliceConfig& slices,
                             const BandwidthPolicy& policy = {}) {
  return ica_sliced_objective(w, samples, slices, policy).grad_w;
}

/// KSD objective (U-statistic by default) and its gradient with respect to W.
inline IcaObjectiveValue ica_ksd_objective(const Matrix& w, const Matrix& samples, Statistic stat = Statistic::U,
                                           const BandwidthPolicy& policy = {}) {
  const IcaTarget target(w);
  const ScoreModel model(target);
  const Index n = samples.rows();
  require(n >= 2, "ica_ksd_objective: not enough samples");
  const double sigma = median_heuristic_rows(samples, policy).sigma();
  const Matrix scores = model.scores(samples);
  const Matrix u = ksd_stein_matrix(samples, scores, sigma);
  IcaObjectiveValue out;
  out.value = (u.sum() - (stat == Statistic::U ? u.trace() : 0.0)) / statistic_pairs(stat, n);
  out.grad_w = detail::ica_chain_rule(target, samples, ksd_score_gradient(samples, scores, sigma, stat));
  require_finite(out.grad_w, "grad_ica_wrt_W (ksd)");
  return out;
}

struct IcaTraceRow {
  std::size_t step = 0;
  double objective = 0.0;
  double test_nll = 0.0;
};

struct IcaTrainConfig {
  IcaObjective objective = IcaObjective::maxsksd_g;
  std::size_t steps = 15000;
  std::size_t batch_size = 100;
  AdamConfig adam_w{1e-3, 0.5, 0.9, 1e-8};
  // G has to keep up with W or the traced objective stops tracking the NLL.
  AdamConfig adam_g{1e-2, 0.5, 0.9, 1e-8};
  /// Adam steps on G per step on W.
  std::size_t g_steps_per_w_step = 1;
  /// maxSKSD uses the V-statistic at 1.5x the median; KSD the U-statistic at the median.
  double sliced_bandwidth_factor = 1.5;
  double ksd_bandwidth_factor = 1.0;
  Index rg_slices = 0;  // 0 means D
  std::size_t eval_every = 100;
  /// The traced objective is evaluated on this many leading training rows.
  std::size_t eval_rows = 500;
  double divergence_factor = 10.0;

  void validate() const {
    require(batch_size >= 2, "field 'batch_size' must be at least 2");
    require(eval_every >= 1, "field 'eval_every' must be at least 1");
    require(eval_rows >= 2, "field 'eval_rows' must be at least 2");
    require(adam_w.learning_rate > 0.0, "field 'learning_rate' must be positive");
    require(sliced_bandwidth_factor > 0.0 && ksd_bandwidth_factor > 0.0, "field 'bandwidth_factor' must be positive");
    require(divergence_factor > 1.0, "field 'divergence_factor' must exceed 1");
    require(rg_slices >= 0, "field 'rg_slices' must be non-negative");
  }
};

struct IcaTrainState {
  Matrix w;
  SliceConfig slices;
  AdamState w_state;
  AdamState g_state;
  AdamState r_state;
  std::size_t step = 0;
  std::vector<IcaTraceRow> trace;
};

inline nlohmann::json to_json(const IcaTrainState& s, IcaObjective objective) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& r : s.trace) trace.push_back({{"step", r.step}, {"objective", r.objective}, {"test_nll", r.test_nll}});
  return {{"objective", to_string(objective)},
          {"W", matrix_to_json(s.w)},
          {"G", matrix_to_json(s.slices.directions)},
          {"step", s.step},
          {"nll_trace", trace}};
}

class IcaTrainer {
 public:
  IcaTrainer(const Matrix& train, const Matrix& test, IcaTrainConfig config, Rng rng)
      : train_(train), test_(test), config_(config), rng_(rng) {
    config_.validate();
    require(train_.cols() == test_.cols(), "IcaTrainer: train and test dimensions differ");
    require(train_.rows() >= 2 && test_.rows() >= 1, "IcaTrainer: not enough data");
    const Index d = train_.cols();
    Rng init = rng_.split(1);
    state_.w = random_ica_mixing(d, init);
    const Index m = config_.rg_slices > 0 ? config_.rg_slices : d;
    state_.slices = config_.objective == IcaObjective::maxsksd_rg ? SliceConfig::random_rg(d, m, init)
                                                                  : SliceConfig::random_g(d, init);
    state_.w_state = AdamState(d, d, config_.adam_w);
    state_.g_state = AdamState(state_.slices.slices(), d, config_.adam_g);
    state_.r_state = AdamState(state_.slices.slices(), d, config_.adam_g);
    batch_rng_ = rng_.split(2);
    initial_nll_ = test_nll(state_.w, test_);
    record();
  }

  const IcaTrainState& state() const { return state_; }
  double initial_nll() const { return initial_nll_; }

  void step() {
    const Matrix batch = draw_batch();
    const auto obj = evaluate(batch);
    state_.w += state_.w_state.step(obj.grad_w);
    if (config_.objective != IcaObjective::ksd) {
      for (std::size_t k = 0; k < config_.g_steps_per_w_step; ++k) {
        const auto ascent = ica_sliced_objective(state_.w, batch, state_.slices, sliced_policy());
        auto& sl = state_.slices;
        sl.directions = project_rows_to_sphere(
            sl.directions + state_.g_state.step(-tangent_rows(ascent.slices.directions, sl.directions)));
        if (sl.variant == SliceVariant::rg)
          sl.basis = project_rows_to_sphere(sl.basis + state_.r_state.step(-tangent_rows(ascent.slices.basis, sl.basis)));
      }
    }
    ++state_.step;
    if (state_.step % config_.eval_every == 0) record();
  }

  void run(std::size_t steps) {
    for (std::size_t s = 0; s < steps; ++s) step();
  }

  /// Objective on the fixed evaluation rows at the current parameters.
  double eval_objective() const {
    const Index rows = std::min<Index>(train_.rows(), static_cast<Index>(config_.eval_rows));
    const Matrix x = train_.topRows(rows);
    if (config_.objective == IcaObjective::ksd) return ica_ksd_objective(state_.w, x, Statistic::U, ksd_policy()).value;
    return ica_objective(state_.w, x, state_.slices, sliced_policy());
  }

 private:
  BandwidthPolicy sliced_policy() const { return {config_.sliced_bandwidth_factor, kDefaultBandwidthFloor}; }
  BandwidthPolicy ksd_policy() const { return {config_.ksd_bandwidth_factor, kDefaultBandwidthFloor}; }

  Matrix draw_batch() {
    const Index b = static_cast<Index>(config_.batch_size);
    Matrix batch(b, train_.cols());
    for (Index i = 0; i < b; ++i) batch.row(i) = train_.row(static_cast<Index>(batch_rng_.below(train_.rows())));
    return batch;
  }

  IcaObjectiveValue evaluate(const Matrix& batch) const {
    try {
      if (config_.objective == IcaObjective::ksd) return ica_ksd_objective(state_.w, batch, Statistic::U, ksd_policy());
      return ica_sliced_objective(state_.w, batch, state_.slices, sliced_policy());
    } catch (const SingularMatrix&) {
      throw Diverged(divergence_message("W became singular"));
    } catch (const NonFinite&) {
      throw Diverged(divergence_message("non-finite gradient"));
    }
  }

  std::string divergence_message(const std::string& what) const {
    std::ostringstream msg;
    msg << "ICA training diverged at step " << state_.step << " (" << what << "); use a smaller learning rate than "
        << config_.adam_w.learning_rate;
    return msg.str();
  }

  void record() {
    double nll;
    try {
      nll = test_nll(state_.w, test_);
    } catch (const SingularMatrix&) {
      throw Diverged(divergence_message("W became singular"));
    }
    if (!std::isfinite(nll) || nll > config_.divergence_factor * std::abs(initial_nll_))
      throw Diverged(divergence_message("test NLL " + std::to_string(nll) + " exceeds " +
                                        std::to_string(config_.divergence_factor) + "x the initial value"));
    state_.trace.push_back({state_.step, eval_objective(), nll});
  }

  Matrix train_;
  Matrix test_;
  IcaTrainConfig config_;
  Rng rng_;
  Rng batch_rng_{0};
  IcaTrainState state_;
  double initial_nll_ = 0.0;
};

/// Trains for config.steps and returns the final state and trace.
inline IcaTrainState train_ica(const Matrix& train, const Matrix& test, const IcaTrainConfig& config, Rng rng) {
  IcaTrainer trainer(train, test, config, rng);
  trainer.run(config.steps);
  return trainer.state();
}

}  // namespace sksd
