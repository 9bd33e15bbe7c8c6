#pragma once

#include "sksd/optim.hpp"
#include "sksd/rng.hpp"
#include "sksd/types.hpp"

#include <json.hpp>

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <type_traits>
#include <variant>

namespace sksd {

namespace detail {
/// sign with sign(0) = 0, the subgradient used at the Laplace kink.
inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// log(cosh(a)) without overflow.
inline double log_cosh(double a) {
  const double m = std::abs(a);
  return m + std::log1p(std::exp(-2.0 * m)) - std::numbers::ln2;
}
}  // namespace detail

/// N(mean, cov). `diagonal` only affects serialization and sampling cost.
class GaussianTarget {
 public:
  GaussianTarget(Vector mean, Matrix cov, bool diagonal = false)
      : mean_(std::move(mean)), cov_(std::move(cov)), diagonal_(diagonal) {
    require(cov_.rows() == mean_.size() && cov_.cols() == mean_.size(), "GaussianTarget: shape mismatch");
    require(cov_.isApprox(cov_.transpose(), 1e-12), "GaussianTarget: covariance must be symmetric");
    Eigen::LLT<Matrix> llt(cov_);
    if (llt.info() != Eigen::Success) throw InvalidArgument("GaussianTarget: covariance must be positive definite");
    chol_ = llt.matrixL();
    precision_ = llt.solve(Matrix::Identity(mean_.size(), mean_.size()));
    log_det_ = 2.0 * chol_.diagonal().array().log().sum();
  }

  static GaussianTarget diagonal(Vector mean, const Vector& variances) {
    require((variances.array() > 0.0).all(), "GaussianTarget: variances must be positive");
    return GaussianTarget(std::move(mean), variances.asDiagonal().toDenseMatrix(), true);
  }

  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return cov_; }
  const Matrix& precision() const { return precision_; }
  const Matrix& cholesky() const { return chol_; }
  double log_det() const { return log_det_; }
  bool is_diagonal() const { return diagonal_; }
  Index dim() const { return mean_.size(); }

 private:
  Vector mean_;
  Matrix cov_;
  bool diagonal_;
  Matrix chol_;
  Matrix precision_;
  double log_det_ = 0.0;
};

/// Factorized Laplace(0, scale).
struct LaplaceTarget {
  Index dim;
  double scale;
  LaplaceTarget(Index d, double b) : dim(d), scale(b) {
    require(d >= 1, "LaplaceTarget: dim must be positive");
    require(b > 0.0, "LaplaceTarget: scale must be positive");
  }
};

/// Factorized Student-t, zero location, unit scale.
struct StudentTTarget {
  Index dim;
  double dof;
  StudentTTarget(Index d, double nu) : dim(d), dof(nu) {
    require(d >= 1, "StudentTTarget: dim must be positive");
    require(nu > 2.0, "StudentTTarget: dof must exceed 2");
  }
};

/// Gaussian-Bernoulli RBM with hidden units in {-1, +1}:
/// E(x, h) = -x'Bh - b_v'x - b_h'h + |x|^2 / 2.
struct RbmTarget {
  Matrix weights;        // D x H
  Vector visible_bias;   // D
  Vector hidden_bias;    // H
  RbmTarget(Matrix b, Vector bv, Vector bh)
      : weights(std::move(b)), visible_bias(std::move(bv)), hidden_bias(std::move(bh)) {
    require(weights.rows() == visible_bias.size(), "RbmTarget: B rows must equal len(b_v)");
    require(weights.cols() == hidden_bias.size(), "RbmTarget: B cols must equal len(b_h)");
  }
  Index dim() const { return weights.rows(); }
  Index hidden() const { return weights.cols(); }
};

/// ICA: z ~ prod Laplace(0, 1), x = W z.
class IcaTarget {
 public:
  explicit IcaTarget(Matrix w) : w_(std::move(w)) {
    require(w_.rows() == w_.cols() && w_.rows() >= 1, "IcaTarget: W must be square");
    require_finite(w_, "IcaTarget W");
    Eigen::PartialPivLU<Matrix> lu(w_);
    const Vector diag = lu.matrixLU().diagonal().cwiseAbs();
    if (diag.minCoeff() <= 1e-14 * std::max(1.0, diag.maxCoeff()))
      throw SingularMatrix("IcaTarget: W is singular");
    w_inv_ = lu.inverse();
    log_abs_det_ = diag.array().log().sum();
  }
  const Matrix& mixing() const { return w_; }
  const Matrix& unmixing() const { return w_inv_; }
  double log_abs_det() const { return log_abs_det_; }
  Index dim() const { return w_.rows(); }

 private:
  Matrix w_;
  Matrix w_inv_;
  double log_abs_det_ = 0.0;
};

class ScoreModel {
 public:
  using Params = std::variant<GaussianTarget, LaplaceTarget, StudentTTarget, RbmTarget, IcaTarget>;

  template <typename T>
    requires std::is_constructible_v<Params, T>
  ScoreModel(T params) : params_(std::move(params)) {}

  const Params& params() const { return params_; }
  template <typename T>
  const T* as() const {
    return std::get_if<T>(&params_);
  }

  Index dim() const {
    return std::visit(
        [](const auto& p) -> Index {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, LaplaceTarget> || std::is_same_v<T, StudentTTarget>)
            return p.dim;
          else
            return p.dim();
        },
        params_);
  }

  std::string variant_name() const {
    return std::visit(
        [](const auto& p) -> std::string {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, GaussianTarget>) return "gaussian";
          if constexpr (std::is_same_v<T, LaplaceTarget>) return "laplace";
          if constexpr (std::is_same_v<T, StudentTTarget>) return "student_t";
          if constexpr (std::is_same_v<T, RbmTarget>) return "rbm";
          if constexpr (std::is_same_v<T, IcaTarget>) return "ica";
        },
        params_);
  }

  /// Scores of every row of `x`, one row per sample.
  Matrix scores(const Matrix& x) const {
    require(x.cols() == dim(), "ScoreModel::scores: sample dimension " + std::to_string(x.cols()) +
                                   " does not match model dimension " + std::to_string(dim()));
    return std::visit(
        [&](const auto& p) -> Matrix {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, GaussianTarget>) {
            return -(x.rowwise() - p.mean().transpose()) * p.precision();
          } else if constexpr (std::is_same_v<T, LaplaceTarget>) {
            return -x.unaryExpr(&detail::sign0) / p.scale;
          } else if constexpr (std::is_same_v<T, StudentTTarget>) {
            const double nu = p.dof;
            return x.unaryExpr([nu](double v) { return -(nu + 1.0) * v / (nu + v * v); });
          } else if constexpr (std::is_same_v<T, RbmTarget>) {
            Matrix act = x * p.weights;
            act.rowwise() += p.hidden_bias.transpose();
            Matrix out = act.array().tanh().matrix() * p.weights.transpose() - x;
            out.rowwise() += p.visible_bias.transpose();
            return out;
          } else {
            const Matrix z = x * p.unmixing().transpose();
            return -z.unaryExpr(&detail::sign0) * p.unmixing();
          }
        },
        params_);
  }

  Vector score(const Vector& x) const { return scores(x.transpose()).row(0).transpose(); }

  /// log density up to an additive constant (ICA returns the normalized form).
  double log_density_unnorm(const Vector& x) const {
    require(x.size() == dim(), "ScoreModel::log_density_unnorm: dimension mismatch");
    return std::visit(
        [&](const auto& p) -> double {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, GaussianTarget>) {
            const Vector c = x - p.mean();
            return -0.5 * c.dot(p.precision() * c);
          } else if constexpr (std::is_same_v<T, LaplaceTarget>) {
            return -x.cwiseAbs().sum() / p.scale;
          } else if constexpr (std::is_same_v<T, StudentTTarget>) {
            return -0.5 * (p.dof + 1.0) * (1.0 + x.array().square() / p.dof).log().sum();
          } else if constexpr (std::is_same_v<T, RbmTarget>) {
            const Vector act = p.weights.transpose() * x + p.hidden_bias;
            double lc = 0.0;
            for (Index j = 0; j < act.size(); ++j) lc += detail::log_cosh(act(j));
            return p.visible_bias.dot(x) - 0.5 * x.squaredNorm() + lc;
          } else {
            const Vector z = p.unmixing() * x;
            return -static_cast<double>(z.size()) * std::numbers::ln2 - z.cwiseAbs().sum() - p.log_abs_det();
          }
        },
        params_);
  }

  /// n exact i.i.d. draws, one per row. RBMs need rbm_gibbs instead.
  Matrix sample(std::size_t n, Rng& rng) const {
    const Index d = dim();
    const Index rows = static_cast<Index>(n);
    return std::visit(
        [&](const auto& p) -> Matrix {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, GaussianTarget>) {
            Matrix eps = rng.normal_matrix(rows, d);
            Matrix out = p.is_diagonal() ? Matrix(eps * p.cholesky().diagonal().asDiagonal())
                                         : Matrix(eps * p.cholesky().transpose());
            out.rowwise() += p.mean().transpose();
            return out;
          } else if constexpr (std::is_same_v<T, LaplaceTarget>) {
            Matrix out(rows, d);
            for (Index i = 0; i < rows; ++i)
              for (Index j = 0; j < d; ++j) out(i, j) = rng.laplace(p.scale);
            return out;
          } else if constexpr (std::is_same_v<T, StudentTTarget>) {
            Matrix out(rows, d);
            for (Index i = 0; i < rows; ++i)
              for (Index j = 0; j < d; ++j) out(i, j) = rng.student_t(p.dof);
            return out;
          } else if constexpr (std::is_same_v<T, RbmTarget>) {
            throw InvalidArgument("ScoreModel::sample: no exact sampler for the RBM; use rbm_gibbs");
            return Matrix();
          } else {
            Matrix z(rows, d);
            for (Index i = 0; i < rows; ++i)
              for (Index j = 0; j < d; ++j) z(i, j) = rng.laplace(1.0);
            return z * p.mixing().transpose();
          }
        },
        params_);
  }

 private:
  Params params_;
};

// ---------------------------------------------------------------------------
// Factories for the benchmark families.

inline ScoreModel standard_gaussian(Index dim, double variance = 1.0) {
  return GaussianTarget::diagonal(Vector::Zero(dim), Vector::Constant(dim, variance));
}

/// N(0, diag(first_variance, 1, ..., 1)).
inline ScoreModel diffusion_gaussian(Index dim, double first_variance = 0.3) {
  Vector v = Vector::Ones(dim);
  v(0) = first_variance;
  return GaussianTarget::diagonal(Vector::Zero(dim), v);
}

inline ScoreModel laplace_target(Index dim, double scale) { return LaplaceTarget(dim, scale); }

inline ScoreModel student_t_target(Index dim, double dof) { return StudentTTarget(dim, dof); }

/// RBM with B ~ weight_scale * N(0, 1), b_v, b_h ~ N(0, 1).
inline RbmTarget random_rbm(Index dim, Index hidden, Rng& rng, double weight_scale = 1.0) {
  Matrix b = weight_scale * rng.normal_matrix(dim, hidden);
  Vector bv = rng.normal_matrix(dim, 1);
  Vector bh = rng.normal_matrix(hidden, 1);
  return RbmTarget(std::move(b), std::move(bv), std::move(bh));
}

/// Copy of `rbm` with B <- B + noise_level * eps, eps i.i.d. N(0, 1).
inline RbmTarget perturb_rbm(const RbmTarget& rbm, double noise_level, Rng& rng) {
  require(noise_level >= 0.0, "perturb_rbm: noise_level must be non-negative");
  RbmTarget out = rbm;
  if (noise_level > 0.0) out.weights += noise_level * rng.normal_matrix(rbm.dim(), rbm.hidden());
  return out;
}

struct GibbsConfig {
  std::size_t chains = 1;
  std::size_t burn_in = 0;
  std::size_t thinning = 1;
  /// Draws kept per chain after burn-in.
  std::size_t draws_per_chain = 1;
};

/// Called after every burn-in sweep with the sweep index and current visibles.
using SweepCallback = std::function<void(std::size_t, const Matrix&)>;

/// Parallel block-Gibbs chains. Output rows are ordered draw-major: all
/// chains' first kept draw, then all chains' second kept draw, and so on.
inline Matrix rbm_gibbs(const RbmTarget& rbm, const GibbsConfig& config, Rng& rng,
                        const SweepCallback& on_burn_in_sweep = {}) {
  require(config.chains >= 1, "rbm_gibbs: need at least one chain");
  require(config.thinning >= 1, "rbm_gibbs: thinning must be at least 1");
  const Index n = static_cast<Index>(config.chains);
  const Index d = rbm.dim();
  const Index h = rbm.hidden();

  Matrix hidden(n, h);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < h; ++j) hidden(i, j) = rng.uniform() < 0.5 ? -1.0 : 1.0;
  Matrix visible(n, d);

  auto sample_visible = [&]() {
    visible = hidden * rbm.weights.transpose();
    visible.rowwise() += rbm.visible_bias.transpose();
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < d; ++j) visible(i, j) += rng.normal();
  };
  auto sample_hidden = [&]() {
    Matrix act = visible * rbm.weights;
    act.rowwise() += rbm.hidden_bias.transpose();
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < h; ++j) {
        const double p_plus = 1.0 / (1.0 + std::exp(-2.0 * act(i, j)));
        hidden(i, j) = rng.uniform() < p_plus ? 1.0 : -1.0;
      }
  };
  sample_visible();
  for (std::size_t s = 0; s < config.burn_in; ++s) {
    sample_hidden();
    sample_visible();
    if (on_burn_in_sweep) on_burn_in_sweep(s, visible);
  }

  Matrix out(n * static_cast<Index>(config.draws_per_chain), d);
  for (std::size_t k = 0; k < config.draws_per_chain; ++k) {
    if (k > 0 || config.burn_in == 0) {
      // The first kept draw after a burn-in is the burn-in's final state.
      for (std::size_t t = 0; t < config.thinning; ++t) {
        sample_hidden();
        sample_visible();
      }
    }
    out.middleRows(static_cast<Index>(k) * n, n) = visible;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON (field names: variant, mean, cov_diag | cov, scale, dof, B, b_v, b_h, W).

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array()) throw InvalidArgument("field '" + field + "' must be an array of rows");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows == 0 ? 0 : static_cast<Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Index>(row.size()) != cols)
      throw InvalidArgument("field '" + field + "' must be a rectangular array of rows");
    for (Index c = 0; c < cols; ++c) m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

inline Vector vector_from_json(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array()) throw InvalidArgument("field '" + field + "' must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

inline nlohmann::json to_json(const ScoreModel& model) {
  nlohmann::json j;
  j["variant"] = model.variant_name();
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, GaussianTarget>) {
          j["mean"] = vector_to_json(p.mean());
          if (p.is_diagonal())
            j["cov_diag"] = vector_to_json(p.covariance().diagonal());
          else
            j["cov"] = matrix_to_json(p.covariance());
        } else if constexpr (std::is_same_v<T, LaplaceTarget>) {
          j["dim"] = p.dim;
          j["scale"] = p.scale;
        } else if constexpr (std::is_same_v<T, StudentTTarget>) {
          j["dim"] = p.dim;
          j["dof"] = p.dof;
        } else if constexpr (std::is_same_v<T, RbmTarget>) {
          j["B"] = matrix_to_json(p.weights);
          j["b_v"] = vector_to_json(p.visible_bias);
          j["b_h"] = vector_to_json(p.hidden_bias);
        } else {
          j["W"] = matrix_to_json(p.mixing());
        }
      },
      model.params());
  return j;
}

inline ScoreModel model_from_json(const nlohmann::json& j) {
  if (!j.contains("variant")) throw InvalidArgument("field 'variant' is required");
  const auto variant = j.at("variant").get<std::string>();
  auto need = [&](const char* field) -> const nlohmann::json& {
    if (!j.contains(field)) throw InvalidArgument(std::string("field '") + field + "' is required for variant " + variant);
    return j.at(field);
  };
  if (variant == "gaussian") {
    Vector mean = vector_from_json(need("mean"), "mean");
    if (j.contains("cov_diag")) return GaussianTarget::diagonal(mean, vector_from_json(j.at("cov_diag"), "cov_diag"));
    return GaussianTarget(mean, matrix_from_json(need("cov"), "cov"));
  }
  if (variant == "laplace") return LaplaceTarget(need("dim").get<Index>(), need("scale").get<double>());
  if (variant == "student_t") return StudentTTarget(need("dim").get<Index>(), need("dof").get<double>());
  if (variant == "rbm")
    return RbmTarget(matrix_from_json(need("B"), "B"), vector_from_json(need("b_v"), "b_v"),
                     vector_from_json(need("b_h"), "b_h"));
  if (variant == "ica") return IcaTarget(matrix_from_json(need("W"), "W"));
  throw InvalidArgument("field 'variant' has unknown value '" + variant + "'");
}

}  // namespace sksd
