#pragma once

#include "sksd/kernel.hpp"
#include "sksd/optim.hpp"
#include "sksd/rng.hpp"
#include "sksd/stats.hpp"
#include "sksd/targets.hpp"

#include <json.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace sksd {

// ---------------------------------------------------------------------------
// Slice configuration.

enum class SliceVariant { g_only, rg };

inline constexpr double kUnitNormTolerance = 1e-12;

/// Slicing directions r (rows of `basis`) paired with test directions g
/// (rows of `directions`). For the g-only variant the basis is orthonormal
/// and fixed; for the rg variant both are optimized.
struct SliceConfig {
  SliceVariant variant = SliceVariant::g_only;
  Matrix basis;
  Matrix directions;
  /// Per-slice sigma; empty means the median heuristic is applied per slice.
  std::vector<double> bandwidths;

  Index slices() const { return basis.rows(); }
  Index dim() const { return basis.cols(); }

  void validate() const {
    require(basis.rows() >= 1, "SliceConfig: need at least one slice");
    require(basis.rows() == directions.rows() && basis.cols() == directions.cols(),
            "SliceConfig: basis and directions must have the same shape");
    require(bandwidths.empty() || static_cast<Index>(bandwidths.size()) == basis.rows(),
            "SliceConfig: one bandwidth override per slice");
    for (Index i = 0; i < basis.rows(); ++i) {
      require(std::abs(basis.row(i).norm() - 1.0) <= kUnitNormTolerance,
              "SliceConfig: basis row " + std::to_string(i) + " is not unit norm");
      require(std::abs(directions.row(i).norm() - 1.0) <= kUnitNormTolerance,
              "SliceConfig: direction row " + std::to_string(i) + " is not unit norm");
    }
    if (variant == SliceVariant::g_only) {
      const Matrix gram = basis * basis.transpose();
      require(gram.isApprox(Matrix::Identity(gram.rows(), gram.cols()), 1e-10),
              "SliceConfig: g-only basis must be orthonormal");
    }
  }

  /// One-hot basis with G = I.
  static SliceConfig identity(Index dim) {
    return {SliceVariant::g_only, one_hot_basis(dim), Matrix::Identity(dim, dim), {}};
  }

  /// One-hot basis with G rows drawn N(0, I) and normalized.
  static SliceConfig random_g(Index dim, Rng& rng) {
    return {SliceVariant::g_only, one_hot_basis(dim), project_rows_to_sphere(rng.normal_matrix(dim, dim)), {}};
  }

  /// `m` free (r, g) pairs, both drawn N(0, I) and normalized.
  static SliceConfig random_rg(Index dim, Index m, Rng& rng) {
    Matrix r = project_rows_to_sphere(rng.normal_matrix(m, dim));
    Matrix g = project_rows_to_sphere(rng.normal_matrix(m, dim));
    return {SliceVariant::rg, std::move(r), std::move(g), {}};
  }
};

inline nlohmann::json to_json(const SliceConfig& s) {
  nlohmann::json j;
  j["variant"] = s.variant == SliceVariant::g_only ? "g" : "rg";
  j["O_r"] = matrix_to_json(s.basis);
  j["G"] = matrix_to_json(s.directions);
  j["bandwidth_overrides"] = s.bandwidths;
  return j;
}

inline SliceConfig slice_config_from_json(const nlohmann::json& j) {
  SliceConfig s;
  const auto v = j.at("variant").get<std::string>();
  if (v == "g")
    s.variant = SliceVariant::g_only;
  else if (v == "rg")
    s.variant = SliceVariant::rg;
  else
    throw InvalidArgument("field 'variant' must be 'g' or 'rg'");
  s.basis = matrix_from_json(j.at("O_r"), "O_r");
  s.directions = matrix_from_json(j.at("G"), "G");
  if (j.contains("bandwidth_overrides")) s.bandwidths = j.at("bandwidth_overrides").get<std::vector<double>>();
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Pointwise kernel Stein quantities.

namespace detail {
inline void require_unit(const Vector& v, const char* name) {
  if (std::abs(v.norm() - 1.0) > 1e-9)
    throw InvalidArgument(std::string("sliced kernel: ") + name + " must have unit norm, has norm " +
                          std::to_string(v.norm()));
}
}  // namespace detail

/// xi(x, z) = s_p^r(x) k(x'g, z) + (r'g) d/d(x'g) k(x'g, z).
inline double xi_slice(const ScoreModel& model, const Vector& x, double z, const Vector& r, const Vector& g,
                       double sigma) {
  detail::require_unit(r, "r");
  detail::require_unit(g, "g");
  const double sr = r.dot(model.score(x));
  const auto kern = rbf_1d(x.dot(g), z, sigma);
  return sr * kern.k + r.dot(g) * kern.dk_da;
}

/// h(x, y): the RKHS inner product of xi(x, .) and xi(y, .).
inline double h_slice(const ScoreModel& model, const Vector& x, const Vector& y, const Vector& r, const Vector& g,
                      double sigma) {
  detail::require_unit(r, "r");
  detail::require_unit(g, "g");
  const double sx = r.dot(model.score(x));
  const double sy = r.dot(model.score(y));
  const double c = r.dot(g);
  const auto kern = rbf_1d(x.dot(g), y.dot(g), sigma);
  return sx * kern.k * sy + c * sy * kern.dk_da + c * sx * kern.dk_db + c * c * kern.d2k_dadb;
}

// ---------------------------------------------------------------------------
// Batched estimators.

/// Per-slice inputs: projections a_i = x_i'g, projected scores s_i = r's(x_i).
struct SliceProjections {
  Matrix scores;       // N x D
  Matrix projected;    // N x m, column r holds x_i'g_r
  Matrix score_proj;   // N x m, column r holds r's(x_i)
  Vector coupling;     // m, r'g_r
  std::vector<double> sigma;
};

inline std::vector<double> slice_bandwidths(const Matrix& projected, const SliceConfig& slices,
                                            const BandwidthPolicy& policy) {
  if (!slices.bandwidths.empty()) return slices.bandwidths;
  std::vector<double> out(static_cast<std::size_t>(projected.cols()));
  for (Index r = 0; r < projected.cols(); ++r) {
    // A single point has no pairwise distance; any sigma gives the same
    // repulsive-free kernel, so fall back to the floor or 1.
    out[static_cast<std::size_t>(r)] = projected.rows() >= 2
                                           ? median_heuristic(Vector(projected.col(r)), policy).sigma()
                                           : policy.floor.value_or(1.0);
  }
  return out;
}

inline SliceProjections project_slices(const Matrix& x, const Matrix& scores, const SliceConfig& slices,
                                       const BandwidthPolicy& policy) {
  require(x.cols() == slices.dim(), "project_slices: sample dimension does not match slices");
  SliceProjections p;
  p.scores = scores;
  p.projected = x * slices.directions.transpose();
  p.score_proj = scores * slices.basis.transpose();
  p.coupling = slices.basis.cwiseProduct(slices.directions).rowwise().sum();
  p.sigma = slice_bandwidths(p.projected, slices, policy);
  return p;
}

/// Unnormalized sums over ordered pairs for one slice, plus the partial
/// derivatives of that sum with respect to the projections, the coupling
/// r'g and the projected scores.
struct SliceTerms {
  double sum = 0.0;
  Vector d_proj;
  double d_coupling = 0.0;
  Vector d_score;
};

namespace detail {

template <bool WantGrad>
SliceTerms slice_terms(const double* a, const double* s, Index n, double c, double sigma, bool include_diagonal,
                       Matrix* accumulate) {
  using Arr = Eigen::ArrayXd;
  SliceTerms t;
  if constexpr (WantGrad) {
    t.d_proj = Vector::Zero(n);
    t.d_score = Vector::Zero(n);
  }
  const double is2 = 1.0 / (sigma * sigma);
  const double is4 = is2 * is2;
  const double c2 = c * c;
  const double cis2 = c * is2;
  const Eigen::Map<const Arr> av(a, n), sv(s, n);
  Arr delta_buf(n), k_buf(n), h_buf(n);
  double off = 0.0;
  // Row i against every j > i, vectorized over j.
  for (Index i = 0; i + 1 < n; ++i) {
    const Index m = n - i - 1;
    const double ai = a[i];
    const double si = s[i];
    const auto aj = av.segment(i + 1, m);
    const auto sj = sv.segment(i + 1, m);
    auto delta = delta_buf.head(m);
    auto k = k_buf.head(m);
    auto h = h_buf.head(m);
    delta = ai - aj;
    k = (-0.5 * is2 * delta.square()).exp();
    h = k * (si * sj + cis2 * (si - sj) * delta + c2 * (is2 - is4 * delta.square()));
    off += h.sum();
    if (accumulate) {
      accumulate->row(i).segment(i + 1, m) += h.matrix().transpose();
      accumulate->col(i).segment(i + 1, m) += h.matrix();
    }
    if constexpr (WantGrad) {
      // h_buf is reused for dh/d(delta).
      h = -is2 * delta * h + k * (cis2 * (si - sj) - (2.0 * c2 * is4) * delta);
      t.d_proj(i) += 2.0 * h.sum();
      t.d_proj.segment(i + 1, m).array() -= 2.0 * h;
      t.d_coupling += 2.0 * (k * (is2 * (si - sj) * delta + 2.0 * c * (is2 - is4 * delta.square()))).sum();
      t.d_score(i) += 2.0 * (k * (sj + cis2 * delta)).sum();
      t.d_score.segment(i + 1, m).array() += 2.0 * k * (si - cis2 * delta);
    }
  }
  t.sum = 2.0 * off;
  if (include_diagonal || accumulate) {
    for (Index i = 0; i < n; ++i) {
      const double h = s[i] * s[i] + c2 * is2;
      if (accumulate) (*accumulate)(i, i) += h;
      if (include_diagonal) {
        t.sum += h;
        if constexpr (WantGrad) {
          t.d_coupling += 2.0 * c * is2;
          t.d_score(i) += 2.0 * s[i];
        }
      }
    }
  }
  return t;
}

}  // namespace detail

/// Sum over slices of the matrices h(x_i, x_j); shared by the U-statistic
/// and every bootstrap draw.
inline Matrix sliced_stein_matrix(const SliceProjections& p) {
  const Index n = p.projected.rows();
  Matrix h = Matrix::Zero(n, n);
  for (Index r = 0; r < p.projected.cols(); ++r) {
    const Vector a = p.projected.col(r);
    const Vector s = p.score_proj.col(r);
    detail::slice_terms<false>(a.data(), s.data(), n, p.coupling(r), p.sigma[static_cast<std::size_t>(r)], false, &h);
  }
  return h;
}

inline DiscrepancyVariant variant_of(const SliceConfig& s) {
  return s.variant == SliceVariant::g_only ? DiscrepancyVariant::maxsksd_g : DiscrepancyVariant::maxsksd_rg;
}

inline DiscrepancyEstimate sliced_estimate(const SliceProjections& p, SliceVariant variant, Statistic stat) {
  const Index n = p.projected.rows();
  require(n >= (stat == Statistic::U ? 2 : 1),
          stat == Statistic::U ? "sksd_ustat: need at least 2 samples" : "sksd_vstat: need at least 1 sample");
  DiscrepancyEstimate est;
  est.variant = variant == SliceVariant::g_only ? DiscrepancyVariant::maxsksd_g : DiscrepancyVariant::maxsksd_rg;
  est.statistic = stat;
  est.samples = n;
  est.bandwidths = p.sigma;
  const double norm = statistic_pairs(stat, n);
  for (Index r = 0; r < p.projected.cols(); ++r) {
    const Vector a = p.projected.col(r);
    const Vector s = p.score_proj.col(r);
    const auto t = detail::slice_terms<false>(a.data(), s.data(), n, p.coupling(r),
                                              p.sigma[static_cast<std::size_t>(r)], stat == Statistic::V, nullptr);
    est.per_slice.push_back(t.sum / norm);
    est.value += t.sum / norm;
  }
  return est;
}

/// Unbiased maxSKSD estimate (diagonal excluded).
inline DiscrepancyEstimate sksd_ustat(const ScoreModel& model, const Matrix& x, const SliceConfig& slices,
                                      const BandwidthPolicy& policy = {}) {
  require(x.rows() >= 2, "sksd_ustat: need at least 2 samples");
  return sliced_estimate(project_slices(x, model.scores(x), slices, policy), slices.variant, Statistic::U);
}

/// Non-negative maxSKSD estimate (diagonal included).
inline DiscrepancyEstimate sksd_vstat(const ScoreModel& model, const Matrix& x, const SliceConfig& slices,
                                      const BandwidthPolicy& policy = {}) {
  require(x.rows() >= 1, "sksd_vstat: need at least 1 sample");
  return sliced_estimate(project_slices(x, model.scores(x), slices, policy), slices.variant, Statistic::V);
}

/// Value of a sliced statistic and its gradients with respect to the
/// directions G, the basis rows r (rg variant only; zero otherwise) and the
/// per-sample scores. Bandwidths are treated as constants.
struct SlicedGradient {
  double value = 0.0;
  Matrix directions;
  Matrix basis;
  Matrix scores;
  std::vector<double> sigma;
};

inline SlicedGradient sliced_gradient(const Matrix& x, const Matrix& scores, const SliceConfig& slices,
                                      const BandwidthPolicy& policy, Statistic stat = Statistic::V) {
  const Index n = x.rows();
  require(n >= (stat == Statistic::U ? 2 : 1), "sliced_gradient: not enough samples");
  const auto p = project_slices(x, scores, slices, policy);
  const double norm = statistic_pairs(stat, n);
  const Index m = slices.slices();
  SlicedGradient out;
  out.directions = Matrix::Zero(m, x.cols());
  out.basis = Matrix::Zero(m, x.cols());
  out.sigma = p.sigma;
  Matrix d_score_proj(n, m);
  for (Index r = 0; r < m; ++r) {
    const Vector a = p.projected.col(r);
    const Vector s = p.score_proj.col(r);
    const auto t = detail::slice_terms<true>(a.data(), s.data(), n, p.coupling(r),
                                             p.sigma[static_cast<std::size_t>(r)], stat == Statistic::V, nullptr);
    out.value += t.sum / norm;
    out.directions.row(r) = (x.transpose() * t.d_proj + t.d_coupling * slices.basis.row(r).transpose()).transpose() / norm;
    if (slices.variant == SliceVariant::rg)
      out.basis.row(r) = (scores.transpose() * t.d_score + t.d_coupling * slices.directions.row(r).transpose()).transpose() / norm;
    d_score_proj.col(r) = t.d_score / norm;
  }
  out.scores = d_score_proj * slices.basis;
  require_finite(out.directions, "grad_wrt_directions");
  require_finite(out.basis, "grad_wrt_directions (basis)");
  return out;
}

/// Gradient of the V-statistic with respect to G (and O_r for rg).
inline SlicedGradient grad_wrt_directions(const ScoreModel& model, const Matrix& x, const SliceConfig& slices,
                                          const BandwidthPolicy& policy = {}) {
  return sliced_gradient(x, model.scores(x), slices, policy, Statistic::V);
}

// ---------------------------------------------------------------------------
// Direction optimization (gradient ascent on the V-statistic).

/// Holds the slices and Adam moments across calls so that samplers and
/// trainers can interleave direction updates with their own steps.
class DirectionOptimizer {
 public:
  DirectionOptimizer(SliceConfig slices, AdamConfig adam, BandwidthPolicy policy = {})
      : slices_(std::move(slices)),
        policy_(policy),
        g_state_(slices_.slices(), slices_.dim(), adam),
        r_state_(slices_.slices(), slices_.dim(), adam) {
    slices_.validate();
  }

  /// One ascent step on samples `x`; returns the V-statistic before the step.
  double step(const ScoreModel& model, const Matrix& x) { return step_with_scores(x, model.scores(x)); }

  double step_with_scores(const Matrix& x, const Matrix& scores) {
    const auto grad = sliced_gradient(x, scores, slices_, policy_, Statistic::V);
    apply(grad);
    return grad.value;
  }

  /// Applies an already computed gradient (ascent).
  /// Adam sees only the tangent part: per-coordinate scaling of the radial
  /// part followed by renormalization pulls rows toward |entries| = 1/sqrt(D).
  void apply(const SlicedGradient& grad) {
    slices_.directions = project_rows_to_sphere(
        slices_.directions + g_state_.step(-tangent_rows(grad.directions, slices_.directions)));
    if (slices_.variant == SliceVariant::rg)
      slices_.basis =
          project_rows_to_sphere(slices_.basis + r_state_.step(-tangent_rows(grad.basis, slices_.basis)));
  }

  const SliceConfig& slices() const { return slices_; }
  const BandwidthPolicy& policy() const { return policy_; }
  long steps() const { return g_state_.steps(); }

 private:
  SliceConfig slices_;
  BandwidthPolicy policy_;
  AdamState g_state_;
  AdamState r_state_;
};

/// Runs `steps` Adam ascent steps from `initial` on training samples.
inline SliceConfig optimize_directions(const ScoreModel& model, const Matrix& train, const SliceConfig& initial,
                                       std::size_t steps, const AdamConfig& adam,
                                       const BandwidthPolicy& policy = {}) {
  DirectionOptimizer opt(initial, adam, policy);
  const Matrix scores = model.scores(train);
  for (std::size_t s = 0; s < steps; ++s) opt.step_with_scores(train, scores);
  return opt.slices();
}

}  // namespace sksd
