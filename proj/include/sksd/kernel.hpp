#pragma once

#include "sksd/stats.hpp"
#include "sksd/targets.hpp"
#include "sksd/types.hpp"

#include <cmath>

namespace sksd {

/// k(a, b) = exp(-(a - b)^2 / (2 sigma^2)) and its first and mixed derivatives.
struct Rbf1d {
  double k;
  double dk_da;
  double dk_db;
  double d2k_dadb;
};

inline Rbf1d rbf_1d(double a, double b, double sigma) {
  require(sigma > 0.0, "rbf_1d: sigma must be positive");
  const double inv_s2 = 1.0 / (sigma * sigma);
  const double diff = a - b;
  const double k = std::exp(-0.5 * diff * diff * inv_s2);
  const double dk_da = -diff * inv_s2 * k;
  return {k, dk_da, -dk_da, (inv_s2 - diff * diff * inv_s2 * inv_s2) * k};
}

enum class Statistic { U, V };

/// Normalizing count of the statistic over n samples.
inline double statistic_pairs(Statistic stat, Index n) {
  const double nn = static_cast<double>(n);
  return stat == Statistic::U ? nn * (nn - 1.0) : nn * nn;
}

// ---------------------------------------------------------------------------
// Kernelized Stein discrepancy with the multivariate RBF kernel.

/// u_p(x, y) for k(x, y) = exp(-|x - y|^2 / (2 sigma^2)).
inline double ksd_up(const ScoreModel& model, const Vector& x, const Vector& y, double sigma) {
  require(sigma > 0.0, "ksd_up: sigma must be positive");
  const Vector sx = model.score(x);
  const Vector sy = model.score(y);
  const double inv_s2 = 1.0 / (sigma * sigma);
  const Vector diff = x - y;
  const double r2 = diff.squaredNorm();
  const double k = std::exp(-0.5 * r2 * inv_s2);
  const double d = static_cast<double>(x.size());
  // grad_y k = (x - y) k / s^2, grad_x k = -(x - y) k / s^2.
  return k * (sx.dot(sy) + (sx - sy).dot(diff) * inv_s2 + d * inv_s2 - r2 * inv_s2 * inv_s2);
}

/// Matrix of u_p(x_i, x_j) from precomputed scores.
inline Matrix ksd_stein_matrix(const Matrix& x, const Matrix& scores, double sigma) {
  const double inv_s2 = 1.0 / (sigma * sigma);
  const double d = static_cast<double>(x.cols());
  const Matrix d2 = pairwise_sq_distances(x);
  const Matrix sx = scores * x.transpose();  // (i, j) = s_i . x_j
  const Vector sxd = sx.diagonal();
  Matrix cross = -sx - sx.transpose();
  cross.colwise() += sxd;
  cross.rowwise() += sxd.transpose();  // (s_i - s_j) . (x_i - x_j)
  const Matrix k = (-0.5 * inv_s2 * d2).array().exp().matrix();
  const Matrix inner = scores * scores.transpose() + inv_s2 * cross +
                       (d * inv_s2 - inv_s2 * inv_s2 * d2.array()).matrix();
  return k.cwiseProduct(inner);
}

enum class DiscrepancyVariant { ksd, maxsksd_g, maxsksd_rg };

inline std::string to_string(DiscrepancyVariant v) {
  switch (v) {
    case DiscrepancyVariant::ksd: return "ksd";
    case DiscrepancyVariant::maxsksd_g: return "maxsksd-g";
    case DiscrepancyVariant::maxsksd_rg: return "maxsksd-rg";
  }
  return "?";
}

inline DiscrepancyVariant variant_from_string(const std::string& s) {
  if (s == "ksd") return DiscrepancyVariant::ksd;
  if (s == "maxsksd-g") return DiscrepancyVariant::maxsksd_g;
  if (s == "maxsksd-rg") return DiscrepancyVariant::maxsksd_rg;
  throw InvalidArgument("unknown method '" + s + "' (expected ksd, maxsksd-g or maxsksd-rg)");
}

struct DiscrepancyEstimate {
  double value = 0.0;
  DiscrepancyVariant variant = DiscrepancyVariant::ksd;
  Statistic statistic = Statistic::U;
  /// One entry per slice; a single entry for KSD.
  std::vector<double> per_slice;
  std::vector<double> bandwidths;
  Index samples = 0;
};

/// KSD U- or V-statistic; sigma = factor * median pairwise distance.
inline DiscrepancyEstimate ksd_estimate(const ScoreModel& model, const Matrix& x, Statistic stat,
                                        const BandwidthPolicy& policy = {}) {
  const Index n = x.rows();
  require(n >= (stat == Statistic::U ? 2 : 1), "ksd_estimate: not enough samples");
  const double sigma = n >= 2 ? median_heuristic_rows(x, policy).sigma() : 1.0;
  const Matrix u = ksd_stein_matrix(x, model.scores(x), sigma);
  double total = u.sum();
  if (stat == Statistic::U) total -= u.trace();
  const double value = total / statistic_pairs(stat, n);
  return {value, DiscrepancyVariant::ksd, stat, {value}, {sigma}, n};
}

}  // namespace sksd
