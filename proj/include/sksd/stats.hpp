#pragma once

#include "sksd/rng.hpp"
#include "sksd/types.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sksd {

/// Kernel length-scale sigma in k(a, b) = exp(-(a - b)^2 / (2 sigma^2)).
class Bandwidth {
 public:
  explicit Bandwidth(double sigma) : sigma_(sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw InvalidArgument("Bandwidth: sigma must be positive and finite, got " + std::to_string(sigma));
  }
  double sigma() const { return sigma_; }

 private:
  double sigma_;
};

/// How per-slice (or per-kernel) bandwidths are chosen.
struct BandwidthPolicy {
  double factor = 1.0;
  /// When set, degenerate inputs get this sigma instead of an error, and
  /// every median-heuristic result is clamped from below to it.
  std::optional<double> floor;
};

inline constexpr double kDefaultBandwidthFloor = 1e-6;

/// Lower median of an unsorted buffer (the buffer is reordered).
inline double lower_median(std::vector<double>& values) {
  require(!values.empty(), "lower_median: empty input");
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

namespace detail {
inline Bandwidth finish_median(double median, double factor, const std::optional<double>& floor) {
  require(factor > 0.0, "median_heuristic: factor must be positive");
  double sigma = factor * median;
  if (floor) {
    return Bandwidth(std::max(sigma, *floor));
  }
  if (!(sigma > 0.0))
    throw DegenerateBandwidth("median_heuristic: median pairwise distance is zero");
  return Bandwidth(sigma);
}
}  // namespace detail

/// sigma = factor * lower median of |v_i - v_j| over i < j.
inline Bandwidth median_heuristic(std::span<const double> values, double factor = 1.0,
                                  std::optional<double> floor = std::nullopt) {
  const std::size_t n = values.size();
  require(n >= 2, "median_heuristic: need at least 2 values");
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dists.push_back(std::abs(values[i] - values[j]));
  return detail::finish_median(lower_median(dists), factor, floor);
}

inline Bandwidth median_heuristic(const Vector& values, double factor = 1.0,
                                  std::optional<double> floor = std::nullopt) {
  return median_heuristic(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())),
                          factor, floor);
}

inline Bandwidth median_heuristic(const Vector& values, const BandwidthPolicy& policy) {
  return median_heuristic(values, policy.factor, policy.floor);
}

/// Squared Euclidean distances between all rows of `x`.
inline Matrix pairwise_sq_distances(const Matrix& x) {
  const Vector norms = x.rowwise().squaredNorm();
  Matrix d2 = (-2.0 * x * x.transpose()).eval();
  d2.colwise() += norms;
  d2.rowwise() += norms.transpose();
  return d2.cwiseMax(0.0);
}

/// Multivariate median heuristic: factor * lower median of row distances.
inline Bandwidth median_heuristic_rows(const Matrix& x, const BandwidthPolicy& policy) {
  const Index n = x.rows();
  require(n >= 2, "median_heuristic_rows: need at least 2 rows");
  const Matrix d2 = pairwise_sq_distances(x);
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) dists.push_back(std::sqrt(d2(i, j)));
  return detail::finish_median(lower_median(dists), policy.factor, policy.floor);
}

/// Multinomial(n; 1/n, ..., 1/n) counts divided by n.
inline Vector multinomial_bootstrap_weights(std::size_t n, Rng& rng) {
  require(n >= 1, "multinomial_bootstrap_weights: n must be at least 1");
  Vector w = Vector::Zero(static_cast<Index>(n));
  for (std::size_t k = 0; k < n; ++k) w(static_cast<Index>(rng.below(n))) += 1.0;
  return w / static_cast<double>(n);
}

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Unbiased sample variance.
inline double variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double standard_error(std::span<const double> v) {
  return v.size() < 2 ? 0.0 : std::sqrt(variance(v) / static_cast<double>(v.size()));
}

/// Average over columns of the unbiased per-column variance.
inline double average_variance(const Matrix& x) {
  if (x.rows() < 2) return 0.0;
  const Matrix centered = x.rowwise() - x.colwise().mean();
  return centered.squaredNorm() / static_cast<double>((x.rows() - 1) * x.cols());
}

/// One-sample Kolmogorov-Smirnov statistic against Uniform(0, 1).
inline double ks_uniform_statistic(std::vector<double> values) {
  require(!values.empty(), "ks_uniform_statistic: empty input");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double u = std::clamp(values[i], 0.0, 1.0);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - u, u - static_cast<double>(i) / n});
  }
  return d;
}

/// Asymptotic KS critical value at level 0.01 (Smirnov approximation).
inline double ks_critical_value_1pct(std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  return 1.6276 / (sn + 0.12 + 0.11 / sn);
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, "spearman: need two equal-length samples");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double ma = mean(ra), mb = mean(rb);
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(da * db);
}

}  // namespace sksd
