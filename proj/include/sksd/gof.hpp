#pragma once

#include "sksd/kernel.hpp"
#include "sksd/rng.hpp"
#include "sksd/sliced.hpp"
#include "sksd/stats.hpp"

#include <vector>

namespace sksd {

/// Bootstrap draws sum_{i != j} (w_i - 1/N)(w_j - 1/N) H_ij with multinomial
/// weights w. Each draw is v'Hv - sum_i v_i^2 H_ii for v = w - 1/N.
inline std::vector<double> bootstrap_null_samples(const Matrix& h, std::size_t draws, Rng& rng) {
  require(h.rows() == h.cols(), "bootstrap_null_samples: H must be square");
  require(draws >= 1, "bootstrap_null_samples: need at least one draw");
  const Index n = h.rows();
  const std::size_t n_u = static_cast<std::size_t>(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  const Vector diag = h.diagonal();
  std::vector<double> out;
  out.reserve(draws);
  // Batched so the quadratic forms go through one matrix product.
  constexpr std::size_t kBatch = 128;
  for (std::size_t start = 0; start < draws; start += kBatch) {
    const std::size_t count = std::min(kBatch, draws - start);
    Matrix v(n, static_cast<Index>(count));
    for (std::size_t m = 0; m < count; ++m)
      v.col(static_cast<Index>(m)) = multinomial_bootstrap_weights(n_u, rng).array() - inv_n;
    const Matrix hv = h * v;
    for (std::size_t m = 0; m < count; ++m) {
      const auto col = v.col(static_cast<Index>(m));
      out.push_back(col.dot(hv.col(static_cast<Index>(m))) - col.cwiseAbs2().dot(diag));
    }
  }
  return out;
}

struct GofOutcome {
  double statistic = 0.0;
  std::vector<double> bootstrap_samples;
  double p_value = 1.0;
  bool reject = false;
  double alpha = 0.05;
  DiscrepancyVariant variant = DiscrepancyVariant::ksd;
  std::vector<double> bandwidths;
  Index samples = 0;
};

/// p = #{bootstrap > statistic} / M (strict inequality), reject iff p < alpha.
inline GofOutcome decide(double statistic, std::vector<double> bootstrap, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "gof: alpha must lie in (0, 1)");
  require(!bootstrap.empty(), "gof: need at least one bootstrap sample");
  std::size_t exceed = 0;
  for (double b : bootstrap) exceed += b > statistic ? 1 : 0;
  GofOutcome out;
  out.statistic = statistic;
  out.p_value = static_cast<double>(exceed) / static_cast<double>(bootstrap.size());
  out.reject = out.p_value < alpha;
  out.alpha = alpha;
  out.bootstrap_samples = std::move(bootstrap);
  return out;
}

/// Test from a precomputed Stein matrix: U-statistic plus bootstrap.
inline GofOutcome gof_from_matrix(const Matrix& h, double alpha, std::size_t bootstrap, Rng& rng) {
  require(h.rows() >= 2, "gof_test: need at least 2 test samples");
  require(bootstrap >= 1, "gof_test: bootstrap count M must be at least 1");
  const double n = static_cast<double>(h.rows());
  const double stat = (h.sum() - h.trace()) / (n * (n - 1.0));
  auto out = decide(stat, bootstrap_null_samples(h, bootstrap, rng), alpha);
  out.samples = h.rows();
  return out;
}

/// Bootstrap goodness-of-fit test with maxSKSD U-statistics. `slices` must
/// already be fitted on data disjoint from `test`.
inline GofOutcome gof_test(const ScoreModel& model, const Matrix& test, const SliceConfig& slices, double alpha,
                           std::size_t bootstrap, Rng& rng, const BandwidthPolicy& policy = {}) {
  require(bootstrap >= 1, "gof_test: bootstrap count M must be at least 1");
  require(test.rows() >= 2, "gof_test: need at least 2 test samples");
  const auto proj = project_slices(test, model.scores(test), slices, policy);
  auto out = gof_from_matrix(sliced_stein_matrix(proj), alpha, bootstrap, rng);
  out.variant = variant_of(slices);
  out.bandwidths = proj.sigma;
  return out;
}

/// Same test with the multivariate-kernel KSD.
inline GofOutcome ksd_gof_test(const ScoreModel& model, const Matrix& test, double alpha, std::size_t bootstrap,
                               Rng& rng, const BandwidthPolicy& policy = {}) {
  require(bootstrap >= 1, "gof_test: bootstrap count M must be at least 1");
  require(test.rows() >= 2, "gof_test: need at least 2 test samples");
  const double sigma = median_heuristic_rows(test, policy).sigma();
  auto out = gof_from_matrix(ksd_stein_matrix(test, model.scores(test), sigma), alpha, bootstrap, rng);
  out.variant = DiscrepancyVariant::ksd;
  out.bandwidths = {sigma};
  return out;
}

}  // namespace sksd
