#pragma once

#include "sksd/types.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace sksd {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam moments for one parameter block. step() consumes a gradient of the
/// loss being minimized and returns the additive parameter change; pass the
/// negated gradient to ascend.
class AdamState {
 public:
  AdamState() = default;
  AdamState(Index rows, Index cols, AdamConfig config = {})
      : config_(config), m_(Matrix::Zero(rows, cols)), v_(Matrix::Zero(rows, cols)) {}

  Matrix step(const Matrix& gradient) {
    require(gradient.rows() == m_.rows() && gradient.cols() == m_.cols(),
            "AdamState::step: gradient shape " + std::to_string(gradient.rows()) + "x" +
                std::to_string(gradient.cols()) + " does not match state " + std::to_string(m_.rows()) + "x" +
                std::to_string(m_.cols()));
    require_finite(gradient, "AdamState::step gradient");
    ++steps_;
    m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * gradient;
    v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * gradient.cwiseProduct(gradient);
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    const Matrix m_hat = m_ / c1;
    const Matrix v_hat = v_ / c2;
    return -config_.learning_rate * m_hat.cwiseQuotient((v_hat.array().sqrt() + config_.epsilon).matrix());
  }

  long steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  const Matrix& first_moment() const { return m_; }
  const Matrix& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  Matrix m_;
  Matrix v_;
  long steps_ = 0;
};

/// Divides each row by its Euclidean norm.
inline Matrix project_rows_to_sphere(const Matrix& rows) {
  Matrix out(rows.rows(), rows.cols());
  for (Index i = 0; i < rows.rows(); ++i) {
    const double norm = rows.row(i).norm();
    if (!(norm > 0.0) || !std::isfinite(norm))
      throw InvalidArgument("project_rows_to_sphere: row " + std::to_string(i) + " has zero or non-finite norm");
    out.row(i) = rows.row(i) / norm;
  }
  return out;
}

/// Drops the component of each gradient row along the matching unit row:
/// the gradient of the objective evaluated at rows/|rows|.
inline Matrix tangent_rows(const Matrix& grad, const Matrix& unit_rows) {
  return grad - (grad.cwiseProduct(unit_rows).rowwise().sum()).asDiagonal() * unit_rows;
}

/// Row i in {0..D-1} is the i-th standard basis vector.
inline Matrix one_hot_basis(Index dim) { return Matrix::Identity(dim, dim); }

/// 2-norm condition number via singular values.
inline double condition_number(const Matrix& a) {
  Eigen::JacobiSVD<Matrix> svd(a);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(s.size() - 1) == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / s(s.size() - 1);
}

}  // namespace sksd
