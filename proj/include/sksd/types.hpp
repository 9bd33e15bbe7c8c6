#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace sksd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// All candidate distances were zero, so no positive bandwidth exists.
class DegenerateBandwidth : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or infinity.
class NonFinite : public Error {
 public:
  using Error::Error;
};

/// A matrix that must be invertible was (numerically) singular.
class SingularMatrix : public Error {
 public:
  using Error::Error;
};

/// A sampler or optimizer diverged.
class Diverged : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

/// Throws NonFinite naming the first offending flat index.
template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& values, const std::string& what) {
  for (Index j = 0; j < values.cols(); ++j) {
    for (Index i = 0; i < values.rows(); ++i) {
      if (!std::isfinite(values(i, j))) {
        throw NonFinite(what + ": non-finite value at index (" + std::to_string(i) + ", " +
                        std::to_string(j) + ")");
      }
    }
  }
}

}  // namespace sksd
