#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace levy {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A structural identity (involution, symmetry, skewness) does not hold.
class StructuralError : public Error {
public:
  using Error::Error;
};

class DimensionError : public Error {
public:
  using Error::Error;
};

/// Rank deficiency where full rank is required, or a Gram-Schmidt collapse.
class RankError : public Error {
public:
  RankError(const std::string& what, std::size_t index = 0)
      : Error(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

private:
  std::size_t index_;
};

/// Inputs are valid but too far apart for a near-identity factorization.
class ClosenessError : public Error {
public:
  using Error::Error;
};

/// Non-finite state or a failed accuracy check during integration.
class NumericalError : public Error {
public:
  NumericalError(const std::string& what, double time = 0.0)
      : Error(what), time_(time) {}
  double time() const noexcept { return time_; }

private:
  double time_;
};

/// An equivariance check failed; carries the worst offending sample point.
class SymmetryError : public StructuralError {
public:
  SymmetryError(const std::string& what, std::vector<double> point, double residual)
      : StructuralError(what), point_(std::move(point)), residual_(residual) {}
  const std::vector<double>& point() const noexcept { return point_; }
  double residual() const noexcept { return residual_; }

private:
  std::vector<double> point_;
  double residual_;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

}  // namespace levy
