#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace lava {

using Index = Eigen::Index;

/// Dense real matrix, 64-bit floats. Row/column vectors are 1xN / Nx1.
using Matrix = Eigen::MatrixXd;

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// An operation would produce a non-finite value.
class NumericError : public Error {
public:
  using Error::Error;
};

/// Cholesky factorization hit a nonpositive pivot.
class SingularMatrixError : public Error {
public:
  SingularMatrixError(const std::string& msg, Index pivot)
      : Error(msg + " (pivot " + std::to_string(pivot) + ")"), pivot_(pivot) {}
  Index pivot() const { return pivot_; }

private:
  Index pivot_ = -1;
};

/// A caller violated an API precondition.
class ContractError : public Error {
public:
  using Error::Error;
};

/// Bad run configuration (unknown mode, invalid hyperparameter, bad file).
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Malformed external data (CSV schema or cell parse failures).
class IngestionError : public Error {
public:
  using Error::Error;
};

}  // namespace lava
