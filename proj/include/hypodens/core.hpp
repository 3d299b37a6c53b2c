#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hypodens {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Error hierarchy. Every failure the library reports derives from Error so
// that callers (the CLI in particular) can map categories to exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
public:
  using Error::Error;
};

/// A model callback produced a non-finite value.
class EvaluationError : public Error {
public:
  EvaluationError(const std::string& what, int field, double t, Vector x)
      : Error(what), field_(field), t_(t), x_(std::move(x)) {}
  int field() const { return field_; }
  double time() const { return t_; }
  const Vector& point() const { return x_; }

private:
  int field_;
  double t_;
  Vector x_;
};

/// A matrix that has to have full row rank does not.
class DegeneracyError : public Error {
public:
  DegeneracyError(const std::string& what, double lambda_min)
      : Error(what), lambda_min_(lambda_min) {}
  double lambda_min() const { return lambda_min_; }

private:
  double lambda_min_;
};

class DomainError : public Error {
public:
  using Error::Error;
};

class ConvergenceError : public Error {
public:
  using Error::Error;
};

/// The SDE state left the finite range.
class BlowUpError : public Error {
public:
  BlowUpError(const std::string& what, std::size_t index)
      : Error(what), index_(index) {}
  std::size_t grid_index() const { return index_; }

private:
  std::size_t index_;
};

class AccuracyError : public Error {
public:
  using Error::Error;
};

class CapabilityError : public Error {
public:
  using Error::Error;
};

class DecompositionError : public Error {
public:
  using Error::Error;
};

class DataQualityError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline std::string format_vector(const Vector& v) {
  std::ostringstream os;
  os << '(';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  os << ')';
  return os.str();
}

}  // namespace hypodens
