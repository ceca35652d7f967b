#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mrirest {

// Operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A scalar or configuration parameter is outside its valid range.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke an API contract (e.g. backward on a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A metric is mathematically undefined for the given inputs.
class UndefinedError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint does not match the model described by its configuration.
class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ComparisonError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteGradientError : public std::runtime_error {
 public:
  explicit NonFiniteGradientError(std::string parameter)
      : std::runtime_error("non-finite gradient for parameter '" + parameter + "'"),
        parameter_(std::move(parameter)) {}
  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::string parameter_;
};

// The unrolled cascade produced non-finite k-space.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(int iteration)
      : std::runtime_error("cascade diverged at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

}  // namespace mrirest
