#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace odenet {

/// Precondition or shape violation in a caller-supplied argument.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation (e.g. s outside [0, 1]).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A residual chain or sweep produced a non-finite or exploding state.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t layer, const std::string& what)
      : std::runtime_error("divergence at layer " + std::to_string(layer) + ": " + what),
        layer_(layer) {}

  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

/// A statistic that is not defined for the given input (e.g. smoothness of a depth-1 schedule).
class UndefinedStatistic : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The gradient-flow integrator detected a loss increase; the step is too large.
class StepSizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A scalar function evaluation returned NaN or Inf.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace odenet
