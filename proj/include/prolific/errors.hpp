#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace prolific {

/// Input file does not have the expected columns.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input parsed but violates a dataset invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad experiment or simulation configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linear algebra or optimisation failure.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optimiser gave up; carries the best point it saw.
class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, std::vector<double> best, double value)
      : NumericalError(what), best_(std::move(best)), value_(value) {}
  const std::vector<double>& best() const { return best_; }
  double value() const { return value_; }

 private:
  std::vector<double> best_;
  double value_;
};

}  // namespace prolific
