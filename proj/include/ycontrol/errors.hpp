#pragma once

#include <stdexcept>
#include <string>

namespace ycontrol {

// Broad failure classes. The CLI maps these onto exit codes.
enum class ErrorKind {
  kUsage,          // bad arguments or out-of-range indices
  kConfiguration,  // inconsistent configuration (grids, files, keys)
  kNumeric,        // non-finite values, quadrature failure, escapes
  kInfeasible,     // no admissible control satisfies the constraints
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what)
      : Error(ErrorKind::kUsage, what) {}
};

class ConfigurationError : public Error {
 public:
  explicit ConfigurationError(const std::string& what)
      : Error(ErrorKind::kConfiguration, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorKind::kNumeric, what) {}
};

class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& what, double best_residual)
      : Error(ErrorKind::kInfeasible, what), best_residual_(best_residual) {}

  double best_residual() const noexcept { return best_residual_; }

 private:
  double best_residual_;
};

// A trajectory (or a propagated mean) left the declared state box.
class EscapeError : public NumericError {
 public:
  EscapeError(const std::string& what, double time)
      : NumericError(what), time_(time) {}

  double time() const noexcept { return time_; }

 private:
  double time_;
};

}  // namespace ycontrol
