#pragma once

#include <stdexcept>
#include <string>

namespace ensgcv {

enum class ErrorKind {
  invalid_parameter,
  invalid_data,
  singular_covariance,
  excluded_boundary,
  divergent_variance,
  no_convergence,
  undefined_oob,
  extrapolation_undefined,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_parameter: return "invalid-parameter";
    case ErrorKind::invalid_data: return "invalid-data";
    case ErrorKind::singular_covariance: return "singular-covariance";
    case ErrorKind::excluded_boundary: return "excluded-boundary";
    case ErrorKind::divergent_variance: return "divergent-variance";
    case ErrorKind::no_convergence: return "no-convergence";
    case ErrorKind::undefined_oob: return "undefined-oob";
    case ErrorKind::extrapolation_undefined: return "extrapolation-undefined";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised by the fixed-point solver; carries the last bracket.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double lo, double hi)
      : Error(ErrorKind::no_convergence, what), lo_(lo), hi_(hi) {}

  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }

 private:
  double lo_;
  double hi_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace ensgcv
