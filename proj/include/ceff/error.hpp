#pragma once

#include <stdexcept>
#include <string>

namespace ceff {

// Base of every error raised by the library. The category decides the CLI
// exit code (see cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input outside the mathematical domain of an operation (x outside the
// support, 1/x at zero, beta-prime shape <= 2, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent user data (CSV schema, ragged rows, non-finite
// entries, inadmissible v for the observed exposure).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Bad parameters for an operation that are neither data nor math errors.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A quantity that must be bounded away from zero is not: Cov{v(X),X|Z} = 0,
// an estimator denominator, a degenerate optimal-weighting profile.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// The transform produced a function that is not a probability density.
class NotADensityError : public DegenerateError {
 public:
  using DegenerateError::DegenerateError;
};

class NoClosedFormError : public Error {
 public:
  using Error::Error;
};

class UnsupportedDistributionError : public Error {
 public:
  using Error::Error;
};

class SingularFitError : public DegenerateError {
 public:
  using DegenerateError::DegenerateError;
};

class FoldError : public Error {
 public:
  using Error::Error;
};

}  // namespace ceff
