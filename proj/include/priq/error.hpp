#pragma once

#include <stdexcept>
#include <string>

namespace priq {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent tensor shapes, ranks or axes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a forward op, diverging loss or an undefined metric.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Correlation of a zero-variance vector.
class UndefinedMetricError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Misuse of the differentiation tape.
class TapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values or unknown keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File system failures, corrupt or incompatible files.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace priq
