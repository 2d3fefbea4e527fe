#pragma once

#include <stdexcept>
#include <string>

namespace bop {

// Base of every error raised by the library. Subclasses encode the failure
// category so callers (the CLI in particular) can map them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid caller input: bad sizes, out-of-range parameters, dimension mismatch.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Input file unreadable or malformed.
class LoadError : public Error {
 public:
  using Error::Error;
};

class WriteError : public Error {
 public:
  using Error::Error;
};

// Stored artifact is truncated, corrupted, or fails its fingerprint check.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Objects built against different codebooks were combined.
class ComparabilityError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Correlation of a constant series.
class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

// Weighted Kendall reference ranking contains ties.
class UnsupportedTiesError : public Error {
 public:
  using Error::Error;
};

class DegenerateFitError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace bop
