#pragma once

#include <stdexcept>

namespace shrinkcov {

/// Base class for recoverable errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class DimensionMismatchError : public Error {
 public:
  using Error::Error;
};

/// A factorization pivot was non-positive; the matrix is not SPD.
class NotPositiveDefiniteError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside its documented domain (p = 0, lambda outside
/// [0, 1], non-finite observation entries, empty input, ...).
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

/// A rank-one inverse update was requested with lambda_next == 1, where
/// the update denominator is undefined.
class DegenerateLambdaError : public Error {
 public:
  using Error::Error;
};

/// A rank-one chain pivot |1 + e_i^T M f_i| fell below tolerance,
/// signalling a near-singular intermediate.
class PivotBlowupError : public Error {
 public:
  using Error::Error;
};

/// An intermediate quantity became non-finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace shrinkcov
