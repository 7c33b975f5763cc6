#pragma once

#include <stdexcept>
#include <string>

namespace symdyn {

// Base class for all recoverable analysis errors. Pipeline stages catch these
// per patient and turn them into exclusion records instead of aborting a run.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed or contract-violating input (bad CSV row, out-of-range item, ...).
class ValidationError : public Error {
public:
  using Error::Error;
};

// Too few observations / transitions / complete cases for the requested op.
class InsufficientDataError : public Error {
public:
  using Error::Error;
};

// Input with no usable variance (constant series, all-constant items).
class DegenerateInputError : public Error {
public:
  using Error::Error;
};

// Correlation-type matrix that stays singular after the maximum allowed ridge.
class NonInvertibleError : public Error {
public:
  using Error::Error;
};

// Two-point boundary-value solve failed (rank-deficient block or residual
// above tolerance). This is the patient-exclusion mechanism for energies.
class NonConvergentError : public Error {
public:
  using Error::Error;
};

// Non-finite values encountered while integrating a trajectory.
class NumericalOverflowError : public Error {
public:
  using Error::Error;
};

// Controllability Gramian condition number above the configured threshold.
class IllConditionedError : public Error {
public:
  using Error::Error;
};

// Target state unreachable with the given input matrix.
class InfeasibleError : public Error {
public:
  using Error::Error;
};

// Correlation undefined (a variable is constant after rank transform).
class UndefinedCorrelationError : public Error {
public:
  using Error::Error;
};

// Rank-deficient design matrix; message names the offending columns.
class CollinearityError : public Error {
public:
  using Error::Error;
};

}  // namespace symdyn
