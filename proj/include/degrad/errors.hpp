#pragma once

#include <stdexcept>
#include <string>

namespace degrad {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid argument values (dimensions, ranges, weight sums, probabilities).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A step size (or step-size schedule) outside the admissible regime.
// Carries the violated threshold in the message.
class StepSizeError : public Error {
 public:
  using Error::Error;
};

// A weight matrix violating a structural requirement
// (asymmetry, bad row sums, disconnected support).
class ValidityError : public Error {
 public:
  using Error::Error;
};

// Eigensolver non-convergence, singular linear systems.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Iteration caps exceeded.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// An objective whose strong-convexity certificate cannot be established.
class DegenerateObjectiveError : public Error {
 public:
  using Error::Error;
};

// Observed gradient differences incompatible with the certified (mu, L).
class CertificationError : public Error {
 public:
  using Error::Error;
};

// A requested capability the object does not provide (e.g. no sampler).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// Malformed experiment configuration or I/O failure.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace degrad
