#pragma once

#include <stdexcept>
#include <string>

namespace jointlti {

// Base of every error raised by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid dimensions, counts or out-of-range parameters.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// A transition matrix with (numerically) zero spectral radius cannot be rescaled.
class DegenerateSystemError : public Error {
 public:
  using Error::Error;
};

// A simulated state became non-finite.
class OverflowError : public Error {
 public:
  using Error::Error;
};

class RankDeficiencyError : public Error {
 public:
  using Error::Error;
};

// Gradient descent produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Input outside the domain of a formula (e.g. spectral radius beyond the allowed budget).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A defective matrix was given without construction metadata for its Jordan form.
class JordanUnavailableError : public Error {
 public:
  using Error::Error;
};

// Data required by an operation was not retained (e.g. simulator noise).
class UnavailableError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace jointlti
