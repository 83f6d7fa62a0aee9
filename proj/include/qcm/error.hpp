#pragma once

#include <stdexcept>
#include <string>

namespace qcm {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (e.g. B <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller passed inconsistent objects (dimension mismatch, index out of range).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Invalid or unreadable configuration / input file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Requested work exceeds the configured proposal budget.
class BudgetError : public Error {
 public:
  using Error::Error;
};

/// Integration blew up, a fit cannot proceed, a peak sits on the grid edge...
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, truncated or version-mismatched checkpoint.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

inline constexpr const char* kVersion = "qcm 1.0.0";

}  // namespace qcm
