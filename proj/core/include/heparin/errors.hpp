#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace heparin {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class EstimationFailed : public Error {
 public:
  using Error::Error;
};

class PlanningFailed : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Raised when a caller-supplied deadline passes during estimation or planning.
class DeadlineExceeded : public Error {
 public:
  DeadlineExceeded(std::string what, std::string diagnostics)
      : Error(std::move(what)), diagnostics_(std::move(diagnostics)) {}
  const std::string& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::string diagnostics_;
};

/// One problem found while validating an input file, tied to a 1-based line.
struct ValidationIssue {
  std::size_t line = 0;
  std::string message;
};

/// Collects every problem found in a file rather than stopping at the first.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<ValidationIssue> issues);
  const std::vector<ValidationIssue>& issues() const noexcept { return issues_; }

 private:
  std::vector<ValidationIssue> issues_;
};

}  // namespace heparin
