#pragma once

#include <stdexcept>
#include <string>

namespace search_nne {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can separate validation failures from runtime failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, schema violations, unusable datasets.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// A binary response that is all zeros or all ones.
class DegenerateResponse : public Error {
 public:
  using Error::Error;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, long line)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

class IncompatibleArtifact : public Error {
 public:
  using Error::Error;
};

class CorruptArtifact : public Error {
 public:
  using Error::Error;
};

}  // namespace search_nne
