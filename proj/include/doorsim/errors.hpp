#pragma once

#include <stdexcept>
#include <string>

namespace doorsim {

/// Base for all project errors. `kind()` is a stable token the CLI maps to
/// an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// Malformed file: missing key, wrong type, or value outside its range.
class SchemaError : public Error {
 public:
  SchemaError(std::string field, const std::string& what)
      : Error("field '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }
  const char* kind() const noexcept override { return "schema"; }

 private:
  std::string field_;
};

class VersionError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "version"; }
};

class IoError : public Error {
 public:
  IoError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }
  const char* kind() const noexcept override { return "io"; }

 private:
  std::string path_;
};

/// A simulated quantity became non-finite.
class NumericalBlowup : public Error {
 public:
  NumericalBlowup(std::string quantity, const std::string& context)
      : Error("non-finite " + quantity + (context.empty() ? "" : " (" + context + ")")),
        quantity_(std::move(quantity)) {}
  const std::string& quantity() const noexcept { return quantity_; }
  const char* kind() const noexcept override { return "numerical"; }

 private:
  std::string quantity_;
};

/// Caller broke an operation precondition (shape mismatch, stepping a
/// finished episode, sampling an undersized buffer, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "contract"; }
};

}  // namespace doorsim
