#pragma once

#include <stdexcept>
#include <string>

namespace mergexai {

// Error categories map onto the CLI exit codes: configuration problems (2),
// bad or inconsistent input data (3) and numeric faults (4). Violated
// preconditions of library calls are programming errors and throw
// ContractViolation.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  ParseError(std::size_t row, const std::string& what)
      : DataError("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace mergexai
