#pragma once

#include <stdexcept>
#include <string>

namespace fedplatoon {

// Non-positive time constants, zero normalizers, out-of-range coefficients.
class InvalidParameter : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN or infinite values reaching a numeric kernel.
class NumericDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Tensor or vector arities that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Batch norm in train mode needs at least two samples.
class InvalidBatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A backward pass handed a cache that does not belong to the parameters.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A federated round closed while a participant had not submitted.
class SyncError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint files that are missing, truncated or shaped for another network.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Experiment configuration problems. `line` is 1-based, 0 when unknown.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace fedplatoon
