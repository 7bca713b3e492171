#pragma once

#include <stdexcept>
#include <string>

namespace resmimic {

/// Raised when a caller breaks an operation's preconditions (dimension
/// mismatch, non-finite action, out-of-range index).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration. `key` names the offending field when known.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg, std::string key = {})
      : std::runtime_error(key.empty() ? msg : key + ": " + msg), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The simulator or the optimizer produced non-finite numbers.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& msg, double time)
      : std::runtime_error(msg), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

}  // namespace resmimic
