#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>

namespace disent {

/// Invalid configuration: shapes, unknown tags, bad hyperparameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated an operation's precondition on its inputs.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse, e.g. a non-scalar loss handed to the gradient routine.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed external file. `line()` is 1-based, 0 when not line-specific.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t line)
      : std::runtime_error(line == 0 ? message
                                     : "line " + std::to_string(line) + ": " + message),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Numerical failure during an optimization run: non-finite loss or gradient.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& message, long step,
                   std::map<std::string, double> terms = {})
      : std::runtime_error(message), step_(step), terms_(std::move(terms)) {}
  long step() const { return step_; }
  const std::map<std::string, double>& terms() const { return terms_; }

 private:
  long step_;
  std::map<std::string, double> terms_;
};

}  // namespace disent
