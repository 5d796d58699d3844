#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace ltcil {

/// Argument whose shape or value violates an operation's precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Cross-field or parameter constraint violated by a configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Weighted batch whose weights sum to zero.
class DegenerateBatch : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Query against a state that has no defined answer yet (e.g. entropy of nothing).
class UndefinedState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient during training. Carries a JSON dump of the
/// trainer state at the failing step.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::string diagnostic)
      : std::runtime_error(what), diagnostic_(std::move(diagnostic)) {}

  const std::string& diagnostic() const noexcept { return diagnostic_; }

 private:
  std::string diagnostic_;
};

}  // namespace ltcil
