#pragma once

#include <stdexcept>
#include <string>

namespace holderpo {

// Raised when an input violates a documented precondition or type invariant.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid configuration input; field() is the dotted path of the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field.empty() ? message : field + ": " + message),
        field_(std::move(field)) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Raised by the training loop when a sequence ratio leaves the sane range.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long update_step, double log_rho)
      : std::runtime_error(what), update_step_(update_step), log_rho_(log_rho) {}

  long update_step() const { return update_step_; }
  double log_rho() const { return log_rho_; }

 private:
  long update_step_;
  double log_rho_;
};

}  // namespace holderpo
