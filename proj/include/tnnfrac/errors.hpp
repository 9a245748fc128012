#pragma once

#include <stdexcept>
#include <string>

namespace tnnfrac {

/// Input outside the mathematical domain of an operation (pole of Γ, α ≤ −1, ...).
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// Non-finite intermediate or failed iterative computation.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// A normalization constant or linear system collapsed to zero.
class DegenerateError : public std::runtime_error {
 public:
  explicit DegenerateError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid or unsupported configuration (bad keys, unsupported kernel, ...).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Unknown identifier in a registry.
class LookupError : public std::out_of_range {
 public:
  explicit LookupError(const std::string& what) : std::out_of_range(what) {}
};

}  // namespace tnnfrac
