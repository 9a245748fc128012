#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "tnnfrac/errors.hpp"

namespace tnnfrac {

/// Natural logarithm of Γ(x) for x > 0.
inline double log_gamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError("log_gamma: argument must be positive and finite, got " + std::to_string(x));
  }
  return std::lgamma(x);
}

/// Γ(x) for any real x that is not a non-positive integer.
inline double gamma(double x) {
  if (!std::isfinite(x)) throw DomainError("gamma: non-finite argument");
  if (x > 0.0) return std::exp(log_gamma(x));
  if (x == std::floor(x)) {
    throw DomainError("gamma: pole at non-positive integer " + std::to_string(x));
  }
  // Reflection: Γ(x)Γ(1−x) = π / sin(πx).
  return std::numbers::pi / (std::sin(std::numbers::pi * x) * std::exp(log_gamma(1.0 - x)));
}

/// Euler Beta function B(a, b) = Γ(a)Γ(b)/Γ(a+b), a, b > 0.
inline double beta_function(double a, double b) {
  return std::exp(log_gamma(a) + log_gamma(b) - log_gamma(a + b));
}

}  // namespace tnnfrac
