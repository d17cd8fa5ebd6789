#pragma once

#include <stdexcept>
#include <string>

namespace kyleback {

/// Base class for every error raised by the solver.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the domain of an operation (quantile at 0, r >= t, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The slope budget gamma * sigma^2 * T * l_cap is violated, or an iterate
/// leaves the admissible class.
class BudgetViolation : public Error {
 public:
  using Error::Error;
};

/// A 1-D minimization could not bracket a sign change of the derivative.
class ConvexityError : public Error {
 public:
  using Error::Error;
};

class NonConvergence : public Error {
 public:
  using Error::Error;
};

/// The spatial grid does not carry enough of the probability mass.
class GridCoverageError : public Error {
 public:
  using Error::Error;
};

/// An assembled surface breaks one of its structural bounds or identities.
class AssemblyError : public Error {
 public:
  using Error::Error;
};

class StabilityError : public Error {
 public:
  using Error::Error;
};

/// Too many simulated steps left the spatial grid and had to be clamped.
class GridExitError : public Error {
 public:
  using Error::Error;
};

}  // namespace kyleback
