#pragma once

#include <cmath>
#include <sstream>

#include "kyleback/errors.hpp"

namespace kyleback {

/// Market constants and the Lipschitz cap of the admissible maps.
struct ModelParams {
  double T = 1.0;
  double sigma = 0.5;
  double gamma = 0.1;
  double l_cap = 4.0;

  /// sigma^2 T, the variance of the noise order flow at the horizon.
  [[nodiscard]] double s2() const noexcept { return sigma * sigma * T; }

  /// gamma sigma^2 T l_cap. Must stay below 1 for the pricing PDE and below
  /// 1/2 for the stochastic representation of the initial state.
  [[nodiscard]] double budget() const noexcept { return gamma * sigma * sigma * T * l_cap; }

  /// Lower bound 1 - gamma sigma^2 T l_cap of d chi / d xi.
  [[nodiscard]] double chi_xi_floor() const noexcept { return 1.0 - budget(); }

  void validate() const {
    if (!(T > 0.0) || !std::isfinite(T)) throw DomainError("model: T must be positive");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("model: sigma must be positive");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw DomainError("model: gamma must be nonnegative");
    if (!(l_cap > 0.0)) throw DomainError("model: l_cap must be positive");
    if (!(budget() < 1.0)) {
      std::ostringstream os;
      os << "slope budget violated: gamma*sigma^2*T*l_cap = " << budget()
         << " must be < 1 (gamma=" << gamma << ", sigma=" << sigma << ", T=" << T << ", l_cap=" << l_cap
         << "); lower gamma or the slope cap";
      throw BudgetViolation(os.str());
    }
  }

  void validate_representation() const {
    validate();
    if (!(budget() < 0.5)) {
      std::ostringstream os;
      os << "slope budget violated: gamma*sigma^2*T*l_cap = " << budget()
         << " must be < 1/2 for the initial-state representation";
      throw BudgetViolation(os.str());
    }
  }
};

}  // namespace kyleback
