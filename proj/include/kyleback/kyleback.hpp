#pragma once

#include "kyleback/errors.hpp"
#include "kyleback/numerics.hpp"
#include "kyleback/beliefs.hpp"
#include "kyleback/model.hpp"
#include "kyleback/potential.hpp"
#include "kyleback/fixed_point.hpp"
#include "kyleback/pde.hpp"
#include "kyleback/equilibrium.hpp"
#include "kyleback/simulate.hpp"
