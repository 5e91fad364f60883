#pragma once

#include "mdperc/errors.hpp"
#include "mdperc/rng.hpp"
#include "mdperc/replicas.hpp"
#include "mdperc/lattice.hpp"
#include "mdperc/graphical.hpp"
#include "mdperc/events.hpp"
#include "mdperc/estimators.hpp"
#include "mdperc/exact.hpp"
#include "mdperc/renorm.hpp"
