#pragma once

#include "fbsvi/error.hpp"
#include "fbsvi/extended_real.hpp"
#include "fbsvi/convex.hpp"
#include "fbsvi/rng.hpp"
#include "fbsvi/parallel.hpp"
#include "fbsvi/problem.hpp"
#include "fbsvi/presets.hpp"
#include "fbsvi/constants.hpp"
#include "fbsvi/forward.hpp"
#include "fbsvi/regression.hpp"
#include "fbsvi/solver.hpp"
#include "fbsvi/pde.hpp"
#include "fbsvi/io.hpp"
#include "fbsvi/config.hpp"
#include "fbsvi/runner.hpp"
