#pragma once

// Umbrella header: the full pipeline in dependency order.

#include "trex/rng.hpp"
#include "trex/errors.hpp"
#include "trex/geometry.hpp"
#include "trex/json_io.hpp"
#include "trex/representation.hpp"
#include "trex/scene.hpp"
#include "trex/sim.hpp"
#include "trex/toolkit.hpp"
#include "trex/constraint_dsl.hpp"
#include "trex/cog.hpp"
#include "trex/solver.hpp"
#include "trex/planner.hpp"
#include "trex/success.hpp"
#include "trex/harness.hpp"
