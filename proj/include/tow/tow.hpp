#pragma once

// Umbrella header for the full library.

#include "tow/checks.hpp"
#include "tow/config.hpp"
#include "tow/cost.hpp"
#include "tow/dynamics.hpp"
#include "tow/errors.hpp"
#include "tow/ilqr.hpp"
#include "tow/lqr.hpp"
#include "tow/meta_system.hpp"
#include "tow/metalearn.hpp"
#include "tow/model.hpp"
#include "tow/rng.hpp"
#include "tow/tasks.hpp"
#include "tow/train.hpp"
#include "tow/weighting.hpp"
