#pragma once

#include "ssl/core.hpp"
#include "ssl/rng.hpp"
#include "ssl/sde_models.hpp"
#include "ssl/targets.hpp"
#include "ssl/score_oracle.hpp"
#include "ssl/bounds.hpp"
#include "ssl/divergences.hpp"
#include "ssl/samplers.hpp"
#include "ssl/config.hpp"
#include "ssl/experiments.hpp"
#include "ssl/acceptance.hpp"
