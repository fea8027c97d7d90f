#pragma once

#include "lbi/checkpoint.hpp"
#include "lbi/config.hpp"
#include "lbi/datasets.hpp"
#include "lbi/engine.hpp"
#include "lbi/errors.hpp"
#include "lbi/experiments.hpp"
#include "lbi/grad_oracle.hpp"
#include "lbi/model.hpp"
#include "lbi/rng.hpp"
