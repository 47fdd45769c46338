#pragma once

#include "errors.hpp"
#include "lmn.hpp"
#include "narx.hpp"
#include "state_space.hpp"
#include "stability.hpp"
#include "controller.hpp"
#include "training.hpp"
#include "plant.hpp"
#include "io.hpp"
#include "experiment.hpp"
