#pragma once

#include "cateforge/common.hpp"
#include "cateforge/random.hpp"
#include "cateforge/datagen.hpp"
#include "cateforge/representations.hpp"
#include "cateforge/neuralcore.hpp"
#include "cateforge/nuisance.hpp"
#include "cateforge/metalearners.hpp"
#include "cateforge/evaluation.hpp"
#include "cateforge/config.hpp"
