#pragma once

// Umbrella header: the whole library in dependency order.

#include "pulse/tensor.hpp"
#include "pulse/rng.hpp"
#include "pulse/linalg.hpp"
#include "pulse/image.hpp"
#include "pulse/resample.hpp"
#include "pulse/degrade.hpp"
#include "pulse/autodiff.hpp"
#include "pulse/sphere.hpp"
#include "pulse/generator.hpp"
#include "pulse/objective.hpp"
#include "pulse/optimize.hpp"
#include "pulse/metrics.hpp"
#include "pulse/io.hpp"
#include "pulse/bench.hpp"
