#pragma once

#include "cbcs/bench.hpp"
#include "cbcs/bottleneck.hpp"
#include "cbcs/error.hpp"
#include "cbcs/rng.hpp"
#include "cbcs/sampler.hpp"
#include "cbcs/scorer.hpp"
#include "cbcs/tensor_io.hpp"
#include "cbcs/types.hpp"
