#pragma once

// Umbrella header: streaming shrinkage-regularized covariance estimation
// with sequentially updated inverse approximations, plus the AR(1)
// Monte-Carlo benchmark harness.

#include "shrinkcov/errors.hpp"
#include "shrinkcov/invupd.hpp"
#include "shrinkcov/io.hpp"
#include "shrinkcov/linalg.hpp"
#include "shrinkcov/shrink.hpp"
#include "shrinkcov/sim.hpp"
#include "shrinkcov/stream.hpp"
