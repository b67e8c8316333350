#pragma once

#include "deltametrics/error.hpp"
#include "deltametrics/distributions.hpp"
#include "deltametrics/rng.hpp"
#include "deltametrics/moments.hpp"
#include "deltametrics/ratio_ci.hpp"
#include "deltametrics/cluster.hpp"
#include "deltametrics/lmm.hpp"
#include "deltametrics/selection.hpp"
#include "deltametrics/quantile.hpp"
#include "deltametrics/crossover.hpp"
#include "deltametrics/parallel.hpp"
#include "deltametrics/simharness.hpp"
