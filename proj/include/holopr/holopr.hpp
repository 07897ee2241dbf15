#pragma once

#include "holopr/baselines.hpp"
#include "holopr/decoder.hpp"
#include "holopr/fft.hpp"
#include "holopr/forward.hpp"
#include "holopr/grid.hpp"
#include "holopr/harness.hpp"
#include "holopr/imaging.hpp"
#include "holopr/metrics.hpp"
#include "holopr/objective.hpp"
#include "holopr/optimize.hpp"
#include "holopr/random.hpp"
