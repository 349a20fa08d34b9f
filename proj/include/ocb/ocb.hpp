#pragma once

#include "ocb/aggregation.hpp"
#include "ocb/cocologic.hpp"
#include "ocb/core.hpp"
#include "ocb/error.hpp"
#include "ocb/io.hpp"
#include "ocb/metrics.hpp"
#include "ocb/pipeline.hpp"
#include "ocb/predictor.hpp"
#include "ocb/refine.hpp"
#include "ocb/rules.hpp"
#include "ocb/synth.hpp"
