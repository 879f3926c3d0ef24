#pragma once

// Batch conformal prediction: conformal p-values, batch prediction sets over
// [K]^m, class-count bounds and Monte-Carlo calibrated thresholds.

#include "batchcp/combiners.hpp"
#include "batchcp/conformal.hpp"
#include "batchcp/enumeration.hpp"
#include "batchcp/errors.hpp"
#include "batchcp/experiment.hpp"
#include "batchcp/io.hpp"
#include "batchcp/random.hpp"
#include "batchcp/shortcut.hpp"
#include "batchcp/thresholds.hpp"
