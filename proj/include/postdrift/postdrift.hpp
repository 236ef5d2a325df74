#pragma once

// Umbrella header.

#include "postdrift/dataset.hpp"
#include "postdrift/error.hpp"
#include "postdrift/features.hpp"
#include "postdrift/glm_core.hpp"
#include "postdrift/harness.hpp"
#include "postdrift/logistic.hpp"
#include "postdrift/metrics.hpp"
#include "postdrift/source_model.hpp"
#include "postdrift/synth.hpp"
#include "postdrift/transfer.hpp"
