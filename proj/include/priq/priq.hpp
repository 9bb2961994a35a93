#pragma once

// Umbrella header.

#include "priq/ablation.hpp"
#include "priq/aggregation.hpp"
#include "priq/backbone.hpp"
#include "priq/checkpoint.hpp"
#include "priq/config.hpp"
#include "priq/dataset_io.hpp"
#include "priq/error.hpp"
#include "priq/gradcheck.hpp"
#include "priq/metrics.hpp"
#include "priq/ops.hpp"
#include "priq/protocol.hpp"
#include "priq/pseudo_reference.hpp"
#include "priq/random.hpp"
#include "priq/synth.hpp"
#include "priq/tensor.hpp"
#include "priq/train.hpp"
