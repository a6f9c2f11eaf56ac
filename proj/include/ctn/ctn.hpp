#pragma once

// Umbrella header: a 1D fully convolutional network stack for time series
// classification and forecasting, with deformable patch tokenization,
// re-parameterizable dual-kernel blocks, hand-derived adjoints and a
// training/evaluation harness.

#include "ctn/adam.hpp"
#include "ctn/bench.hpp"
#include "ctn/checkpoint.hpp"
#include "ctn/config_io.hpp"
#include "ctn/data.hpp"
#include "ctn/depatch.hpp"
#include "ctn/error.hpp"
#include "ctn/fcblock.hpp"
#include "ctn/gradcheck.hpp"
#include "ctn/gradcheck_suite.hpp"
#include "ctn/layers.hpp"
#include "ctn/losses.hpp"
#include "ctn/metrics.hpp"
#include "ctn/model.hpp"
#include "ctn/param.hpp"
#include "ctn/plot.hpp"
#include "ctn/rng.hpp"
#include "ctn/tensor.hpp"
#include "ctn/train.hpp"
