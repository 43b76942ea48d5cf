// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// Umbrella header.

#pragma once

#include "fovealseg/config.hpp"
#include "fovealseg/data.hpp"
#include "fovealseg/error.hpp"
#include "fovealseg/experiment.hpp"
#include "fovealseg/flops.hpp"
#include "fovealseg/fsnet.hpp"
#include "fovealseg/gaze.hpp"
#include "fovealseg/heads.hpp"
#include "fovealseg/losses.hpp"
#include "fovealseg/nn.hpp"
#include "fovealseg/random.hpp"
#include "fovealseg/saliency_net.hpp"
#include "fovealseg/sampler.hpp"
#include "fovealseg/scheduler.hpp"
#include "fovealseg/tensor.hpp"
#include "fovealseg/trace_analysis.hpp"
#include "fovealseg/trainer.hpp"
