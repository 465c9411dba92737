// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mxq/error.hpp"
#include "mxq/exact_sum.hpp"
#include "mxq/formats.hpp"
#include "mxq/gemm.hpp"
#include "mxq/metrics.hpp"
#include "mxq/parallel.hpp"
#include "mxq/quantize.hpp"
#include "mxq/synth.hpp"
#include "mxq/tensor.hpp"
#include "mxq/tensorio.hpp"
