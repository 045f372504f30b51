// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "volo/tensor.hpp"
#include "volo/autodiff.hpp"
#include "volo/ops.hpp"
#include "volo/window.hpp"
#include "volo/init.hpp"
#include "volo/attention.hpp"
#include "volo/blocks.hpp"
#include "volo/config.hpp"
#include "volo/model.hpp"
#include "volo/inspect.hpp"
#include "volo/oracle.hpp"
#include "volo/gradcheck.hpp"
#include "volo/verify.hpp"
#include "volo/optim.hpp"
#include "volo/data.hpp"
#include "volo/train.hpp"
#include "volo/bench.hpp"
