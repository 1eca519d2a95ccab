// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dst/autodiff.hpp"
#include "dst/checkpoint.hpp"
#include "dst/data.hpp"
#include "dst/error.hpp"
#include "dst/evaluation.hpp"
#include "dst/features.hpp"
#include "dst/layers.hpp"
#include "dst/models.hpp"
#include "dst/optim.hpp"
#include "dst/random.hpp"
#include "dst/synthetic.hpp"
#include "dst/tensor.hpp"
#include "dst/training.hpp"
