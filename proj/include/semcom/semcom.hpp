#pragma once

#include "semcom/add.hpp"
#include "semcom/bundle.hpp"
#include "semcom/channel.hpp"
#include "semcom/checkpoint.hpp"
#include "semcom/error.hpp"
#include "semcom/grid.hpp"
#include "semcom/harness.hpp"
#include "semcom/metrics.hpp"
#include "semcom/nn.hpp"
#include "semcom/packing.hpp"
#include "semcom/prompt_analysis.hpp"
#include "semcom/rng.hpp"
#include "semcom/segmentation.hpp"
#include "semcom/synthetic.hpp"
