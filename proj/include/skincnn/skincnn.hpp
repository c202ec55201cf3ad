#pragma once

#include "skincnn/cli.hpp"
#include "skincnn/common.hpp"
#include "skincnn/dataset.hpp"
#include "skincnn/grad_check.hpp"
#include "skincnn/image.hpp"
#include "skincnn/losses.hpp"
#include "skincnn/metrics.hpp"
#include "skincnn/ops.hpp"
#include "skincnn/optim.hpp"
#include "skincnn/param.hpp"
#include "skincnn/pipeline.hpp"
#include "skincnn/recnet.hpp"
#include "skincnn/rng.hpp"
#include "skincnn/segnet.hpp"
#include "skincnn/tensor.hpp"
#include "skincnn/training.hpp"
