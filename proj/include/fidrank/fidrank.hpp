#pragma once

// Everything in one include.

#include "fidrank/errors.hpp"
#include "fidrank/eval/metrics.hpp"
#include "fidrank/eval/trec.hpp"
#include "fidrank/model/config.hpp"
#include "fidrank/model/fid_model.hpp"
#include "fidrank/model/flops.hpp"
#include "fidrank/model/relative_bias.hpp"
#include "fidrank/model/trace.hpp"
#include "fidrank/numerics/autograd.hpp"
#include "fidrank/numerics/checkpoint.hpp"
#include "fidrank/numerics/grad_check.hpp"
#include "fidrank/numerics/kernels.hpp"
#include "fidrank/numerics/ops.hpp"
#include "fidrank/numerics/parameters.hpp"
#include "fidrank/numerics/tensor.hpp"
#include "fidrank/scoring/scorer.hpp"
#include "fidrank/text/prompt.hpp"
#include "fidrank/text/ranking.hpp"
#include "fidrank/text/vocab.hpp"
#include "fidrank/train/data.hpp"
#include "fidrank/train/trainer.hpp"
#include "fidrank/window/engine.hpp"
#include "fidrank/window/fid_rankers.hpp"
