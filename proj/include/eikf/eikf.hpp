#pragma once

#include "eikf/numeric/tensor.hpp"
#include "eikf/numeric/tape.hpp"
#include "eikf/numeric/finite_diff.hpp"
#include "eikf/data/csv.hpp"
#include "eikf/data/series.hpp"
#include "eikf/data/graph.hpp"
#include "eikf/data/missing.hpp"
#include "eikf/data/synthetic.hpp"
#include "eikf/model/params.hpp"
#include "eikf/model/projection.hpp"
#include "eikf/model/hg_infer.hpp"
#include "eikf/model/gating.hpp"
#include "eikf/model/hg_repr.hpp"
#include "eikf/model/graph_repr.hpp"
#include "eikf/model/temporal.hpp"
#include "eikf/model/eikf_net.hpp"
#include "eikf/training/losses.hpp"
#include "eikf/training/metrics.hpp"
#include "eikf/training/optim.hpp"
#include "eikf/training/trainer.hpp"
#include "eikf/training/checkpoint.hpp"
#include "eikf/config.hpp"
#include "eikf/pipeline.hpp"
