#pragma once

#include "poigraph/autodiff.hpp"
#include "poigraph/checkpoint.hpp"
#include "poigraph/commands.hpp"
#include "poigraph/config.hpp"
#include "poigraph/dataset.hpp"
#include "poigraph/errors.hpp"
#include "poigraph/eval.hpp"
#include "poigraph/experiment.hpp"
#include "poigraph/features.hpp"
#include "poigraph/graph.hpp"
#include "poigraph/ingest.hpp"
#include "poigraph/io.hpp"
#include "poigraph/model.hpp"
#include "poigraph/rng.hpp"
#include "poigraph/synthetic.hpp"
#include "poigraph/train.hpp"
