#pragma once

#include "flowuq/active_learning.hpp"
#include "flowuq/bnn.hpp"
#include "flowuq/error.hpp"
#include "flowuq/evaluation.hpp"
#include "flowuq/experiment.hpp"
#include "flowuq/flow_data.hpp"
#include "flowuq/forest.hpp"
#include "flowuq/mlp.hpp"
#include "flowuq/nn_core.hpp"
#include "flowuq/num_core.hpp"
#include "flowuq/ood.hpp"
#include "flowuq/serialize.hpp"
#include "flowuq/uncertainty.hpp"
