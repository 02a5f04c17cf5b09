#pragma once

#include "taskprior/bank.hpp"
#include "taskprior/design_space.hpp"
#include "taskprior/embedding.hpp"
#include "taskprior/errors.hpp"
#include "taskprior/fim.hpp"
#include "taskprior/graph_data.hpp"
#include "taskprior/harness.hpp"
#include "taskprior/linalg.hpp"
#include "taskprior/metric_oracle.hpp"
#include "taskprior/nn.hpp"
#include "taskprior/parallel.hpp"
#include "taskprior/rng.hpp"
#include "taskprior/search.hpp"
#include "taskprior/synthetic.hpp"
#include "taskprior/transfer.hpp"
