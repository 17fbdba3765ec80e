#pragma once

#include "mac/common.hpp"
#include "mac/core_data.hpp"
#include "mac/geo.hpp"
#include "mac/recommender.hpp"
#include "mac/neighbors.hpp"
#include "mac/refdata.hpp"
#include "mac/collab.hpp"
#include "mac/eval.hpp"
#include "mac/simulator.hpp"
#include "mac/experiment.hpp"
#include "mac/synthetic.hpp"
