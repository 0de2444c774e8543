#pragma once

#include "dcgrid/core.hpp"
#include "dcgrid/linalg.hpp"
#include "dcgrid/grid_model.hpp"
#include "dcgrid/baseline.hpp"
#include "dcgrid/l1_controller.hpp"
#include "dcgrid/certification.hpp"
#include "dcgrid/table1.hpp"
#include "dcgrid/design.hpp"
#include "dcgrid/metrics.hpp"
#include "dcgrid/sim_engine.hpp"
#include "dcgrid/config.hpp"
