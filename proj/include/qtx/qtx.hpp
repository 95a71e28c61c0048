#pragma once

#include "qtx/comm_model.hpp"
#include "qtx/dataflow_ir.hpp"
#include "qtx/device.hpp"
#include "qtx/dist_sim.hpp"
#include "qtx/gf_solver.hpp"
#include "qtx/params.hpp"
#include "qtx/perf_model.hpp"
#include "qtx/scf.hpp"
#include "qtx/sse_kernel.hpp"
#include "qtx/symbolic.hpp"
#include "qtx/tensor.hpp"
