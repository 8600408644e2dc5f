#pragma once

#include <acnsim/algorithms.hpp>
#include <acnsim/common.hpp>
#include <acnsim/engine.hpp>
#include <acnsim/events.hpp>
#include <acnsim/hardware.hpp>
#include <acnsim/metrics.hpp>
#include <acnsim/mpc.hpp>
#include <acnsim/network.hpp>
#include <acnsim/pdhg.hpp>
#include <acnsim/scenario.hpp>
#include <acnsim/sessions.hpp>
#include <acnsim/signals.hpp>
