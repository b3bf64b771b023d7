#pragma once

#include "esm/backtest.hpp"
#include "esm/config.hpp"
#include "esm/error.hpp"
#include "esm/esmsim.hpp"
#include "esm/log.hpp"
#include "esm/marketdata.hpp"
#include "esm/ned.hpp"
#include "esm/signals.hpp"
#include "esm/states.hpp"
#include "esm/time.hpp"
#include "esm/timeframe.hpp"
#include "esm/turningpoints.hpp"
