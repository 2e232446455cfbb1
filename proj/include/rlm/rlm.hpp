#pragma once
// Umbrella header.

#include "rlm/config.hpp"
#include "rlm/escape.hpp"
#include "rlm/io.hpp"
#include "rlm/map_family.hpp"
#include "rlm/measure.hpp"
#include "rlm/omega.hpp"
#include "rlm/partition.hpp"
#include "rlm/returns.hpp"
#include "rlm/tail_fit.hpp"
#include "rlm/tower.hpp"
