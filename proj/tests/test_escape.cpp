#include "rlm/rlm.hpp"
#include <catch2/catch_amalgamated.hpp>
