#pragma once

#include "fmdp/core.hpp"
#include "fmdp/domains.hpp"
#include "fmdp/evaluators.hpp"
#include "fmdp/gscope.hpp"
#include "fmdp/io.hpp"
#include "fmdp/rng.hpp"
#include "fmdp/theory.hpp"
