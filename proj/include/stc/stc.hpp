#pragma once

#include "stc/error.hpp"
#include "stc/numerics.hpp"
#include "stc/datasets.hpp"
#include "stc/rate_allocation.hpp"
#include "stc/vq.hpp"
#include "stc/sparse_ternary.hpp"
#include "stc/ternary_info.hpp"
#include "stc/search.hpp"
#include "stc/inverse.hpp"
#include "stc/container.hpp"
