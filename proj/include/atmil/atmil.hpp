#pragma once

// Umbrella header: the whole library behind one include.

#include "atmil/adam.hpp"
#include "atmil/bag.hpp"
#include "atmil/checkpoint.hpp"
#include "atmil/config.hpp"
#include "atmil/dataset.hpp"
#include "atmil/errors.hpp"
#include "atmil/gradcheck.hpp"
#include "atmil/graph.hpp"
#include "atmil/idx.hpp"
#include "atmil/ladder.hpp"
#include "atmil/metrics.hpp"
#include "atmil/model.hpp"
#include "atmil/morpho.hpp"
#include "atmil/params.hpp"
#include "atmil/rng.hpp"
#include "atmil/tensor.hpp"
#include "atmil/train.hpp"
#include "atmil/weighting.hpp"
