#pragma once

#include "sibcl/core/error.hpp"
#include "sibcl/core/rng.hpp"
#include "sibcl/invariance/group.hpp"
#include "sibcl/io/datastore.hpp"
#include "sibcl/nn/checkpoint.hpp"
#include "sibcl/nn/optim.hpp"
#include "sibcl/phc/bands.hpp"
#include "sibcl/phc/dos.hpp"
#include "sibcl/phc/geometry.hpp"
#include "sibcl/tise/tise.hpp"
#include "sibcl/training/experiment.hpp"
