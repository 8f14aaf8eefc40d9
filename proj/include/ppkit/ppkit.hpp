#pragma once

#include "ppkit/ascii_grid.hpp"
#include "ppkit/cli.hpp"
#include "ppkit/covar.hpp"
#include "ppkit/fit.hpp"
#include "ppkit/geojson.hpp"
#include "ppkit/geom.hpp"
#include "ppkit/grf.hpp"
#include "ppkit/kernel.hpp"
#include "ppkit/random.hpp"
#include "ppkit/ripley.hpp"
#include "ppkit/sim.hpp"
#include "ppkit/svg.hpp"
