#pragma once

#include "topocal/datagen.hpp"
#include "topocal/error.hpp"
#include "topocal/geometry.hpp"
#include "topocal/harness.hpp"
#include "topocal/loss.hpp"
#include "topocal/matching.hpp"
#include "topocal/parallel.hpp"
#include "topocal/png_io.hpp"
#include "topocal/random.hpp"
#include "topocal/raster.hpp"
#include "topocal/refine.hpp"
#include "topocal/warp_gradient.hpp"
