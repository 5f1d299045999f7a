#pragma once

// Umbrella header for the freehand 3D ultrasound reconstruction library.

#include "usrecon/common.hpp"
#include "usrecon/geometry.hpp"
#include "usrecon/imgproc.hpp"
#include "usrecon/io.hpp"
#include "usrecon/marker.hpp"
#include "usrecon/pipeline.hpp"
#include "usrecon/recon.hpp"
#include "usrecon/sim.hpp"
#include "usrecon/tracking.hpp"
