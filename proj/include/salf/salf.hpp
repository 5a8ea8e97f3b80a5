#pragma once

#include "salf/bench.hpp"
#include "salf/common.hpp"
#include "salf/framebuffer.hpp"
#include "salf/image_io.hpp"
#include "salf/init.hpp"
#include "salf/metrics.hpp"
#include "salf/octree.hpp"
#include "salf/render_raster.hpp"
#include "salf/render_ray.hpp"
#include "salf/scene.hpp"
#include "salf/scene_io.hpp"
#include "salf/sensors.hpp"
#include "salf/synthetic.hpp"
#include "salf/train.hpp"
#include "salf/trainer.hpp"
