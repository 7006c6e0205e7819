#pragma once

#include "topodetect/common.hpp"
#include "topodetect/grid_model.hpp"
#include "topodetect/powerflow.hpp"
#include "topodetect/signatures.hpp"
#include "topodetect/detector.hpp"
#include "topodetect/montecarlo.hpp"
#include "topodetect/placement.hpp"
