#pragma once

#include "gsr/analysis.hpp"
#include "gsr/encoding.hpp"
#include "gsr/error.hpp"
#include "gsr/io.hpp"
#include "gsr/monte_carlo.hpp"
#include "gsr/parallel.hpp"
#include "gsr/qspace.hpp"
#include "gsr/ridgelets.hpp"
#include "gsr/solver.hpp"
#include "gsr/sphere.hpp"
#include "gsr/tv.hpp"
#include "gsr/volume.hpp"
