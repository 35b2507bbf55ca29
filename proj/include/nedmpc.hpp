#pragma once

#include "nedmpc/config.hpp"
#include "nedmpc/controller.hpp"
#include "nedmpc/coordinator.hpp"
#include "nedmpc/discretize.hpp"
#include "nedmpc/model.hpp"
#include "nedmpc/ocp.hpp"
#include "nedmpc/qp.hpp"
#include "nedmpc/rci.hpp"
#include "nedmpc/set_geometry.hpp"
#include "nedmpc/trace.hpp"
#include "nedmpc/types.hpp"
