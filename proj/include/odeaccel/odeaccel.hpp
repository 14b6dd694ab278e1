/**
 * @file odeaccel.hpp
 * @brief Umbrella header for the ODE parameter estimation library.
 */
#pragma once

#include "odeaccel/accel.hpp"
#include "odeaccel/dataset.hpp"
#include "odeaccel/errors.hpp"
#include "odeaccel/inference.hpp"
#include "odeaccel/integrator.hpp"
#include "odeaccel/io.hpp"
#include "odeaccel/linalg.hpp"
#include "odeaccel/mc.hpp"
#include "odeaccel/models.hpp"
#include "odeaccel/nls.hpp"
#include "odeaccel/ode_core.hpp"
#include "odeaccel/preliminary.hpp"
#include "odeaccel/sensitivity.hpp"
#include "odeaccel/smoothing.hpp"
