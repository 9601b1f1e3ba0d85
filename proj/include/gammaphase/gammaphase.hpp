// gammaphase.hpp
// Umbrella header for the library (the CLI front-end lives in cli.hpp).

#pragma once

#include "gammaphase/errors.hpp"
#include "gammaphase/quadrature.hpp"
#include "gammaphase/wellmodel.hpp"
#include "gammaphase/grid.hpp"
#include "gammaphase/tensor.hpp"
#include "gammaphase/field.hpp"
#include "gammaphase/spectral.hpp"
#include "gammaphase/solver.hpp"
#include "gammaphase/construct.hpp"
#include "gammaphase/experiment.hpp"
