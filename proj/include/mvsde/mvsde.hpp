#pragma once

#include "error.hpp"
#include "field.hpp"
#include "spectral.hpp"
#include "quadrature.hpp"
#include "fit.hpp"
#include "norms.hpp"
#include "kernels.hpp"
#include "solver.hpp"
#include "metrics.hpp"
#include "particles.hpp"
#include "io.hpp"
#include "bench.hpp"
