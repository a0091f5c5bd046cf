// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "beam_space.hpp"
#include "config.hpp"
#include "errors.hpp"
#include "expression.hpp"
#include "io.hpp"
#include "linalg.hpp"
#include "manifest.hpp"
#include "noise.hpp"
#include "operators.hpp"
#include "philox.hpp"
#include "propagator.hpp"
#include "solver.hpp"
#include "stencil.hpp"
#include "verify.hpp"
