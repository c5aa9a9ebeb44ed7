#pragma once

#include "statfem/errors.hpp"
#include "statfem/experiments.hpp"
#include "statfem/forward.hpp"
#include "statfem/gp_kernels.hpp"
#include "statfem/hyperlearn.hpp"
#include "statfem/inference.hpp"
#include "statfem/io.hpp"
#include "statfem/layouts.hpp"
#include "statfem/linalg.hpp"
#include "statfem/mesh.hpp"
#include "statfem/model_selection.hpp"
#include "statfem/quadrature.hpp"
#include "statfem/rng.hpp"
#include "statfem/truth.hpp"
