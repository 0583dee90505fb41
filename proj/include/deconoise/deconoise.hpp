#pragma once

#include "deconoise/blas.hpp"
#include "deconoise/dataset.hpp"
#include "deconoise/evaluate.hpp"
#include "deconoise/experiments.hpp"
#include "deconoise/image.hpp"
#include "deconoise/model.hpp"
#include "deconoise/noise.hpp"
#include "deconoise/ops.hpp"
#include "deconoise/phantoms.hpp"
#include "deconoise/psf.hpp"
#include "deconoise/rng.hpp"
#include "deconoise/tensor.hpp"
#include "deconoise/text.hpp"
#include "deconoise/training.hpp"
