#pragma once

#include "mff/augment.hpp"
#include "mff/autodiff.hpp"
#include "mff/config.hpp"
#include "mff/ctcm.hpp"
#include "mff/dataio.hpp"
#include "mff/encoder.hpp"
#include "mff/error.hpp"
#include "mff/evaluation.hpp"
#include "mff/facm.hpp"
#include "mff/gradcheck.hpp"
#include "mff/model.hpp"
#include "mff/spectral.hpp"
#include "mff/tensor.hpp"
#include "mff/training.hpp"
