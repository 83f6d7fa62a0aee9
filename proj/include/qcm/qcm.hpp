#pragma once

#include "qcm/engine.hpp"
#include "qcm/error.hpp"
#include "qcm/exact.hpp"
#include "qcm/fit.hpp"
#include "qcm/model.hpp"
#include "qcm/observables.hpp"
#include "qcm/pipeline.hpp"
#include "qcm/rg.hpp"
#include "qcm/rng.hpp"
#include "qcm/series.hpp"
#include "qcm/stats.hpp"
#include "qcm/sweep.hpp"
