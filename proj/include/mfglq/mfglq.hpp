#pragma once

#include "mfglq/analysis.hpp"
#include "mfglq/config.hpp"
#include "mfglq/csv.hpp"
#include "mfglq/errors.hpp"
#include "mfglq/experiment.hpp"
#include "mfglq/fictitious_play.hpp"
#include "mfglq/fields.hpp"
#include "mfglq/girsanov.hpp"
#include "mfglq/hermite.hpp"
#include "mfglq/model.hpp"
#include "mfglq/noise.hpp"
#include "mfglq/policy.hpp"
#include "mfglq/reference.hpp"
#include "mfglq/regression.hpp"
#include "mfglq/riccati.hpp"
#include "mfglq/rng.hpp"
#include "mfglq/time_grid.hpp"
