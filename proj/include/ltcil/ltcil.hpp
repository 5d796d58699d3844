#pragma once

#include "ltcil/config.hpp"
#include "ltcil/data.hpp"
#include "ltcil/error.hpp"
#include "ltcil/figures.hpp"
#include "ltcil/gcr.hpp"
#include "ltcil/imbalance.hpp"
#include "ltcil/io.hpp"
#include "ltcil/losses.hpp"
#include "ltcil/matrix.hpp"
#include "ltcil/metrics.hpp"
#include "ltcil/nn.hpp"
#include "ltcil/runner.hpp"
#include "ltcil/schedule.hpp"
#include "ltcil/trainer.hpp"
