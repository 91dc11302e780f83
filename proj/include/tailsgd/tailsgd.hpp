#pragma once

#include "tailsgd/core.hpp"
#include "tailsgd/rng.hpp"
#include "tailsgd/data.hpp"
#include "tailsgd/surrogate.hpp"
#include "tailsgd/losses.hpp"
#include "tailsgd/optimizers.hpp"
#include "tailsgd/bounds.hpp"
#include "tailsgd/audit.hpp"
#include "tailsgd/metrics.hpp"
#include "tailsgd/trace_io.hpp"
#include "tailsgd/estimation.hpp"
#include "tailsgd/config.hpp"
#include "tailsgd/svg.hpp"
#include "tailsgd/experiment.hpp"
