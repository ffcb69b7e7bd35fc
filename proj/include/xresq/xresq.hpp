#pragma once

#include "xresq/types.hpp"
#include "xresq/rng.hpp"
#include "xresq/constellation.hpp"
#include "xresq/instance.hpp"
#include "xresq/ising.hpp"
#include "xresq/linear.hpp"
#include "xresq/oracle.hpp"
#include "xresq/pt.hpp"
#include "xresq/ensemble.hpp"
#include "xresq/metrics.hpp"
#include "xresq/experiment.hpp"
