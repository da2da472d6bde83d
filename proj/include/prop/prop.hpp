#pragma once

// Umbrella header for the ProP backdoor-audit library.

#include "prop/dataset.hpp"
#include "prop/detector.hpp"
#include "prop/errors.hpp"
#include "prop/model_io.hpp"
#include "prop/network.hpp"
#include "prop/poison.hpp"
#include "prop/report_io.hpp"
#include "prop/rng.hpp"
#include "prop/tensor.hpp"
#include "prop/trainer.hpp"
