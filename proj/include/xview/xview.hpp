#pragma once

// Umbrella header.
#include "xview/adam.hpp"
#include "xview/canny.hpp"
#include "xview/config.hpp"
#include "xview/dataset.hpp"
#include "xview/encoder.hpp"
#include "xview/error.hpp"
#include "xview/fusion.hpp"
#include "xview/gradcheck.hpp"
#include "xview/image.hpp"
#include "xview/init.hpp"
#include "xview/io.hpp"
#include "xview/losses.hpp"
#include "xview/manifest.hpp"
#include "xview/ops.hpp"
#include "xview/retrieval.hpp"
#include "xview/rng.hpp"
#include "xview/schedule.hpp"
#include "xview/synthproxy.hpp"
#include "xview/tape.hpp"
#include "xview/tensor.hpp"
#include "xview/training.hpp"
