#pragma once

// Umbrella header for the flowmark watermarking library.

#include "flowmark/common.hpp"
#include "flowmark/tensor.hpp"
#include "flowmark/rng.hpp"
#include "flowmark/message.hpp"
#include "flowmark/image.hpp"
#include "flowmark/image_io.hpp"
#include "flowmark/autodiff.hpp"
#include "flowmark/autodiff_spatial.hpp"
#include "flowmark/nn.hpp"
#include "flowmark/jnd.hpp"
#include "flowmark/encoder.hpp"
#include "flowmark/decoder.hpp"
#include "flowmark/flow.hpp"
#include "flowmark/embedders.hpp"
#include "flowmark/proxies.hpp"
#include "flowmark/distortion_path.hpp"
#include "flowmark/losses.hpp"
#include "flowmark/checkpoint.hpp"
#include "flowmark/config.hpp"
#include "flowmark/training.hpp"
#include "flowmark/metrics.hpp"
#include "flowmark/distortions.hpp"
#include "flowmark/eval.hpp"
#include "flowmark/synthimage.hpp"
