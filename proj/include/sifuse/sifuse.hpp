#pragma once

// Umbrella header for the single-image fusion library.

#include "sifuse/autoencoder.hpp"
#include "sifuse/autograd.hpp"
#include "sifuse/checkpoint.hpp"
#include "sifuse/common.hpp"
#include "sifuse/denoiser.hpp"
#include "sifuse/fusion.hpp"
#include "sifuse/image_io.hpp"
#include "sifuse/losses.hpp"
#include "sifuse/manifest.hpp"
#include "sifuse/metrics.hpp"
#include "sifuse/model_io.hpp"
#include "sifuse/nn.hpp"
#include "sifuse/schedule.hpp"
#include "sifuse/seghead.hpp"
#include "sifuse/synthdata.hpp"
#include "sifuse/tensor.hpp"
#include "sifuse/training.hpp"
