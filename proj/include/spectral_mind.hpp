#pragma once

#include "spectral_mind/config.hpp"
#include "spectral_mind/container.hpp"
#include "spectral_mind/dsp.hpp"
#include "spectral_mind/eegio.hpp"
#include "spectral_mind/error.hpp"
#include "spectral_mind/ersp.hpp"
#include "spectral_mind/eval.hpp"
#include "spectral_mind/nn/checkpoint.hpp"
#include "spectral_mind/nn/layers.hpp"
#include "spectral_mind/nn/network.hpp"
#include "spectral_mind/nn/tensor.hpp"
#include "spectral_mind/random.hpp"
#include "spectral_mind/synth.hpp"
#include "spectral_mind/topomap.hpp"
#include "spectral_mind/train.hpp"
