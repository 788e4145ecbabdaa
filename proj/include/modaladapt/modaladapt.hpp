#pragma once

// Multimodal multi-speaker acoustic modeling: shared common layers
// attachable to a text encoder or a raw-waveform speech encoder, five
// training strategies, and speaker adaptation by embedding-only
// backpropagation (supervised or unsupervised).

#include "modaladapt/adaptation.hpp"
#include "modaladapt/checkpoint.hpp"
#include "modaladapt/corpus.hpp"
#include "modaladapt/experiment.hpp"
#include "modaladapt/gradcheck.hpp"
#include "modaladapt/io.hpp"
#include "modaladapt/layers.hpp"
#include "modaladapt/log.hpp"
#include "modaladapt/matrix.hpp"
#include "modaladapt/metrics.hpp"
#include "modaladapt/model.hpp"
#include "modaladapt/optim.hpp"
#include "modaladapt/rng.hpp"
#include "modaladapt/synth.hpp"
#include "modaladapt/training.hpp"
