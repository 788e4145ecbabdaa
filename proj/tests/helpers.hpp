#pragma once

// Shared fixtures for the test suites: a desk-scale synthetic task small
// enough that training runs take seconds.

#include <cstdint>

#include "modaladapt/model.hpp"
#include "modaladapt/synth.hpp"

namespace modaladapt::testing {

inline SyntheticTaskSpec tiny_task(std::uint64_t seed = 2024) {
  SyntheticTaskSpec task;
  task.num_train_speakers = 3;
  task.num_adapt_speakers = 1;
  task.utterances_per_speaker = 8;
  task.adapt_pool_utterances = 12;
  task.valid_per_speaker = 2;
  task.test_per_speaker = 2;
  task.min_frames = 8;
  task.max_frames = 14;
  task.linguistic_dim = 7;
  task.acoustic_dim = 8;
  task.samples_per_frame = 16;
  task.noise_std = 0.01;
  task.seed = seed;
  return task;
}

// Model sized for tiny_task; conv stride matches samples_per_frame so the
// two paths stay frame-aligned.
inline ModelConfig tiny_model_config(const SyntheticTaskSpec& task) {
  ModelConfig c;
  c.linguistic_dim = task.linguistic_dim;
  c.acoustic_dim = task.acoustic_dim;
  c.hidden_width = 12;
  c.embedding_dim = 4;
  c.conv = {32, task.samples_per_frame, 6};
  apply_multimodal_preset(c);
  return c;
}

}  // namespace modaladapt::testing
