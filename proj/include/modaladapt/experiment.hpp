#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "modaladapt/adaptation.hpp"
#include "modaladapt/corpus.hpp"
#include "modaladapt/metrics.hpp"
#include "modaladapt/model.hpp"
#include "modaladapt/synth.hpp"
#include "modaladapt/training.hpp"

namespace modaladapt {

// Loss weights of the standard configuration grid.
inline constexpr double kJgAlpha = 0.5;
inline constexpr double kTlBeta = 1.0;
inline constexpr double kComboAlpha = 0.2;
inline constexpr double kComboBeta = 0.2;

// Architecture variant for a strategy: VL drops the speech encoder and
// feeds the embedding to every FF layer; the rest attach the encoder and
// make the last two common layers speaker-aware.
inline ModelConfig config_for_strategy(ModelConfig base, Strategy strategy) {
  if (strategy == Strategy::kVL) {
    apply_vanilla_preset(base);
  } else {
    apply_multimodal_preset(base);
  }
  return base;
}

inline TrainingPlan plan_for_strategy(Strategy strategy, std::uint64_t seed) {
  TrainingPlan plan;
  plan.strategy = strategy;
  plan.seed = seed;
  switch (strategy) {
    case Strategy::kJG:
      plan.weights.alpha = kJgAlpha;
      break;
    case Strategy::kTL:
      plan.weights.beta = kTlBeta;
      break;
    case Strategy::kJGTL:
      plan.weights.alpha = kComboAlpha;
      plan.weights.beta = kComboBeta;
      break;
    default:
      break;
  }
  return plan;
}

struct TrainOutcome {
  MultimodalModel model;
  TrainingHistory history;
};

// Builds and trains one model for one (strategy, seed) on the dataset's
// training speakers.
inline TrainOutcome train_one(const Dataset& data, const ModelConfig& base, Strategy strategy,
                              std::uint64_t seed, const StepObserver& observer = {}) {
  ModelConfig config = config_for_strategy(base, strategy);
  // Feature dims come from the corpus.
  const auto& first = data.utterances().front();
  config.linguistic_dim = first.linguistic.cols();
  config.acoustic_dim = first.acoustic.cols();

  TrainOutcome out;
  out.model = build_model(config, data.speaker_ids(SpeakerRole::kTrain), seed);
  TrainingPlan plan = plan_for_strategy(strategy, seed);
  if (strategy == Strategy::kSS) {
    out.history = train_step_by_step(out.model, data, plan, observer);
  } else {
    out.history = fit(out.model, data, plan, observer);
  }
  return out;
}

struct AdaptOutcome {
  AdaptedSpeaker adapted;
  EvalRow row;
};

// Adapts one held-out speaker on a fixed utterance subset and scores the
// result on that speaker's test split (always via the text path).
inline AdaptOutcome adapt_and_eval(MultimodalModel& model, const Dataset& data,
                                   const std::string& speaker,
                                   const std::vector<const Utterance*>& subset,
                                   AdaptationMode mode, std::uint64_t seed,
                                   const AcousticLayout& layout, const std::string& model_tag,
                                   const std::string& strategy) {
  AdaptationJob job;
  job.mode = mode;
  job.speaker = speaker;
  job.utterances = subset;
  job.seed = seed;

  AdaptOutcome out;
  out.adapted = adapt(model, job);
  EvalRow tags;
  tags.model_tag = model_tag;
  tags.strategy = strategy;
  tags.condition = "adapted_" + to_string(mode);
  tags.adapt_utterances = subset.size();
  out.row = evaluate_embedding(model, data, speaker, out.adapted.embedding, layout, tags);
  return out;
}

// Baseline for adaptation experiments: the mean of the trained embeddings.
inline EvalRow eval_mean_embedding_baseline(const MultimodalModel& model, const Dataset& data,
                                            const std::string& speaker,
                                            const AcousticLayout& layout,
                                            const std::string& model_tag,
                                            const std::string& strategy) {
  const auto mean = init_new_speaker(model, InitPolicy::kMeanOfTrained);
  EvalRow tags;
  tags.model_tag = model_tag;
  tags.strategy = strategy;
  tags.condition = "baseline_mean_embedding";
  return evaluate_embedding(model, data, speaker, mean, layout, tags);
}

// Baseline for multi-speaker experiments: a per-speaker constant predictor.
inline EvalRow eval_constant_baseline(const Dataset& data, const std::string& speaker,
                                      const AcousticLayout& layout) {
  const auto utts = data.select(Split::kTest, speaker);
  if (utts.empty()) {
    throw std::invalid_argument("eval_constant_baseline: no test utterances for '" + speaker +
                                "'");
  }
  EvalRow tags;
  tags.model_tag = "baseline";
  tags.strategy = "CONST";
  tags.speaker = speaker;
  tags.condition = "speaker_mean_constant";
  return evaluate_speaker(constant_predictor(speaker_mean_vector(data, speaker)), utts, layout,
                          tags);
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Frame-weighted MCD across a set of per-speaker rows (one model, one
// condition).
inline double pooled_mcd(const std::vector<EvalRow>& rows) {
  double sum = 0.0;
  std::size_t frames = 0;
  for (const auto& r : rows) {
    sum += r.mcd_db * static_cast<double>(r.frames);
    frames += r.frames;
  }
  if (frames == 0) throw std::invalid_argument("pooled_mcd: no frames");
  return sum / static_cast<double>(frames);
}

}  // namespace modaladapt
