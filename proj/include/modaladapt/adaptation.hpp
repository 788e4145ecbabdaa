#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "modaladapt/checkpoint.hpp"
#include "modaladapt/corpus.hpp"
#include "modaladapt/io.hpp"
#include "modaladapt/model.hpp"
#include "modaladapt/training.hpp"

namespace modaladapt {

// Speaker adaptation estimates one new embedding row by gradient descent;
// every other parameter is frozen. Supervised adaptation drives the text
// path with transcribed data; unsupervised adaptation drives the speech
// path with waveform/acoustic pairs and needs no transcriptions. Both modes
// share the optimizer, stopping rule and update target.
enum class AdaptationMode { kSupervised, kUnsupervised };

inline std::string to_string(AdaptationMode m) {
  return m == AdaptationMode::kSupervised ? "supervised" : "unsupervised";
}

inline AdaptationMode adaptation_mode_from_string(const std::string& s) {
  if (s == "supervised") return AdaptationMode::kSupervised;
  if (s == "unsupervised") return AdaptationMode::kUnsupervised;
  throw std::invalid_argument("unknown adaptation mode '" + s + "'");
}

enum class InitPolicy { kMeanOfTrained, kZeros, kRandom };

inline std::string to_string(InitPolicy p) {
  switch (p) {
    case InitPolicy::kMeanOfTrained: return "mean_of_trained";
    case InitPolicy::kZeros: return "zeros";
    case InitPolicy::kRandom: return "random";
  }
  return "?";
}

inline InitPolicy init_policy_from_string(const std::string& s) {
  if (s == "mean_of_trained") return InitPolicy::kMeanOfTrained;
  if (s == "zeros") return InitPolicy::kZeros;
  if (s == "random") return InitPolicy::kRandom;
  throw std::invalid_argument("unknown init policy '" + s + "'");
}

struct AdaptationJob {
  AdaptationMode mode = AdaptationMode::kUnsupervised;
  std::string speaker;
  std::vector<const Utterance*> utterances;
  InitPolicy init = InitPolicy::kMeanOfTrained;
  AdamConfig optimizer;
  EarlyStopPolicy early_stop;
  std::uint64_t seed = 0;
};

struct AdaptedSpeaker {
  std::string speaker;
  AdaptationMode mode = AdaptationMode::kUnsupervised;
  std::vector<double> embedding;
  std::vector<double> train_loss;  // per adaptation epoch
  std::vector<double> valid_loss;
  std::size_t utterances_used = 0;
  std::size_t stopped_epoch = 0;
  std::string stop_reason;
};

// Starting point for a new speaker's embedding. The default centers the
// search in the learned speaker space.
inline std::vector<double> init_new_speaker(const MultimodalModel& model, InitPolicy policy,
                                            std::uint64_t seed = 0) {
  const std::size_t dim = model.config.embedding_dim;
  switch (policy) {
    case InitPolicy::kZeros:
      return std::vector<double>(dim, 0.0);
    case InitPolicy::kRandom: {
      auto rng = make_rng(seed, "adapt_init");
      std::normal_distribution<double> dist(0.0, 0.1);
      std::vector<double> row(dim);
      for (auto& v : row) v = dist(rng);
      return row;
    }
    case InitPolicy::kMeanOfTrained: {
      if (model.embeddings.size() == 0) {
        throw std::invalid_argument("init_new_speaker: embedding table is empty");
      }
      std::vector<double> mean(dim, 0.0);
      for (const auto& [id, row] : model.embeddings.rows()) {
        for (std::size_t i = 0; i < dim; ++i) mean[i] += row[i];
      }
      for (auto& v : mean) v /= static_cast<double>(model.embeddings.size());
      return mean;
    }
  }
  throw std::logic_error("init_new_speaker: unreachable");
}

// Optimizes only the target speaker's embedding row on the mode's path
// loss. The row is inserted (or replaced) in the model's table and left at
// the best-validation value; all other parameters are untouched bytes.
inline AdaptedSpeaker adapt(MultimodalModel& model, const AdaptationJob& job) {
  if (!model.trained) throw std::runtime_error("adapt: model has not been trained");
  if (job.speaker.empty()) throw std::invalid_argument("adapt: empty speaker id");
  if (job.utterances.size() < 2) {
    throw std::invalid_argument("adapt: need at least 2 adaptation utterances (got " +
                                std::to_string(job.utterances.size()) + ")");
  }
  if (job.mode == AdaptationMode::kUnsupervised) {
    if (!model.config.has_speech_encoder) {
      throw std::runtime_error("adapt: unsupervised mode needs a speech encoder, this model has "
                               "none");
    }
    if (!model.speech_encoder_trained) {
      throw std::runtime_error("adapt: unsupervised mode needs a trained speech encoder (run the "
                               "second step-by-step phase first)");
    }
    for (const Utterance* u : job.utterances) {
      if (!u->has_wave()) {
        throw std::runtime_error("adapt: utterance '" + u->id +
                                 "' has no waveform (required for unsupervised adaptation)");
      }
    }
  }

  // Held-out adaptation validation: 10% of the utterances, at least one.
  std::vector<const Utterance*> pool = job.utterances;
  {
    auto rng = make_rng(job.seed, "adapt_valid_split");
    std::shuffle(pool.begin(), pool.end(), rng);
  }
  const std::size_t n_valid = std::max<std::size_t>(1, pool.size() / 10);
  std::vector<const Utterance*> valid(pool.end() - static_cast<std::ptrdiff_t>(n_valid),
                                      pool.end());
  std::vector<const Utterance*> train(pool.begin(),
                                      pool.end() - static_cast<std::ptrdiff_t>(n_valid));

  model.embeddings.set(job.speaker, init_new_speaker(model, job.init, job.seed));
  const auto row_params = model.params(ParamScope::embedding_only(job.speaker));

  auto path_loss = [&](const Utterance& utt, bool with_grads, GradientSet* grads) {
    if (job.mode == AdaptationMode::kSupervised) {
      auto [pred, trace] = forward_text(model, utt.linguistic, job.speaker);
      MseResult mse = mse_loss(pred, utt.acoustic);
      if (with_grads) *grads = backward_embedding_only(model, trace, mse.d_pred);
      return mse.loss;
    }
    auto [pred, trace] = forward_speech(model, utt.wave, job.speaker);
    MseResult mse = mse_loss(pred, utt.acoustic);
    if (with_grads) *grads = backward_embedding_only(model, trace, mse.d_pred);
    return mse.loss;
  };

  AdaptedSpeaker result;
  result.speaker = job.speaker;
  result.mode = job.mode;
  result.utterances_used = job.utterances.size();

  AdamOptimizer optimizer(job.optimizer);
  EarlyStopper stopper(job.early_stop);
  std::vector<double> best_row = model.embeddings.row(job.speaker);

  for (std::size_t epoch = 1; epoch <= job.early_stop.max_epochs; ++epoch) {
    std::vector<const Utterance*> order = train;
    auto rng = make_rng(job.seed, "adapt_epoch", epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double train_sum = 0.0;
    for (const Utterance* utt : order) {
      GradientSet grads;
      train_sum += path_loss(*utt, true, &grads);
      optimizer.step(row_params, grads);
    }
    double valid_sum = 0.0;
    for (const Utterance* utt : valid) valid_sum += path_loss(*utt, false, nullptr);
    const double train_loss = train_sum / static_cast<double>(order.size());
    const double valid_loss = valid_sum / static_cast<double>(valid.size());
    result.train_loss.push_back(train_loss);
    result.valid_loss.push_back(valid_loss);
    const bool keep_going = stopper.observe(valid_loss);
    if (stopper.improved_last()) best_row = model.embeddings.row(job.speaker);
    if (!keep_going) break;
  }

  model.embeddings.set(job.speaker, best_row);
  result.embedding = std::move(best_row);
  result.stopped_epoch = stopper.epochs_seen();
  result.stop_reason = stopper.epochs_seen() == 0 ? "max_epochs" : stopper.reason();
  return result;
}

// Text-path synthesis with an explicit embedding; adapted embeddings feed
// this regardless of which mode estimated them.
inline Matrix synthesize_features(const MultimodalModel& model, const Matrix& linguistic,
                                  std::span<const double> embedding) {
  auto [pred, trace] = forward_text(model, linguistic, embedding);
  return pred;
}

// Embedding files: magic "MMEV1", u32 header length, JSON header (speaker,
// mode, config hash), then embedding_dim little-endian f64 values.
inline constexpr const char* kEmbeddingMagic = "MMEV1";

inline void write_embedding_file(const std::filesystem::path& path, const AdaptedSpeaker& adapted,
                                 const std::string& config_hash_hex) {
  nlohmann::json header;
  header["format"] = kEmbeddingMagic;
  header["speaker"] = adapted.speaker;
  header["mode"] = to_string(adapted.mode);
  header["config_hash"] = config_hash_hex;
  header["dim"] = adapted.embedding.size();
  header["utterances_used"] = adapted.utterances_used;
  header["stopped_epoch"] = adapted.stopped_epoch;
  const std::string header_str = header.dump();

  auto out = open_output(path, "embedding file");
  write_magic(out, kEmbeddingMagic);
  write_u32_le(out, static_cast<std::uint32_t>(header_str.size()));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  write_f64_array(out, adapted.embedding);
  if (!out) throw std::runtime_error("embedding file: write failed for '" + path.string() + "'");
}

struct StoredEmbedding {
  std::string speaker;
  AdaptationMode mode = AdaptationMode::kUnsupervised;
  std::string config_hash;
  std::size_t utterances_used = 0;
  std::vector<double> embedding;
};

inline StoredEmbedding read_embedding_file(const std::filesystem::path& path) {
  const std::string what = "embedding file '" + path.string() + "'";
  auto in = open_input(path, what);
  expect_magic(in, kEmbeddingMagic, what);
  const std::uint32_t header_len = read_u32_le(in, what);
  std::string header_str(header_len, '\0');
  if (!in.read(header_str.data(), header_len)) throw std::runtime_error(what + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(what + ": corrupt header: " + e.what());
  }
  StoredEmbedding stored;
  stored.speaker = header.at("speaker").get<std::string>();
  stored.mode = adaptation_mode_from_string(header.at("mode").get<std::string>());
  stored.config_hash = header.value("config_hash", "");
  stored.utterances_used = header.value("utterances_used", std::size_t{0});
  stored.embedding.resize(header.at("dim").get<std::size_t>());
  read_f64_array(in, stored.embedding, what);
  return stored;
}

}  // namespace modaladapt
