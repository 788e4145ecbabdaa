#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "modaladapt/layers.hpp"
#include "modaladapt/matrix.hpp"
#include "modaladapt/optim.hpp"
#include "modaladapt/rng.hpp"

namespace modaladapt {

struct ConvSpec {
  std::size_t width = 400;
  std::size_t stride = 80;
  std::size_t filters = 64;
};

// Architecture description. The full-scale setup uses hidden_width 1024 and
// embedding_dim 128; the synthetic defaults keep experiments desk-sized.
//
// Layer indices are 1-based. Speaker-aware layers receive the speaker
// embedding concatenated to their input at every frame. The vanilla variant
// feeds the embedding to every feedforward layer (text encoder included);
// the multimodal variants make only the last two common layers aware.
struct ModelConfig {
  std::size_t linguistic_dim = 30;
  std::size_t acoustic_dim = 26;
  std::size_t hidden_width = 64;
  std::size_t embedding_dim = 16;
  std::size_t num_text_ff = 2;
  std::size_t num_common_ff = 3;
  ConvSpec conv;
  bool has_speech_encoder = true;
  std::set<std::size_t> speaker_aware_text;
  std::set<std::size_t> speaker_aware_common = {2, 3};
  std::set<std::size_t> tied_layers = {1};
};

inline void validate(const ModelConfig& c) {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw std::invalid_argument(std::string("ModelConfig: ") + name + " must be >= 1");
  };
  positive(c.linguistic_dim, "linguistic_dim");
  positive(c.acoustic_dim, "acoustic_dim");
  positive(c.hidden_width, "hidden_width");
  positive(c.embedding_dim, "embedding_dim");
  positive(c.num_text_ff, "num_text_ff");
  positive(c.num_common_ff, "num_common_ff");
  for (std::size_t l : c.speaker_aware_text) {
    if (l < 1 || l > c.num_text_ff) {
      throw std::invalid_argument("ModelConfig: speaker_aware_text index " + std::to_string(l) +
                                  " outside 1.." + std::to_string(c.num_text_ff));
    }
  }
  for (std::size_t l : c.speaker_aware_common) {
    if (l < 1 || l > c.num_common_ff) {
      throw std::invalid_argument("ModelConfig: speaker_aware_common index " + std::to_string(l) +
                                  " outside 1.." + std::to_string(c.num_common_ff));
    }
  }
  for (std::size_t l : c.tied_layers) {
    if (l < 1 || l > c.num_common_ff) {
      throw std::invalid_argument("ModelConfig: tied layer index " + std::to_string(l) +
                                  " outside 1.." + std::to_string(c.num_common_ff));
    }
  }
  if (c.has_speech_encoder) {
    if (c.conv.stride < 1 || c.conv.width < c.conv.stride || c.conv.filters < 1) {
      throw std::invalid_argument("ModelConfig: conv requires width >= stride >= 1, filters >= 1");
    }
    if ((c.conv.width - c.conv.stride) % 2 != 0) {
      throw std::invalid_argument(
          "ModelConfig: conv width - stride must be even for symmetric padding, got width " +
          std::to_string(c.conv.width) + ", stride " + std::to_string(c.conv.stride));
    }
  }
}

// Table-style presets. Vanilla: no speech encoder, every FF layer aware.
inline void apply_vanilla_preset(ModelConfig& c) {
  c.has_speech_encoder = false;
  c.speaker_aware_text.clear();
  c.speaker_aware_common.clear();
  for (std::size_t l = 1; l <= c.num_text_ff; ++l) c.speaker_aware_text.insert(l);
  for (std::size_t l = 1; l <= c.num_common_ff; ++l) c.speaker_aware_common.insert(l);
}

// Multimodal variants: speech encoder attached, last two common layers aware.
inline void apply_multimodal_preset(ModelConfig& c) {
  c.has_speech_encoder = true;
  c.speaker_aware_text.clear();
  c.speaker_aware_common.clear();
  for (std::size_t l = c.num_common_ff; l >= 1 && c.speaker_aware_common.size() < 2; --l) {
    c.speaker_aware_common.insert(l);
  }
}

class SpeakerEmbeddingTable {
 public:
  SpeakerEmbeddingTable() = default;
  explicit SpeakerEmbeddingTable(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return rows_.size(); }
  bool contains(const std::string& id) const { return rows_.count(id) != 0; }

  void add(const std::string& id, std::vector<double> row) {
    if (row.size() != dim_) {
      throw std::invalid_argument("SpeakerEmbeddingTable: row for '" + id + "' has size " +
                                  std::to_string(row.size()) + ", expected " +
                                  std::to_string(dim_));
    }
    if (!rows_.emplace(id, std::move(row)).second) {
      throw std::invalid_argument("SpeakerEmbeddingTable: duplicate speaker '" + id + "'");
    }
  }

  void set(const std::string& id, std::vector<double> row) {
    if (row.size() != dim_) {
      throw std::invalid_argument("SpeakerEmbeddingTable: row for '" + id + "' has size " +
                                  std::to_string(row.size()) + ", expected " +
                                  std::to_string(dim_));
    }
    rows_[id] = std::move(row);
  }

  std::vector<double>& row(const std::string& id) {
    auto it = rows_.find(id);
    if (it == rows_.end()) {
      throw std::invalid_argument("SpeakerEmbeddingTable: unknown speaker '" + id + "'");
    }
    return it->second;
  }

  const std::vector<double>& row(const std::string& id) const {
    return const_cast<SpeakerEmbeddingTable*>(this)->row(id);
  }

  const std::map<std::string, std::vector<double>>& rows() const { return rows_; }
  std::map<std::string, std::vector<double>>& rows_mutable() { return rows_; }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>> rows_;
};

enum class Modality { kText, kSpeech };

// Everything one forward pass recorded: per-layer inputs (after any
// embedding concatenation) and outputs, so backward never recomputes.
// common_outputs[l-1] is h^l of the common stack.
struct HiddenTrace {
  Modality modality = Modality::kText;
  std::string speaker_id;  // empty when a raw embedding was supplied
  std::vector<double> embedding;

  std::vector<Matrix> text_inputs;
  std::vector<Matrix> text_outputs;

  std::vector<double> wave;
  Matrix conv_output;
  Matrix speech_ff_output;

  Matrix encoder_output;
  std::vector<Matrix> common_inputs;
  std::vector<Matrix> common_outputs;
  Matrix prediction;

  std::size_t frames() const { return prediction.rows(); }
};

struct ParamScope {
  enum class Kind {
    kAll,
    kSharedNoEmbedding,
    kSpeechEncoderOnly,
    kEmbeddingOnly,
    kCommonOnly,
    kTextEncoderOnly,
  };

  Kind kind = Kind::kAll;
  std::string speaker;  // kEmbeddingOnly

  static ParamScope all() { return {Kind::kAll, {}}; }
  static ParamScope shared_no_embedding() { return {Kind::kSharedNoEmbedding, {}}; }
  static ParamScope speech_encoder_only() { return {Kind::kSpeechEncoderOnly, {}}; }
  static ParamScope embedding_only(std::string speaker_id) {
    return {Kind::kEmbeddingOnly, std::move(speaker_id)};
  }
  static ParamScope common_only() { return {Kind::kCommonOnly, {}}; }
  static ParamScope text_encoder_only() { return {Kind::kTextEncoderOnly, {}}; }
};

namespace param_id {

inline std::string text_w(std::size_t l) { return "text_ff" + std::to_string(l) + "/W"; }
inline std::string text_b(std::size_t l) { return "text_ff" + std::to_string(l) + "/b"; }
inline std::string common_w(std::size_t l) { return "common_ff" + std::to_string(l) + "/W"; }
inline std::string common_b(std::size_t l) { return "common_ff" + std::to_string(l) + "/b"; }
inline std::string embedding(const std::string& speaker) { return "embedding/" + speaker; }

inline constexpr const char* kConvKernels = "speech_conv/K";
inline constexpr const char* kConvBias = "speech_conv/b";
inline constexpr const char* kSpeechFfW = "speech_ff/W";
inline constexpr const char* kSpeechFfB = "speech_ff/b";
inline constexpr const char* kOutputW = "output/W";
inline constexpr const char* kOutputB = "output/b";

}  // namespace param_id

// The factored acoustic model: a linguistic encoder and a raw-waveform
// speech encoder share one common stack (sigmoid FF layers plus the linear
// output layer) and one speaker-embedding table. Either encoder maps its
// modality into the common stack's input width, so the stack's parameters
// are literally shared between both paths.
struct MultimodalModel {
  ModelConfig config;
  std::vector<DenseLayer> text_encoder;
  Conv1DLayer speech_conv;
  DenseLayer speech_ff;
  std::vector<DenseLayer> common_ff;
  DenseLayer output_layer;
  SpeakerEmbeddingTable embeddings;
  bool trained = false;
  bool speech_encoder_trained = false;

  std::vector<std::string> speaker_ids() const {
    std::vector<std::string> ids;
    ids.reserve(embeddings.size());
    for (const auto& [id, row] : embeddings.rows()) ids.push_back(id);
    return ids;
  }

  // Stable enumeration used by the optimizer, the gradient checker and the
  // checkpoint writer: text encoder, speech encoder, common stack, output
  // layer, embedding rows (sorted by speaker id).
  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    auto add = [&out](std::string id, std::vector<double>& v) {
      out.push_back({std::move(id), v.data(), v.size()});
    };
    auto add_mat = [&out](std::string id, Matrix& m) {
      out.push_back({std::move(id), m.data(), m.size()});
    };
    for (std::size_t l = 1; l <= text_encoder.size(); ++l) {
      add_mat(param_id::text_w(l), text_encoder[l - 1].weight);
      add(param_id::text_b(l), text_encoder[l - 1].bias);
    }
    if (config.has_speech_encoder) {
      add_mat(param_id::kConvKernels, speech_conv.kernels);
      add(param_id::kConvBias, speech_conv.bias);
      add_mat(param_id::kSpeechFfW, speech_ff.weight);
      add(param_id::kSpeechFfB, speech_ff.bias);
    }
    for (std::size_t l = 1; l <= common_ff.size(); ++l) {
      add_mat(param_id::common_w(l), common_ff[l - 1].weight);
      add(param_id::common_b(l), common_ff[l - 1].bias);
    }
    add_mat(param_id::kOutputW, output_layer.weight);
    add(param_id::kOutputB, output_layer.bias);
    for (auto& [id, row] : embeddings.rows_mutable()) {
      add(param_id::embedding(id), row);
    }
    return out;
  }

  std::vector<ParamRef> params(const ParamScope& scope) {
    const std::set<std::string> ids = param_ids(scope);
    std::vector<ParamRef> out;
    for (auto& p : params()) {
      if (ids.count(p.id)) out.push_back(p);
    }
    return out;
  }

  std::set<std::string> param_ids(const ParamScope& scope) const {
    std::set<std::string> ids;
    auto text_ids = [&] {
      for (std::size_t l = 1; l <= text_encoder.size(); ++l) {
        ids.insert(param_id::text_w(l));
        ids.insert(param_id::text_b(l));
      }
    };
    auto speech_ids = [&] {
      if (!config.has_speech_encoder) {
        throw std::invalid_argument("select_params: model has no speech encoder");
      }
      ids.insert(param_id::kConvKernels);
      ids.insert(param_id::kConvBias);
      ids.insert(param_id::kSpeechFfW);
      ids.insert(param_id::kSpeechFfB);
    };
    auto common_ids = [&] {
      for (std::size_t l = 1; l <= common_ff.size(); ++l) {
        ids.insert(param_id::common_w(l));
        ids.insert(param_id::common_b(l));
      }
      ids.insert(param_id::kOutputW);
      ids.insert(param_id::kOutputB);
    };
    auto embedding_ids = [&] {
      for (const auto& [id, row] : embeddings.rows()) ids.insert(param_id::embedding(id));
    };
    switch (scope.kind) {
      case ParamScope::Kind::kAll:
        text_ids();
        if (config.has_speech_encoder) speech_ids();
        common_ids();
        embedding_ids();
        break;
      case ParamScope::Kind::kSharedNoEmbedding:
        text_ids();
        if (config.has_speech_encoder) speech_ids();
        common_ids();
        break;
      case ParamScope::Kind::kSpeechEncoderOnly:
        speech_ids();
        break;
      case ParamScope::Kind::kCommonOnly:
        common_ids();
        break;
      case ParamScope::Kind::kTextEncoderOnly:
        text_ids();
        break;
      case ParamScope::Kind::kEmbeddingOnly:
        if (!embeddings.contains(scope.speaker)) {
          throw std::invalid_argument("select_params: unknown speaker '" + scope.speaker + "'");
        }
        ids.insert(param_id::embedding(scope.speaker));
        break;
    }
    if (ids.empty()) throw std::invalid_argument("select_params: scope selected no parameters");
    return ids;
  }
};

inline std::set<std::string> select_params(const MultimodalModel& model, const ParamScope& scope) {
  return model.param_ids(scope);
}

// Flat copy of every parameter, keyed by id. Used for best-epoch snapshots
// and byte-level freeze checks.
inline std::map<std::string, std::vector<double>> snapshot_params(MultimodalModel& model) {
  std::map<std::string, std::vector<double>> snap;
  for (const auto& p : model.params()) snap.emplace(p.id, std::vector<double>(p.data, p.data + p.size));
  return snap;
}

inline void restore_params(MultimodalModel& model,
                           const std::map<std::string, std::vector<double>>& snap) {
  for (const auto& p : model.params()) {
    auto it = snap.find(p.id);
    if (it == snap.end() || it->second.size() != p.size) {
      throw std::invalid_argument("restore_params: snapshot does not match parameter '" + p.id +
                                  "'");
    }
    std::copy(it->second.begin(), it->second.end(), p.data);
  }
}

namespace detail {

inline void glorot_init(Matrix& w, std::mt19937_64& rng) {
  const double r = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> dist(-r, r);
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
}

}  // namespace detail

// Deterministic initialization: Glorot-uniform weights, zero biases,
// N(0, 0.1^2) embeddings, all drawn from one seeded stream in a fixed
// order. Same config + speakers + seed => bit-identical parameters.
inline MultimodalModel build_model(const ModelConfig& config,
                                   const std::vector<std::string>& speakers, std::uint64_t seed) {
  validate(config);
  MultimodalModel model;
  model.config = config;

  std::mt19937_64 rng = make_rng(seed, "model_init");
  const auto aware_text = [&](std::size_t l) { return config.speaker_aware_text.count(l) != 0; };
  const auto aware_common = [&](std::size_t l) {
    return config.speaker_aware_common.count(l) != 0;
  };

  for (std::size_t l = 1; l <= config.num_text_ff; ++l) {
    const std::size_t base = (l == 1) ? config.linguistic_dim : config.hidden_width;
    const std::size_t in = base + (aware_text(l) ? config.embedding_dim : 0);
    DenseLayer layer = make_dense(in, config.hidden_width, Activation::kSigmoid);
    detail::glorot_init(layer.weight, rng);
    model.text_encoder.push_back(std::move(layer));
  }

  if (config.has_speech_encoder) {
    const std::size_t pad = (config.conv.width - config.conv.stride) / 2;
    model.speech_conv = make_conv1d(config.conv.filters, config.conv.width, config.conv.stride,
                                    pad, pad);
    detail::glorot_init(model.speech_conv.kernels, rng);
    model.speech_ff = make_dense(config.conv.filters, config.hidden_width, Activation::kSigmoid);
    detail::glorot_init(model.speech_ff.weight, rng);
  }

  for (std::size_t l = 1; l <= config.num_common_ff; ++l) {
    const std::size_t in =
        config.hidden_width + (aware_common(l) ? config.embedding_dim : 0);
    DenseLayer layer = make_dense(in, config.hidden_width, Activation::kSigmoid);
    detail::glorot_init(layer.weight, rng);
    model.common_ff.push_back(std::move(layer));
  }

  model.output_layer = make_dense(config.hidden_width, config.acoustic_dim, Activation::kLinear);
  detail::glorot_init(model.output_layer.weight, rng);

  model.embeddings = SpeakerEmbeddingTable(config.embedding_dim);
  std::vector<std::string> sorted = speakers;
  std::sort(sorted.begin(), sorted.end());
  std::normal_distribution<double> emb_dist(0.0, 0.1);
  for (const auto& id : sorted) {
    std::vector<double> row(config.embedding_dim);
    for (auto& v : row) v = emb_dist(rng);
    model.embeddings.add(id, std::move(row));
  }
  return model;
}

namespace detail {

// Embedding concatenated to every frame of x.
inline Matrix with_embedding(const Matrix& x, std::span<const double> emb) {
  Matrix out(x.rows(), x.cols() + emb.size());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double* o = out.row(r);
    const double* xr = x.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) o[c] = xr[c];
    for (std::size_t c = 0; c < emb.size(); ++c) o[x.cols() + c] = emb[c];
  }
  return out;
}

// Runs the shared common stack + output layer, recording into the trace.
inline void forward_common(const MultimodalModel& model, Matrix x, HiddenTrace& trace) {
  trace.encoder_output = x;
  const std::size_t num_common = model.common_ff.size();
  trace.common_inputs.reserve(num_common);
  trace.common_outputs.reserve(num_common);
  for (std::size_t l = 1; l <= num_common; ++l) {
    Matrix input = model.config.speaker_aware_common.count(l)
                       ? with_embedding(x, trace.embedding)
                       : std::move(x);
    Matrix output = dense_forward(model.common_ff[l - 1], input);
    trace.common_inputs.push_back(std::move(input));
    trace.common_outputs.push_back(output);
    x = std::move(output);
  }
  trace.prediction = dense_forward(model.output_layer, x);
}

inline std::vector<double> resolve_embedding(const MultimodalModel& model,
                                             const std::string& speaker) {
  return model.embeddings.row(speaker);  // throws on unknown speaker
}

}  // namespace detail

// Text path: linguistic encoder -> common stack -> linear output. The
// returned trace carries every intermediate needed by backward_path.
inline std::pair<Matrix, HiddenTrace> forward_text(const MultimodalModel& model,
                                                   const Matrix& linguistic,
                                                   std::span<const double> embedding,
                                                   std::string speaker_id = {}) {
  if (linguistic.cols() != model.config.linguistic_dim) {
    throw std::invalid_argument("forward_text: input has " + std::to_string(linguistic.cols()) +
                                " cols but linguistic_dim is " +
                                std::to_string(model.config.linguistic_dim));
  }
  if (embedding.size() != model.config.embedding_dim) {
    throw std::invalid_argument("forward_text: embedding has size " +
                                std::to_string(embedding.size()) + ", expected " +
                                std::to_string(model.config.embedding_dim));
  }
  HiddenTrace trace;
  trace.modality = Modality::kText;
  trace.speaker_id = std::move(speaker_id);
  trace.embedding.assign(embedding.begin(), embedding.end());

  Matrix x = linguistic;
  for (std::size_t l = 1; l <= model.text_encoder.size(); ++l) {
    Matrix input = model.config.speaker_aware_text.count(l)
                       ? detail::with_embedding(x, trace.embedding)
                       : std::move(x);
    Matrix output = dense_forward(model.text_encoder[l - 1], input);
    trace.text_inputs.push_back(std::move(input));
    trace.text_outputs.push_back(output);
    x = std::move(output);
  }
  detail::forward_common(model, std::move(x), trace);
  Matrix pred = trace.prediction;
  return {std::move(pred), std::move(trace)};
}

inline std::pair<Matrix, HiddenTrace> forward_text(const MultimodalModel& model,
                                                   const Matrix& linguistic,
                                                   const std::string& speaker) {
  const std::vector<double> emb = detail::resolve_embedding(model, speaker);
  return forward_text(model, linguistic, emb, speaker);
}

// Speech path: 1-D conv -> feedforward -> the same common stack (identical
// shared parameters as the text path).
inline std::pair<Matrix, HiddenTrace> forward_speech(const MultimodalModel& model,
                                                     std::span<const double> wave,
                                                     std::span<const double> embedding,
                                                     std::string speaker_id = {}) {
  if (!model.config.has_speech_encoder) {
    throw std::invalid_argument("forward_speech: model has no speech encoder");
  }
  if (wave.empty()) throw std::invalid_argument("forward_speech: empty waveform");
  if (embedding.size() != model.config.embedding_dim) {
    throw std::invalid_argument("forward_speech: embedding has size " +
                                std::to_string(embedding.size()) + ", expected " +
                                std::to_string(model.config.embedding_dim));
  }
  HiddenTrace trace;
  trace.modality = Modality::kSpeech;
  trace.speaker_id = std::move(speaker_id);
  trace.embedding.assign(embedding.begin(), embedding.end());
  trace.wave.assign(wave.begin(), wave.end());

  trace.conv_output = conv1d_forward(model.speech_conv, wave);
  trace.speech_ff_output = dense_forward(model.speech_ff, trace.conv_output);
  detail::forward_common(model, trace.speech_ff_output, trace);
  Matrix pred = trace.prediction;
  return {std::move(pred), std::move(trace)};
}

inline std::pair<Matrix, HiddenTrace> forward_speech(const MultimodalModel& model,
                                                     std::span<const double> wave,
                                                     const std::string& speaker) {
  const std::vector<double> emb = detail::resolve_embedding(model, speaker);
  return forward_speech(model, wave, emb, speaker);
}

namespace detail {

struct BackwardOptions {
  bool weight_grads = true;
  // Stop once every speaker-aware layer has contributed its embedding
  // gradient; used by adaptation, where only the embedding row is learned.
  bool embedding_only = false;
};

// Splits the gradient of a concatenated layer input into the activation
// block and the embedding block; the embedding block is summed over frames.
inline Matrix split_concat_grad(const Matrix& d_input, std::size_t base_cols,
                                std::vector<double>& d_embedding) {
  const std::size_t emb = d_input.cols() - base_cols;
  Matrix below(d_input.rows(), base_cols);
  for (std::size_t r = 0; r < d_input.rows(); ++r) {
    const double* src = d_input.row(r);
    double* dst = below.row(r);
    for (std::size_t c = 0; c < base_cols; ++c) dst[c] = src[c];
    for (std::size_t c = 0; c < emb; ++c) d_embedding[c] += src[base_cols + c];
  }
  return below;
}

inline GradientSet backward_impl(const MultimodalModel& model, const HiddenTrace& trace,
                                 const Matrix& d_prediction,
                                 const std::map<std::size_t, Matrix>& extra_dh,
                                 const BackwardOptions& opts) {
  const ModelConfig& cfg = model.config;
  const std::size_t num_common = model.common_ff.size();
  if (trace.common_outputs.size() != num_common) {
    throw std::invalid_argument("backward_path: trace does not match model (common stack size)");
  }
  require_same_shape(d_prediction, trace.prediction, "backward_path: prediction gradient");
  for (const auto& [l, dh] : extra_dh) {
    if (l < 1 || l > num_common) {
      throw std::invalid_argument("backward_path: extra gradient for layer " + std::to_string(l) +
                                  " outside 1.." + std::to_string(num_common));
    }
    require_same_shape(dh, trace.common_outputs[l - 1], "backward_path: extra hidden gradient");
  }

  GradientSet grads;
  std::vector<double> d_embedding(trace.embedding.size(), 0.0);
  bool embedding_touched = false;

  // Earliest layer the embedding-only pass still has to reach.
  std::size_t lowest_aware_common = num_common + 1;
  if (!cfg.speaker_aware_common.empty()) lowest_aware_common = *cfg.speaker_aware_common.begin();
  const bool text_has_aware =
      trace.modality == Modality::kText && !cfg.speaker_aware_text.empty();

  // Output layer (linear, shared by both modalities).
  Matrix d_h;
  {
    const Matrix& h_last = trace.common_outputs[num_common - 1];
    if (opts.weight_grads) {
      DenseGradients g = dense_backward(model.output_layer, h_last, trace.prediction, d_prediction);
      grads.accumulate(param_id::kOutputW, g.d_weight.values());
      grads.accumulate(param_id::kOutputB, g.d_bias);
      d_h = std::move(g.d_input);
    } else {
      const Matrix dz = activation_backward(model.output_layer, trace.prediction, d_prediction);
      d_h = dense_backward_input(model.output_layer, dz);
    }
  }

  // Common stack, top down.
  for (std::size_t l = num_common; l >= 1; --l) {
    if (auto it = extra_dh.find(l); it != extra_dh.end()) {
      const Matrix& dh = it->second;
      for (std::size_t i = 0; i < d_h.size(); ++i) d_h.data()[i] += dh.data()[i];
    }
    const DenseLayer& layer = model.common_ff[l - 1];
    const Matrix& input = trace.common_inputs[l - 1];
    const Matrix& output = trace.common_outputs[l - 1];
    Matrix d_input;
    if (opts.weight_grads) {
      DenseGradients g = dense_backward(layer, input, output, d_h);
      grads.accumulate(param_id::common_w(l), g.d_weight.values());
      grads.accumulate(param_id::common_b(l), g.d_bias);
      d_input = std::move(g.d_input);
    } else {
      const Matrix dz = activation_backward(layer, output, d_h);
      d_input = dense_backward_input(layer, dz);
    }
    if (cfg.speaker_aware_common.count(l)) {
      const std::size_t base = layer.in_dim() - cfg.embedding_dim;
      d_h = split_concat_grad(d_input, base, d_embedding);
      embedding_touched = true;
    } else {
      d_h = std::move(d_input);
    }
    if (opts.embedding_only && !text_has_aware && l <= lowest_aware_common) break;
  }

  // The embedding-only pass descends into the encoder only when text
  // layers are speaker-aware (vanilla preset); the speech encoder never
  // holds embedding slots.
  if (trace.modality == Modality::kText) {
    const bool walk_text = !opts.embedding_only || text_has_aware;
    if (walk_text) {
      const std::size_t lowest_aware_text =
          cfg.speaker_aware_text.empty() ? 0 : *cfg.speaker_aware_text.begin();
      for (std::size_t l = model.text_encoder.size(); l >= 1; --l) {
        const DenseLayer& layer = model.text_encoder[l - 1];
        const Matrix& input = trace.text_inputs[l - 1];
        const Matrix& output = trace.text_outputs[l - 1];
        Matrix d_input;
        if (opts.weight_grads) {
          DenseGradients g = dense_backward(layer, input, output, d_h);
          grads.accumulate(param_id::text_w(l), g.d_weight.values());
          grads.accumulate(param_id::text_b(l), g.d_bias);
          d_input = std::move(g.d_input);
        } else {
          const Matrix dz = activation_backward(layer, output, d_h);
          d_input = dense_backward_input(layer, dz);
        }
        if (cfg.speaker_aware_text.count(l)) {
          const std::size_t base = layer.in_dim() - cfg.embedding_dim;
          d_h = split_concat_grad(d_input, base, d_embedding);
          embedding_touched = true;
        } else {
          d_h = std::move(d_input);
        }
        // gradient w.r.t. the linguistic input is discarded (it is data)
        if (opts.embedding_only && l <= lowest_aware_text) break;
      }
    }
  } else if (opts.weight_grads) {
    DenseGradients g =
        dense_backward(model.speech_ff, trace.conv_output, trace.speech_ff_output, d_h);
    grads.accumulate(param_id::kSpeechFfW, g.d_weight.values());
    grads.accumulate(param_id::kSpeechFfB, g.d_bias);
    Conv1DGradients cg = conv1d_backward(model.speech_conv, trace.wave, g.d_input);
    grads.accumulate(param_id::kConvKernels, cg.d_kernels.values());
    grads.accumulate(param_id::kConvBias, cg.d_bias);
    // waveform gradient never needed: waveforms are data
  }

  if (embedding_touched && !trace.speaker_id.empty()) {
    grads.accumulate(param_id::embedding(trace.speaker_id), d_embedding);
  }
  return grads;
}

}  // namespace detail

// Gradients for every parameter on the trace's active path. `extra_dh`
// injects additional gradient at common-stack outputs h^l (keyed by 1-based
// layer index) before the walk continues downward; tied-layer penalties use
// this hook.
inline GradientSet backward_path(const MultimodalModel& model, const HiddenTrace& trace,
                                 const Matrix& d_prediction,
                                 const std::map<std::size_t, Matrix>& extra_dh = {}) {
  return detail::backward_impl(model, trace, d_prediction, extra_dh,
                               detail::BackwardOptions{true, false});
}

// Gradient of the path loss w.r.t. the trace's embedding row only. Skips
// all weight gradients and stops below the lowest speaker-aware layer.
inline GradientSet backward_embedding_only(const MultimodalModel& model, const HiddenTrace& trace,
                                           const Matrix& d_prediction) {
  if (trace.speaker_id.empty()) {
    throw std::invalid_argument("backward_embedding_only: trace has no speaker id");
  }
  return detail::backward_impl(model, trace, d_prediction, {},
                               detail::BackwardOptions{false, true});
}

}  // namespace modaladapt
