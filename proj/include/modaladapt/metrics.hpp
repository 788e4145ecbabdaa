#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "modaladapt/corpus.hpp"
#include "modaladapt/matrix.hpp"
#include "modaladapt/model.hpp"

namespace modaladapt {

// Where metric-relevant channels live inside an acoustic feature matrix.
// Matches the synthetic corpus layout: cepstral block first, then log-F0,
// then the voicing flag. MCD skips the 0th cepstral coefficient (energy)
// by default.
struct AcousticLayout {
  std::vector<std::size_t> cepstral_dims;
  std::size_t log_f0_col = 24;
  std::size_t voicing_col = 25;
  double voicing_threshold = 0.5;
  bool f0_in_log = false;  // report F0 RMSE on the log scale instead of Hz
};

inline AcousticLayout default_layout(std::size_t acoustic_dim) {
  if (acoustic_dim < 4) throw std::invalid_argument("default_layout: acoustic_dim too small");
  AcousticLayout layout;
  for (std::size_t d = 1; d + 2 < acoustic_dim; ++d) layout.cepstral_dims.push_back(d);
  layout.log_f0_col = acoustic_dim - 2;
  layout.voicing_col = acoustic_dim - 1;
  return layout;
}

namespace detail {

inline const double kMcdScale = 10.0 / std::log(10.0);

}  // namespace detail

struct McdAccum {
  double frame_sum = 0.0;  // sum over frames of per-frame MCD in dB
  std::size_t frames = 0;

  void add(const McdAccum& o) {
    frame_sum += o.frame_sum;
    frames += o.frames;
  }
  double mean_db() const {
    if (frames == 0) throw std::runtime_error("mcd: no frames accumulated");
    return frame_sum / static_cast<double>(frames);
  }
};

// Per-frame mel-cepstral distortion over the selected dims:
// (10/ln10) * sqrt(2 * sum_d (ref_d - pred_d)^2), summed over frames.
inline McdAccum mcd_accum(const Matrix& ref, const Matrix& pred,
                          const std::vector<std::size_t>& dims) {
  require_same_shape(ref, pred, "mcd_db");
  if (dims.empty()) throw std::invalid_argument("mcd_db: empty cepstral dim set");
  for (std::size_t d : dims) {
    if (d >= ref.cols()) {
      throw std::invalid_argument("mcd_db: dim " + std::to_string(d) + " outside 0.." +
                                  std::to_string(ref.cols() - 1));
    }
  }
  McdAccum acc;
  for (std::size_t t = 0; t < ref.rows(); ++t) {
    const double* r = ref.row(t);
    const double* p = pred.row(t);
    double sq = 0.0;
    for (std::size_t d : dims) {
      const double e = r[d] - p[d];
      sq += e * e;
    }
    acc.frame_sum += detail::kMcdScale * std::sqrt(2.0 * sq);
  }
  acc.frames = ref.rows();
  return acc;
}

inline double mcd_db(const Matrix& ref, const Matrix& pred, const std::vector<std::size_t>& dims) {
  return mcd_accum(ref, pred, dims).mean_db();
}

struct F0Accum {
  double sq_sum = 0.0;
  std::size_t frames = 0;  // mutually voiced frames only

  void add(const F0Accum& o) {
    sq_sum += o.sq_sum;
    frames += o.frames;
  }
  double rmse() const {
    if (frames == 0) {
      throw std::runtime_error("f0_rmse: no mutually voiced frames (empty support)");
    }
    return std::sqrt(sq_sum / static_cast<double>(frames));
  }
};

// Squared F0 errors over frames voiced in BOTH sequences. The reference
// voicing flag is exact {0,1}; predicted voicing is thresholded.
inline F0Accum f0_accum(const Matrix& ref, const Matrix& pred, const AcousticLayout& layout) {
  require_same_shape(ref, pred, "f0_rmse");
  if (layout.log_f0_col >= ref.cols() || layout.voicing_col >= ref.cols()) {
    throw std::invalid_argument("f0_rmse: layout columns outside the feature matrix");
  }
  F0Accum acc;
  for (std::size_t t = 0; t < ref.rows(); ++t) {
    const bool ref_voiced = ref(t, layout.voicing_col) > layout.voicing_threshold;
    const bool pred_voiced = pred(t, layout.voicing_col) > layout.voicing_threshold;
    if (!ref_voiced || !pred_voiced) continue;
    double e;
    if (layout.f0_in_log) {
      e = ref(t, layout.log_f0_col) - pred(t, layout.log_f0_col);
    } else {
      e = std::exp(ref(t, layout.log_f0_col)) - std::exp(pred(t, layout.log_f0_col));
    }
    acc.sq_sum += e * e;
    ++acc.frames;
  }
  return acc;
}

inline double f0_rmse(const Matrix& ref, const Matrix& pred, const AcousticLayout& layout) {
  return f0_accum(ref, pred, layout).rmse();
}

struct EvalRow {
  std::string model_tag;
  std::string strategy;
  std::string speaker;
  std::string condition;
  std::size_t adapt_utterances = 0;
  double mcd_db = 0.0;
  double f0_rmse = 0.0;
  std::size_t frames = 0;
};

using FramePredictor = std::function<Matrix(const Utterance&)>;

// Frame-weighted metrics of one predictor over one speaker's utterances.
inline EvalRow evaluate_speaker(const FramePredictor& predictor,
                                const std::vector<const Utterance*>& utts,
                                const AcousticLayout& layout, EvalRow tags) {
  if (utts.empty()) throw std::invalid_argument("evaluate_speaker: no utterances");
  McdAccum mcd;
  F0Accum f0;
  for (const Utterance* utt : utts) {
    const Matrix pred = predictor(*utt);
    mcd.add(mcd_accum(utt->acoustic, pred, layout.cepstral_dims));
    f0.add(f0_accum(utt->acoustic, pred, layout));
  }
  tags.mcd_db = mcd.mean_db();
  tags.f0_rmse = f0.rmse();
  tags.frames = mcd.frames;
  return tags;
}

// Test-split metrics of a trained model's own speakers via the text path.
inline std::vector<EvalRow> evaluate_trained_speakers(const MultimodalModel& model,
                                                      const Dataset& data,
                                                      const AcousticLayout& layout,
                                                      const std::string& model_tag,
                                                      const std::string& strategy) {
  std::vector<EvalRow> rows;
  for (const auto& [speaker, row] : model.embeddings.rows()) {
    const auto utts = data.select(Split::kTest, speaker);
    if (utts.empty()) continue;
    FramePredictor predictor = [&](const Utterance& utt) {
      auto [pred, trace] = forward_text(model, utt.linguistic, utt.speaker);
      return pred;
    };
    EvalRow tags;
    tags.model_tag = model_tag;
    tags.strategy = strategy;
    tags.speaker = speaker;
    tags.condition = "multispeaker";
    rows.push_back(evaluate_speaker(predictor, utts, layout, tags));
  }
  return rows;
}

// Metrics of an explicit embedding (adapted or baseline) for one speaker's
// test split, always through the text path.
inline EvalRow evaluate_embedding(const MultimodalModel& model, const Dataset& data,
                                  const std::string& speaker, std::span<const double> embedding,
                                  const AcousticLayout& layout, EvalRow tags) {
  const auto utts = data.select(Split::kTest, speaker);
  if (utts.empty()) {
    throw std::invalid_argument("evaluate_embedding: no test utterances for speaker '" + speaker +
                                "'");
  }
  FramePredictor predictor = [&](const Utterance& utt) {
    auto [pred, trace] = forward_text(model, utt.linguistic, embedding);
    return pred;
  };
  tags.speaker = speaker;
  return evaluate_speaker(predictor, utts, layout, tags);
}

// Per-speaker mean acoustic vector over the train split; the constant
// predictor built from it is the floor any trained model must beat.
inline std::vector<double> speaker_mean_vector(const Dataset& data, const std::string& speaker) {
  const auto utts = data.select(Split::kTrain, speaker);
  if (utts.empty()) {
    throw std::invalid_argument("speaker_mean_vector: no train utterances for '" + speaker + "'");
  }
  const std::size_t dim = utts.front()->acoustic.cols();
  std::vector<double> mean(dim, 0.0);
  std::size_t frames = 0;
  for (const Utterance* utt : utts) {
    for (std::size_t t = 0; t < utt->acoustic.rows(); ++t) {
      const double* row = utt->acoustic.row(t);
      for (std::size_t d = 0; d < dim; ++d) mean[d] += row[d];
    }
    frames += utt->acoustic.rows();
  }
  for (auto& v : mean) v /= static_cast<double>(frames);
  return mean;
}

inline FramePredictor constant_predictor(std::vector<double> vec) {
  return [vec = std::move(vec)](const Utterance& utt) {
    Matrix pred(utt.acoustic.rows(), vec.size());
    for (std::size_t t = 0; t < pred.rows(); ++t) {
      double* row = pred.row(t);
      for (std::size_t d = 0; d < vec.size(); ++d) row[d] = vec[d];
    }
    return pred;
  };
}

inline void write_eval_csv(const std::vector<EvalRow>& rows, std::ostream& out) {
  out << "model,strategy,speaker,condition,adapt_utterances,mcd_db,f0_rmse,frames\n";
  char buf[192];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), ",%zu,%.17g,%.17g,%zu\n", r.adapt_utterances, r.mcd_db,
                  r.f0_rmse, r.frames);
    out << r.model_tag << ',' << r.strategy << ',' << r.speaker << ',' << r.condition << buf;
  }
}

// Frame-weighted aggregation per (model, strategy, condition, size), in the
// style of a compact objective-results table.
inline void write_eval_summary(const std::vector<EvalRow>& rows, std::ostream& out) {
  struct Agg {
    double mcd_sum = 0.0, f0_sq_sum = 0.0;
    std::size_t frames = 0, speakers = 0;
  };
  std::map<std::string, Agg> groups;
  for (const auto& r : rows) {
    const std::string key = r.model_tag + " | " + r.strategy + " | " + r.condition +
                            (r.adapt_utterances > 0 ? " | n=" + std::to_string(r.adapt_utterances)
                                                    : "");
    auto& g = groups[key];
    g.mcd_sum += r.mcd_db * static_cast<double>(r.frames);
    g.f0_sq_sum += r.f0_rmse * r.f0_rmse * static_cast<double>(r.frames);
    g.frames += r.frames;
    g.speakers += 1;
  }
  out << "group                                         MCD [dB]   F0 RMSE   speakers\n";
  char buf[160];
  for (const auto& [key, g] : groups) {
    const double mcd = g.mcd_sum / static_cast<double>(g.frames);
    const double f0 = std::sqrt(g.f0_sq_sum / static_cast<double>(g.frames));
    std::snprintf(buf, sizeof(buf), "%-45s %8.4f %9.4f %10zu\n", key.c_str(), mcd, f0, g.speakers);
    out << buf;
  }
}

}  // namespace modaladapt
