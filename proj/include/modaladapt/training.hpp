#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "modaladapt/corpus.hpp"
#include "modaladapt/model.hpp"
#include "modaladapt/optim.hpp"
#include "modaladapt/rng.hpp"

namespace modaladapt {

// The five ways to train the shared stack. VL is the text-only baseline;
// SS trains text first and the speech encoder second with everything else
// frozen; STOCH flips a coin per batch between modalities; JG adds the
// speech path's loss with weight alpha; TL penalizes the distance between
// tied common-layer activations with weight beta; JG_TL combines both.
enum class Strategy { kVL, kSS, kStochastic, kJG, kTL, kJGTL };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kVL: return "VL";
    case Strategy::kSS: return "SS";
    case Strategy::kStochastic: return "STOCH";
    case Strategy::kJG: return "JG";
    case Strategy::kTL: return "TL";
    case Strategy::kJGTL: return "JG+TL";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "VL") return Strategy::kVL;
  if (s == "SS") return Strategy::kSS;
  if (s == "STOCH") return Strategy::kStochastic;
  if (s == "JG") return Strategy::kJG;
  if (s == "TL") return Strategy::kTL;
  if (s == "JG+TL" || s == "JG_TL" || s == "JGTL") return Strategy::kJGTL;
  throw std::invalid_argument("unknown strategy '" + s + "' (expected VL, SS, STOCH, JG, TL, JG+TL)");
}

inline bool strategy_uses_speech(Strategy s) { return s != Strategy::kVL; }

enum class TiedDistance { kSquaredEuclideanMean, kCosine };

inline std::string to_string(TiedDistance d) {
  return d == TiedDistance::kSquaredEuclideanMean ? "squared_euclidean_mean" : "cosine";
}

inline TiedDistance tied_distance_from_string(const std::string& s) {
  if (s == "squared_euclidean_mean") return TiedDistance::kSquaredEuclideanMean;
  if (s == "cosine") return TiedDistance::kCosine;
  throw std::invalid_argument("unknown tied distance '" + s + "'");
}

struct LossWeights {
  double alpha = 0.0;  // weight of the speech path's own loss
  double beta = 0.0;   // weight of the tied-layer penalty
};

struct EarlyStopPolicy {
  std::size_t patience = 5;
  std::size_t max_epochs = 128;
};

struct TrainingPlan {
  Strategy strategy = Strategy::kJG;
  LossWeights weights;
  TiedDistance tied_distance = TiedDistance::kSquaredEuclideanMean;
  std::set<std::size_t> tied_layers = {1};
  EarlyStopPolicy early_stop;
  AdamConfig optimizer;
  std::uint64_t seed = 0;
};

// Rejects every strategy/weight inconsistency before any compute.
inline void validate(const TrainingPlan& plan) {
  const double a = plan.weights.alpha, b = plan.weights.beta;
  if (!std::isfinite(a) || !std::isfinite(b) || a < 0.0 || b < 0.0) {
    throw std::invalid_argument("TrainingPlan: loss weights must be finite and >= 0");
  }
  switch (plan.strategy) {
    case Strategy::kVL:
    case Strategy::kSS:
    case Strategy::kStochastic:
      if (a != 0.0 || b != 0.0) {
        throw std::invalid_argument("TrainingPlan: " + to_string(plan.strategy) +
                                    " takes no loss weights (alpha/beta must be unset)");
      }
      break;
    case Strategy::kJG:
      if (a <= 0.0) throw std::invalid_argument("TrainingPlan: JG requires alpha > 0");
      if (b != 0.0) throw std::invalid_argument("TrainingPlan: JG takes no beta");
      break;
    case Strategy::kTL:
      if (b <= 0.0) throw std::invalid_argument("TrainingPlan: TL requires beta > 0");
      if (a != 0.0) throw std::invalid_argument("TrainingPlan: TL takes no alpha");
      break;
    case Strategy::kJGTL:
      if (a <= 0.0 || b <= 0.0) {
        throw std::invalid_argument("TrainingPlan: JG+TL requires alpha > 0 and beta > 0");
      }
      break;
  }
  if (plan.early_stop.patience < 1) {
    throw std::invalid_argument("TrainingPlan: patience must be >= 1");
  }
}

struct LossBreakdown {
  double loss_main = 0.0;
  double loss_sub = 0.0;
  double tied_penalty = 0.0;
  double total = 0.0;
};

// Single place that composes the total, so the recomposition invariant
// total == loss_main + alpha*loss_sub + beta*tied_penalty holds literally
// on every record.
inline LossBreakdown make_breakdown(double main, double sub, double tied, const LossWeights& w) {
  return {main, sub, tied, main + w.alpha * sub + w.beta * tied};
}

struct TiedPenaltyResult {
  double value = 0.0;
  std::map<std::size_t, Matrix> d_main;  // gradient w.r.t. h^l of the text path
  std::map<std::size_t, Matrix> d_sub;   // gradient w.r.t. h^l of the speech path
};

// Sum over tied layers of the distance between the two paths' hidden
// activations. Squared-Euclidean is frame-mean reduced; cosine is
// (1 - cosine similarity) averaged over frames. Gradients flow into both
// paths.
inline TiedPenaltyResult tied_penalty(const HiddenTrace& main, const HiddenTrace& sub,
                                      const std::set<std::size_t>& tied_layers,
                                      TiedDistance distance) {
  if (main.common_outputs.size() != sub.common_outputs.size()) {
    throw std::invalid_argument("tied_penalty: traces come from different common stacks");
  }
  TiedPenaltyResult result;
  for (std::size_t l : tied_layers) {
    if (l < 1 || l > main.common_outputs.size()) {
      throw std::invalid_argument("tied_penalty: tied layer " + std::to_string(l) + " outside 1.." +
                                  std::to_string(main.common_outputs.size()));
    }
    const Matrix& a = main.common_outputs[l - 1];
    const Matrix& b = sub.common_outputs[l - 1];
    if (a.rows() != b.rows()) {
      throw std::invalid_argument("tied_penalty: text path has " + std::to_string(a.rows()) +
                                  " frames but speech path has " + std::to_string(b.rows()));
    }
    require_same_shape(a, b, "tied_penalty");
    const double frames = static_cast<double>(a.rows());
    Matrix da(a.rows(), a.cols());
    Matrix db(a.rows(), a.cols());
    double value = 0.0;
    if (distance == TiedDistance::kSquaredEuclideanMean) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a.data()[i] - b.data()[i];
        value += diff * diff;
        da.data()[i] = 2.0 * diff / frames;
        db.data()[i] = -2.0 * diff / frames;
      }
      value /= frames;
    } else {
      for (std::size_t t = 0; t < a.rows(); ++t) {
        const double* at = a.row(t);
        const double* bt = b.row(t);
        double dot = 0.0, na2 = 0.0, nb2 = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) {
          dot += at[c] * bt[c];
          na2 += at[c] * at[c];
          nb2 += bt[c] * bt[c];
        }
        const double na = std::sqrt(na2), nb = std::sqrt(nb2);
        if (na == 0.0 || nb == 0.0) {
          // degenerate frame: treat as maximally distant with no gradient
          value += 1.0;
          continue;
        }
        const double cos = dot / (na * nb);
        value += 1.0 - cos;
        double* dat = da.row(t);
        double* dbt = db.row(t);
        for (std::size_t c = 0; c < a.cols(); ++c) {
          dat[c] = -(bt[c] / (na * nb) - cos * at[c] / na2) / frames;
          dbt[c] = -(at[c] / (na * nb) - cos * bt[c] / nb2) / frames;
        }
      }
      value /= frames;
    }
    result.value += value;
    result.d_main.emplace(l, std::move(da));
    result.d_sub.emplace(l, std::move(db));
  }
  return result;
}

struct CompositeResult {
  LossBreakdown breakdown;
  Matrix d_pred_main;                    // seed for the text path's prediction
  Matrix d_pred_sub;                     // seed for the speech path, scaled by alpha
  std::map<std::size_t, Matrix> d_h_main;  // tied-layer seeds, scaled by beta
  std::map<std::size_t, Matrix> d_h_sub;
};

// Composite objective: loss_main + alpha * loss_sub + beta * tied penalty.
// `sub` may be null only when alpha and beta are both zero.
inline CompositeResult composite_loss(const HiddenTrace& main, const HiddenTrace* sub,
                                      const Matrix& target, const LossWeights& weights,
                                      const std::set<std::size_t>& tied_layers,
                                      TiedDistance distance) {
  if (sub == nullptr && (weights.alpha > 0.0 || weights.beta > 0.0)) {
    throw std::invalid_argument(
        "composite_loss: weighted sub-loss or tied penalty requested without a speech forward "
        "pass");
  }
  CompositeResult result;
  MseResult main_mse = mse_loss(main.prediction, target);
  result.d_pred_main = std::move(main_mse.d_pred);

  double sub_loss = 0.0;
  double tied = 0.0;
  if (sub != nullptr) {
    if (main.frames() != sub->frames()) {
      throw std::invalid_argument("composite_loss: text path has " +
                                  std::to_string(main.frames()) + " frames but speech path has " +
                                  std::to_string(sub->frames()));
    }
    MseResult sub_mse = mse_loss(sub->prediction, target);
    sub_loss = sub_mse.loss;
    result.d_pred_sub = std::move(sub_mse.d_pred);
    for (std::size_t i = 0; i < result.d_pred_sub.size(); ++i) {
      result.d_pred_sub.data()[i] *= weights.alpha;
    }
    if (weights.beta > 0.0 || !tied_layers.empty()) {
      TiedPenaltyResult tp = tied_penalty(main, *sub, tied_layers, distance);
      tied = tp.value;
      result.d_h_main = std::move(tp.d_main);
      result.d_h_sub = std::move(tp.d_sub);
      for (auto& [l, m] : result.d_h_main) {
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= weights.beta;
      }
      for (auto& [l, m] : result.d_h_sub) {
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= weights.beta;
      }
    }
  }
  result.breakdown = make_breakdown(main_mse.loss, sub_loss, tied, weights);
  return result;
}

struct StepRecord {
  std::size_t epoch = 0;
  std::string utterance_id;
  Modality modality = Modality::kText;
  LossBreakdown breakdown;
};

using StepObserver = std::function<void(const StepRecord&)>;

// Patience-based stopping: stop after `patience` consecutive epochs without
// strict improvement of the validation loss, or at `max_epochs`.
class EarlyStopper {
 public:
  explicit EarlyStopper(EarlyStopPolicy policy) : policy_(policy) {}

  // Returns false when training should stop after this epoch.
  bool observe(double validation_loss) {
    ++epoch_;
    if (validation_loss < best_) {
      best_ = validation_loss;
      best_epoch_ = epoch_;
      streak_ = 0;
      improved_ = true;
    } else {
      ++streak_;
      improved_ = false;
    }
    if (streak_ >= policy_.patience) {
      reason_ = "patience";
      return false;
    }
    if (epoch_ >= policy_.max_epochs) {
      reason_ = "max_epochs";
      return false;
    }
    return true;
  }

  bool improved_last() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }
  std::size_t epochs_seen() const { return epoch_; }
  const std::string& reason() const { return reason_; }

 private:
  EarlyStopPolicy policy_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t streak_ = 0;
  std::size_t epoch_ = 0;
  bool improved_ = false;
  std::string reason_;
};

struct TrainingHistory {
  struct Epoch {
    std::size_t epoch = 0;
    std::size_t phase = 1;  // step-by-step training uses phase 2 for the speech encoder
    LossBreakdown train;
    LossBreakdown validation;
  };
  std::vector<Epoch> epochs;
  std::size_t stopped_epoch = 0;
  std::size_t best_epoch = 0;
  std::string stop_reason;
};

namespace detail {

inline const std::vector<double>& embedding_for(const MultimodalModel& model,
                                                const Utterance& utt) {
  return model.embeddings.row(utt.speaker);
}

inline void require_wave(const Utterance& utt) {
  if (!utt.has_wave()) {
    throw std::runtime_error("utterance '" + utt.id +
                             "' has no waveform but the strategy trains the speech path");
  }
}

// Forward + composite loss for one utterance under a dual-path strategy.
inline CompositeResult dual_path_step(const MultimodalModel& model, const Utterance& utt,
                                      const TrainingPlan& plan, HiddenTrace& trace_main,
                                      HiddenTrace& trace_sub) {
  require_wave(utt);
  auto [pred_main, tmain] = forward_text(model, utt.linguistic, utt.speaker);
  auto [pred_sub, tsub] = forward_speech(model, utt.wave, utt.speaker);
  if (tmain.frames() != tsub.frames()) {
    throw std::runtime_error("utterance '" + utt.id + "': text path produced " +
                             std::to_string(tmain.frames()) + " frames but speech path " +
                             std::to_string(tsub.frames()) +
                             " (conv stride/padding must match samples_per_frame)");
  }
  trace_main = std::move(tmain);
  trace_sub = std::move(tsub);
  const std::set<std::size_t> tied =
      plan.weights.beta > 0.0 ? plan.tied_layers : std::set<std::size_t>{};
  return composite_loss(trace_main, &trace_sub, utt.acoustic, plan.weights, tied,
                        plan.tied_distance);
}

}  // namespace detail

// One pass over the shuffled training utterances (batch = one utterance).
// Returns the per-step mean breakdown.
inline LossBreakdown train_epoch(MultimodalModel& model,
                                 const std::vector<const Utterance*>& train_utts,
                                 const TrainingPlan& plan, AdamOptimizer& optimizer,
                                 std::size_t epoch_index, const StepObserver& observer = {}) {
  if (train_utts.empty()) throw std::invalid_argument("train_epoch: empty training split");
  std::vector<const Utterance*> order = train_utts;
  auto rng = make_rng(plan.seed, "epoch", epoch_index);
  std::shuffle(order.begin(), order.end(), rng);
  std::bernoulli_distribution coin(0.5);

  const auto params = model.params();
  double sum_main = 0.0, sum_sub = 0.0, sum_tied = 0.0;
  for (const Utterance* utt : order) {
    LossBreakdown step;
    GradientSet grads;
    Modality modality = Modality::kText;
    switch (plan.strategy) {
      case Strategy::kVL: {
        auto [pred, trace] = forward_text(model, utt->linguistic, utt->speaker);
        MseResult mse = mse_loss(pred, utt->acoustic);
        grads = backward_path(model, trace, mse.d_pred);
        step = make_breakdown(mse.loss, 0.0, 0.0, plan.weights);
        break;
      }
      case Strategy::kStochastic: {
        const bool use_speech = coin(rng);
        if (use_speech) {
          detail::require_wave(*utt);
          auto [pred, trace] = forward_speech(model, utt->wave, utt->speaker);
          MseResult mse = mse_loss(pred, utt->acoustic);
          grads = backward_path(model, trace, mse.d_pred);
          step = make_breakdown(mse.loss, 0.0, 0.0, plan.weights);
          modality = Modality::kSpeech;
        } else {
          auto [pred, trace] = forward_text(model, utt->linguistic, utt->speaker);
          MseResult mse = mse_loss(pred, utt->acoustic);
          grads = backward_path(model, trace, mse.d_pred);
          step = make_breakdown(mse.loss, 0.0, 0.0, plan.weights);
        }
        break;
      }
      case Strategy::kSS:
        throw std::invalid_argument("train_epoch: SS runs through train_step_by_step");
      case Strategy::kJG:
      case Strategy::kTL:
      case Strategy::kJGTL: {
        HiddenTrace trace_main, trace_sub;
        CompositeResult comp = detail::dual_path_step(model, *utt, plan, trace_main, trace_sub);
        grads = backward_path(model, trace_main, comp.d_pred_main, comp.d_h_main);
        grads.accumulate(backward_path(model, trace_sub, comp.d_pred_sub, comp.d_h_sub));
        step = comp.breakdown;
        break;
      }
    }
    optimizer.step(params, grads);
    sum_main += step.loss_main;
    sum_sub += step.loss_sub;
    sum_tied += step.tied_penalty;
    if (observer) observer({epoch_index, utt->id, modality, step});
  }
  const double n = static_cast<double>(order.size());
  return make_breakdown(sum_main / n, sum_sub / n, sum_tied / n, plan.weights);
}

// Loss of a split without updates. The stochastic strategy validates on the
// text path only (the main task) to keep the early-stop signal
// deterministic.
inline LossBreakdown evaluate_split_loss(const MultimodalModel& model,
                                         const std::vector<const Utterance*>& utts,
                                         const TrainingPlan& plan) {
  if (utts.empty()) throw std::invalid_argument("evaluate_split_loss: empty split");
  double sum_main = 0.0, sum_sub = 0.0, sum_tied = 0.0;
  for (const Utterance* utt : utts) {
    switch (plan.strategy) {
      case Strategy::kVL:
      case Strategy::kStochastic:
      case Strategy::kSS: {
        auto [pred, trace] = forward_text(model, utt->linguistic, utt->speaker);
        sum_main += mse_loss(pred, utt->acoustic).loss;
        break;
      }
      case Strategy::kJG:
      case Strategy::kTL:
      case Strategy::kJGTL: {
        HiddenTrace trace_main, trace_sub;
        CompositeResult comp = detail::dual_path_step(model, *utt, plan, trace_main, trace_sub);
        sum_main += comp.breakdown.loss_main;
        sum_sub += comp.breakdown.loss_sub;
        sum_tied += comp.breakdown.tied_penalty;
        break;
      }
    }
  }
  const double n = static_cast<double>(utts.size());
  return make_breakdown(sum_main / n, sum_sub / n, sum_tied / n, plan.weights);
}

namespace detail {

inline void check_speech_data(const std::vector<const Utterance*>& utts) {
  for (const Utterance* u : utts) require_wave(*u);
}

inline std::vector<const Utterance*> training_split(const Dataset& data, Split split) {
  auto utts = data.select_role(split, SpeakerRole::kTrain);
  if (utts.empty()) {
    throw std::invalid_argument("fit: empty " + to_string(split) + " split for training speakers");
  }
  return utts;
}

}  // namespace detail

// Multi-speaker training with validation-based early stopping (patience 5,
// cap 128 by default). Keeps the best-validation parameters.
inline TrainingHistory fit(MultimodalModel& model, const Dataset& data, const TrainingPlan& plan,
                           const StepObserver& observer = {}) {
  validate(plan);
  if (plan.strategy == Strategy::kSS) {
    throw std::invalid_argument("fit: use train_step_by_step for the SS strategy");
  }
  const auto train_utts = detail::training_split(data, Split::kTrain);
  const auto valid_utts = detail::training_split(data, Split::kValid);
  if (strategy_uses_speech(plan.strategy)) {
    if (!model.config.has_speech_encoder) {
      throw std::invalid_argument("fit: strategy " + to_string(plan.strategy) +
                                  " needs a model with a speech encoder");
    }
    detail::check_speech_data(train_utts);
    if (plan.strategy != Strategy::kStochastic) detail::check_speech_data(valid_utts);
  }

  AdamOptimizer optimizer(plan.optimizer);
  EarlyStopper stopper(plan.early_stop);
  TrainingHistory history;
  auto best = snapshot_params(model);

  for (std::size_t epoch = 1; epoch <= plan.early_stop.max_epochs; ++epoch) {
    const LossBreakdown train = train_epoch(model, train_utts, plan, optimizer, epoch, observer);
    const LossBreakdown valid = evaluate_split_loss(model, valid_utts, plan);
    history.epochs.push_back({epoch, 1, train, valid});
    const bool keep_going = stopper.observe(valid.total);
    if (stopper.improved_last()) best = snapshot_params(model);
    if (!keep_going) break;
  }
  restore_params(model, best);
  history.stopped_epoch = stopper.epochs_seen();
  history.best_epoch = stopper.best_epoch();
  history.stop_reason = stopper.reason();
  model.trained = true;
  if (strategy_uses_speech(plan.strategy)) model.speech_encoder_trained = true;
  return history;
}

// Phase 2 of step-by-step training: optimize the speech encoder against the
// same acoustic targets through the speech path while every other parameter
// stays bit-identical.
inline TrainingHistory train_speech_encoder_phase(MultimodalModel& model, const Dataset& data,
                                                  const TrainingPlan& plan,
                                                  std::size_t epoch_offset = 0,
                                                  const StepObserver& observer = {}) {
  if (!model.config.has_speech_encoder) {
    throw std::invalid_argument("train_speech_encoder_phase: model has no speech encoder");
  }
  const auto train_utts = detail::training_split(data, Split::kTrain);
  const auto valid_utts = detail::training_split(data, Split::kValid);
  detail::check_speech_data(train_utts);
  detail::check_speech_data(valid_utts);

  const std::set<std::string> scope = model.param_ids(ParamScope::speech_encoder_only());
  const auto params = model.params(ParamScope::speech_encoder_only());

  AdamOptimizer optimizer(plan.optimizer);
  EarlyStopper stopper(plan.early_stop);
  TrainingHistory history;
  auto best = snapshot_params(model);

  auto speech_loss = [&](const std::vector<const Utterance*>& utts, bool update,
                         std::size_t epoch) {
    std::vector<const Utterance*> order = utts;
    if (update) {
      auto rng = make_rng(plan.seed, "ss_phase2_epoch", epoch);
      std::shuffle(order.begin(), order.end(), rng);
    }
    double sum = 0.0;
    for (const Utterance* utt : order) {
      auto [pred, trace] = forward_speech(model, utt->wave, utt->speaker);
      MseResult mse = mse_loss(pred, utt->acoustic);
      sum += mse.loss;
      if (update) {
        GradientSet grads = backward_path(model, trace, mse.d_pred);
        grads.restrict_to(scope);
        optimizer.step(params, grads);
        if (observer) {
          observer({epoch, utt->id, Modality::kSpeech,
                    make_breakdown(mse.loss, 0.0, 0.0, plan.weights)});
        }
      }
    }
    return sum / static_cast<double>(order.size());
  };

  for (std::size_t epoch = 1; epoch <= plan.early_stop.max_epochs; ++epoch) {
    const double train = speech_loss(train_utts, true, epoch);
    const double valid = speech_loss(valid_utts, false, epoch);
    history.epochs.push_back({epoch_offset + epoch, 2, make_breakdown(train, 0.0, 0.0, plan.weights),
                              make_breakdown(valid, 0.0, 0.0, plan.weights)});
    const bool keep_going = stopper.observe(valid);
    if (stopper.improved_last()) best = snapshot_params(model);
    if (!keep_going) break;
  }
  restore_params(model, best);
  history.stopped_epoch = epoch_offset + stopper.epochs_seen();
  history.best_epoch = epoch_offset + stopper.best_epoch();
  history.stop_reason = stopper.reason();
  model.speech_encoder_trained = true;
  return history;
}

// SS: text path first (vanilla-style epochs), then the speech encoder with
// the common stack, text encoder and embeddings frozen.
inline TrainingHistory train_step_by_step(MultimodalModel& model, const Dataset& data,
                                          const TrainingPlan& plan,
                                          const StepObserver& observer = {}) {
  validate(plan);
  if (plan.strategy != Strategy::kSS) {
    throw std::invalid_argument("train_step_by_step: plan strategy must be SS");
  }
  if (!model.config.has_speech_encoder) {
    throw std::invalid_argument("train_step_by_step: model has no speech encoder");
  }

  TrainingPlan phase1 = plan;
  phase1.strategy = Strategy::kVL;
  TrainingHistory history = fit(model, data, phase1, observer);

  TrainingHistory phase2 =
      train_speech_encoder_phase(model, data, plan, history.stopped_epoch, observer);
  history.epochs.insert(history.epochs.end(), phase2.epochs.begin(), phase2.epochs.end());
  history.stopped_epoch = phase2.stopped_epoch;
  history.stop_reason = history.stop_reason + "; phase2: " + phase2.stop_reason;
  model.trained = true;
  model.speech_encoder_trained = true;
  return history;
}

// History CSV: epoch, split, loss_main, loss_sub, tied_penalty, total.
inline void write_history_csv(const TrainingHistory& history, std::ostream& out) {
  out << "epoch,split,loss_main,loss_sub,tied_penalty,total\n";
  char buf[128];
  auto row = [&](std::size_t epoch, const char* split, const LossBreakdown& b) {
    std::snprintf(buf, sizeof(buf), "%zu,%s,%.17g,%.17g,%.17g,%.17g\n", epoch, split, b.loss_main,
                  b.loss_sub, b.tied_penalty, b.total);
    out << buf;
  };
  for (const auto& e : history.epochs) {
    row(e.epoch, "train", e.train);
    row(e.epoch, "valid", e.validation);
  }
}

}  // namespace modaladapt
