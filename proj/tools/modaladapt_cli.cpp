// Command-line front end: data generation, training under any strategy,
// adaptation sweeps, evaluation, and end-to-end reproduction profiles.
// Every command is deterministic given (config, seed) and overwrites its
// outputs with identical bytes on rerun.

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "modaladapt/modaladapt.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace modaladapt;

namespace {

// ---------------------------------------------------------------------------
// Experiment configuration (JSON file, every field optional)

struct CliConfig {
  SyntheticTaskSpec task;
  ModelConfig model;
  TrainingPlan plan;
  std::vector<std::size_t> adapt_sizes = {10, 40, 160};
  InitPolicy adapt_init = InitPolicy::kMeanOfTrained;
  std::size_t seeds = 3;
  std::size_t workers = 1;
};

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

SyntheticTaskSpec task_from_json(const json& j, SyntheticTaskSpec task) {
  maybe(j, "num_train_speakers", task.num_train_speakers);
  maybe(j, "num_adapt_speakers", task.num_adapt_speakers);
  maybe(j, "utterances_per_speaker", task.utterances_per_speaker);
  maybe(j, "adapt_pool_utterances", task.adapt_pool_utterances);
  maybe(j, "valid_per_speaker", task.valid_per_speaker);
  maybe(j, "test_per_speaker", task.test_per_speaker);
  maybe(j, "min_frames", task.min_frames);
  maybe(j, "max_frames", task.max_frames);
  maybe(j, "linguistic_dim", task.linguistic_dim);
  maybe(j, "acoustic_dim", task.acoustic_dim);
  maybe(j, "samples_per_frame", task.samples_per_frame);
  maybe(j, "speaker_latent_dim", task.speaker_latent_dim);
  maybe(j, "noise_std", task.noise_std);
  maybe(j, "seed", task.seed);
  return task;
}

ModelConfig model_from_json(const json& j, ModelConfig model) {
  maybe(j, "hidden_width", model.hidden_width);
  maybe(j, "embedding_dim", model.embedding_dim);
  maybe(j, "num_text_ff", model.num_text_ff);
  maybe(j, "num_common_ff", model.num_common_ff);
  if (j.contains("conv")) {
    maybe(j.at("conv"), "width", model.conv.width);
    maybe(j.at("conv"), "stride", model.conv.stride);
    maybe(j.at("conv"), "filters", model.conv.filters);
  }
  if (j.contains("speaker_aware_text")) {
    model.speaker_aware_text = j.at("speaker_aware_text").get<std::set<std::size_t>>();
  }
  if (j.contains("speaker_aware_common")) {
    model.speaker_aware_common = j.at("speaker_aware_common").get<std::set<std::size_t>>();
  }
  if (j.contains("tied_layers")) {
    model.tied_layers = j.at("tied_layers").get<std::set<std::size_t>>();
  }
  return model;
}

TrainingPlan plan_from_json(const json& j, TrainingPlan plan) {
  if (j.contains("strategy")) plan.strategy = strategy_from_string(j.at("strategy"));
  maybe(j, "alpha", plan.weights.alpha);
  maybe(j, "beta", plan.weights.beta);
  if (j.contains("tied_distance")) {
    plan.tied_distance = tied_distance_from_string(j.at("tied_distance"));
  }
  if (j.contains("tied_layers")) {
    plan.tied_layers = j.at("tied_layers").get<std::set<std::size_t>>();
  }
  maybe(j, "patience", plan.early_stop.patience);
  maybe(j, "max_epochs", plan.early_stop.max_epochs);
  maybe(j, "learning_rate", plan.optimizer.learning_rate);
  maybe(j, "seed", plan.seed);
  return plan;
}

CliConfig load_cli_config(const std::string& path) {
  CliConfig cfg;
  // Strategy presets fill the loss weights unless the file overrides them.
  cfg.plan = plan_for_strategy(Strategy::kJG, cfg.plan.seed);
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("config '" + path + "': " + e.what());
  }
  if (j.contains("task")) cfg.task = task_from_json(j.at("task"), cfg.task);
  if (j.contains("model")) cfg.model = model_from_json(j.at("model"), cfg.model);
  if (j.contains("training")) {
    // re-derive weight defaults for the configured strategy first
    TrainingPlan base = cfg.plan;
    if (j.at("training").contains("strategy")) {
      base = plan_for_strategy(strategy_from_string(j.at("training").at("strategy")), base.seed);
    }
    cfg.plan = plan_from_json(j.at("training"), base);
  }
  if (j.contains("adaptation")) {
    const json& a = j.at("adaptation");
    if (a.contains("sizes")) cfg.adapt_sizes = a.at("sizes").get<std::vector<std::size_t>>();
    if (a.contains("init")) cfg.adapt_init = init_policy_from_string(a.at("init"));
  }
  maybe(j, "seeds", cfg.seeds);
  maybe(j, "workers", cfg.workers);
  maybe(j, "seed", cfg.task.seed);
  return cfg;
}

void apply_paper_dims(ModelConfig& model) {
  model.hidden_width = 1024;
  model.embedding_dim = 128;
}

// Conv geometry must stay frame-aligned with the corpus.
void align_conv_to_corpus(ModelConfig& model, const Dataset& data) {
  const auto& task = data.task();
  auto it = task.find("samples_per_frame");
  if (it == task.end()) return;
  const std::size_t spf = std::stoull(it->second);
  if (model.conv.stride != spf) {
    log_info("conv stride " + std::to_string(model.conv.stride) +
             " does not match samples_per_frame " + it->second +
             "; deriving conv geometry from the corpus");
    model.conv.stride = spf;
    model.conv.width = 5 * spf;
  }
}

std::string strategy_file_tag(Strategy s) {
  switch (s) {
    case Strategy::kVL: return "vl";
    case Strategy::kSS: return "ss";
    case Strategy::kStochastic: return "stoch";
    case Strategy::kJG: return "jg";
    case Strategy::kTL: return "tl";
    case Strategy::kJGTL: return "jg_tl";
  }
  return "unknown";
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

// Deterministic parallel job runner: jobs write only their own slots.
void run_jobs(std::size_t workers, std::vector<std::function<void()>>& jobs) {
  if (workers <= 1 || jobs.size() <= 1) {
    for (auto& job : jobs) job();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        jobs[i]();
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  const std::size_t n = std::min(workers, jobs.size());
  threads.reserve(n);
  for (std::size_t w = 0; w < n; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Resumable state for the reproduce pipelines

class RunState {
 public:
  explicit RunState(fs::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (in) {
      try {
        json j = json::parse(in);
        for (const auto& u : j.value("done", json::array())) done_.insert(u.get<std::string>());
      } catch (const json::exception&) {
        // a corrupt state file just means starting over
        done_.clear();
      }
    }
  }

  bool is_done(const std::string& unit) const { return done_.count(unit) != 0; }

  void mark_done(const std::string& unit) {
    std::lock_guard<std::mutex> lock(mutex_);
    done_.insert(unit);
    json j;
    j["done"] = std::vector<std::string>(done_.begin(), done_.end());
    write_text_file(path_, j.dump(2) + "\n");
  }

 private:
  fs::path path_;
  std::set<std::string> done_;
  std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Commands

int cmd_gen_data(const CliConfig& cfg, const std::string& out_dir) {
  const fs::path corpus_dir = fs::path(out_dir) / "corpus";
  fs::create_directories(corpus_dir);
  const CorpusManifest manifest = generate_corpus(cfg.task, corpus_dir);
  log_info("wrote " + std::to_string(manifest.utterances.size()) + " utterances for " +
           std::to_string(manifest.speakers.size()) + " speakers");
  std::cout << (corpus_dir / "manifest.txt").string() << "\n";
  return 0;
}

struct TrainArtifacts {
  fs::path checkpoint;
  fs::path history;
};

TrainArtifacts train_to_dir(const Dataset& data, ModelConfig model_cfg, Strategy strategy,
                            std::uint64_t seed, const TrainingPlan& plan_base,
                            const fs::path& out_dir) {
  ModelConfig cfg = config_for_strategy(model_cfg, strategy);
  const auto& first = data.utterances().front();
  cfg.linguistic_dim = first.linguistic.cols();
  cfg.acoustic_dim = first.acoustic.cols();

  MultimodalModel model = build_model(cfg, data.speaker_ids(SpeakerRole::kTrain), seed);
  TrainingPlan plan = plan_for_strategy(strategy, seed);
  plan.tied_distance = plan_base.tied_distance;
  plan.tied_layers = plan_base.tied_layers;
  plan.early_stop = plan_base.early_stop;
  plan.optimizer = plan_base.optimizer;
  if (strategy == plan_base.strategy) plan.weights = plan_base.weights;
  validate(plan);

  TrainingHistory history;
  if (strategy == Strategy::kSS) {
    history = train_step_by_step(model, data, plan);
  } else {
    history = fit(model, data, plan);
  }

  const std::string tag = strategy_file_tag(strategy) + "_seed" + std::to_string(seed);
  fs::create_directories(out_dir / "checkpoints");
  fs::create_directories(out_dir / "history");
  TrainArtifacts artifacts;
  artifacts.checkpoint = out_dir / "checkpoints" / (tag + ".mmck");
  artifacts.history = out_dir / "history" / (tag + ".csv");
  save_checkpoint(model, artifacts.checkpoint);
  std::ofstream hist(artifacts.history, std::ios::trunc);
  write_history_csv(history, hist);
  log_info(tag + ": stopped at epoch " + std::to_string(history.stopped_epoch) + " (" +
           history.stop_reason + "), best epoch " + std::to_string(history.best_epoch));
  return artifacts;
}

int cmd_train(const CliConfig& cfg, const std::string& manifest, const std::string& out_dir,
              Strategy strategy, std::uint64_t seed, bool paper_dims) {
  const Dataset data = load_corpus(manifest);
  ModelConfig model_cfg = cfg.model;
  if (paper_dims) apply_paper_dims(model_cfg);
  align_conv_to_corpus(model_cfg, data);
  const TrainArtifacts artifacts =
      train_to_dir(data, model_cfg, strategy, seed, cfg.plan, out_dir);
  std::cout << artifacts.checkpoint.string() << "\n";
  return 0;
}

int cmd_adapt(const CliConfig& cfg, const std::string& checkpoint, const std::string& manifest,
              AdaptationMode mode, std::vector<std::size_t> sizes, std::uint64_t seed,
              const std::string& out_dir, std::size_t workers) {
  const MultimodalModel model = load_checkpoint(checkpoint);
  const Dataset data = load_corpus(manifest);
  const AcousticLayout layout = default_layout(model.config.acoustic_dim);
  const std::string hash = config_hash(model);
  if (sizes.empty()) sizes = cfg.adapt_sizes;

  const auto speakers = data.speaker_ids(SpeakerRole::kAdapt);
  if (speakers.empty()) throw std::runtime_error("adapt: the corpus has no adaptation speakers");
  if (mode == AdaptationMode::kUnsupervised && !model.config.has_speech_encoder) {
    throw std::runtime_error(
        "adapt: unsupervised mode needs a speech encoder; this checkpoint has none (vanilla "
        "model)");
  }

  fs::create_directories(fs::path(out_dir) / "embeddings");

  struct Job {
    std::string speaker;
    std::size_t size = 0;
    std::vector<const Utterance*> subset;
    EvalRow row;
    fs::path embedding_path;
  };
  std::vector<Job> jobs;
  for (const auto& speaker : speakers) {
    const auto pool = data.select(Split::kTrain, speaker);
    const auto subsets = split_adaptation_subsets(pool, sizes, derive_seed(seed, speaker));
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      Job job;
      job.speaker = speaker;
      job.size = sizes[i];
      job.subset = subsets[i];
      job.embedding_path = fs::path(out_dir) / "embeddings" /
                           (speaker + "_" + to_string(mode) + "_n" + std::to_string(sizes[i]) +
                            ".mmev");
      jobs.push_back(std::move(job));
    }
  }

  std::vector<std::function<void()>> tasks;
  tasks.reserve(jobs.size());
  for (auto& job : jobs) {
    tasks.push_back([&cfg, &model, &data, &layout, &checkpoint, &job, mode, seed, hash] {
      MultimodalModel local = model;  // each job owns its own copy
      AdaptationJob spec;
      spec.mode = mode;
      spec.speaker = job.speaker;
      spec.utterances = job.subset;
      spec.init = cfg.adapt_init;
      spec.seed = derive_seed(seed, "adapt/" + job.speaker + "/" + to_string(mode), job.size);
      const AdaptedSpeaker adapted = adapt(local, spec);
      write_embedding_file(job.embedding_path, adapted, hash);
      EvalRow tags;
      tags.model_tag = fs::path(checkpoint).stem().string();
      tags.strategy = "";
      tags.condition = "adapted_" + to_string(mode);
      tags.adapt_utterances = job.size;
      job.row = evaluate_embedding(local, data, job.speaker, adapted.embedding, layout, tags);
    });
  }
  run_jobs(workers > 0 ? workers : cfg.workers, tasks);

  std::vector<EvalRow> rows;
  for (const auto& speaker : speakers) {
    EvalRow baseline = eval_mean_embedding_baseline(model, data, speaker, layout,
                                                    fs::path(checkpoint).stem().string(), "");
    rows.push_back(baseline);
  }
  for (const auto& job : jobs) rows.push_back(job.row);

  const fs::path csv_path = fs::path(out_dir) / ("adapt_" + to_string(mode) + ".csv");
  std::ostringstream csv;
  write_eval_csv(rows, csv);
  write_text_file(csv_path, csv.str());
  std::cout << csv_path.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest,
             const std::vector<std::string>& embedding_paths, const std::string& out_dir) {
  const MultimodalModel model = load_checkpoint(checkpoint);
  const Dataset data = load_corpus(manifest);
  const AcousticLayout layout = default_layout(model.config.acoustic_dim);
  const std::string tag = fs::path(checkpoint).stem().string();
  const std::string hash = config_hash(model);

  std::vector<EvalRow> rows = evaluate_trained_speakers(model, data, layout, tag, "");
  for (const auto& speaker : data.speaker_ids(SpeakerRole::kAdapt)) {
    if (data.select(Split::kTest, speaker).empty()) continue;
    rows.push_back(eval_mean_embedding_baseline(model, data, speaker, layout, tag, ""));
  }
  for (const auto& path : embedding_paths) {
    const StoredEmbedding stored = read_embedding_file(path);
    if (!stored.config_hash.empty() && stored.config_hash != hash) {
      throw std::runtime_error("eval: embedding '" + path +
                               "' was adapted from a different checkpoint (config hash mismatch)");
    }
    EvalRow tags;
    tags.model_tag = tag;
    tags.condition = "adapted_" + to_string(stored.mode);
    tags.adapt_utterances = stored.utterances_used;
    rows.push_back(
        evaluate_embedding(model, data, stored.speaker, stored.embedding, layout, tags));
  }

  fs::create_directories(out_dir);
  std::ostringstream csv, summary;
  write_eval_csv(rows, csv);
  write_eval_summary(rows, summary);
  write_text_file(fs::path(out_dir) / "eval.csv", csv.str());
  write_text_file(fs::path(out_dir) / "eval_summary.txt", summary.str());
  std::cout << summary.str();
  return 0;
}

int cmd_inspect(const std::string& path) {
  auto in = open_input(path, "inspect");
  char magic[12] = {};
  in.read(magic, 11);
  const std::string head(magic, static_cast<std::size_t>(in.gcount()));
  in.close();

  if (head.rfind(kCheckpointMagic, 0) == 0) {
    const json header = read_checkpoint_header(path);
    std::cout << "checkpoint " << path << "\n" << header.dump(2) << "\n";
  } else if (head.rfind(kEmbeddingMagic, 0) == 0) {
    const StoredEmbedding stored = read_embedding_file(path);
    json j;
    j["speaker"] = stored.speaker;
    j["mode"] = to_string(stored.mode);
    j["config_hash"] = stored.config_hash;
    j["dim"] = stored.embedding.size();
    j["utterances_used"] = stored.utterances_used;
    std::cout << "embedding " << path << "\n" << j.dump(2) << "\n";
  } else if (head.rfind(kFeatureMagic, 0) == 0) {
    const Matrix m = read_feature_file(path);
    std::cout << "features " << path << ": " << m.rows() << " frames x " << m.cols() << " dims\n";
  } else if (head.rfind(kWaveMagic, 0) == 0) {
    std::cout << "waveform " << path << ": " << read_wave_file(path).size() << " samples\n";
  } else if (head.rfind(kManifestMagic, 0) == 0) {
    const CorpusManifest manifest = read_manifest(path);
    std::cout << "manifest " << path << ": " << manifest.speakers.size() << " speakers, "
              << manifest.utterances.size() << " utterances\n";
  } else {
    throw std::runtime_error("inspect: unrecognized file format in '" + path + "'");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Reproduce profiles

Dataset ensure_corpus(const CliConfig& cfg, const fs::path& out_dir, RunState& state) {
  const fs::path corpus_dir = out_dir / "corpus";
  const fs::path manifest = corpus_dir / "manifest.txt";
  if (!state.is_done("gen-data") || !fs::exists(manifest)) {
    fs::create_directories(corpus_dir);
    generate_corpus(cfg.task, corpus_dir);
    state.mark_done("gen-data");
  }
  return load_corpus(manifest);
}

int cmd_reproduce_multispeaker(const CliConfig& cfg, const fs::path& out_dir,
                               std::size_t num_seeds, std::size_t workers, bool paper_dims) {
  RunState state(out_dir / "reproduce_state.json");
  const Dataset data = ensure_corpus(cfg, out_dir, state);
  ModelConfig model_cfg = cfg.model;
  if (paper_dims) apply_paper_dims(model_cfg);
  align_conv_to_corpus(model_cfg, data);
  const AcousticLayout layout = default_layout(data.utterances().front().acoustic.cols());

  const std::vector<Strategy> strategies = {Strategy::kVL, Strategy::kSS, Strategy::kJG,
                                            Strategy::kTL, Strategy::kJGTL};
  struct Unit {
    Strategy strategy;
    std::uint64_t seed;
    fs::path checkpoint;
  };
  std::vector<Unit> units;
  for (Strategy s : strategies) {
    for (std::uint64_t i = 0; i < num_seeds; ++i) {
      const std::uint64_t seed = derive_seed(cfg.task.seed, "train/" + strategy_file_tag(s), i);
      units.push_back({s, seed,
                       out_dir / "checkpoints" /
                           (strategy_file_tag(s) + "_seed" + std::to_string(seed) + ".mmck")});
    }
  }

  std::vector<std::function<void()>> tasks;
  for (const auto& unit : units) {
    const std::string key = "train/" + unit.checkpoint.filename().string();
    if (state.is_done(key) && fs::exists(unit.checkpoint)) continue;
    tasks.push_back([&, key] {
      train_to_dir(data, model_cfg, unit.strategy, unit.seed, cfg.plan, out_dir);
      state.mark_done(key);
    });
  }
  run_jobs(workers, tasks);

  // Evaluation is cheap and deterministic; recompute it on every run.
  std::vector<EvalRow> rows;
  std::map<std::string, std::vector<double>> mcd_by_strategy;
  char buf[256];
  std::ostringstream csv;
  csv << "strategy,seed,mcd_db,f0_rmse\n";
  for (const auto& unit : units) {
    const MultimodalModel model = load_checkpoint(unit.checkpoint);
    const std::string name = to_string(unit.strategy);
    auto model_rows = evaluate_trained_speakers(
        model, data, layout, unit.checkpoint.stem().string(), name);
    const double mcd = pooled_mcd(model_rows);
    double f0_sq = 0.0;
    std::size_t frames = 0;
    for (const auto& r : model_rows) {
      f0_sq += r.f0_rmse * r.f0_rmse * double(r.frames);
      frames += r.frames;
    }
    std::snprintf(buf, sizeof(buf), "%s,%llu,%.6f,%.6f\n", name.c_str(),
                  static_cast<unsigned long long>(unit.seed), mcd,
                  std::sqrt(f0_sq / double(frames)));
    csv << buf;
    mcd_by_strategy[name].push_back(mcd);
    rows.insert(rows.end(), model_rows.begin(), model_rows.end());
  }

  std::vector<EvalRow> baseline_rows;
  for (const auto& speaker : data.speaker_ids(SpeakerRole::kTrain)) {
    baseline_rows.push_back(eval_constant_baseline(data, speaker, layout));
  }
  rows.insert(rows.end(), baseline_rows.begin(), baseline_rows.end());

  std::ostringstream summary;
  summary << "multi-speaker objective results (median over " << num_seeds << " seeds)\n";
  summary << "strategy   MCD [dB]\n";
  for (const auto& name : {"VL", "SS", "JG", "TL", "JG+TL"}) {
    std::snprintf(buf, sizeof(buf), "%-9s %9.4f\n", name, median(mcd_by_strategy.at(name)));
    summary << buf;
  }
  std::snprintf(buf, sizeof(buf), "%-9s %9.4f   (speaker-mean constant predictor)\n", "CONST",
                pooled_mcd(baseline_rows));
  summary << buf;

  std::ostringstream rows_csv;
  write_eval_csv(rows, rows_csv);
  write_text_file(out_dir / "multispeaker.csv", csv.str());
  write_text_file(out_dir / "multispeaker_rows.csv", rows_csv.str());
  write_text_file(out_dir / "multispeaker_summary.txt", summary.str());
  std::cout << summary.str();
  return 0;
}

int cmd_reproduce_adaptation(const CliConfig& cfg, const fs::path& out_dir, std::size_t num_seeds,
                             std::size_t workers, bool paper_dims) {
  RunState state(out_dir / "reproduce_state.json");
  const Dataset data = ensure_corpus(cfg, out_dir, state);
  ModelConfig model_cfg = cfg.model;
  if (paper_dims) apply_paper_dims(model_cfg);
  align_conv_to_corpus(model_cfg, data);
  const AcousticLayout layout = default_layout(data.utterances().front().acoustic.cols());
  const Strategy strategy =
      strategy_uses_speech(cfg.plan.strategy) ? cfg.plan.strategy : Strategy::kJG;

  // Stage 1: one multimodal model per seed.
  std::vector<std::uint64_t> seeds;
  std::vector<fs::path> checkpoints;
  std::vector<std::function<void()>> train_tasks;
  for (std::uint64_t i = 0; i < num_seeds; ++i) {
    const std::uint64_t seed = derive_seed(cfg.task.seed, "sweep/" + strategy_file_tag(strategy), i);
    seeds.push_back(seed);
    const fs::path ckpt = out_dir / "checkpoints" /
                          (strategy_file_tag(strategy) + "_seed" + std::to_string(seed) + ".mmck");
    checkpoints.push_back(ckpt);
    const std::string key = "train/" + ckpt.filename().string();
    if (state.is_done(key) && fs::exists(ckpt)) continue;
    train_tasks.push_back([&, seed, key] {
      train_to_dir(data, model_cfg, strategy, seed, cfg.plan, out_dir);
      state.mark_done(key);
    });
  }
  run_jobs(workers, train_tasks);

  // Stage 2: adaptation sweep over (seed x speaker x mode x size).
  const auto speakers = data.speaker_ids(SpeakerRole::kAdapt);
  if (speakers.empty()) throw std::runtime_error("reproduce: the corpus has no adaptation speakers");
  fs::create_directories(out_dir / "embeddings");

  struct SweepJob {
    std::size_t seed_index;
    std::string speaker;
    AdaptationMode mode;
    std::size_t size;
    std::vector<const Utterance*> subset;
    fs::path embedding_path;
  };
  std::vector<SweepJob> jobs;
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    for (const auto& speaker : speakers) {
      const auto pool = data.select(Split::kTrain, speaker);
      const auto subsets =
          split_adaptation_subsets(pool, cfg.adapt_sizes, derive_seed(seeds[si], speaker));
      for (AdaptationMode mode : {AdaptationMode::kSupervised, AdaptationMode::kUnsupervised}) {
        for (std::size_t k = 0; k < cfg.adapt_sizes.size(); ++k) {
          SweepJob job;
          job.seed_index = si;
          job.speaker = speaker;
          job.mode = mode;
          job.size = cfg.adapt_sizes[k];
          job.subset = subsets[k];
          job.embedding_path =
              out_dir / "embeddings" /
              ("seed" + std::to_string(seeds[si]) + "_" + speaker + "_" + to_string(mode) + "_n" +
               std::to_string(job.size) + ".mmev");
          jobs.push_back(std::move(job));
        }
      }
    }
  }

  // Models are loaded once per seed and shared read-only by adapt jobs,
  // which each own a private copy.
  std::vector<MultimodalModel> models;
  models.reserve(seeds.size());
  for (const auto& ckpt : checkpoints) models.push_back(load_checkpoint(ckpt));

  std::vector<std::function<void()>> adapt_tasks;
  for (auto& job : jobs) {
    const std::string key = "adapt/" + job.embedding_path.filename().string();
    if (state.is_done(key) && fs::exists(job.embedding_path)) continue;
    adapt_tasks.push_back([&, key] {
      MultimodalModel local = models[job.seed_index];
      AdaptationJob spec;
      spec.mode = job.mode;
      spec.speaker = job.speaker;
      spec.utterances = job.subset;
      spec.init = cfg.adapt_init;
      spec.seed = derive_seed(seeds[job.seed_index],
                              "adapt/" + job.speaker + "/" + to_string(job.mode), job.size);
      const AdaptedSpeaker adapted = adapt(local, spec);
      write_embedding_file(job.embedding_path, adapted, config_hash(local));
      state.mark_done(key);
    });
  }
  run_jobs(workers, adapt_tasks);

  // Stage 3: evaluation and the objective-vs-size table.
  std::ostringstream csv;
  csv << "strategy,mode,size,seed,speaker,mcd_db,f0_rmse\n";
  char buf[256];
  // per (mode,size): pooled MCD per seed, then the median across seeds
  std::map<std::pair<std::string, std::size_t>, std::map<std::size_t, std::vector<EvalRow>>> cells;
  std::map<std::size_t, std::vector<EvalRow>> baseline_rows_by_seed;
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    for (const auto& speaker : speakers) {
      baseline_rows_by_seed[si].push_back(
          eval_mean_embedding_baseline(models[si], data, speaker, layout,
                                       checkpoints[si].stem().string(), to_string(strategy)));
    }
  }
  for (const auto& job : jobs) {
    const StoredEmbedding stored = read_embedding_file(job.embedding_path);
    EvalRow tags;
    tags.model_tag = checkpoints[job.seed_index].stem().string();
    tags.strategy = to_string(strategy);
    tags.condition = "adapted_" + to_string(job.mode);
    tags.adapt_utterances = job.size;
    const EvalRow row = evaluate_embedding(models[job.seed_index], data, job.speaker,
                                           stored.embedding, layout, tags);
    std::snprintf(buf, sizeof(buf), "%s,%s,%zu,%llu,%s,%.6f,%.6f\n", to_string(strategy).c_str(),
                  to_string(job.mode).c_str(), job.size,
                  static_cast<unsigned long long>(seeds[job.seed_index]), job.speaker.c_str(),
                  row.mcd_db, row.f0_rmse);
    csv << buf;
    cells[{to_string(job.mode), job.size}][job.seed_index].push_back(row);
  }

  std::ostringstream summary;
  summary << "adaptation sweep (" << to_string(strategy) << ", median over " << num_seeds
          << " seeds, pooled over " << speakers.size() << " held-out speakers)\n";
  summary << "condition            size   MCD [dB]\n";
  {
    std::vector<double> baseline_per_seed;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      baseline_per_seed.push_back(pooled_mcd(baseline_rows_by_seed[si]));
    }
    std::snprintf(buf, sizeof(buf), "%-20s %4s %10.4f\n", "mean-embedding", "-",
                  median(baseline_per_seed));
    summary << buf;
  }
  for (const auto& [key, by_seed] : cells) {
    std::vector<double> per_seed;
    for (const auto& [si, rows] : by_seed) per_seed.push_back(pooled_mcd(rows));
    std::snprintf(buf, sizeof(buf), "%-20s %4zu %10.4f\n", key.first.c_str(), key.second,
                  median(per_seed));
    summary << buf;
  }

  write_text_file(out_dir / "adaptation_sweep.csv", csv.str());
  write_text_file(out_dir / "adaptation_sweep_summary.txt", summary.str());
  std::cout << summary.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal multi-speaker acoustic modeling workbench"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs/exp", manifest, checkpoint, profile = "multispeaker";
  std::string strategy_name = "JG", mode_name = "unsupervised", inspect_path;
  std::vector<std::string> embedding_paths;
  std::vector<std::size_t> sizes;
  std::uint64_t seed = 0;
  bool seed_set = false, paper_dims = false;
  std::size_t workers = 0, seeds_override = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config JSON");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "master seed")->each([&](const std::string&) {
      seed_set = true;
    });
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  add_common(gen);

  CLI::App* train = app.add_subcommand("train", "train one model");
  add_common(train);
  train->add_option("--manifest", manifest, "corpus manifest path")->required();
  train->add_option("--strategy", strategy_name, "VL, SS, STOCH, JG, TL or JG+TL");
  train->add_flag("--paper-dims", paper_dims, "use the full-scale 1024/128 dimensions");

  CLI::App* adapt_cmd = app.add_subcommand("adapt", "adapt held-out speakers");
  add_common(adapt_cmd);
  adapt_cmd->add_option("--checkpoint", checkpoint, "trained model checkpoint")->required();
  adapt_cmd->add_option("--manifest", manifest, "corpus manifest path")->required();
  adapt_cmd->add_option("--mode", mode_name, "supervised or unsupervised");
  adapt_cmd->add_option("--sizes", sizes, "adaptation set sizes")->delimiter(',');
  adapt_cmd->add_option("--workers", workers, "parallel adaptation jobs");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "trained model checkpoint")->required();
  eval_cmd->add_option("--manifest", manifest, "corpus manifest path")->required();
  eval_cmd->add_option("--embeddings", embedding_paths, "adapted embedding files")
      ->delimiter(',');

  CLI::App* repro = app.add_subcommand("reproduce", "run a full experiment pipeline");
  add_common(repro);
  repro->add_option("--profile", profile, "multispeaker or adaptation-sweep");
  repro->add_option("--seeds", seeds_override, "number of seeds");
  repro->add_option("--workers", workers, "parallel jobs");
  repro->add_flag("--paper-dims", paper_dims, "use the full-scale 1024/128 dimensions");

  CLI::App* inspect = app.add_subcommand("inspect", "print a file's header");
  inspect->add_option("path", inspect_path, "checkpoint / embedding / corpus file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    CliConfig cfg = load_cli_config(config_path);
    if (seed_set) {
      cfg.task.seed = seed;
      cfg.plan.seed = seed;
    }
    if (workers == 0) workers = cfg.workers;

    if (gen->parsed()) return cmd_gen_data(cfg, out_dir);
    if (train->parsed()) {
      return cmd_train(cfg, manifest, out_dir, strategy_from_string(strategy_name),
                       seed_set ? seed : cfg.plan.seed, paper_dims);
    }
    if (adapt_cmd->parsed()) {
      return cmd_adapt(cfg, checkpoint, manifest, adaptation_mode_from_string(mode_name), sizes,
                       seed_set ? seed : cfg.task.seed, out_dir, workers);
    }
    if (eval_cmd->parsed()) return cmd_eval(checkpoint, manifest, embedding_paths, out_dir);
    if (repro->parsed()) {
      const std::size_t n = seeds_override > 0
                                ? seeds_override
                                : (profile == "adaptation-sweep" ? 5 : cfg.seeds);
      fs::create_directories(out_dir);
      if (profile == "multispeaker") {
        return cmd_reproduce_multispeaker(cfg, out_dir, n, workers, paper_dims);
      }
      if (profile == "adaptation-sweep") {
        return cmd_reproduce_adaptation(cfg, out_dir, n, workers, paper_dims);
      }
      throw std::runtime_error("unknown profile '" + profile +
                               "' (expected multispeaker or adaptation-sweep)");
    }
    if (inspect->parsed()) return cmd_inspect(inspect_path);
  } catch (const std::exception& e) {
    log_error(e.what());
    return 1;
  }
  return 0;
}
