#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "modaladapt/corpus.hpp"
#include "modaladapt/io.hpp"
#include "modaladapt/matrix.hpp"
#include "modaladapt/rng.hpp"

namespace modaladapt {

// Desk-scale synthetic multi-speaker task. Linguistic trajectories are
// smoothed random walks; acoustic features are a per-speaker affine warp of
// a shared nonlinear map; waveform frames are a fixed linear projection of
// the acoustic vector, so the raw-audio encoder can represent its inverse
// and acoustic features stay recoverable from audio alone.
//
// Acoustic layout: columns 0..acoustic_dim-3 are cepstral-like channels,
// column acoustic_dim-2 is log-F0, column acoustic_dim-1 is a {0,1} voicing
// flag.
struct SyntheticTaskSpec {
  std::size_t num_train_speakers = 8;
  std::size_t num_adapt_speakers = 2;
  std::size_t utterances_per_speaker = 16;   // train-role speakers, incl. valid+test
  std::size_t adapt_pool_utterances = 168;   // adapt-role speakers' train split
  std::size_t valid_per_speaker = 2;
  std::size_t test_per_speaker = 3;
  std::size_t min_frames = 30;
  std::size_t max_frames = 60;
  std::size_t linguistic_dim = 30;
  std::size_t acoustic_dim = 26;
  std::size_t samples_per_frame = 80;
  // Speaker gains/offsets/F0 bases are drawn from a latent of this size, so
  // held-out speakers stay reachable from the trained speaker space.
  std::size_t speaker_latent_dim = 4;
  double noise_std = 0.02;
  std::uint64_t seed = 2024;

  std::size_t cepstral_dim() const { return acoustic_dim - 2; }
  std::size_t log_f0_col() const { return acoustic_dim - 2; }
  std::size_t voicing_col() const { return acoustic_dim - 1; }
};

inline void validate(const SyntheticTaskSpec& s) {
  if (s.acoustic_dim < 4) throw std::invalid_argument("task: acoustic_dim must be >= 4");
  if (s.linguistic_dim < 2) throw std::invalid_argument("task: linguistic_dim must be >= 2");
  if (s.num_train_speakers < 1) throw std::invalid_argument("task: need at least one speaker");
  if (s.min_frames < 2 || s.max_frames < s.min_frames) {
    throw std::invalid_argument("task: bad frame range");
  }
  if (s.samples_per_frame < 1) throw std::invalid_argument("task: samples_per_frame must be >= 1");
  if (s.speaker_latent_dim < 1) throw std::invalid_argument("task: speaker_latent_dim must be >= 1");
  if (s.utterances_per_speaker <= s.valid_per_speaker + s.test_per_speaker) {
    throw std::invalid_argument("task: utterances_per_speaker must exceed valid+test counts");
  }
  if (s.noise_std < 0.0) throw std::invalid_argument("task: noise_std must be >= 0");
}

struct SyntheticSpeaker {
  std::vector<double> gain;    // cepstral_dim
  std::vector<double> offset;  // cepstral_dim
  double f0_base = 5.25;       // log Hz
};

// Fixed global structure shared by every utterance of one corpus.
struct SyntheticWorld {
  Matrix feature_map;  // cepstral_dim x linguistic_dim
  Matrix decode;       // samples_per_frame x acoustic_dim
  std::map<std::string, SyntheticSpeaker> speakers;
  std::map<std::string, SpeakerRole> roles;
};

namespace detail {

// Keeps |decode * y| <= 1 for the bounded part of the acoustic range.
inline constexpr double kAcousticBound = 6.0;
inline constexpr double kWaveNoiseScale = 0.05;

inline std::string padded_index(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, width, i);
  return buf;
}

// Small dense solve via Gaussian elimination with partial pivoting; used
// only for the generation-time recoverability assertion.
inline std::vector<double> solve_linear(Matrix a, std::vector<double> b) {
  const std::size_t n = a.rows();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    }
    if (std::abs(a(pivot, col)) < 1e-300) {
      throw std::runtime_error("synthetic corpus: decode matrix is rank-deficient");
    }
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(pivot, c));
      std::swap(b[col], b[pivot]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double acc = b[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= a(i, c) * x[c];
    x[i] = acc / a(i, i);
  }
  return x;
}

}  // namespace detail

inline std::vector<std::string> train_speaker_ids(const SyntheticTaskSpec& spec) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < spec.num_train_speakers; ++i) {
    ids.push_back(detail::padded_index("spk", i, 2));
  }
  return ids;
}

inline std::vector<std::string> adapt_speaker_ids(const SyntheticTaskSpec& spec) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < spec.num_adapt_speakers; ++i) {
    ids.push_back(detail::padded_index("adp", i, 2));
  }
  return ids;
}

inline SyntheticWorld make_world(const SyntheticTaskSpec& spec) {
  validate(spec);
  SyntheticWorld world;
  const std::size_t cep = spec.cepstral_dim();
  const std::size_t latent = spec.speaker_latent_dim;

  {
    auto rng = make_rng(spec.seed, "world/feature_map");
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(double(spec.linguistic_dim)));
    world.feature_map = Matrix(cep, spec.linguistic_dim);
    for (std::size_t i = 0; i < world.feature_map.size(); ++i) {
      world.feature_map.data()[i] = dist(rng);
    }
  }
  {
    auto rng = make_rng(spec.seed, "world/decode");
    const double bound = 0.9 / (double(spec.acoustic_dim) * detail::kAcousticBound);
    std::uniform_real_distribution<double> dist(-bound, bound);
    world.decode = Matrix(spec.samples_per_frame, spec.acoustic_dim);
    for (std::size_t i = 0; i < world.decode.size(); ++i) world.decode.data()[i] = dist(rng);
  }

  auto draw_speaker = [&](const std::string& id) {
    auto rng = make_rng(spec.seed, "speaker/" + id);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> z(latent);
    for (auto& v : z) v = unit(rng);

    // Per-speaker warp: diagonal gain and offset, both linear in the latent.
    // The offset spread is the dominant speaker cue; it is drawn large
    // enough that an average-voice prediction is clearly worse than a
    // well-adapted one.
    std::normal_distribution<double> gain_dist(0.0, 0.3 / std::sqrt(double(latent)));
    std::normal_distribution<double> offset_dist(0.0, 0.6 / std::sqrt(double(latent)));
    SyntheticSpeaker s;
    s.gain.resize(cep);
    s.offset.resize(cep);
    for (std::size_t d = 0; d < cep; ++d) {
      double g = 1.0, c = 0.0;
      for (std::size_t k = 0; k < latent; ++k) {
        g += gain_dist(rng) * z[k];
        c += offset_dist(rng) * z[k];
      }
      s.gain[d] = std::clamp(g, 0.25, 1.75);
      s.offset[d] = std::clamp(c, -1.35, 1.35);
    }
    double u = 0.0;
    std::normal_distribution<double> f0_dist(0.0, 1.0 / std::sqrt(double(latent)));
    for (std::size_t k = 0; k < latent; ++k) u += f0_dist(rng) * z[k];
    s.f0_base = 5.25 + 0.35 * std::tanh(u);
    return s;
  };

  for (const auto& id : train_speaker_ids(spec)) {
    world.speakers.emplace(id, draw_speaker(id));
    world.roles.emplace(id, SpeakerRole::kTrain);
  }
  for (const auto& id : adapt_speaker_ids(spec)) {
    world.speakers.emplace(id, draw_speaker(id));
    world.roles.emplace(id, SpeakerRole::kAdapt);
  }

  // Distinct speakers must stay distinguishable (noiseless outputs differ).
  for (auto i = world.speakers.begin(); i != world.speakers.end(); ++i) {
    for (auto j = std::next(i); j != world.speakers.end(); ++j) {
      double diff = std::abs(i->second.f0_base - j->second.f0_base);
      for (std::size_t d = 0; d < cep; ++d) {
        diff += std::abs(i->second.gain[d] - j->second.gain[d]);
        diff += std::abs(i->second.offset[d] - j->second.offset[d]);
      }
      if (diff < 1e-9) {
        throw std::runtime_error("synthetic corpus: speakers '" + i->first + "' and '" +
                                 j->first + "' are not separable");
      }
    }
  }

  // The decode matrix must keep acoustic features recoverable from waveform
  // blocks (full column rank), otherwise the untranscribed-audio task is
  // ill-posed. Checked via a normal-equations round trip.
  {
    auto rng = make_rng(spec.seed, "world/recoverability");
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> y(spec.acoustic_dim);
    for (auto& v : y) v = unit(rng);
    std::vector<double> block(spec.samples_per_frame, 0.0);
    for (std::size_t r = 0; r < spec.samples_per_frame; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < spec.acoustic_dim; ++c) acc += world.decode(r, c) * y[c];
      block[r] = acc;
    }
    Matrix gram(spec.acoustic_dim, spec.acoustic_dim);
    std::vector<double> rhs(spec.acoustic_dim, 0.0);
    for (std::size_t i = 0; i < spec.acoustic_dim; ++i) {
      for (std::size_t j = 0; j < spec.acoustic_dim; ++j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < spec.samples_per_frame; ++r) {
          acc += world.decode(r, i) * world.decode(r, j);
        }
        gram(i, j) = acc;
      }
      double acc = 0.0;
      for (std::size_t r = 0; r < spec.samples_per_frame; ++r) {
        acc += world.decode(r, i) * block[r];
      }
      rhs[i] = acc;
    }
    const std::vector<double> recovered = detail::solve_linear(gram, rhs);
    for (std::size_t i = 0; i < spec.acoustic_dim; ++i) {
      if (std::abs(recovered[i] - y[i]) > 1e-8) {
        throw std::runtime_error("synthetic corpus: acoustic features are not recoverable from "
                                 "waveform blocks (residual too large)");
      }
    }
  }
  return world;
}

// One deterministic utterance; everything is derived from the master seed
// and the utterance id, so generation order never matters.
inline Utterance synth_utterance(const SyntheticTaskSpec& spec, const SyntheticWorld& world,
                                 const std::string& speaker_id, const std::string& utt_id,
                                 Split split) {
  const SyntheticSpeaker& spk = world.speakers.at(speaker_id);
  auto rng = make_rng(spec.seed, "utt/" + utt_id);
  std::normal_distribution<double> unit(0.0, 1.0);

  std::uniform_int_distribution<std::size_t> frame_dist(spec.min_frames, spec.max_frames);
  const std::size_t frames = frame_dist(rng);
  const std::size_t cep = spec.cepstral_dim();

  Utterance u;
  u.id = utt_id;
  u.speaker = speaker_id;
  u.split = split;
  u.linguistic = Matrix(frames, spec.linguistic_dim);
  u.acoustic = Matrix(frames, spec.acoustic_dim);

  // Smoothed random walk, stationary with unit variance per channel.
  const double rho = 0.9;
  const double drive = std::sqrt(1.0 - rho * rho);
  for (std::size_t d = 0; d < spec.linguistic_dim; ++d) u.linguistic(0, d) = unit(rng);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t d = 0; d < spec.linguistic_dim; ++d) {
      u.linguistic(t, d) = rho * u.linguistic(t - 1, d) + drive * unit(rng);
    }
  }

  // Voicing duty cycle and a slow F0 contour.
  std::uniform_int_distribution<std::size_t> voiced_dist(12, 24);
  std::uniform_int_distribution<std::size_t> unvoiced_dist(3, 7);
  const std::size_t voiced_len = voiced_dist(rng);
  const std::size_t period = voiced_len + unvoiced_dist(rng);
  std::uniform_int_distribution<std::size_t> phase_dist(0, period - 1);
  const std::size_t phase = phase_dist(rng);
  std::uniform_real_distribution<double> f0_period_dist(40.0, 80.0);
  const double f0_period = f0_period_dist(rng);
  std::uniform_real_distribution<double> f0_phase_dist(0.0, f0_period);
  const double f0_phase = f0_phase_dist(rng);

  for (std::size_t t = 0; t < frames; ++t) {
    const double* x = u.linguistic.row(t);
    double* y = u.acoustic.row(t);
    for (std::size_t d = 0; d < cep; ++d) {
      double acc = 0.0;
      const double* row = world.feature_map.row(d);
      for (std::size_t k = 0; k < spec.linguistic_dim; ++k) acc += row[k] * x[k];
      double v = spk.gain[d] * std::tanh(acc) + spk.offset[d];
      if (spec.noise_std > 0.0) v += spec.noise_std * unit(rng);
      y[d] = v;
    }
    y[spec.log_f0_col()] =
        spk.f0_base +
        0.2 * std::sin(2.0 * std::numbers::pi * (double(t) + f0_phase) / f0_period);
    y[spec.voicing_col()] = ((t + phase) % period) < voiced_len ? 1.0 : 0.0;
  }

  // Waveform: per-frame linear projection of the acoustic vector.
  u.wave.assign(frames * spec.samples_per_frame, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* y = u.acoustic.row(t);
    double* block = u.wave.data() + t * spec.samples_per_frame;
    for (std::size_t r = 0; r < spec.samples_per_frame; ++r) {
      double acc = 0.0;
      const double* row = world.decode.row(r);
      for (std::size_t c = 0; c < spec.acoustic_dim; ++c) acc += row[c] * y[c];
      if (spec.noise_std > 0.0) acc += detail::kWaveNoiseScale * spec.noise_std * unit(rng);
      block[r] = std::clamp(acc, -1.0, 1.0);
    }
  }
  return u;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct PlannedUtterance {
  std::string speaker;
  std::string id;
  Split split;
};

inline std::vector<PlannedUtterance> plan_utterances(const SyntheticTaskSpec& spec) {
  std::vector<PlannedUtterance> plan;
  auto add_speaker = [&](const std::string& id, std::size_t total) {
    const std::size_t train = total - spec.valid_per_speaker - spec.test_per_speaker;
    for (std::size_t i = 0; i < total; ++i) {
      Split split = Split::kTrain;
      if (i >= train + spec.valid_per_speaker) {
        split = Split::kTest;
      } else if (i >= train) {
        split = Split::kValid;
      }
      plan.push_back({id, id + "-u" + padded_index("", i, 3), split});
    }
  };
  for (const auto& id : train_speaker_ids(spec)) add_speaker(id, spec.utterances_per_speaker);
  for (const auto& id : adapt_speaker_ids(spec)) {
    add_speaker(id, spec.adapt_pool_utterances + spec.valid_per_speaker + spec.test_per_speaker);
  }
  return plan;
}

}  // namespace detail

inline std::map<std::string, std::string> task_snapshot(const SyntheticTaskSpec& spec) {
  std::map<std::string, std::string> t;
  t["num_train_speakers"] = std::to_string(spec.num_train_speakers);
  t["num_adapt_speakers"] = std::to_string(spec.num_adapt_speakers);
  t["utterances_per_speaker"] = std::to_string(spec.utterances_per_speaker);
  t["adapt_pool_utterances"] = std::to_string(spec.adapt_pool_utterances);
  t["valid_per_speaker"] = std::to_string(spec.valid_per_speaker);
  t["test_per_speaker"] = std::to_string(spec.test_per_speaker);
  t["min_frames"] = std::to_string(spec.min_frames);
  t["max_frames"] = std::to_string(spec.max_frames);
  t["linguistic_dim"] = std::to_string(spec.linguistic_dim);
  t["acoustic_dim"] = std::to_string(spec.acoustic_dim);
  t["samples_per_frame"] = std::to_string(spec.samples_per_frame);
  t["speaker_latent_dim"] = std::to_string(spec.speaker_latent_dim);
  t["noise_std"] = detail::format_double(spec.noise_std);
  t["seed"] = std::to_string(spec.seed);
  return t;
}

inline SyntheticTaskSpec task_from_snapshot(const std::map<std::string, std::string>& t) {
  SyntheticTaskSpec spec;
  auto u = [&](const char* key, std::size_t& field) {
    if (auto it = t.find(key); it != t.end()) field = std::stoull(it->second);
  };
  u("num_train_speakers", spec.num_train_speakers);
  u("num_adapt_speakers", spec.num_adapt_speakers);
  u("utterances_per_speaker", spec.utterances_per_speaker);
  u("adapt_pool_utterances", spec.adapt_pool_utterances);
  u("valid_per_speaker", spec.valid_per_speaker);
  u("test_per_speaker", spec.test_per_speaker);
  u("min_frames", spec.min_frames);
  u("max_frames", spec.max_frames);
  u("linguistic_dim", spec.linguistic_dim);
  u("acoustic_dim", spec.acoustic_dim);
  u("samples_per_frame", spec.samples_per_frame);
  u("speaker_latent_dim", spec.speaker_latent_dim);
  if (auto it = t.find("noise_std"); it != t.end()) spec.noise_std = std::stod(it->second);
  if (auto it = t.find("seed"); it != t.end()) spec.seed = std::stoull(it->second);
  return spec;
}

// In-memory corpus; same content the on-disk generator writes.
inline Dataset generate_dataset(const SyntheticTaskSpec& spec) {
  const SyntheticWorld world = make_world(spec);
  std::vector<SpeakerInfo> speakers;
  for (const auto& id : train_speaker_ids(spec)) speakers.push_back({id, SpeakerRole::kTrain});
  for (const auto& id : adapt_speaker_ids(spec)) speakers.push_back({id, SpeakerRole::kAdapt});
  std::vector<Utterance> utterances;
  for (const auto& p : detail::plan_utterances(spec)) {
    utterances.push_back(synth_utterance(spec, world, p.speaker, p.id, p.split));
  }
  return Dataset(std::move(speakers), std::move(utterances), task_snapshot(spec));
}

// Writes feature/waveform files plus the manifest under `out_dir`.
// Deterministic: rerunning with the same spec produces identical bytes.
inline CorpusManifest generate_corpus(const SyntheticTaskSpec& spec,
                                      const std::filesystem::path& out_dir) {
  const SyntheticWorld world = make_world(spec);
  std::filesystem::create_directories(out_dir / "feats");
  std::filesystem::create_directories(out_dir / "waves");

  CorpusManifest manifest;
  manifest.root = out_dir;
  manifest.task = task_snapshot(spec);
  for (const auto& id : train_speaker_ids(spec)) {
    manifest.speakers.push_back({id, SpeakerRole::kTrain});
  }
  for (const auto& id : adapt_speaker_ids(spec)) {
    manifest.speakers.push_back({id, SpeakerRole::kAdapt});
  }

  for (const auto& p : detail::plan_utterances(spec)) {
    const Utterance u = synth_utterance(spec, world, p.speaker, p.id, p.split);
    UtteranceRecord rec;
    rec.id = u.id;
    rec.speaker = u.speaker;
    rec.split = u.split;
    rec.linguistic_path = "feats/" + u.id + ".ling.mmaf";
    rec.acoustic_path = "feats/" + u.id + ".ac.mmaf";
    rec.waveform_path = "waves/" + u.id + ".mmwv";
    write_feature_file(out_dir / rec.linguistic_path, u.linguistic);
    write_feature_file(out_dir / rec.acoustic_path, u.acoustic);
    write_wave_file(out_dir / rec.waveform_path, u.wave);
    manifest.utterances.push_back(std::move(rec));
  }
  write_manifest(manifest, out_dir / "manifest.txt");
  return manifest;
}

}  // namespace modaladapt
