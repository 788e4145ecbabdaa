#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "modaladapt/io.hpp"
#include "modaladapt/matrix.hpp"
#include "modaladapt/rng.hpp"

namespace modaladapt {

enum class Split { kTrain, kValid, kTest };
enum class SpeakerRole { kTrain, kAdapt };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "valid") return Split::kValid;
  if (s == "test") return Split::kTest;
  throw std::runtime_error("unknown split '" + s + "'");
}

inline std::string to_string(SpeakerRole r) {
  return r == SpeakerRole::kTrain ? "train" : "adapt";
}

inline SpeakerRole role_from_string(const std::string& s) {
  if (s == "train") return SpeakerRole::kTrain;
  if (s == "adapt") return SpeakerRole::kAdapt;
  throw std::runtime_error("unknown speaker role '" + s + "'");
}

// One utterance-level triplet. Paths are relative to the manifest's
// directory; a "-" waveform path marks an utterance without audio.
struct UtteranceRecord {
  std::string id;
  std::string speaker;
  Split split = Split::kTrain;
  std::string linguistic_path;
  std::string acoustic_path;
  std::string waveform_path;
};

struct SpeakerInfo {
  std::string id;
  SpeakerRole role = SpeakerRole::kTrain;
};

struct CorpusManifest {
  std::vector<SpeakerInfo> speakers;
  std::vector<UtteranceRecord> utterances;
  // Key/value snapshot of the generating task spec; loaders use
  // samples_per_frame for waveform alignment checks.
  std::map<std::string, std::string> task;
  std::filesystem::path root;  // directory of the manifest file
};

inline constexpr const char* kManifestMagic = "MMMANIFEST1";

// Plain UTF-8 key/value records:
//   MMMANIFEST1
//   [task]       one per file, key = value lines
//   [speaker]    one per speaker: id, role
//   [utterance]  one per utterance: id, speaker, split, linguistic,
//                acoustic, waveform
inline void write_manifest(const CorpusManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("manifest: cannot open '" + path.string() + "' for writing");
  out << kManifestMagic << "\n";
  out << "[task]\n";
  for (const auto& [k, v] : manifest.task) out << k << " = " << v << "\n";
  for (const auto& s : manifest.speakers) {
    out << "[speaker]\n";
    out << "id = " << s.id << "\n";
    out << "role = " << to_string(s.role) << "\n";
  }
  for (const auto& u : manifest.utterances) {
    out << "[utterance]\n";
    out << "id = " << u.id << "\n";
    out << "speaker = " << u.speaker << "\n";
    out << "split = " << to_string(u.split) << "\n";
    out << "linguistic = " << u.linguistic_path << "\n";
    out << "acoustic = " << u.acoustic_path << "\n";
    out << "waveform = " << u.waveform_path << "\n";
  }
  if (!out) throw std::runtime_error("manifest: write failed for '" + path.string() + "'");
}

inline CorpusManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open '" + path.string() + "'");
  CorpusManifest manifest;
  manifest.root = path.has_parent_path() ? path.parent_path() : ".";

  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line) || line != kManifestMagic) {
    throw std::runtime_error("manifest '" + path.string() + "': bad magic line");
  }
  std::string section;
  std::map<std::string, std::string> fields;

  auto flush = [&]() {
    if (section.empty()) return;
    auto need = [&](const char* key) -> const std::string& {
      auto it = fields.find(key);
      if (it == fields.end()) {
        throw std::runtime_error("manifest '" + path.string() + "': [" + section +
                                 "] record missing key '" + key + "'");
      }
      return it->second;
    };
    if (section == "task") {
      manifest.task = fields;
    } else if (section == "speaker") {
      manifest.speakers.push_back({need("id"), role_from_string(need("role"))});
    } else if (section == "utterance") {
      UtteranceRecord u;
      u.id = need("id");
      u.speaker = need("speaker");
      u.split = split_from_string(need("split"));
      u.linguistic_path = need("linguistic");
      u.acoustic_path = need("acoustic");
      u.waveform_path = need("waveform");
      manifest.utterances.push_back(std::move(u));
    } else {
      throw std::runtime_error("manifest '" + path.string() + "': unknown section [" + section +
                               "]");
    }
    fields.clear();
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      flush();
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("manifest '" + path.string() + "': line " +
                               std::to_string(lineno + 1) + " is not 'key = value'");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    fields[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  flush();
  return manifest;
}

// Fully loaded utterance. `wave` is empty when the record had no waveform.
struct Utterance {
  std::string id;
  std::string speaker;
  Split split = Split::kTrain;
  Matrix linguistic;
  Matrix acoustic;
  std::vector<double> wave;

  std::size_t frames() const { return acoustic.rows(); }
  bool has_wave() const { return !wave.empty(); }
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<SpeakerInfo> speakers, std::vector<Utterance> utterances,
          std::map<std::string, std::string> task)
      : speakers_(std::move(speakers)), utterances_(std::move(utterances)),
        task_(std::move(task)) {}

  const std::vector<SpeakerInfo>& speakers() const { return speakers_; }
  const std::vector<Utterance>& utterances() const { return utterances_; }
  const std::map<std::string, std::string>& task() const { return task_; }

  std::vector<std::string> speaker_ids(SpeakerRole role) const {
    std::vector<std::string> out;
    for (const auto& s : speakers_) {
      if (s.role == role) out.push_back(s.id);
    }
    return out;
  }

  // Utterances of one split, optionally restricted to one speaker, in
  // manifest order.
  std::vector<const Utterance*> select(Split split, const std::string& speaker = {}) const {
    std::vector<const Utterance*> out;
    for (const auto& u : utterances_) {
      if (u.split != split) continue;
      if (!speaker.empty() && u.speaker != speaker) continue;
      out.push_back(&u);
    }
    return out;
  }

  // Split restricted to speakers of one role.
  std::vector<const Utterance*> select_role(Split split, SpeakerRole role) const {
    std::map<std::string, SpeakerRole> roles;
    for (const auto& s : speakers_) roles[s.id] = s.role;
    std::vector<const Utterance*> out;
    for (const auto& u : utterances_) {
      if (u.split != split) continue;
      auto it = roles.find(u.speaker);
      if (it != roles.end() && it->second == role) out.push_back(&u);
    }
    return out;
  }

 private:
  std::vector<SpeakerInfo> speakers_;
  std::vector<Utterance> utterances_;
  std::map<std::string, std::string> task_;
};

// Eagerly loads every referenced file and validates shape invariants:
// linguistic/acoustic frame counts agree, dims are uniform across the
// corpus, and waveform length equals frames * samples_per_frame.
inline Dataset load_corpus(const std::filesystem::path& manifest_path) {
  const CorpusManifest manifest = read_manifest(manifest_path);
  std::size_t samples_per_frame = 0;
  if (auto it = manifest.task.find("samples_per_frame"); it != manifest.task.end()) {
    samples_per_frame = static_cast<std::size_t>(std::stoull(it->second));
  } else {
    throw std::runtime_error("manifest '" + manifest_path.string() +
                             "': [task] missing samples_per_frame");
  }

  std::vector<Utterance> utterances;
  utterances.reserve(manifest.utterances.size());
  std::size_t ling_dim = 0, ac_dim = 0;
  for (const auto& rec : manifest.utterances) {
    Utterance u;
    u.id = rec.id;
    u.speaker = rec.speaker;
    u.split = rec.split;
    u.linguistic = read_feature_file(manifest.root / rec.linguistic_path);
    u.acoustic = read_feature_file(manifest.root / rec.acoustic_path);
    if (u.linguistic.rows() != u.acoustic.rows()) {
      throw std::runtime_error("utterance '" + rec.id + "': linguistic has " +
                               std::to_string(u.linguistic.rows()) + " frames but acoustic has " +
                               std::to_string(u.acoustic.rows()));
    }
    if (ling_dim == 0) {
      ling_dim = u.linguistic.cols();
      ac_dim = u.acoustic.cols();
    } else if (u.linguistic.cols() != ling_dim || u.acoustic.cols() != ac_dim) {
      throw std::runtime_error("utterance '" + rec.id + "': feature dims differ from the corpus (" +
                               std::to_string(u.linguistic.cols()) + "/" +
                               std::to_string(u.acoustic.cols()) + " vs " +
                               std::to_string(ling_dim) + "/" + std::to_string(ac_dim) + ")");
    }
    if (rec.waveform_path != "-") {
      u.wave = read_wave_file(manifest.root / rec.waveform_path);
      if (u.wave.size() != u.acoustic.rows() * samples_per_frame) {
        throw std::runtime_error(
            "utterance '" + rec.id + "': waveform has " + std::to_string(u.wave.size()) +
            " samples, expected frames * samples_per_frame = " +
            std::to_string(u.acoustic.rows() * samples_per_frame));
      }
    }
    utterances.push_back(std::move(u));
  }
  return Dataset(manifest.speakers, std::move(utterances), manifest.task);
}

// Seeded nested subsets for adaptation sweeps: the pool is shuffled once,
// then each requested size takes a prefix, so smaller subsets are contained
// in larger ones.
inline std::vector<std::vector<const Utterance*>> split_adaptation_subsets(
    const std::vector<const Utterance*>& pool, const std::vector<std::size_t>& sizes,
    std::uint64_t seed) {
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    if (sizes[i] > sizes[i + 1]) {
      throw std::invalid_argument("split_adaptation_subsets: sizes must be ascending");
    }
  }
  if (!sizes.empty() && sizes.back() > pool.size()) {
    throw std::invalid_argument("split_adaptation_subsets: size " + std::to_string(sizes.back()) +
                                " exceeds available " + std::to_string(pool.size()));
  }
  std::vector<const Utterance*> shuffled = pool;
  auto rng = make_rng(seed, "adapt_subsets");
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::vector<std::vector<const Utterance*>> out;
  out.reserve(sizes.size());
  for (std::size_t n : sizes) {
    out.emplace_back(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return out;
}

}  // namespace modaladapt
