#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "modaladapt/io.hpp"
#include "modaladapt/model.hpp"
#include "modaladapt/rng.hpp"

namespace modaladapt {

// Checkpoint layout: magic "MMCK1", u32 header length, UTF-8 JSON header
// (config, speakers, training flags, parameter manifest with byte offsets),
// then raw little-endian f64 tensors in manifest order. Raw doubles make
// save/load round trips bit-exact.
inline constexpr const char* kCheckpointMagic = "MMCK1";

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["linguistic_dim"] = c.linguistic_dim;
  j["acoustic_dim"] = c.acoustic_dim;
  j["hidden_width"] = c.hidden_width;
  j["embedding_dim"] = c.embedding_dim;
  j["num_text_ff"] = c.num_text_ff;
  j["num_common_ff"] = c.num_common_ff;
  j["conv"] = {{"width", c.conv.width}, {"stride", c.conv.stride}, {"filters", c.conv.filters}};
  j["has_speech_encoder"] = c.has_speech_encoder;
  j["speaker_aware_text"] = c.speaker_aware_text;
  j["speaker_aware_common"] = c.speaker_aware_common;
  j["tied_layers"] = c.tied_layers;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.linguistic_dim = j.at("linguistic_dim").get<std::size_t>();
  c.acoustic_dim = j.at("acoustic_dim").get<std::size_t>();
  c.hidden_width = j.at("hidden_width").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.num_text_ff = j.at("num_text_ff").get<std::size_t>();
  c.num_common_ff = j.at("num_common_ff").get<std::size_t>();
  c.conv.width = j.at("conv").at("width").get<std::size_t>();
  c.conv.stride = j.at("conv").at("stride").get<std::size_t>();
  c.conv.filters = j.at("conv").at("filters").get<std::size_t>();
  c.has_speech_encoder = j.at("has_speech_encoder").get<bool>();
  c.speaker_aware_text = j.at("speaker_aware_text").get<std::set<std::size_t>>();
  c.speaker_aware_common = j.at("speaker_aware_common").get<std::set<std::size_t>>();
  c.tied_layers = j.at("tied_layers").get<std::set<std::size_t>>();
  return c;
}

// Stable identity of a model architecture + speaker roster; embedding files
// carry it so they can be matched against the checkpoint they were adapted
// from.
inline std::string config_hash(const ModelConfig& config,
                               const std::vector<std::string>& speakers) {
  nlohmann::json j;
  j["config"] = to_json(config);
  j["speakers"] = speakers;
  const std::string dump = j.dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash_str(dump)));
  return buf;
}

inline std::string config_hash(const MultimodalModel& model) {
  return config_hash(model.config, model.speaker_ids());
}

inline void save_checkpoint(MultimodalModel& model, const std::filesystem::path& path) {
  nlohmann::json header;
  header["format"] = kCheckpointMagic;
  header["config"] = to_json(model.config);
  header["speakers"] = model.speaker_ids();
  header["trained"] = model.trained;
  header["speech_encoder_trained"] = model.speech_encoder_trained;

  auto shape_of = [&](const ParamRef& p) -> std::vector<std::size_t> {
    // Two-dimensional shapes for weight matrices / conv kernels, flat for
    // biases and embedding rows.
    const ModelConfig& c = model.config;
    if (p.id == param_id::kConvKernels) return {c.conv.filters, c.conv.width};
    if (p.id.size() > 2 && p.id.substr(p.id.size() - 2) == "/W") {
      const std::size_t out = (p.id == param_id::kOutputW) ? c.acoustic_dim : c.hidden_width;
      return {p.size / out, out};
    }
    return {p.size};
  };

  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  const auto params = model.params();
  for (const auto& p : params) {
    manifest.push_back({{"name", p.id}, {"shape", shape_of(p)}, {"offset", offset}});
    offset += p.size * sizeof(double);
  }
  header["params"] = manifest;

  const std::string header_str = header.dump();
  auto out = open_output(path, "checkpoint");
  write_magic(out, kCheckpointMagic);
  write_u32_le(out, static_cast<std::uint32_t>(header_str.size()));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& p : params) write_f64_array(out, {p.data, p.size});
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path.string() + "'");
}

inline MultimodalModel load_checkpoint(const std::filesystem::path& path) {
  const std::string what = "checkpoint '" + path.string() + "'";
  auto in = open_input(path, what);
  expect_magic(in, kCheckpointMagic, what);
  const std::uint32_t header_len = read_u32_le(in, what);
  std::string header_str(header_len, '\0');
  if (!in.read(header_str.data(), header_len)) {
    throw std::runtime_error(what + ": truncated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(what + ": corrupt header: " + e.what());
  }

  const ModelConfig config = model_config_from_json(header.at("config"));
  const auto speakers = header.at("speakers").get<std::vector<std::string>>();
  MultimodalModel model = build_model(config, speakers, 0);
  model.trained = header.value("trained", false);
  model.speech_encoder_trained = header.value("speech_encoder_trained", false);

  std::map<std::string, std::uint64_t> offsets;
  std::map<std::string, std::size_t> sizes;
  for (const auto& entry : header.at("params")) {
    const auto name = entry.at("name").get<std::string>();
    std::size_t count = 1;
    for (const auto& d : entry.at("shape")) count *= d.get<std::size_t>();
    offsets[name] = entry.at("offset").get<std::uint64_t>();
    sizes[name] = count;
  }

  const std::streampos data_start = in.tellg();
  for (const auto& p : model.params()) {
    auto off = offsets.find(p.id);
    if (off == offsets.end()) {
      throw std::runtime_error(what + ": missing tensor '" + p.id + "'");
    }
    if (sizes.at(p.id) != p.size) {
      throw std::runtime_error(what + ": tensor '" + p.id + "' has " +
                               std::to_string(sizes.at(p.id)) + " values, model expects " +
                               std::to_string(p.size));
    }
    in.seekg(data_start + static_cast<std::streamoff>(off->second));
    read_f64_array(in, {p.data, p.size}, what + " tensor '" + p.id + "'");
  }
  if (offsets.size() != model.params().size()) {
    throw std::runtime_error(what + ": manifest lists " + std::to_string(offsets.size()) +
                             " tensors, model has " + std::to_string(model.params().size()));
  }
  return model;
}

// Header of a checkpoint without loading tensors; used by `inspect`.
inline nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  const std::string what = "checkpoint '" + path.string() + "'";
  auto in = open_input(path, what);
  expect_magic(in, kCheckpointMagic, what);
  const std::uint32_t header_len = read_u32_le(in, what);
  std::string header_str(header_len, '\0');
  if (!in.read(header_str.data(), header_len)) {
    throw std::runtime_error(what + ": truncated header");
  }
  return nlohmann::json::parse(header_str);
}

}  // namespace modaladapt
