#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "semfuse/model.hpp"

namespace semfuse {

// Layout of an SFLM1 file:
//   "SFLM1" | uint64 LE header byte count | UTF-8 JSON header |
//   float32 LE arrays in header["arrays"] order.
// The header holds config, vocabulary, feature order, seed, epoch, metrics,
// free-form `extra` (training/corpus settings) and the array manifest
// [{name, shape}]. The positional table is recomputed on load.
inline constexpr char kCheckpointMagic[] = "SFLM1";

struct CheckpointInfo {
  ModelConfig config;
  std::vector<std::string> vocabulary;
  std::vector<std::string> features;
  std::uint64_t seed = 0;
  int epoch = 0;
  nlohmann::json metrics = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path,
                     const LanguageModel<float>& model,
                     const CheckpointInfo& info);

struct LoadedCheckpoint {
  CheckpointInfo info;
  LanguageModel<float> model;
};

// Throws DataError on a malformed file or a manifest that does not match the
// architecture described by the stored config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace semfuse
