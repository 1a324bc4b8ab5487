#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "patchguard/model.hpp"

namespace patchguard {

/// Provenance stored next to the weights.
struct TrainingMetadata {
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  std::string dataset_checksum;
  /// Free-form extras (e.g. the training options).
  nlohmann::json extra = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const TrainingMetadata& m);
void from_json(const nlohmann::json& j, TrainingMetadata& m);

inline constexpr char kCheckpointMagic[8] = {'P', 'G', 'C', 'K', 'P', 'T', '\r', '\n'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json model_config;
  TrainingMetadata metadata;
  std::unique_ptr<Network<float>> model;
};

/// Layout: 8-byte magic, u32 version, u64 length + JSON config blob
/// ({"model": ..., "metadata": ...}), u32 record count, then per record
/// u32 name length + name, u8 dtype (0 = float32), u32 rank, u64 dims,
/// raw little-endian values. All integers are little-endian.
void save_checkpoint(const std::filesystem::path& path, const Network<float>& model,
                     const TrainingMetadata& metadata = {});

/// Throws FormatError on bad magic, unsupported version, truncation or
/// records that do not match the architecture in the config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace patchguard
