#pragma once

#include <filesystem>

#include "json.hpp"

#include "dct/model.hpp"

namespace dct {

inline constexpr const char* kCheckpointMagic = "DCTCKPT1";

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Strict: unknown keys and wrong types raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Header: {"config": {...}, "tensors": [{name, shape, dtype, byte_offset}]}.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
/// Throws ArtifactError for I/O problems, bad magic, truncation, and
/// manifest/payload disagreement.
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace dct
