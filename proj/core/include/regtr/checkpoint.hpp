#pragma once

#include "regtr/config.hpp"
#include "regtr/params.hpp"

#include <filesystem>

namespace regtr {

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
};

/// Layout (little-endian): magic "RGTRCKPT", u32 version, u64 config length,
/// config text, u64 tensor count, then per tensor: u32 name length, name,
/// u32 rank, rank x u64 dims, float32 payload.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams<float>& params);

/// Throws IoError on malformed files and InvalidArgument when tensor names or
/// shapes disagree with the embedded config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace regtr
