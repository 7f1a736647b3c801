#pragma once

#include "regtr/geom.hpp"

#include <filesystem>

namespace regtr::io {

/// ASCII PLY with a single `vertex` element whose first three properties are
/// x, y, z. Extra vertex properties are skipped on read.
PointCloud read_ply(const std::filesystem::path& path);
void write_ply(const std::filesystem::path& path, const PointCloud& pc);

/// Raw binary cloud: 8-byte magic "RGTRPC01", uint64 little-endian point
/// count, then count x 3 little-endian float32.
PointCloud read_binary(const std::filesystem::path& path);
void write_binary(const std::filesystem::path& path, const PointCloud& pc);

/// Dispatches on extension: ".ply" or ".bin".
PointCloud read_cloud(const std::filesystem::path& path);
void write_cloud(const std::filesystem::path& path, const PointCloud& pc);

/// 12 whitespace-separated float64 values: rotation row-major, then translation.
RigidTransform read_transform(const std::filesystem::path& path);
void write_transform(const std::filesystem::path& path, const RigidTransform& t);

}  // namespace regtr::io
