#pragma once

#include "regtr/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace regtr::data {

/// One manifest line: `seed kind p count`.
struct ManifestEntry {
  std::uint64_t seed = 0;
  synth::ShapeKind kind = synth::ShapeKind::kSphereCap;
  double keep_fraction = 0.7;
  std::size_t count = 717;
  std::string scene;  // optional fifth column, used to group report rows
};

/// Dataset manifest. Generator parameters shared by all lines are stored as
/// `# key = value` header comments so a manifest alone regenerates the data.
struct Manifest {
  std::size_t shape_points = 1024;
  synth::PairOptions pair_options;
  std::vector<ManifestEntry> entries;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Regenerates the pair described by one manifest line.
synth::PairSample generate_pair(const ManifestEntry& entry, const Manifest& manifest);

std::vector<synth::PairSample> generate_all(const Manifest& manifest);

/// Manifest with `pairs` entries whose seeds derive from `base_seed`; kinds
/// cycle through `kinds`.
Manifest make_manifest(std::uint64_t base_seed, std::size_t pairs, const std::vector<synth::ShapeKind>& kinds,
                       double keep_fraction, std::size_t count, std::size_t shape_points = 1024,
                       const synth::PairOptions& options = {});

/// Writes manifest.txt plus pair_NNNN_{src,tgt}.ply and pair_NNNN_gt.txt.
/// Returns the pairs that were written.
std::vector<synth::PairSample> write_dataset(const std::filesystem::path& dir, const Manifest& manifest);

std::string pair_stem(std::size_t index);

/// Loads one pair from its PLY and transform files. No clean copies or ids
/// are available for such pairs.
synth::PairSample load_pair_files(const std::filesystem::path& dir, std::size_t index);

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace regtr::data
