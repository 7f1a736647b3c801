#pragma once

#include "regtr/geom.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace regtr::synth {

using Rng = std::mt19937_64;

enum class ShapeKind { kPlaneWithBumps, kBox, kSphereCap, kCompositeRoom };

ShapeKind parse_shape_kind(std::string_view name);
std::string_view to_string(ShapeKind kind);

/// Procedural surface samples. Sphere caps lie exactly on the unit sphere and
/// boxes are centred with their corners on it; the other kinds are centred and
/// scaled so the farthest point sits at radius 1. Needs n >= 64.
PointCloud generate_shape(ShapeKind kind, std::size_t n, Rng& rng);

/// Voxel-grid subsampling result: one keypoint per occupied voxel (the
/// centroid of its members) and, per keypoint, the pooled dense indices.
struct SubsampleResult {
  PointCloud keypoints;
  std::vector<std::vector<std::size_t>> pooling_indices;
};

/// The grid is anchored at the cloud's bounding-box minimum and voxels are
/// emitted in lexicographic (ix, iy, iz) order, so the output does not depend
/// on input point order and moves rigidly with translated input.
SubsampleResult voxel_subsample(const PointCloud& pc, double voxel_size);

struct CropResult {
  PointCloud points;
  std::vector<std::size_t> kept;  // ascending indices into the input cloud
  Vec3 normal = Vec3::UnitZ();    // kept points satisfy normal . p >= offset
  double offset = 0.0;
};

/// Keeps the ceil(p * M) points farthest along a random direction.
CropResult halfspace_crop(const PointCloud& pc, double keep_fraction, Rng& rng);

/// A registration pair with its ground truth. gt_transform maps source into the
/// target frame. The *_clean clouds are the noise-free positions aligned
/// index-by-index with source/target, and *_ids name the originating shape
/// sample so exact correspondences can be recovered.
struct PairSample {
  PointCloud source;
  PointCloud target;
  RigidTransform gt_transform;
  double overlap_fraction = 0.0;

  PointCloud source_clean;
  PointCloud target_clean;
  std::vector<std::size_t> source_ids;
  std::vector<std::size_t> target_ids;

  /// (clean source point, clean target point) for every shape sample present
  /// in both clouds. Empty for pairs loaded without identity information.
  std::vector<Correspondence> gt_correspondences() const;
};

struct PairOptions {
  double max_rotation_deg = 45.0;
  double max_translation = 0.5;
  double noise_sigma = 0.05;
  bool shuffle = true;
  std::size_t resample_count = 717;
  std::size_t min_points = 32;
  /// Radius for the overlap_fraction statistic, measured on noise-free copies.
  double overlap_radius = 0.05;
};

PairSample make_modelnet_style_pair(const PointCloud& shape, double keep_fraction, Rng& rng,
                                    const PairOptions& options = {});

struct AugmentOptions {
  double rotation_sigma = 0.1 * 3.14159265358979323846;
  double translation_sigma = 0.1;
  double jitter_sigma = 0.05;
  bool shuffle = true;
};

/// Perturbs the source by a random rigid motion (Gaussian magnitudes), jitters
/// both clouds and shuffles them, keeping gt_transform consistent.
PairSample augment_scene_pair(const PairSample& pair, Rng& rng, const AugmentOptions& options = {});

/// Re-draws the source pose: the source (and its clean copy) is moved back
/// into the target frame and then by a fresh ModelNet-style perturbation
/// (uniform angle up to max_rotation_deg about a random axis, uniform
/// translation up to max_translation per axis). Noise and order are kept.
PairSample repose_pair(const PairSample& pair, Rng& rng, double max_rotation_deg, double max_translation);

/// Fraction of source points whose gt-mapped clean position has a clean target
/// neighbour closer than `radius`.
double overlap_fraction(const PairSample& pair, double radius);

/// Uniformly random direction.
Vec3 random_unit_vector(Rng& rng);

}  // namespace regtr::synth
