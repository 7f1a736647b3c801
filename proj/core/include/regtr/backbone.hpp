#pragma once

// Simplified keypoint encoder. A cloud is voxel-subsampled once per level
// (fine voxel v, then v * level_factor, ...). Keypoints are the last level's
// centroids. Each keypoint gathers up to max_neighbors nearest points of the
// previous level within rho; their offsets (divided by rho) pass through a
// shared two-layer MLP, are max- and mean-pooled, and a second MLP maps the
// pooled statistics to a D-dimensional feature. Only relative offsets are
// used, so features are translation invariant and do not depend on input
// point order.

#include "regtr/config.hpp"
#include "regtr/geom.hpp"
#include "regtr/params.hpp"

#include <cstddef>
#include <vector>

namespace regtr {

/// Parameter-free geometric part of a keypoint set; computed once per cloud.
struct CloudGeometry {
  PointCloud keypoints;
  /// Dense input indices pooled into each keypoint (through all levels).
  std::vector<std::vector<std::size_t>> pooling_indices;
  /// Row-major (sum of neighbour counts) x 3 offsets divided by rho.
  std::vector<double> neighbor_offsets;
  /// Rows of neighbor_offsets belonging to each keypoint.
  std::vector<std::vector<std::size_t>> neighbor_groups;
};

/// Throws InvalidArgument("input too sparse ...") below 4 keypoints.
CloudGeometry prepare_geometry(const PointCloud& pc, const ModelConfig& cfg);

template <typename T>
struct KeypointSet {
  const CloudGeometry* geometry = nullptr;
  ad::Tensor<T> features;  // M' x D
  const PointCloud& keypoints() const { return geometry->keypoints; }
};

template <typename T>
KeypointSet<T> extract(const CloudGeometry& geometry, const BackboneParams<T>& params);

/// f * W + b (single linear layer, no activation).
template <typename T>
ad::Tensor<T> project_features(const ad::Tensor<T>& features, const Linear<T>& proj);

/// Fine voxel size that gives roughly `target` keypoints for `cfg`'s level
/// structure (bisection on the final voxel size).
double voxel_size_for_keypoints(const PointCloud& pc, const ModelConfig& cfg, std::size_t target);

}  // namespace regtr
