#pragma once

#include "regtr/geom.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace regtr {

/// Per-keypoint decoder output for one direction: where each keypoint lands in
/// the other cloud's frame, and how likely it is to lie in the overlap.
struct PredictionSet {
  std::vector<Vec3> predicted_coords;
  std::vector<double> overlap_scores;
};

/// Stacked bidirectional correspondences. Rows [0, M') pair source keypoints
/// with their predicted target positions; rows [M', M'+N') pair predicted
/// source positions with target keypoints.
struct CorrespondenceBundle {
  std::vector<Vec3> source;
  std::vector<Vec3> target;
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
};

CorrespondenceBundle assemble(const PointCloud& source_keypoints, const PointCloud& target_keypoints,
                              const PredictionSet& source_to_target, const PredictionSet& target_to_source);

CorrespondenceBundle bundle_from(std::span<const Correspondence> correspondences);

/// Closed-form weighted least-squares rigid fit (weighted Kabsch-Umeyama):
/// argmin_{R,t} sum_i w_i |R x_i + t - y_i|^2.
/// Throws NumericalError "no confident correspondences" when the weights sum to
/// ~0, and "degenerate configuration" when the weighted covariance has rank < 2.
RigidTransform weighted_kabsch(const CorrespondenceBundle& bundle);
RigidTransform weighted_kabsch(std::span<const Correspondence> correspondences);

struct RansacOptions {
  std::size_t iterations = 1000;
  double inlier_threshold = 0.1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct RansacResult {
  RigidTransform transform;
  std::size_t inlier_count = 0;
  std::size_t best_hypothesis = 0;
  std::vector<bool> inliers;
};

/// 3-point hypothesise-and-verify. Each hypothesis draws from its own RNG
/// stream derived from (seed, hypothesis index), and the winner is the highest
/// inlier count with the lowest index, so the result does not depend on
/// `threads`. The winner is refit on its inliers with uniform weights.
RansacResult ransac_estimate(std::span<const Correspondence> correspondences, const RansacOptions& options);

}  // namespace regtr
