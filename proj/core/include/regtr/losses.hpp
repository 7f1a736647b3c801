#pragma once

#include "regtr/config.hpp"
#include "regtr/geom.hpp"
#include "regtr/tensor.hpp"

#include <span>
#include <vector>

namespace regtr {

struct OverlapLabels {
  std::vector<double> dense;     // 0 or 1 per input point
  std::vector<double> keypoint;  // mean of the pooled dense labels
};

/// A point of `cloud` is labelled 1 when its image under `to_other` has a
/// neighbour in `other` closer than r_o.
OverlapLabels overlap_labels(const PointCloud& cloud, const PointCloud& other, const RigidTransform& to_other,
                             const std::vector<std::vector<std::size_t>>& pooling, double r_o);

/// Mean binary cross entropy; scores are clamped to [1e-7, 1 - 1e-7].
template <typename T>
ad::Tensor<T> overlap_loss(const ad::Tensor<T>& scores, std::span<const double> labels);

/// sum_i o_i |to_other(k_i) - pred_i|_1 / sum_i o_i for one direction.
/// Returns a constant 0 (with a warning) when every label is zero.
template <typename T>
ad::Tensor<T> correspondence_loss(const ad::Tensor<T>& pred, const PointCloud& keypoints,
                                  const RigidTransform& to_other, std::span<const double> labels);

struct FeatureLossParams {
  double r_p = 0.0;  // positive radius (m)
  double r_n = 0.0;  // negative radius (2m)

  static FeatureLossParams from_margin(double m) { return {m, 2 * m}; }
};

/// W_f = U + U^T with U the upper triangle (diagonal included) of `feat_u`.
template <typename T>
ad::Tensor<T> feature_matrix(const ad::Tensor<T>& feat_u);

/// Symmetric InfoNCE with log-bilinear scores f_x^T W f_c. An anchor's
/// positive is the nearest keypoint of the other cloud to its ground-truth
/// image, if within r_p; negatives are keypoints farther than r_n. Each
/// direction is averaged over its anchors and the two are summed.
template <typename T>
ad::Tensor<T> infonce_loss(const ad::Tensor<T>& fx, const ad::Tensor<T>& fy, const PointCloud& kx,
                           const PointCloud& ky, const RigidTransform& gt, const ad::Tensor<T>& w_f,
                           const FeatureLossParams& flp);

struct CircleLossParams {
  double pos_margin = 0.1;
  double neg_margin = 1.4;
  double log_scale = 16.0;
};

/// Circle loss on L2-normalised features with the same positive/negative rule
/// as infonce_loss (ablation).
template <typename T>
ad::Tensor<T> circle_loss(const ad::Tensor<T>& fx, const ad::Tensor<T>& fy, const PointCloud& kx,
                          const PointCloud& ky, const RigidTransform& gt, const FeatureLossParams& flp,
                          const CircleLossParams& cp);

template <typename T>
struct LossComponents {
  ad::Tensor<T> correspondence;
  ad::Tensor<T> overlap;
  ad::Tensor<T> feature;
};

/// L_c + lambda_o * L_o + lambda_f * L_f. Throws NumericalError naming the
/// first non-finite component.
template <typename T>
ad::Tensor<T> total_loss(const LossComponents<T>& c, const ModelConfig& cfg);

}  // namespace regtr
