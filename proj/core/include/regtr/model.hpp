#pragma once

// End-to-end network: backbone -> projection -> cross-encoder -> heads, plus
// the per-pair training objective and the registration front door.

#include "regtr/backbone.hpp"
#include "regtr/config.hpp"
#include "regtr/losses.hpp"
#include "regtr/params.hpp"
#include "regtr/solver.hpp"
#include "regtr/xencoder.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace regtr {

/// Positional encodings for keypoints: the fixed sinusoid, or a small learned
/// MLP over the scaled coordinates when cfg.posenc is kLearned.
template <typename T>
ad::Tensor<T> keypoint_encoding(const PointCloud& keypoints, const ModelConfig& cfg, const ModelParams<T>& params);

template <typename T>
struct ForwardOutput {
  EncoderOutput<T> encoded;  // entry 0 = projected features
  /// Decoder outputs per supervised layer (one entry unless all-layers
  /// supervision is on). Index matches `decoded_layers`.
  std::vector<std::size_t> decoded_layers;
  std::vector<ad::Tensor<T>> pred_xy, pred_yx;  // M' x 3, N' x 3
  std::vector<ad::Tensor<T>> overlap_x, overlap_y;
};

/// `all_layers` decodes every layer output with the shared heads.
template <typename T>
ForwardOutput<T> forward(const CloudGeometry& gx, const CloudGeometry& gy, const ModelConfig& cfg,
                         const ModelParams<T>& params, bool all_layers = false);

/// Overlap labels for both clouds of a pair under ground truth `gt`.
struct PairTargets {
  RigidTransform gt;
  OverlapLabels source;
  OverlapLabels target;
};

PairTargets make_targets(const PointCloud& source, const PointCloud& target, const CloudGeometry& gx,
                         const CloudGeometry& gy, const RigidTransform& gt, const ModelConfig& cfg);

template <typename T>
struct PairLoss {
  ad::Tensor<T> total;
  double correspondence = 0;
  double overlap = 0;
  double feature = 0;
};

/// Forward pass plus the configured objective for one pair.
template <typename T>
PairLoss<T> pair_loss(const CloudGeometry& gx, const CloudGeometry& gy, const PairTargets& targets,
                      const ModelConfig& cfg, const ModelParams<T>& params);

/// Final-layer predictions converted to solver inputs.
template <typename T>
std::pair<PredictionSet, PredictionSet> to_predictions(const ForwardOutput<T>& out);

enum class SolverKind { kDirect, kRansacBaseline, kRegtrRansac };
SolverKind parse_solver_kind(std::string_view s);
std::string_view to_string(SolverKind k);

struct RegisterOptions {
  SolverKind solver = SolverKind::kDirect;
  std::size_t ransac_iterations = 1000;
  double ransac_threshold = 0.0;  // 0 means 2 * r_o
  std::uint64_t seed = 0;
};

struct RegisterResult {
  RigidTransform transform;
  PointCloud source_keypoints;
  PointCloud target_keypoints;
  PredictionSet source_to_target;
  PredictionSet target_to_source;
  double t_pre_ms = 0;
  double t_feat_ms = 0;
  double t_pose_ms = 0;
};

/// Registers `source` onto `target`. kDirect feeds the network's weighted
/// correspondences to weighted_kabsch; kRegtrRansac runs RANSAC on the same
/// correspondences; kRansacBaseline matches keypoints by the bilinear feature
/// score of the conditioned features and runs RANSAC on those matches.
template <typename T>
RegisterResult register_pair(const PointCloud& source, const PointCloud& target, const ModelConfig& cfg,
                             const ModelParams<T>& params, const RegisterOptions& options = {});

}  // namespace regtr
