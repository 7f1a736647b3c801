#pragma once

#include "regtr/config.hpp"
#include "regtr/geom.hpp"
#include "regtr/model.hpp"
#include "regtr/synth.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace regtr {

/// Root mean square of |est(x_i) - y_i| over ground-truth pairs (x_i, y_i).
/// Throws InvalidArgument on an empty set.
double correspondence_rmse(const RigidTransform& est, std::span<const Correspondence> gt_pairs);

/// Ground-truth pairs for RMSE: exact clean pairs when the pair carries point
/// identities, otherwise source points whose gt image has a target neighbour
/// within `radius` (an approximation for externally loaded data).
std::vector<Correspondence> evaluation_pairs(const synth::PairSample& pair, double radius);

struct PairResult {
  std::size_t pair_id = 0;
  std::string scene;
  double rre_deg = 0;
  double rte = 0;
  double chamfer = 0;
  double corr_rmse = 0;
  bool success = false;
  bool solver_failed = false;
  double t_pre_ms = 0;
  double t_feat_ms = 0;
  double t_pose_ms = 0;
};

struct RecallSummary {
  std::size_t pairs = 0;
  std::size_t successes = 0;
  double recall = 0;
  // over successful pairs (0 when there are none)
  double rre_mean_success = 0, rre_median_success = 0;
  double rte_mean_success = 0, rte_median_success = 0;
  // over all pairs
  double rre_mean_all = 0, rre_median_all = 0;
  double rte_mean_all = 0, rte_median_all = 0;
  double chamfer_mean = 0;
  double t_pre_ms_mean = 0, t_feat_ms_mean = 0, t_pose_ms_mean = 0;
};

/// Success means corr_rmse < threshold. Throws on an empty list.
RecallSummary registration_recall(std::span<const PairResult> results, double threshold = 0.2);

struct OracleReport {
  std::vector<double> errors;  // per source keypoint
  double median = 0;
  double p95 = 0;
};

/// Matches each source keypoint to the target keypoint nearest its gt image
/// and reports the distance between the two.
OracleReport oracle_match(const PointCloud& source_keypoints, const PointCloud& target_keypoints,
                          const RigidTransform& gt);

struct EvalPair {
  synth::PairSample pair;
  std::string scene;
};

struct BenchmarkOptions {
  SolverKind solver = SolverKind::kDirect;
  double success_threshold = 0.2;
  std::size_t ransac_iterations = 1000;
  double ransac_threshold = 0.0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool deterministic = false;  // single thread, timing columns zeroed
};

struct BenchmarkReport {
  std::vector<PairResult> rows;  // the selected solver, manifest order
  RecallSummary summary;
  /// Filled when the selected solver is not kDirect, for side-by-side output.
  std::vector<PairResult> direct_rows;
  RecallSummary direct_summary;
  SolverKind solver = SolverKind::kDirect;
  double success_threshold = 0.2;
};

/// Scores one estimate against a pair's ground truth.
PairResult score_pair(const synth::PairSample& pair, const RigidTransform& est, double success_threshold,
                      double radius);

BenchmarkReport benchmark(std::span<const EvalPair> pairs, const ModelConfig& cfg, const ModelParams<float>& params,
                          const BenchmarkOptions& options);

/// CSV `pair_id,rre_deg,rte,chamfer,corr_rmse,success,t_pre_ms,t_feat_ms,t_pose_ms`.
void write_report_csv(const std::filesystem::path& path, std::span<const PairResult> rows);
/// key = value summary; includes direct.* keys when a baseline was run, and
/// per-scene recall when rows carry scene tags.
void write_summary(const std::filesystem::path& path, const BenchmarkReport& report);

}  // namespace regtr
