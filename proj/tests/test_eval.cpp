#include "regtr/error.hpp"
#include "regtr/eval.hpp"
#include "regtr/solver.hpp"
#include "regtr/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

namespace regtr {
namespace {

namespace fs = std::filesystem;

synth::PairSample sample_pair(std::uint64_t seed) {
  synth::Rng rng(seed);
  const PointCloud shape = synth::generate_shape(synth::ShapeKind::kBox, 1024, rng);
  return synth::make_modelnet_style_pair(shape, 0.7, rng);
}

TEST(CorrespondenceRmse, MatchesDirectFormula) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Correspondence> pairs(40);
  for (auto& c : pairs) c = {Vec3(u(rng), u(rng), u(rng)), Vec3(u(rng), u(rng), u(rng)), 1.0};
  const RigidTransform t = RigidTransform::from_axis_angle(Vec3(1, 2, 3).normalized(), 0.7, Vec3(0.3, -0.2, 0.1));
  double s = 0;
  for (const auto& c : pairs) s += (t(c.source_point) - c.target_point).squaredNorm();
  EXPECT_NEAR(correspondence_rmse(t, pairs), std::sqrt(s / 40), 1e-12);
  EXPECT_THROW(correspondence_rmse(t, {}), InvalidArgument);
}

TEST(ScorePair, GroundTruthEstimateIsPerfect) {
  const synth::PairSample p = sample_pair(3);
  const PairResult r = score_pair(p, p.gt_transform, 0.2, 0.075);
  EXPECT_NEAR(r.rre_deg, 0.0, 1e-6);
  EXPECT_NEAR(r.rte, 0.0, 1e-12);
  EXPECT_NEAR(r.corr_rmse, 0.0, 1e-12);
  EXPECT_TRUE(r.success);
  EXPECT_GE(r.chamfer, 0.0);
}

TEST(ScorePair, OffsetEstimateHasRmseEqualToOffset) {
  const synth::PairSample p = sample_pair(4);
  const RigidTransform off = compose(RigidTransform(Mat3::Identity(), Vec3(0.3, 0, 0)), p.gt_transform);
  const PairResult r = score_pair(p, off, 0.2, 0.075);
  EXPECT_NEAR(r.corr_rmse, 0.3, 1e-12);
  EXPECT_NEAR(r.rte, 0.3, 1e-12);
  EXPECT_FALSE(r.success);
}

TEST(EvaluationPairs, FallBackToRadiusWithoutIdentities) {
  synth::PairSample p = sample_pair(5);
  const auto exact = evaluation_pairs(p, 0.075);
  EXPECT_EQ(exact.size(), p.gt_correspondences().size());
  p.source_ids.clear();
  p.target_ids.clear();
  p.source_clean = PointCloud();
  p.target_clean = PointCloud();
  const auto approx = evaluation_pairs(p, 0.3);
  EXPECT_FALSE(approx.empty());
  for (const auto& c : approx) EXPECT_LT((p.gt_transform(c.source_point) - c.target_point).norm(), 0.3);
}

TEST(Recall, CountsStrictlyBelowThresholdAndSplitsMedians) {
  std::vector<PairResult> rows(4);
  const double rmse[] = {0.1, 0.2, 0.05, 0.5};
  const double rre[] = {1, 50, 3, 90};
  for (std::size_t i = 0; i < 4; ++i) {
    rows[i].corr_rmse = rmse[i];
    rows[i].rre_deg = rre[i];
    rows[i].rte = rmse[i];
  }
  const RecallSummary s = registration_recall(rows, 0.2);
  EXPECT_EQ(s.successes, 2u);
  EXPECT_DOUBLE_EQ(s.recall, 0.5);
  EXPECT_DOUBLE_EQ(s.rre_median_success, 2.0);
  EXPECT_DOUBLE_EQ(s.rre_mean_success, 2.0);
  EXPECT_DOUBLE_EQ(s.rre_median_all, 26.5);
  EXPECT_DOUBLE_EQ(s.rre_mean_all, 36.0);
  EXPECT_THROW(registration_recall({}, 0.2), InvalidArgument);
}

TEST(OracleMatch, MatchesBruteForce) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> a(50), b(70);
  for (auto& p : a) p = Vec3(u(rng), u(rng), u(rng));
  for (auto& p : b) p = Vec3(u(rng), u(rng), u(rng));
  const RigidTransform gt = RigidTransform::from_axis_angle(Vec3::UnitX(), 0.4, Vec3(0, 0.1, 0));
  const OracleReport r = oracle_match(PointCloud(a), PointCloud(b), gt);
  ASSERT_EQ(r.errors.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : b) best = std::min(best, (gt(a[i]) - q).norm());
    EXPECT_NEAR(r.errors[i], best, 1e-12);
  }
  EXPECT_LE(r.median, r.p95);
  // A cloud matched against its own gt image has zero error.
  std::vector<Vec3> moved;
  for (const Vec3& p : a) moved.push_back(gt(p));
  EXPECT_NEAR(oracle_match(PointCloud(a), PointCloud(moved), gt).p95, 0.0, 1e-12);
}

TEST(Benchmark, SmokeRunOnFourPairsIsFiniteAndRepeatable) {
  ModelConfig cfg;
  cfg.d = 12;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.ffn_hidden = 16;
  cfg.feature_dim = 8;
  cfg.backbone_hidden = 8;
  const ModelParams<float> params = init_params<float>(cfg, 1);
  std::vector<EvalPair> pairs;
  for (std::uint64_t i = 0; i < 4; ++i) pairs.push_back({sample_pair(20 + i), "box"});
  BenchmarkOptions o;
  o.deterministic = true;
  const BenchmarkReport a = benchmark(pairs, cfg, params, o);
  ASSERT_EQ(a.rows.size(), 4u);
  for (const auto& r : a.rows) {
    EXPECT_TRUE(std::isfinite(r.rre_deg) && std::isfinite(r.rte) && std::isfinite(r.chamfer) && std::isfinite(r.corr_rmse));
    EXPECT_EQ(r.success, r.corr_rmse < 0.2);
    EXPECT_EQ(r.t_feat_ms, 0.0);
  }
  const BenchmarkReport b = benchmark(pairs, cfg, params, o);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.rows[i].corr_rmse, b.rows[i].corr_rmse);
  o.solver = SolverKind::kRegtrRansac;
  const BenchmarkReport c = benchmark(pairs, cfg, params, o);
  EXPECT_EQ(c.direct_rows.size(), 4u);
}

TEST(Benchmark, OracleCorrespondencesGiveFullRecall) {
  std::vector<PairResult> rows;
  for (std::uint64_t i = 0; i < 10; ++i) {
    synth::Rng rng(40 + i);
    synth::PairOptions po;
    po.noise_sigma = 0.0;
    const auto p = synth::make_modelnet_style_pair(synth::generate_shape(synth::ShapeKind::kSphereCap, 1024, rng), 0.7,
                                                   rng, po);
    rows.push_back(score_pair(p, weighted_kabsch(p.gt_correspondences()), 0.2, 0.075));
    EXPECT_LT(rows.back().rre_deg, 1e-6);
  }
  EXPECT_DOUBLE_EQ(registration_recall(rows, 0.2).recall, 1.0);
}

TEST(Report, CsvHeaderAndSummaryKeys) {
  const fs::path dir = fs::temp_directory_path() / "regtr_test_report";
  fs::create_directories(dir);
  BenchmarkReport rep;
  rep.rows.resize(2);
  rep.rows[0].corr_rmse = 0.1;
  rep.rows[1].pair_id = 1;
  rep.rows[1].corr_rmse = 0.4;
  rep.summary = registration_recall(rep.rows, 0.2);
  write_report_csv(dir / "r.csv", rep.rows);
  write_summary(dir / "s.txt", rep);
  std::ifstream csv(dir / "r.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "pair_id,rre_deg,rte,chamfer,corr_rmse,success,t_pre_ms,t_feat_ms,t_pose_ms");
  std::getline(csv, line);
  EXPECT_EQ(line.substr(0, 2), "0,");
  std::ifstream sum(dir / "s.txt");
  const std::string text((std::istreambuf_iterator<char>(sum)), std::istreambuf_iterator<char>());
  EXPECT_NE(text.find("registration_recall = 0.5"), std::string::npos) << text;
  fs::remove_all(dir);
}

}  // namespace
}  // namespace regtr
