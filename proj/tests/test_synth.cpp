#include "regtr/dataset.hpp"
#include "regtr/error.hpp"
#include "regtr/grid_index.hpp"
#include "regtr/pointcloud_io.hpp"
#include "regtr/synth.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace regtr {
namespace {

namespace fs = std::filesystem;
using synth::ShapeKind;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("regtr_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Shapes, SphereCapAndBoxLieOnUnitSphereBound) {
  synth::Rng rng(1);
  const PointCloud cap = synth::generate_shape(ShapeKind::kSphereCap, 512, rng);
  ASSERT_EQ(cap.size(), 512u);
  for (const Vec3& p : cap) EXPECT_NEAR(p.norm(), 1.0, 1e-12);
  // Box corners sit on the unit sphere; surface samples stay inside it.
  const PointCloud box = synth::generate_shape(ShapeKind::kBox, 512, rng);
  double rb = 0;
  for (const Vec3& p : box) rb = std::max(rb, p.norm());
  EXPECT_LE(rb, 1.0 + 1e-12);
  EXPECT_GT(rb, 0.9);
  for (const ShapeKind k : {ShapeKind::kPlaneWithBumps, ShapeKind::kCompositeRoom}) {
    const PointCloud pc = synth::generate_shape(k, 512, rng);
    double r = 0;
    for (const Vec3& p : pc) r = std::max(r, p.norm());
    EXPECT_NEAR(r, 1.0, 1e-9) << synth::to_string(k);
  }
  EXPECT_THROW(synth::generate_shape(ShapeKind::kBox, 10, rng), InvalidArgument);
}

TEST(Shapes, KindNamesRoundTrip) {
  for (const ShapeKind k : {ShapeKind::kBox, ShapeKind::kSphereCap, ShapeKind::kPlaneWithBumps, ShapeKind::kCompositeRoom}) {
    EXPECT_EQ(synth::parse_shape_kind(synth::to_string(k)), k);
  }
  EXPECT_THROW(synth::parse_shape_kind("torus"), InvalidArgument);
}

TEST(Crop, KeepsCeilFractionOnOneSide) {
  synth::Rng rng(2);
  const PointCloud pc = synth::generate_shape(ShapeKind::kSphereCap, 300, rng);
  for (const double p : {0.5, 0.7, 1.0}) {
    const synth::CropResult c = synth::halfspace_crop(pc, p, rng);
    EXPECT_EQ(c.kept.size(), static_cast<std::size_t>(std::ceil(p * 300)));
    EXPECT_TRUE(std::is_sorted(c.kept.begin(), c.kept.end()));
    std::set<std::size_t> kept(c.kept.begin(), c.kept.end());
    for (std::size_t i = 0; i < pc.size(); ++i) {
      const bool in = c.normal.dot(pc[i]) >= c.offset;
      if (kept.count(i)) {
        EXPECT_TRUE(in);
      }
    }
  }
}

TEST(VoxelSubsample, CentroidsAndPooling) {
  const PointCloud pc({Vec3(0.01, 0.01, 0.01), Vec3(0.03, 0.01, 0.01), Vec3(0.51, 0.0, 0.0)});
  const synth::SubsampleResult s = synth::voxel_subsample(pc, 0.1);
  ASSERT_EQ(s.keypoints.size(), 2u);
  EXPECT_TRUE(s.keypoints[0].isApprox(Vec3(0.02, 0.01, 0.01)));
  EXPECT_EQ(s.pooling_indices[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(s.pooling_indices[1], (std::vector<std::size_t>{2}));
}

TEST(VoxelSubsample, IndependentOfOrderAndEquivariantToTranslation) {
  synth::Rng rng(3);
  const PointCloud pc = synth::generate_shape(ShapeKind::kBox, 600, rng);
  std::vector<Vec3> pts = pc.points();
  std::shuffle(pts.begin(), pts.end(), rng);
  const auto a = synth::voxel_subsample(pc, 0.2);
  const auto b = synth::voxel_subsample(PointCloud(pts), 0.2);
  ASSERT_EQ(a.keypoints.size(), b.keypoints.size());
  for (std::size_t i = 0; i < a.keypoints.size(); ++i) EXPECT_LT((a.keypoints[i] - b.keypoints[i]).norm(), 1e-12);

  const Vec3 shift(3.7, -1.25, 0.5);
  const auto c = synth::voxel_subsample(apply(RigidTransform(Mat3::Identity(), shift), pc), 0.2);
  ASSERT_EQ(a.keypoints.size(), c.keypoints.size());
  for (std::size_t i = 0; i < a.keypoints.size(); ++i) EXPECT_LT((a.keypoints[i] + shift - c.keypoints[i]).norm(), 1e-9);
}

TEST(Pair, ZeroNoiseFullOverlapIsIdenticalUpToShuffle) {
  synth::Rng rng(4);
  const PointCloud shape = synth::generate_shape(ShapeKind::kSphereCap, 256, rng);
  synth::PairOptions o;
  o.noise_sigma = 0;
  o.max_rotation_deg = 0;
  o.max_translation = 0;
  o.resample_count = 256;
  const synth::PairSample pair = synth::make_modelnet_style_pair(shape, 1.0, rng, o);
  EXPECT_LT(rotation_error(pair.gt_transform, RigidTransform::identity()), 1e-9);
  EXPECT_EQ(chamfer_distance(pair.source, pair.target), 0.0);
  EXPECT_NEAR(pair.overlap_fraction, 1.0, 1e-12);
}

TEST(Pair, GroundTruthAlignsCleanCopiesExactly) {
  synth::Rng rng(5);
  const PointCloud shape = synth::generate_shape(ShapeKind::kBox, 1024, rng);
  const synth::PairSample pair = synth::make_modelnet_style_pair(shape, 0.7, rng);
  EXPECT_EQ(pair.source.size(), 717u);
  EXPECT_EQ(pair.target.size(), 717u);
  EXPECT_LE(rotation_error(pair.gt_transform, RigidTransform::identity()), 45.0 + 1e-9);
  const auto corr = pair.gt_correspondences();
  ASSERT_FALSE(corr.empty());
  for (const auto& c : corr) EXPECT_LT((pair.gt_transform(c.source_point) - c.target_point).norm(), 1e-12);
  // Noisy points stay within a generous bound of their clean copies.
  for (std::size_t i = 0; i < pair.source.size(); ++i) EXPECT_LT((pair.source[i] - pair.source_clean[i]).norm(), 0.5);
}

TEST(Pair, AugmentationKeepsGroundTruthConsistent) {
  synth::Rng rng(6);
  const PointCloud shape = synth::generate_shape(ShapeKind::kCompositeRoom, 1024, rng);
  const synth::PairSample pair = synth::make_modelnet_style_pair(shape, 0.7, rng);
  const synth::PairSample aug = synth::augment_scene_pair(pair, rng);
  const auto corr = aug.gt_correspondences();
  ASSERT_FALSE(corr.empty());
  for (const auto& c : corr) EXPECT_LT((aug.gt_transform(c.source_point) - c.target_point).norm(), 1e-9);
  const double bound = 3 * 0.05 * std::sqrt(3.0) * 2;
  for (std::size_t i = 0; i < aug.source.size(); ++i) EXPECT_LT((aug.source[i] - aug.source_clean[i]).norm(), bound + 0.5);
}

TEST(Pair, ReposeMovesSourceRigidly) {
  synth::Rng rng(7);
  const PointCloud shape = synth::generate_shape(ShapeKind::kSphereCap, 1024, rng);
  const synth::PairSample pair = synth::make_modelnet_style_pair(shape, 0.7, rng);
  const synth::PairSample re = synth::repose_pair(pair, rng, 45.0, 0.5);
  EXPECT_EQ(re.target.points(), pair.target.points());
  for (std::size_t i = 0; i < re.source.size(); ++i) {
    EXPECT_LT((re.gt_transform(re.source[i]) - pair.gt_transform(pair.source[i])).norm(), 1e-12);
  }
  EXPECT_LE(rotation_error(re.gt_transform, RigidTransform::identity()), 45.0 + 1e-9);
}

TEST(Dataset, ManifestRoundTripAndRegeneration) {
  const fs::path dir = temp_dir("manifest");
  const data::Manifest m = data::make_manifest(42, 4, {ShapeKind::kSphereCap, ShapeKind::kBox}, 0.5, 300);
  data::write_manifest(dir / "manifest.txt", m);
  const data::Manifest r = data::read_manifest(dir / "manifest.txt");
  ASSERT_EQ(r.entries.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r.entries[i].seed, m.entries[i].seed);
    EXPECT_EQ(r.entries[i].kind, i % 2 ? ShapeKind::kBox : ShapeKind::kSphereCap);
    EXPECT_DOUBLE_EQ(r.entries[i].keep_fraction, 0.5);
  }
  const auto a = data::generate_pair(m.entries[1], m);
  const auto b = data::generate_pair(r.entries[1], r);
  EXPECT_EQ(a.source.points(), b.source.points());
  EXPECT_EQ(a.gt_transform.matrix(), b.gt_transform.matrix());
  fs::remove_all(dir);
}

TEST(Dataset, WrittenFilesAreByteReproducible) {
  const fs::path a = temp_dir("repro_a"), b = temp_dir("repro_b");
  const data::Manifest m = data::make_manifest(7, 3, {ShapeKind::kBox}, 0.7, 200);
  data::write_dataset(a, m);
  data::write_dataset(b, m);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 1u + 3 * 3);
  const synth::PairSample loaded = data::load_pair_files(a, 2);
  const synth::PairSample gen = data::generate_pair(m.entries[2], m);
  ASSERT_EQ(loaded.source.size(), gen.source.size());
  for (std::size_t i = 0; i < gen.source.size(); ++i) EXPECT_LT((loaded.source[i] - gen.source[i]).norm(), 1e-5);
  EXPECT_LT(rotation_error(loaded.gt_transform, gen.gt_transform), 1e-4);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, MalformedManifestIsRejected) {
  const fs::path dir = temp_dir("bad_manifest");
  std::ofstream(dir / "manifest.txt") << "# shape_points = 1024\n12 sphere-cap\n";
  EXPECT_THROW(data::read_manifest(dir / "manifest.txt"), InvalidArgument);
  std::ofstream(dir / "manifest.txt") << "# bogus = 1\n";
  EXPECT_THROW(data::read_manifest(dir / "manifest.txt"), InvalidArgument);
  EXPECT_THROW(data::read_manifest(dir / "missing.txt"), IoError);
  fs::remove_all(dir);
}

TEST(PointCloudIo, PlyAndBinaryRoundTrip) {
  const fs::path dir = temp_dir("io");
  synth::Rng rng(8);
  const PointCloud pc = synth::generate_shape(ShapeKind::kBox, 100, rng);
  io::write_cloud(dir / "a.ply", pc);
  io::write_cloud(dir / "a.bin", pc);
  const PointCloud p = io::read_cloud(dir / "a.ply");
  const PointCloud b = io::read_cloud(dir / "a.bin");
  ASSERT_EQ(p.size(), pc.size());
  ASSERT_EQ(b.size(), pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) {
    EXPECT_LT((p[i] - pc[i]).norm(), 1e-5);
    EXPECT_LT((b[i] - pc[i]).norm(), 1e-5);
  }
  const RigidTransform t = RigidTransform::from_axis_angle(Vec3(1, 2, 3).normalized(), 0.7, Vec3(1, -2, 0.5));
  io::write_transform(dir / "t.txt", t);
  EXPECT_LT(rotation_error(io::read_transform(dir / "t.txt"), t), 1e-6);
  std::ofstream(dir / "bad.ply") << "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n";
  EXPECT_ANY_THROW(io::read_cloud(dir / "bad.ply"));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace regtr
