#include "regtr/error.hpp"
#include "regtr/solver.hpp"

#include <gtest/gtest.h>

#include <Eigen/LU>

#include <numbers>
#include <random>

namespace regtr {
namespace {

RigidTransform random_transform(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> a(0, std::numbers::pi);
  return RigidTransform::from_axis_angle(Vec3(g(rng), g(rng), g(rng)).normalized(), a(rng),
                                         Vec3(g(rng), g(rng), g(rng)));
}

std::vector<Correspondence> exact_set(std::mt19937_64& rng, const RigidTransform& t, std::size_t n) {
  std::uniform_real_distribution<double> u(-1, 1), w(1e-3, 1.0);
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 x(u(rng), u(rng), u(rng));
    out.push_back({x, t(x), w(rng)});
  }
  return out;
}

void expect_proper_rotation(const RigidTransform& t) {
  const Mat3& r = t.rotation();
  EXPECT_NEAR((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 0, 1e-9);
  EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
}

TEST(WeightedKabsch, RecoversExactTransform) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const RigidTransform gt = random_transform(rng);
    const RigidTransform est = weighted_kabsch(exact_set(rng, gt, 10 + trial));
    EXPECT_LT(rotation_error(est, gt), 1e-6);
    EXPECT_LT(translation_error(est, gt), 1e-9);
  }
}

TEST(WeightedKabsch, ResidualVanishesOnNoiselessInput) {
  std::mt19937_64 rng(2);
  const RigidTransform gt = random_transform(rng);
  const auto set = exact_set(rng, gt, 30);
  const RigidTransform est = weighted_kabsch(set);
  double r = 0;
  for (const auto& c : set) r += c.weight * (est(c.source_point) - c.target_point).squaredNorm();
  EXPECT_LT(r, 1e-12);
}

TEST(WeightedKabsch, ZeroWeightRowsAreIgnored) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5, 5);
  const RigidTransform gt = random_transform(rng);
  auto set = exact_set(rng, gt, 40);
  for (std::size_t i = 0; i < set.size(); i += 2) {
    set[i].target_point = Vec3(u(rng), u(rng), u(rng));
    set[i].weight = 0.0;
  }
  const RigidTransform est = weighted_kabsch(set);
  EXPECT_LT(rotation_error(est, gt), 1e-6);
  EXPECT_LT(translation_error(est, gt), 1e-9);
}

TEST(WeightedKabsch, InvariantToWeightScale) {
  std::mt19937_64 rng(4);
  const RigidTransform gt = random_transform(rng);
  auto set = exact_set(rng, gt, 20);
  std::normal_distribution<double> g(0, 0.05);
  for (auto& c : set) c.target_point += Vec3(g(rng), g(rng), g(rng));
  const RigidTransform a = weighted_kabsch(set);
  for (auto& c : set) c.weight *= 1e6;
  const RigidTransform b = weighted_kabsch(set);
  EXPECT_LT(rotation_error(a, b), 1e-9);
  EXPECT_LT(translation_error(a, b), 1e-9);
}

TEST(WeightedKabsch, PlanarInputStaysProper) {
  // Coplanar points are the classic reflection trap: without the det
  // correction the SVD can return a mirror image.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const RigidTransform gt = random_transform(rng);
    std::vector<Correspondence> set;
    for (int i = 0; i < 12; ++i) {
      const Vec3 x(u(rng), u(rng), trial % 2 ? 0.0 : 1e-9 * u(rng));
      set.push_back({x, gt(x), 1.0});
    }
    const RigidTransform est = weighted_kabsch(set);
    expect_proper_rotation(est);
    EXPECT_LT(rotation_error(est, gt), 1e-5);
  }
}

TEST(WeightedKabsch, ReflectedTargetsGiveProperRotation) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Correspondence> set;
    for (int i = 0; i < 15; ++i) {
      const Vec3 x(u(rng), u(rng), u(rng));
      set.push_back({x, Vec3(x.x(), x.y(), -x.z()), 1.0});
    }
    expect_proper_rotation(weighted_kabsch(set));
  }
}

TEST(WeightedKabsch, RejectsDegenerateInput) {
  const std::vector<Correspondence> point = {{Vec3(1, 1, 1), Vec3(2, 2, 2), 1}, {Vec3(1, 1, 1), Vec3(2, 2, 2), 1}};
  EXPECT_THROW(weighted_kabsch(point), NumericalError);
  std::vector<Correspondence> line;
  for (int i = 0; i < 10; ++i) line.push_back({Vec3(i, 2 * i, 0), Vec3(0, i, 3 * i), 1});
  EXPECT_THROW(weighted_kabsch(line), NumericalError);
  std::vector<Correspondence> zero = {{Vec3(0, 0, 0), Vec3(1, 0, 0), 0},
                                      {Vec3(1, 0, 0), Vec3(1, 1, 0), 0},
                                      {Vec3(0, 1, 0), Vec3(1, 2, 3), 0}};
  try {
    weighted_kabsch(zero);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("no confident correspondences"), std::string::npos);
  }
  EXPECT_THROW(weighted_kabsch(std::vector<Correspondence>{}), NumericalError);
}

TEST(WeightedKabsch, RejectsNegativeWeights) {
  std::vector<Correspondence> set = {{Vec3(0, 0, 0), Vec3(0, 0, 0), 1},
                                     {Vec3(1, 0, 0), Vec3(1, 0, 0), -1},
                                     {Vec3(0, 1, 0), Vec3(0, 1, 0), 1}};
  EXPECT_THROW(weighted_kabsch(set), InvalidArgument);
}

TEST(Assemble, StacksBothDirections) {
  const PointCloud ks({Vec3(0, 0, 0), Vec3(1, 0, 0)});
  const PointCloud kt({Vec3(0, 1, 0), Vec3(0, 2, 0), Vec3(0, 3, 0)});
  const PredictionSet xy{{Vec3(5, 5, 5), Vec3(6, 6, 6)}, {0.1, 0.2}};
  const PredictionSet yx{{Vec3(7, 7, 7), Vec3(8, 8, 8), Vec3(9, 9, 9)}, {0.3, 0.4, 0.5}};
  const CorrespondenceBundle b = assemble(ks, kt, xy, yx);
  ASSERT_EQ(b.size(), 5u);
  EXPECT_EQ(b.source[1], Vec3(1, 0, 0));
  EXPECT_EQ(b.target[1], Vec3(6, 6, 6));
  EXPECT_EQ(b.source[2], Vec3(7, 7, 7));
  EXPECT_EQ(b.target[4], Vec3(0, 3, 0));
  EXPECT_DOUBLE_EQ(b.weights[3], 0.4);
  EXPECT_THROW(assemble(ks, kt, yx, xy), InvalidArgument);
}

std::vector<Correspondence> outlier_set(std::mt19937_64& rng, const RigidTransform& gt, double sigma) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::normal_distribution<double> g(0, sigma);
  std::vector<Correspondence> set;
  for (int i = 0; i < 100; ++i) {
    const Vec3 x(u(rng), u(rng), u(rng));
    if (i % 2) {
      set.push_back({x, Vec3(2 * u(rng), 2 * u(rng), 2 * u(rng)), 1});
    } else {
      set.push_back({x, gt(x) + Vec3(g(rng), g(rng), g(rng)), 1});
    }
  }
  return set;
}

TEST(Ransac, RecoversWithHalfOutliers) {
  std::mt19937_64 rng(7);
  const double sigma = 0.01;
  int ok = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const RigidTransform gt = random_transform(rng);
    const auto set = outlier_set(rng, gt, sigma);
    RansacOptions opt;
    opt.iterations = 200;
    opt.inlier_threshold = 3 * sigma * std::sqrt(3.0);
    opt.seed = static_cast<std::uint64_t>(trial);
    const RansacResult r = ransac_estimate(set, opt);
    expect_proper_rotation(r.transform);
    EXPECT_EQ(r.inliers.size(), set.size());
    if (rotation_error(r.transform, gt) < 1.0 && translation_error(r.transform, gt) < 0.02) ++ok;
  }
  EXPECT_GE(ok, 19);
}

TEST(Ransac, ResultIndependentOfThreadCount) {
  std::mt19937_64 rng(8);
  const RigidTransform gt = random_transform(rng);
  const auto set = outlier_set(rng, gt, 0.01);
  RansacOptions opt;
  opt.iterations = 300;
  opt.inlier_threshold = 0.05;
  opt.seed = 99;
  const RansacResult a = ransac_estimate(set, opt);
  opt.threads = 4;
  const RansacResult b = ransac_estimate(set, opt);
  EXPECT_EQ(a.best_hypothesis, b.best_hypothesis);
  EXPECT_EQ(a.inlier_count, b.inlier_count);
  EXPECT_EQ(a.transform.matrix(), b.transform.matrix());
}

TEST(Ransac, RejectsTooFewCorrespondences) {
  const std::vector<Correspondence> two = {{Vec3(0, 0, 0), Vec3(0, 0, 0), 1}, {Vec3(1, 0, 0), Vec3(1, 0, 0), 1}};
  EXPECT_ANY_THROW(ransac_estimate(two, {}));
}

}  // namespace
}  // namespace regtr
