#include "regtr/error.hpp"
#include "regtr/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

namespace regtr {
namespace {

using T = ad::Tensor<double>;

T random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(r * c);
  for (double& x : v) x = u(rng);
  return T::from(r, c, std::move(v));
}

TEST(OverlapLabels, MatchBruteForce) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> a(60), b(50);
  for (auto& p : a) p = Vec3(u(rng), u(rng), u(rng));
  for (auto& p : b) p = Vec3(u(rng), u(rng), u(rng));
  const RigidTransform t = RigidTransform::from_axis_angle(Vec3::UnitY(), 0.3, Vec3(0.1, 0, 0));
  std::vector<std::vector<std::size_t>> pooling;
  for (std::size_t i = 0; i < 60; i += 3) pooling.push_back({i, i + 1, i + 2});
  const OverlapLabels l = overlap_labels(PointCloud(a), PointCloud(b), t, pooling, 0.25);
  for (std::size_t i = 0; i < 60; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : b) best = std::min(best, (t(a[i]) - q).norm());
    EXPECT_EQ(l.dense[i], best < 0.25 ? 1.0 : 0.0);
  }
  for (std::size_t k = 0; k < pooling.size(); ++k) {
    const double m = (l.dense[3 * k] + l.dense[3 * k + 1] + l.dense[3 * k + 2]) / 3;
    EXPECT_DOUBLE_EQ(l.keypoint[k], m);
  }
  EXPECT_THROW(overlap_labels(PointCloud(a), PointCloud(b), t, pooling, 0.0), InvalidArgument);
}

TEST(OverlapLoss, MatchesBinaryCrossEntropy) {
  const T s = T::from(3, 1, {0.9, 0.2, 0.6});
  const std::vector<double> y = {1.0, 0.0, 0.25};
  const double ref = -(std::log(0.9) + std::log(0.8) + 0.25 * std::log(0.6) + 0.75 * std::log(0.4)) / 3;
  EXPECT_NEAR(overlap_loss(s, std::span<const double>(y)).item(), ref, 1e-12);
}

TEST(OverlapLoss, ClampsSaturatedScores) {
  const T s = T::from(2, 1, {0.0, 1.0});
  const std::vector<double> y = {1.0, 0.0};
  const double v = overlap_loss(s, std::span<const double>(y)).item();
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, -std::log(1e-7), 1e-6);
}

TEST(CorrespondenceLoss, WeightedL1) {
  const PointCloud k({Vec3(0, 0, 0), Vec3(1, 0, 0)});
  const RigidTransform t(Mat3::Identity(), Vec3(0, 0, 1));
  const T pred = T::from(2, 3, {0.5, 0, 1, 1, -1, 1.5});
  const std::vector<double> w = {1.0, 0.5};
  // |(0.5,0,0)|_1 = 0.5 and |(0,-1,0.5)|_1 = 1.5; (0.5 + 0.5 * 1.5) / 1.5.
  EXPECT_NEAR(correspondence_loss(pred, k, t, std::span<const double>(w)).item(), 1.25 / 1.5, 1e-12);
  const std::vector<double> zero = {0.0, 0.0};
  EXPECT_EQ(correspondence_loss(pred, k, t, std::span<const double>(zero)).item(), 0.0);
  EXPECT_THROW(correspondence_loss(pred, PointCloud({Vec3::Zero()}), t, std::span<const double>(w)), InvalidArgument);
}

TEST(FeatureMatrix, IsSymmetricFromUpperTriangle) {
  std::mt19937_64 rng(2);
  const T u = random_tensor(rng, 5, 5);
  const T w = feature_matrix(u);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_DOUBLE_EQ(w.at(i, j), w.at(j, i));
      const double ref = i == j ? 2 * u.at(i, i) : (i < j ? u.at(i, j) : u.at(j, i));
      EXPECT_DOUBLE_EQ(w.at(i, j), ref);
    }
  }
}

// Reference InfoNCE for one direction, written directly from the definition.
double infonce_reference(const T& fa, const T& fb, const PointCloud& ka, const PointCloud& kb, const RigidTransform& t,
                         const T& w, double rp, double rn) {
  double total = 0;
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < ka.size(); ++i) {
    const Vec3 q = t(ka[i]);
    std::size_t pos = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < kb.size(); ++j) {
      if ((kb[j] - q).norm() < best) {
        best = (kb[j] - q).norm();
        pos = j;
      }
    }
    if (best > rp) continue;
    auto score = [&](std::size_t j) {
      double s = 0;
      for (std::size_t a = 0; a < w.rows(); ++a) {
        for (std::size_t b = 0; b < w.cols(); ++b) s += fa.at(i, a) * w.at(a, b) * fb.at(j, b);
      }
      return s;
    };
    double denom = std::exp(score(pos));
    for (std::size_t j = 0; j < kb.size(); ++j) {
      if ((kb[j] - q).norm() > rn) denom += std::exp(score(j));
    }
    total += -std::log(std::exp(score(pos)) / denom);
    ++anchors;
  }
  return anchors ? total / static_cast<double>(anchors) : 0.0;
}

TEST(InfoNce, MatchesDefinition) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 3);
  std::vector<Vec3> kx(8);
  for (auto& p : kx) p = Vec3(u(rng), u(rng), u(rng));
  const RigidTransform gt = RigidTransform::from_axis_angle(Vec3::UnitZ(), 0.5, Vec3(1, 0, 0));
  std::vector<Vec3> ky;
  for (std::size_t i = 0; i < 6; ++i) ky.push_back(gt(kx[i]) + Vec3(0.05, 0, 0));
  ky.push_back(Vec3(10, 10, 10));
  const PointCloud px(kx), py(ky);
  const T fx = random_tensor(rng, 8, 4), fy = random_tensor(rng, 7, 4), uu = random_tensor(rng, 4, 4);
  const T w = feature_matrix(uu);
  const FeatureLossParams flp = FeatureLossParams::from_margin(0.3);
  EXPECT_DOUBLE_EQ(flp.r_n, 0.6);
  const double ref = infonce_reference(fx, fy, px, py, gt, w, 0.3, 0.6) +
                     infonce_reference(fy, fx, py, px, invert(gt), w, 0.3, 0.6);
  EXPECT_NEAR(infonce_loss(fx, fy, px, py, gt, w, flp).item(), ref, 1e-10);
}

TEST(InfoNce, PerfectlySeparatedFeaturesGiveSmallLoss) {
  const PointCloud k({Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 2, 0)});
  const T f = T::from(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const T w = T::from(3, 3, {20, 0, 0, 0, 20, 0, 0, 0, 20});
  const double loss = infonce_loss(f, f, k, k, RigidTransform::identity(), w, FeatureLossParams::from_margin(0.5)).item();
  EXPECT_LT(loss, 1e-6);
  EXPECT_GE(loss, 0.0);
}

TEST(CircleLoss, FiniteAndLowerForAlignedFeatures) {
  const PointCloud k({Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 2, 0), Vec3(2, 2, 0)});
  const T good = T::from(4, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  std::mt19937_64 rng(4);
  const T bad = random_tensor(rng, 4, 4);
  const FeatureLossParams flp = FeatureLossParams::from_margin(0.5);
  const double lg = circle_loss(good, good, k, k, RigidTransform::identity(), flp, {}).item();
  const double lb = circle_loss(good, bad, k, k, RigidTransform::identity(), flp, {}).item();
  EXPECT_TRUE(std::isfinite(lg));
  EXPECT_LT(lg, lb);
}

TEST(TotalLoss, WeightsComponentsAndRejectsNonFinite) {
  ModelConfig cfg;
  cfg.lambda_o = 2.0;
  cfg.lambda_f = 0.1;
  const T c = T::scalar(1.0), o = T::scalar(0.5), f = T::scalar(3.0);
  EXPECT_NEAR(total_loss<double>({c, o, f}, cfg).item(), 1.0 + 1.0 + 0.3, 1e-12);
  try {
    total_loss<double>({c, T::scalar(std::nan("")), f}, cfg);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("overlap"), std::string::npos);
  }
}

}  // namespace
}  // namespace regtr
