#include "regtr/solver.hpp"

#include "regtr/error.hpp"
#include "regtr/svd3.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

namespace regtr {

CorrespondenceBundle assemble(const PointCloud& source_keypoints, const PointCloud& target_keypoints,
                              const PredictionSet& source_to_target, const PredictionSet& target_to_source) {
  const std::size_t m = source_keypoints.size();
  const std::size_t n = target_keypoints.size();
  if (source_to_target.predicted_coords.size() != m || source_to_target.overlap_scores.size() != m ||
      target_to_source.predicted_coords.size() != n || target_to_source.overlap_scores.size() != n) {
    throw InvalidArgument("assemble: prediction sizes do not match keypoint counts");
  }
  CorrespondenceBundle b;
  b.source.reserve(m + n);
  b.target.reserve(m + n);
  b.weights.reserve(m + n);
  for (std::size_t i = 0; i < m; ++i) {
    b.source.push_back(source_keypoints[i]);
    b.target.push_back(source_to_target.predicted_coords[i]);
    b.weights.push_back(source_to_target.overlap_scores[i]);
  }
  for (std::size_t j = 0; j < n; ++j) {
    b.source.push_back(target_to_source.predicted_coords[j]);
    b.target.push_back(target_keypoints[j]);
    b.weights.push_back(target_to_source.overlap_scores[j]);
  }
  return b;
}

CorrespondenceBundle bundle_from(std::span<const Correspondence> correspondences) {
  CorrespondenceBundle b;
  for (const auto& c : correspondences) {
    b.source.push_back(c.source_point);
    b.target.push_back(c.target_point);
    b.weights.push_back(c.weight);
  }
  return b;
}

RigidTransform weighted_kabsch(const CorrespondenceBundle& bundle) {
  const std::size_t n = bundle.size();
  if (bundle.source.size() != n || bundle.target.size() != n) {
    throw InvalidArgument("weighted_kabsch: bundle rows disagree");
  }
  double wsum = 0.0;
  double wmax = 0.0;
  for (double w : bundle.weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("weighted_kabsch: weights must be finite and >= 0");
    wsum += w;
    wmax = std::max(wmax, w);
  }
  if (n == 0 || wsum <= 1e-12) throw NumericalError("no confident correspondences");

  // Step 1: weighted centroids.
  Vec3 xbar = Vec3::Zero();
  Vec3 ybar = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    xbar += bundle.weights[i] * bundle.source[i];
    ybar += bundle.weights[i] * bundle.target[i];
  }
  xbar /= wsum;
  ybar /= wsum;

  // Steps 2-3: weighted covariance of the centred sets. Weights are divided by
  // their max so the rank test below is independent of the weight scale.
  Mat3 h = Mat3::Zero();
  double spread = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = bundle.weights[i] / wmax;
    const Vec3 xc = bundle.source[i] - xbar;
    const Vec3 yc = bundle.target[i] - ybar;
    h += w * xc * yc.transpose();
    spread += w * xc.norm() * yc.norm();
  }
  const Svd3 s = svd3(h);
  if (spread == 0.0 || s.singular_values[1] <= 1e-10 * std::max(s.singular_values[0], spread)) {
    throw NumericalError("degenerate configuration");
  }

  Mat3 d = Mat3::Identity();
  d(2, 2) = (s.v * s.u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 r = s.v * d * s.u.transpose();
  // Step 4.
  return RigidTransform(r, ybar - r * xbar);
}

RigidTransform weighted_kabsch(std::span<const Correspondence> correspondences) {
  return weighted_kabsch(bundle_from(correspondences));
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct Hypothesis {
  std::size_t inliers = 0;
  std::size_t index = 0;
  RigidTransform transform;
  bool valid = false;
};

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (!a.valid) return false;
  if (!b.valid) return true;
  if (a.inliers != b.inliers) return a.inliers > b.inliers;
  return a.index < b.index;
}

std::size_t count_inliers(std::span<const Correspondence> c, const RigidTransform& t, double thr) {
  const double thr2 = thr * thr;
  std::size_t k = 0;
  for (const auto& x : c) {
    if ((t(x.source_point) - x.target_point).squaredNorm() < thr2) ++k;
  }
  return k;
}

Hypothesis evaluate_hypothesis(std::span<const Correspondence> c, const RansacOptions& opt, std::size_t index) {
  std::mt19937_64 rng(splitmix64(opt.seed ^ splitmix64(index + 1)));
  std::uniform_int_distribution<std::size_t> pick(0, c.size() - 1);
  std::array<std::size_t, 3> idx{};
  idx[0] = pick(rng);
  do { idx[1] = pick(rng); } while (idx[1] == idx[0]);
  do { idx[2] = pick(rng); } while (idx[2] == idx[0] || idx[2] == idx[1]);

  const std::array<Correspondence, 3> sample{
      Correspondence{c[idx[0]].source_point, c[idx[0]].target_point, 1.0},
      Correspondence{c[idx[1]].source_point, c[idx[1]].target_point, 1.0},
      Correspondence{c[idx[2]].source_point, c[idx[2]].target_point, 1.0}};
  Hypothesis h;
  h.index = index;
  try {
    h.transform = weighted_kabsch(std::span<const Correspondence>(sample));
  } catch (const NumericalError&) {
    return h;
  }
  h.inliers = count_inliers(c, h.transform, opt.inlier_threshold);
  h.valid = true;
  return h;
}

}  // namespace

RansacResult ransac_estimate(std::span<const Correspondence> correspondences, const RansacOptions& options) {
  if (correspondences.size() < 3) throw InvalidArgument("ransac_estimate: need at least 3 correspondences");
  if (!(options.inlier_threshold > 0.0)) throw InvalidArgument("ransac_estimate: inlier_threshold must be > 0");

  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(options.iterations)));
  std::vector<Hypothesis> best_per_thread(threads);
  auto worker = [&](unsigned t) {
    for (std::size_t i = t; i < options.iterations; i += threads) {
      Hypothesis h = evaluate_hypothesis(correspondences, options, i);
      if (better(h, best_per_thread[t])) best_per_thread[t] = std::move(h);
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  Hypothesis best;
  for (const auto& h : best_per_thread) {
    if (better(h, best)) best = h;
  }
  if (!best.valid || best.inliers < 3) throw NumericalError("ransac_estimate: no hypothesis with >= 3 inliers");

  const double thr2 = options.inlier_threshold * options.inlier_threshold;
  std::vector<Correspondence> inliers;
  for (const auto& c : correspondences) {
    if ((best.transform(c.source_point) - c.target_point).squaredNorm() < thr2) {
      inliers.push_back({c.source_point, c.target_point, 1.0});
    }
  }
  RansacResult out;
  out.best_hypothesis = best.index;
  out.transform = best.transform;
  try {
    out.transform = weighted_kabsch(std::span<const Correspondence>(inliers));
  } catch (const NumericalError&) {
    // Keep the minimal-sample estimate when the inlier set is degenerate.
  }
  out.inliers.resize(correspondences.size());
  for (std::size_t i = 0; i < correspondences.size(); ++i) {
    out.inliers[i] =
        (out.transform(correspondences[i].source_point) - correspondences[i].target_point).squaredNorm() < thr2;
  }
  out.inlier_count = static_cast<std::size_t>(std::count(out.inliers.begin(), out.inliers.end(), true));
  return out;
}

}  // namespace regtr
