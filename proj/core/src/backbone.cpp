#include "regtr/backbone.hpp"

#include "regtr/error.hpp"
#include "regtr/grid_index.hpp"
#include "regtr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace regtr {

CloudGeometry prepare_geometry(const PointCloud& pc, const ModelConfig& cfg) {
  if (pc.empty()) throw InvalidArgument("empty point cloud");
  // levels[k] holds the clouds after k subsamplings; pooling is composed so it
  // always refers to dense indices.
  std::vector<PointCloud> levels{pc};
  std::vector<std::vector<std::size_t>> pooling(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) pooling[i] = {i};

  double voxel = cfg.voxel_size;
  for (std::size_t level = 0; level < cfg.levels; ++level) {
    synth::SubsampleResult sub = synth::voxel_subsample(levels.back(), voxel);
    std::vector<std::vector<std::size_t>> composed(sub.pooling_indices.size());
    for (std::size_t k = 0; k < sub.pooling_indices.size(); ++k) {
      for (const std::size_t j : sub.pooling_indices[k]) {
        composed[k].insert(composed[k].end(), pooling[j].begin(), pooling[j].end());
      }
      std::sort(composed[k].begin(), composed[k].end());
    }
    pooling = std::move(composed);
    levels.push_back(std::move(sub.keypoints));
    voxel *= cfg.level_factor;
  }

  CloudGeometry g;
  g.keypoints = levels.back();
  if (g.keypoints.size() < 4) {
    throw InvalidArgument("input too sparse: " + std::to_string(g.keypoints.size()) +
                          " keypoints at voxel size " + std::to_string(cfg.final_voxel_size()));
  }
  g.pooling_indices = std::move(pooling);

  const PointCloud& support = levels[levels.size() - 2];
  const double rho = cfg.neighbor_radius();
  const GridIndex index(support, rho / 2);
  g.neighbor_groups.resize(g.keypoints.size());
  for (std::size_t k = 0; k < g.keypoints.size(); ++k) {
    const Vec3& kp = g.keypoints[k];
    // The keypoint is the centroid of some support points, so at least one
    // lies within rho unless rho is smaller than the voxel diagonal.
    std::vector<std::size_t> nb = index.k_nearest_within(kp, rho, cfg.max_neighbors);
    if (nb.empty()) nb.push_back(index.nearest(kp).index);
    for (const std::size_t j : nb) {
      const Vec3 o = (support[j] - kp) / rho;
      g.neighbor_groups[k].push_back(g.neighbor_offsets.size() / 3);
      g.neighbor_offsets.insert(g.neighbor_offsets.end(), {o.x(), o.y(), o.z()});
    }
  }
  return g;
}

template <typename T>
KeypointSet<T> extract(const CloudGeometry& geometry, const BackboneParams<T>& p) {
  const std::size_t rows = geometry.neighbor_offsets.size() / 3;
  std::vector<T> offsets(geometry.neighbor_offsets.begin(), geometry.neighbor_offsets.end());
  const auto x = ad::Tensor<T>::from(rows, 3, std::move(offsets));
  const auto h1 = ad::relu(ad::add(ad::matmul(x, p.point1.w), p.point1.b));
  const auto h2 = ad::relu(ad::add(ad::matmul(h1, p.point2.w), p.point2.b));
  const auto pooled =
      ad::concat_cols<T>({ad::group_max(h2, geometry.neighbor_groups), ad::group_mean(h2, geometry.neighbor_groups)});
  const auto m1 = ad::relu(ad::add(ad::matmul(pooled, p.mix1.w), p.mix1.b));
  KeypointSet<T> out;
  out.geometry = &geometry;
  out.features = ad::add(ad::matmul(m1, p.mix2.w), p.mix2.b);
  return out;
}

template <typename T>
ad::Tensor<T> project_features(const ad::Tensor<T>& features, const Linear<T>& proj) {
  if (features.cols() != proj.w.rows()) {
    throw InvalidArgument("project_features: features " + features.shape_str() + " vs projection " + proj.w.shape_str());
  }
  return ad::add(ad::matmul(features, proj.w), proj.b);
}

double voxel_size_for_keypoints(const PointCloud& pc, const ModelConfig& cfg, std::size_t target) {
  if (pc.empty()) throw InvalidArgument("empty point cloud");
  const double ratio = cfg.final_voxel_size() / cfg.voxel_size;
  auto count_at = [&](double fine) {
    double v = fine;
    PointCloud cur = pc;
    for (std::size_t l = 0; l < cfg.levels; ++l, v *= cfg.level_factor) cur = synth::voxel_subsample(cur, v).keypoints;
    return cur.size();
  };
  Vec3 lo = pc[0], hi = pc[0];
  for (const auto& p : pc) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  // Keypoint count falls as the voxel grows; bisect in log space.
  double a = 1e-6 * std::max((hi - lo).maxCoeff(), 1e-9) / ratio;
  double b = 2.0 * std::max((hi - lo).maxCoeff(), 1e-9) / ratio;
  for (int it = 0; it < 60; ++it) {
    const double mid = std::sqrt(a * b);
    if (count_at(mid) > target) a = mid;
    else b = mid;
  }
  return b;
}

template KeypointSet<float> extract(const CloudGeometry&, const BackboneParams<float>&);
template KeypointSet<double> extract(const CloudGeometry&, const BackboneParams<double>&);
template ad::Tensor<float> project_features(const ad::Tensor<float>&, const Linear<float>&);
template ad::Tensor<double> project_features(const ad::Tensor<double>&, const Linear<double>&);

}  // namespace regtr
