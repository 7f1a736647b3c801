#pragma once

#include "regtr/geom.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace regtr {

/// Uniform-grid spatial hash over a point cloud for exact nearest-neighbour and
/// radius queries. The cloud is copied in, so the index owns its data.
class GridIndex {
 public:
  /// `cell_size <= 0` picks a size from the bounding box so cells hold about
  /// two points on average.
  explicit GridIndex(const PointCloud& pc, double cell_size = 0.0);

  std::size_t size() const { return points_.size(); }
  double cell_size() const { return cell_; }

  /// Exact nearest neighbour; ties go to the lowest index.
  NearestNeighbor nearest(const Vec3& query) const;

  /// Indices of all points with distance <= radius, ascending index order.
  std::vector<std::size_t> within(const Vec3& query, double radius) const;

  /// Up to `k` nearest points within `radius`, ordered by (distance, index).
  std::vector<std::size_t> k_nearest_within(const Vec3& query, double radius, std::size_t k) const;

 private:
  std::array<std::int64_t, 3> cell_of(const Vec3& p) const;
  std::size_t flat(std::int64_t x, std::int64_t y, std::int64_t z) const;

  std::vector<Vec3> points_;
  Vec3 origin_ = Vec3::Zero();
  double cell_ = 1.0;
  std::array<std::int64_t, 3> dims_{1, 1, 1};
  std::vector<std::uint32_t> cell_start_;  // CSR offsets, size = #cells + 1
  std::vector<std::uint32_t> cell_items_;  // point indices sorted by (cell, index)
};

}  // namespace regtr
