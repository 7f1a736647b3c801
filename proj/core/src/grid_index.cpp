#include "regtr/grid_index.hpp"

#include "regtr/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace regtr {

GridIndex::GridIndex(const PointCloud& pc, double cell_size) : points_(pc.points()) {
  if (points_.empty()) throw InvalidArgument("empty point cloud");
  Vec3 lo = points_.front();
  Vec3 hi = points_.front();
  for (const auto& p : points_) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  origin_ = lo;
  const Vec3 extent = hi - lo;
  const double n = static_cast<double>(points_.size());
  if (cell_size > 0.0) {
    cell_ = cell_size;
  } else {
    const double longest = extent.maxCoeff();
    cell_ = longest > 0.0 ? longest / std::max(1.0, std::cbrt(n / 2.0)) : 1.0;
  }
  // Keep the dense grid at most ~8 cells per point.
  const double max_cells = std::max(64.0, 8.0 * n);
  for (;;) {
    double cells = 1.0;
    for (int a = 0; a < 3; ++a) {
      dims_[a] = static_cast<std::int64_t>(std::floor(extent[a] / cell_)) + 1;
      cells *= static_cast<double>(dims_[a]);
    }
    if (cells <= max_cells) break;
    cell_ *= 1.5;
  }

  const std::size_t ncells = static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]);
  std::vector<std::uint32_t> cell_of_point(points_.size());
  cell_start_.assign(ncells + 1, 0);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto c = cell_of(points_[i]);
    const std::size_t f = flat(std::clamp<std::int64_t>(c[0], 0, dims_[0] - 1),
                               std::clamp<std::int64_t>(c[1], 0, dims_[1] - 1),
                               std::clamp<std::int64_t>(c[2], 0, dims_[2] - 1));
    cell_of_point[i] = static_cast<std::uint32_t>(f);
    ++cell_start_[f + 1];
  }
  for (std::size_t c = 0; c < ncells; ++c) cell_start_[c + 1] += cell_start_[c];
  cell_items_.resize(points_.size());
  std::vector<std::uint32_t> fill(cell_start_.begin(), cell_start_.end() - 1);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    cell_items_[fill[cell_of_point[i]]++] = static_cast<std::uint32_t>(i);
  }
}

std::array<std::int64_t, 3> GridIndex::cell_of(const Vec3& p) const {
  std::array<std::int64_t, 3> c{};
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor((p[a] - origin_[a]) / cell_);
    // Clamp far-away queries so the integer conversion stays defined.
    c[a] = static_cast<std::int64_t>(std::clamp(f, -1e15, 1e15));
  }
  return c;
}

std::size_t GridIndex::flat(std::int64_t x, std::int64_t y, std::int64_t z) const {
  return static_cast<std::size_t>((x * dims_[1] + y) * dims_[2] + z);
}

NearestNeighbor GridIndex::nearest(const Vec3& query) const {
  const auto c = cell_of(query);
  double best_d2 = std::numeric_limits<double>::infinity();
  std::size_t best = 0;

  auto visit_cell = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    const std::size_t f = flat(x, y, z);
    for (std::uint32_t k = cell_start_[f]; k < cell_start_[f + 1]; ++k) {
      const std::uint32_t i = cell_items_[k];
      const double d2 = (points_[i] - query).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
        best_d2 = d2;
        best = i;
      }
    }
  };

  // Chebyshev distance (in cells) from the query cell to the grid box.
  std::int64_t ring_start = 0;
  std::int64_t ring_end = 0;
  for (int a = 0; a < 3; ++a) {
    const std::int64_t below = -c[a];
    const std::int64_t above = c[a] - (dims_[a] - 1);
    ring_start = std::max({ring_start, below, above});
    ring_end = std::max({ring_end, std::abs(c[a]), std::abs(c[a] - (dims_[a] - 1))});
  }

  for (std::int64_t k = ring_start; k <= ring_end; ++k) {
    const std::int64_t x0 = std::max<std::int64_t>(c[0] - k, 0);
    const std::int64_t x1 = std::min<std::int64_t>(c[0] + k, dims_[0] - 1);
    const std::int64_t y0 = std::max<std::int64_t>(c[1] - k, 0);
    const std::int64_t y1 = std::min<std::int64_t>(c[1] + k, dims_[1] - 1);
    const std::int64_t z0 = std::max<std::int64_t>(c[2] - k, 0);
    const std::int64_t z1 = std::min<std::int64_t>(c[2] + k, dims_[2] - 1);
    for (std::int64_t x = x0; x <= x1; ++x) {
      for (std::int64_t y = y0; y <= y1; ++y) {
        const bool shell_xy = std::abs(x - c[0]) == k || std::abs(y - c[1]) == k;
        if (shell_xy) {
          for (std::int64_t z = z0; z <= z1; ++z) visit_cell(x, y, z);
        } else {
          if (c[2] - k >= 0 && c[2] - k < dims_[2]) visit_cell(x, y, c[2] - k);
          if (k > 0 && c[2] + k >= 0 && c[2] + k < dims_[2]) visit_cell(x, y, c[2] + k);
        }
      }
    }
    // Anything not yet visited is at least k cells away.
    const double bound = static_cast<double>(k) * cell_;
    if (best_d2 < bound * bound) break;
  }
  return {best, std::sqrt(best_d2)};
}

std::vector<std::size_t> GridIndex::within(const Vec3& query, double radius) const {
  std::vector<std::size_t> out;
  if (radius < 0.0) return out;
  const auto lo = cell_of(query - Vec3::Constant(radius));
  const auto hi = cell_of(query + Vec3::Constant(radius));
  const double r2 = radius * radius;
  for (std::int64_t x = std::max<std::int64_t>(lo[0], 0); x <= std::min<std::int64_t>(hi[0], dims_[0] - 1); ++x) {
    for (std::int64_t y = std::max<std::int64_t>(lo[1], 0); y <= std::min<std::int64_t>(hi[1], dims_[1] - 1); ++y) {
      for (std::int64_t z = std::max<std::int64_t>(lo[2], 0); z <= std::min<std::int64_t>(hi[2], dims_[2] - 1); ++z) {
        const std::size_t f = flat(x, y, z);
        for (std::uint32_t k = cell_start_[f]; k < cell_start_[f + 1]; ++k) {
          const std::uint32_t i = cell_items_[k];
          if ((points_[i] - query).squaredNorm() <= r2) out.push_back(i);
        }
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> GridIndex::k_nearest_within(const Vec3& query, double radius, std::size_t k) const {
  std::vector<std::size_t> cand = within(query, radius);
  std::vector<std::pair<double, std::size_t>> keyed;
  keyed.reserve(cand.size());
  for (std::size_t i : cand) keyed.emplace_back((points_[i] - query).squaredNorm(), i);
  const std::size_t take = std::min(k, keyed.size());
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(take), keyed.end());
  std::vector<std::size_t> out(take);
  for (std::size_t j = 0; j < take; ++j) out[j] = keyed[j].second;
  return out;
}

}  // namespace regtr
