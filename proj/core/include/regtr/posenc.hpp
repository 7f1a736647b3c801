#pragma once

#include "regtr/geom.hpp"
#include "regtr/tensor.hpp"

#include <cstddef>
#include <vector>

namespace regtr {

/// Layout of the 3D sinusoidal encoding: three coordinate blocks of
/// 2 * floor(d / 6) entries each (x, then y, then z), then zero padding.
struct PosEncLayout {
  std::size_t d = 0;
  std::size_t block = 0;
  std::size_t padding = 0;

  static PosEncLayout for_dim(std::size_t d);
};

/// For each coordinate c, entry 2i is sin(c / 10000^(2i / floor(d/3))) and
/// entry 2i+1 the matching cosine. Coordinates are multiplied by `pre_scale`
/// first. Throws InvalidArgument for d < 6.
std::vector<double> positional_encoding(const Vec3& point, std::size_t d, double pre_scale = 1.0);

/// One encoding row per point; a constant (no-grad) n x d tensor.
template <typename T>
ad::Tensor<T> positional_encoding(const PointCloud& points, std::size_t d, double pre_scale = 1.0);

}  // namespace regtr
