#include "regtr/posenc.hpp"

#include <cmath>
#include <string>

namespace regtr {

PosEncLayout PosEncLayout::for_dim(std::size_t d) {
  if (d < 6) throw InvalidArgument("positional encoding needs d >= 6, got " + std::to_string(d));
  PosEncLayout l;
  l.d = d;
  l.block = 2 * (d / 6);
  l.padding = d - 3 * l.block;
  return l;
}

std::vector<double> positional_encoding(const Vec3& point, std::size_t d, double pre_scale) {
  const PosEncLayout l = PosEncLayout::for_dim(d);
  const double denom = static_cast<double>(d / 3);
  std::vector<double> out(d, 0.0);
  for (int axis = 0; axis < 3; ++axis) {
    const double c = point[axis] * pre_scale;
    double* block = out.data() + static_cast<std::size_t>(axis) * l.block;
    for (std::size_t i = 0; i < l.block / 2; ++i) {
      const double arg = c / std::pow(10000.0, static_cast<double>(2 * i) / denom);
      block[2 * i] = std::sin(arg);
      block[2 * i + 1] = std::cos(arg);
    }
  }
  return out;
}

template <typename T>
ad::Tensor<T> positional_encoding(const PointCloud& points, std::size_t d, double pre_scale) {
  std::vector<T> values;
  values.reserve(points.size() * d);
  for (const Vec3& p : points) {
    for (const double v : positional_encoding(p, d, pre_scale)) values.push_back(static_cast<T>(v));
  }
  return ad::Tensor<T>::from(points.size(), d, std::move(values));
}

template ad::Tensor<float> positional_encoding<float>(const PointCloud&, std::size_t, double);
template ad::Tensor<double> positional_encoding<double>(const PointCloud&, std::size_t, double);

}  // namespace regtr
