#include "regtr/heads.hpp"

#include "regtr/error.hpp"

#include <cmath>

namespace regtr {

template <typename T>
ad::Tensor<T> decode_regress(const ad::Tensor<T>& f, const HeadParams<T>& p) {
  const auto h = ad::relu(ad::add(ad::matmul(f, p.reg1.w), p.reg1.b));
  return ad::add(ad::matmul(h, p.reg2.w), p.reg2.b);
}

template <typename T>
ad::Tensor<T> decode_weighted(const ad::Tensor<T>& fx, const ad::Tensor<T>& fy, const ad::Tensor<T>& target_coords,
                              const HeadParams<T>& p) {
  if (target_coords.rows() != fy.rows() || target_coords.cols() != 3) {
    throw InvalidArgument("decode_weighted: target features " + fy.shape_str() + " vs coordinates " +
                          target_coords.shape_str());
  }
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(p.wq_out.cols()));
  const auto q = ad::matmul(fx, p.wq_out);
  const auto k = ad::matmul(fy, p.wk_out);
  const auto a = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt));
  return ad::matmul(a, target_coords);
}

template <typename T>
ad::Tensor<T> decode_overlap(const ad::Tensor<T>& f, const HeadParams<T>& p) {
  return ad::sigmoid(ad::add(ad::matmul(f, p.overlap.w), p.overlap.b));
}

template <typename T>
ad::Tensor<T> coords_tensor(const PointCloud& pc) {
  std::vector<T> v;
  v.reserve(pc.size() * 3);
  for (const Vec3& p : pc) {
    v.push_back(static_cast<T>(p.x()));
    v.push_back(static_cast<T>(p.y()));
    v.push_back(static_cast<T>(p.z()));
  }
  return ad::Tensor<T>::from(pc.size(), 3, std::move(v));
}

#define REGTR_INSTANTIATE(T)                                                                                     \
  template ad::Tensor<T> decode_regress(const ad::Tensor<T>&, const HeadParams<T>&);                           \
  template ad::Tensor<T> decode_weighted(const ad::Tensor<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&,     \
                                         const HeadParams<T>&);                                                \
  template ad::Tensor<T> decode_overlap(const ad::Tensor<T>&, const HeadParams<T>&);                           \
  template ad::Tensor<T> coords_tensor(const PointCloud&);

REGTR_INSTANTIATE(float)
REGTR_INSTANTIATE(double)
#undef REGTR_INSTANTIATE

}  // namespace regtr
