#pragma once

#include "regtr/geom.hpp"
#include "regtr/params.hpp"
#include "regtr/tensor.hpp"

namespace regtr {

/// relu(F W1 + b1) W2 + b2: n x 3 predicted coordinates in the other cloud's
/// frame.
template <typename T>
ad::Tensor<T> decode_regress(const ad::Tensor<T>& features, const HeadParams<T>& params);

/// Single-head attention whose values are the raw target keypoint
/// coordinates: softmax(Fx Wq (Fy Wk)^T / sqrt(d)) * Y.
template <typename T>
ad::Tensor<T> decode_weighted(const ad::Tensor<T>& fx, const ad::Tensor<T>& fy, const ad::Tensor<T>& target_coords,
                              const HeadParams<T>& params);

/// sigmoid(F w + b): n x 1 overlap scores in (0, 1).
template <typename T>
ad::Tensor<T> decode_overlap(const ad::Tensor<T>& features, const HeadParams<T>& params);

/// n x 3 constant tensor of point coordinates.
template <typename T>
ad::Tensor<T> coords_tensor(const PointCloud& pc);

}  // namespace regtr
