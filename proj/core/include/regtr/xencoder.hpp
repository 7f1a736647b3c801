#pragma once

#include "regtr/config.hpp"
#include "regtr/params.hpp"
#include "regtr/tensor.hpp"

#include <cstddef>
#include <utility>
#include <vector>

namespace regtr {

/// Multi-head scaled dot-product attention. Q is n x d, K and V are m x d.
/// When `weights` is non-null the per-head n x m attention matrices are
/// appended to it.
template <typename T>
ad::Tensor<T> mh_attention(const ad::Tensor<T>& q, const ad::Tensor<T>& k, const ad::Tensor<T>& v,
                           const AttentionParams<T>& params, std::size_t heads,
                           std::vector<ad::Tensor<T>>* weights = nullptr);

/// One pre-LN layer: self-attention, cross-attention, FFN, each as
/// x + SubLayer(LayerNorm(x)). Positional encodings are added to the
/// attention inputs (queries, keys and values). Both clouds use the same
/// weights and are updated simultaneously, so swapping the inputs swaps the
/// outputs.
template <typename T>
std::pair<ad::Tensor<T>, ad::Tensor<T>> cross_encoder_layer(const ad::Tensor<T>& fx, const ad::Tensor<T>& fy,
                                                             const ad::Tensor<T>& pos_x, const ad::Tensor<T>& pos_y,
                                                             const EncoderLayerParams<T>& params, std::size_t heads,
                                                             std::vector<ad::Tensor<T>>* weights = nullptr);

/// Conditioned features after every layer; entry 0 holds the inputs, the last
/// entry the final output. With zero layers the inputs are returned.
template <typename T>
struct EncoderOutput {
  std::vector<ad::Tensor<T>> x;
  std::vector<ad::Tensor<T>> y;
};

/// Runs the layer stack on already-projected features.
template <typename T>
EncoderOutput<T> encode(const ad::Tensor<T>& fx, const ad::Tensor<T>& fy, const ad::Tensor<T>& pos_x,
                        const ad::Tensor<T>& pos_y, const ModelConfig& cfg, const ModelParams<T>& params);

}  // namespace regtr
