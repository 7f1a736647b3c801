#include "regtr/xencoder.hpp"

#include "regtr/error.hpp"

#include <cmath>
#include <string>

namespace regtr {

template <typename T>
ad::Tensor<T> mh_attention(const ad::Tensor<T>& q, const ad::Tensor<T>& k, const ad::Tensor<T>& v,
                           const AttentionParams<T>& p, std::size_t heads, std::vector<ad::Tensor<T>>* weights) {
  const std::size_t d = p.wq.rows();
  if (heads == 0 || d % heads != 0) throw InvalidArgument("mh_attention: d not divisible by heads");
  if (q.cols() != d || k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
    throw InvalidArgument("mh_attention: Q " + q.shape_str() + ", K " + k.shape_str() + ", V " + v.shape_str() +
                          " for d = " + std::to_string(d));
  }
  const std::size_t dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const auto qp = ad::matmul(q, p.wq);
  const auto kp = ad::matmul(k, p.wk);
  const auto vp = ad::matmul(v, p.wv);
  std::vector<ad::Tensor<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * dh, e = b + dh;
    const auto qh = heads == 1 ? qp : ad::slice_cols(qp, b, e);
    const auto kh = heads == 1 ? kp : ad::slice_cols(kp, b, e);
    const auto vh = heads == 1 ? vp : ad::slice_cols(vp, b, e);
    const auto a = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
    if (weights) weights->push_back(a);
    outs.push_back(ad::matmul(a, vh));
  }
  const auto cat = heads == 1 ? outs[0] : ad::concat_cols(outs);
  return ad::matmul(cat, p.wo);
}

template <typename T>
std::pair<ad::Tensor<T>, ad::Tensor<T>> cross_encoder_layer(const ad::Tensor<T>& fx, const ad::Tensor<T>& fy,
                                                             const ad::Tensor<T>& pos_x, const ad::Tensor<T>& pos_y,
                                                             const EncoderLayerParams<T>& p, std::size_t heads,
                                                             std::vector<ad::Tensor<T>>* weights) {
  if (pos_x.rows() != fx.rows() || pos_x.cols() != fx.cols() || pos_y.rows() != fy.rows() ||
      pos_y.cols() != fy.cols()) {
    throw InvalidArgument("cross_encoder_layer: features " + fx.shape_str() + "/" + fy.shape_str() + " vs encodings " +
                          pos_x.shape_str() + "/" + pos_y.shape_str());
  }
  auto ln = [](const ad::Tensor<T>& x, const LayerNormParams<T>& l) { return ad::layer_norm(x, l.gamma, l.beta); };

  auto sx = ad::add(ln(fx, p.ln_self), pos_x);
  auto sy = ad::add(ln(fy, p.ln_self), pos_y);
  const auto x1 = ad::add(fx, mh_attention(sx, sx, sx, p.self_attn, heads, weights));
  const auto y1 = ad::add(fy, mh_attention(sy, sy, sy, p.self_attn, heads, weights));

  const auto cx = ad::add(ln(x1, p.ln_cross), pos_x);
  const auto cy = ad::add(ln(y1, p.ln_cross), pos_y);
  const auto x2 = ad::add(x1, mh_attention(cx, cy, cy, p.cross_attn, heads, weights));
  const auto y2 = ad::add(y1, mh_attention(cy, cx, cx, p.cross_attn, heads, weights));

  auto ffn = [&](const ad::Tensor<T>& x) {
    const auto h = ad::relu(ad::add(ad::matmul(ln(x, p.ln_ffn), p.ffn1.w), p.ffn1.b));
    return ad::add(x, ad::add(ad::matmul(h, p.ffn2.w), p.ffn2.b));
  };
  return {ffn(x2), ffn(y2)};
}

template <typename T>
EncoderOutput<T> encode(const ad::Tensor<T>& fx, const ad::Tensor<T>& fy, const ad::Tensor<T>& pos_x,
                        const ad::Tensor<T>& pos_y, const ModelConfig& cfg, const ModelParams<T>& params) {
  if (params.layers.size() < cfg.layers) throw InvalidArgument("encode: parameter set has too few layers");
  EncoderOutput<T> out;
  out.x.push_back(fx);
  out.y.push_back(fy);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    auto [x, y] = cross_encoder_layer(out.x.back(), out.y.back(), pos_x, pos_y, params.layers[l], cfg.heads);
    out.x.push_back(std::move(x));
    out.y.push_back(std::move(y));
  }
  return out;
}

#define REGTR_INSTANTIATE(T)                                                                                    \
  template ad::Tensor<T> mh_attention(const ad::Tensor<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&,       \
                                      const AttentionParams<T>&, std::size_t, std::vector<ad::Tensor<T>>*);   \
  template std::pair<ad::Tensor<T>, ad::Tensor<T>> cross_encoder_layer(                                       \
      const ad::Tensor<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&,                 \
      const EncoderLayerParams<T>&, std::size_t, std::vector<ad::Tensor<T>>*);                                \
  template EncoderOutput<T> encode(const ad::Tensor<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&,          \
                                   const ad::Tensor<T>&, const ModelConfig&, const ModelParams<T>&);

REGTR_INSTANTIATE(float)
REGTR_INSTANTIATE(double)
#undef REGTR_INSTANTIATE

}  // namespace regtr
