#pragma once

#include "regtr/config.hpp"
#include "regtr/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace regtr {

template <typename T>
struct Linear {
  ad::Tensor<T> w;  // in x out
  ad::Tensor<T> b;  // 1 x out
};

template <typename T>
struct LayerNormParams {
  ad::Tensor<T> gamma;  // 1 x d
  ad::Tensor<T> beta;   // 1 x d
};

/// Per-head projections are stacked column-wise: head h owns columns
/// [h * d_head, (h + 1) * d_head) of wq, wk, wv and rows of the same range of
/// wo. No biases.
template <typename T>
struct AttentionParams {
  ad::Tensor<T> wq, wk, wv;  // d x d
  ad::Tensor<T> wo;          // d x d
};

template <typename T>
struct EncoderLayerParams {
  LayerNormParams<T> ln_self, ln_cross, ln_ffn;
  AttentionParams<T> self_attn, cross_attn;
  Linear<T> ffn1, ffn2;
};

template <typename T>
struct BackboneParams {
  Linear<T> point1, point2;  // per-neighbour offset MLP
  Linear<T> mix1, mix2;      // pointwise MLP over pooled statistics
};

template <typename T>
struct HeadParams {
  Linear<T> reg1, reg2;          // regression decoder
  ad::Tensor<T> wq_out, wk_out;  // weighted decoder, d x d
  Linear<T> overlap;             // d -> 1
};

template <typename T>
struct ModelParams {
  BackboneParams<T> backbone;
  Linear<T> proj;                 // D -> d
  Linear<T> pos1, pos2;           // learned positional encoding ablation
  std::vector<EncoderLayerParams<T>> layers;
  HeadParams<T> heads;
  ad::Tensor<T> feat_u;           // U_f; only the upper triangle is used

  /// Visits every tensor as (name, tensor&) in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    auto lin = [&](const std::string& n, Linear<T>& l) {
      f(n + ".w", l.w);
      f(n + ".b", l.b);
    };
    lin("backbone.point1", backbone.point1);
    lin("backbone.point2", backbone.point2);
    lin("backbone.mix1", backbone.mix1);
    lin("backbone.mix2", backbone.mix2);
    lin("proj", proj);
    lin("pos1", pos1);
    lin("pos2", pos2);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      auto& l = layers[i];
      f(p + "ln_self.gamma", l.ln_self.gamma);
      f(p + "ln_self.beta", l.ln_self.beta);
      f(p + "ln_cross.gamma", l.ln_cross.gamma);
      f(p + "ln_cross.beta", l.ln_cross.beta);
      f(p + "ln_ffn.gamma", l.ln_ffn.gamma);
      f(p + "ln_ffn.beta", l.ln_ffn.beta);
      for (auto* a : {&l.self_attn, &l.cross_attn}) {
        const std::string q = p + (a == &l.self_attn ? "self_attn." : "cross_attn.");
        f(q + "wq", a->wq);
        f(q + "wk", a->wk);
        f(q + "wv", a->wv);
        f(q + "wo", a->wo);
      }
      lin(p + "ffn1", l.ffn1);
      lin(p + "ffn2", l.ffn2);
    }
    lin("heads.reg1", heads.reg1);
    lin("heads.reg2", heads.reg2);
    f("heads.wq_out", heads.wq_out);
    f("heads.wk_out", heads.wk_out);
    lin("heads.overlap", heads.overlap);
    f("feat_u", feat_u);
  }

  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each([&](const std::string& n, ad::Tensor<T>& t) { f(n, t); });
  }

  std::size_t parameter_count() const;
};

/// Builds a parameter set for `cfg`. Weights are drawn uniformly from
/// +-1/sqrt(fan_in); the attention and FFN output projections are further
/// scaled by 0.1; biases start at zero and layer-norm gains at one.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Deep copy with every tensor a fresh leaf (requires_grad preserved).
template <typename T>
ModelParams<T> clone_params(const ModelParams<T>& p);

/// Value-preserving conversion between precisions.
template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p);

}  // namespace regtr
