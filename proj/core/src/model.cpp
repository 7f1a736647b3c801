#include "regtr/model.hpp"

#include "regtr/error.hpp"
#include "regtr/heads.hpp"
#include "regtr/posenc.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <random>
#include <string>

namespace regtr {
namespace {

template <typename T>
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  ad::Tensor<T> uniform(std::size_t rows, std::size_t cols, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<T> v(rows * cols);
    for (auto& x : v) x = static_cast<T>(u(rng_));
    return ad::Tensor<T>::from(rows, cols, std::move(v), true);
  }
  ad::Tensor<T> fan_in(std::size_t in, std::size_t out, double gain = 1.0) {
    return uniform(in, out, gain / std::sqrt(static_cast<double>(in)));
  }
  Linear<T> linear(std::size_t in, std::size_t out, double gain = 1.0) {
    return {fan_in(in, out, gain), ad::Tensor<T>::zeros(1, out, true)};
  }
  LayerNormParams<T> layer_norm(std::size_t d) {
    return {ad::Tensor<T>::full(1, d, T(1), true), ad::Tensor<T>::zeros(1, d, true)};
  }
  AttentionParams<T> attention(std::size_t d) {
    AttentionParams<T> a;
    a.wq = fan_in(d, d);
    a.wk = fan_in(d, d);
    a.wv = fan_in(d, d);
    a.wo = fan_in(d, d, 0.1);
    return a;
  }

 private:
  std::mt19937_64 rng_;
};

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const ad::Tensor<T>& t) { n += t.size(); });
  return n;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Initializer<T> init(seed);
  ModelParams<T> p;
  const std::size_t h = cfg.backbone_hidden, dd = cfg.feature_dim, d = cfg.d;
  p.backbone.point1 = init.linear(3, h);
  p.backbone.point2 = init.linear(h, h);
  p.backbone.mix1 = init.linear(2 * h, dd);
  p.backbone.mix2 = init.linear(dd, dd);
  p.proj = init.linear(dd, d);
  p.pos1 = init.linear(3, d);
  p.pos2 = init.linear(d, d);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    EncoderLayerParams<T> layer;
    layer.ln_self = init.layer_norm(d);
    layer.ln_cross = init.layer_norm(d);
    layer.ln_ffn = init.layer_norm(d);
    layer.self_attn = init.attention(d);
    layer.cross_attn = init.attention(d);
    layer.ffn1 = init.linear(d, cfg.ffn_hidden);
    layer.ffn2 = init.linear(cfg.ffn_hidden, d, 0.1);
    p.layers.push_back(std::move(layer));
  }
  p.heads.reg1 = init.linear(d, cfg.effective_head_hidden());
  p.heads.reg2 = init.linear(cfg.effective_head_hidden(), 3);
  p.heads.wq_out = init.fan_in(d, d);
  p.heads.wk_out = init.fan_in(d, d);
  p.heads.overlap = init.linear(d, 1);
  p.feat_u = init.fan_in(d, d, 0.1);
  auto u = p.feat_u.mutable_values();
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) u[i * d + j] = T(0);
  }
  return p;
}

template <typename T>
ModelParams<T> clone_params(const ModelParams<T>& p) {
  ModelParams<T> out = p;
  out.for_each([](const std::string&, ad::Tensor<T>& t) { t = t.clone_leaf(t.requires_grad()); });
  return out;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  std::vector<ad::Tensor<To>> converted;
  p.for_each([&](const std::string&, const ad::Tensor<From>& t) {
    std::vector<To> v(t.values().begin(), t.values().end());
    converted.push_back(ad::Tensor<To>::from(t.rows(), t.cols(), std::move(v), t.requires_grad()));
  });
  ModelParams<To> out;
  out.layers.resize(p.layers.size());
  std::size_t i = 0;
  out.for_each([&](const std::string&, ad::Tensor<To>& t) { t = converted[i++]; });
  return out;
}

template <typename T>
ad::Tensor<T> keypoint_encoding(const PointCloud& keypoints, const ModelConfig& cfg, const ModelParams<T>& params) {
  if (cfg.posenc == PosEncKind::kSine) return positional_encoding<T>(keypoints, cfg.d, cfg.pos_scale);
  const auto c = ad::scale(coords_tensor<T>(keypoints), static_cast<T>(cfg.pos_scale));
  const auto h = ad::relu(ad::add(ad::matmul(c, params.pos1.w), params.pos1.b));
  return ad::add(ad::matmul(h, params.pos2.w), params.pos2.b);
}

template <typename T>
ForwardOutput<T> forward(const CloudGeometry& gx, const CloudGeometry& gy, const ModelConfig& cfg,
                         const ModelParams<T>& params, bool all_layers) {
  const KeypointSet<T> kx = extract(gx, params.backbone);
  const KeypointSet<T> ky = extract(gy, params.backbone);
  const auto fx = project_features(kx.features, params.proj);
  const auto fy = project_features(ky.features, params.proj);
  const auto px = keypoint_encoding(gx.keypoints, cfg, params);
  const auto py = keypoint_encoding(gy.keypoints, cfg, params);

  ForwardOutput<T> out;
  out.encoded = encode(fx, fy, px, py, cfg, params);
  const std::size_t last = out.encoded.x.size() - 1;
  if (all_layers && last > 0) {
    for (std::size_t l = 1; l <= last; ++l) out.decoded_layers.push_back(l);
  } else {
    out.decoded_layers.push_back(last);
  }
  std::optional<ad::Tensor<T>> cx, cy;
  if (cfg.decoder == DecoderKind::kWeighted) {
    cx = coords_tensor<T>(gx.keypoints);
    cy = coords_tensor<T>(gy.keypoints);
  }
  for (const std::size_t l : out.decoded_layers) {
    const auto& ex = out.encoded.x[l];
    const auto& ey = out.encoded.y[l];
    if (cfg.decoder == DecoderKind::kRegress) {
      out.pred_xy.push_back(decode_regress(ex, params.heads));
      out.pred_yx.push_back(decode_regress(ey, params.heads));
    } else {
      out.pred_xy.push_back(decode_weighted(ex, ey, *cy, params.heads));
      out.pred_yx.push_back(decode_weighted(ey, ex, *cx, params.heads));
    }
    out.overlap_x.push_back(decode_overlap(ex, params.heads));
    out.overlap_y.push_back(decode_overlap(ey, params.heads));
  }
  return out;
}

PairTargets make_targets(const PointCloud& source, const PointCloud& target, const CloudGeometry& gx,
                         const CloudGeometry& gy, const RigidTransform& gt, const ModelConfig& cfg) {
  const double r_o = cfg.effective_overlap_radius();
  PairTargets t{gt, overlap_labels(source, target, gt, gx.pooling_indices, r_o),
                overlap_labels(target, source, invert(gt), gy.pooling_indices, r_o)};
  return t;
}

template <typename T>
PairLoss<T> pair_loss(const CloudGeometry& gx, const CloudGeometry& gy, const PairTargets& targets,
                      const ModelConfig& cfg, const ModelParams<T>& params) {
  const bool all_layers = cfg.loss_ablation == LossAblation::kAllLayers;
  const ForwardOutput<T> out = forward(gx, gy, cfg, params, all_layers);
  const RigidTransform inv = invert(targets.gt);
  const FeatureLossParams flp = FeatureLossParams::from_margin(cfg.effective_feature_margin());
  const bool use_feat = cfg.loss_ablation != LossAblation::kNoFeat && cfg.lambda_f > 0;
  const CircleLossParams cp{cfg.circle_pos_margin, cfg.circle_neg_margin, cfg.circle_log_scale};

  std::optional<ad::Tensor<T>> w_f;
  if (use_feat && cfg.loss_ablation != LossAblation::kCircle) w_f = feature_matrix(params.feat_u);

  std::vector<ad::Tensor<T>> lc, lo, lf;
  for (std::size_t i = 0; i < out.decoded_layers.size(); ++i) {
    lc.push_back(ad::add(correspondence_loss(out.pred_xy[i], gx.keypoints, targets.gt, targets.source.keypoint),
                         correspondence_loss(out.pred_yx[i], gy.keypoints, inv, targets.target.keypoint)));
    lo.push_back(ad::add(overlap_loss(out.overlap_x[i], targets.source.keypoint),
                         overlap_loss(out.overlap_y[i], targets.target.keypoint)));
    if (!use_feat) continue;
    const auto& ex = out.encoded.x[out.decoded_layers[i]];
    const auto& ey = out.encoded.y[out.decoded_layers[i]];
    if (cfg.loss_ablation == LossAblation::kCircle) {
      lf.push_back(circle_loss(ex, ey, gx.keypoints, gy.keypoints, targets.gt, flp, cp));
    } else {
      lf.push_back(infonce_loss(ex, ey, gx.keypoints, gy.keypoints, targets.gt, *w_f, flp));
    }
  }
  auto total_of = [](const std::vector<ad::Tensor<T>>& v) {
    if (v.empty()) return ad::Tensor<T>::scalar(T(0));
    ad::Tensor<T> s = v[0];
    for (std::size_t i = 1; i < v.size(); ++i) s = ad::add(s, v[i]);
    return s;
  };
  LossComponents<T> c{total_of(lc), total_of(lo), total_of(lf)};
  PairLoss<T> result;
  result.correspondence = static_cast<double>(c.correspondence.item());
  result.overlap = static_cast<double>(c.overlap.item());
  result.feature = static_cast<double>(c.feature.item());
  result.total = total_loss(c, cfg);
  return result;
}

template <typename T>
std::pair<PredictionSet, PredictionSet> to_predictions(const ForwardOutput<T>& out) {
  auto convert = [](const ad::Tensor<T>& coords, const ad::Tensor<T>& scores) {
    PredictionSet p;
    for (std::size_t i = 0; i < coords.rows(); ++i) {
      p.predicted_coords.emplace_back(coords.at(i, 0), coords.at(i, 1), coords.at(i, 2));
      p.overlap_scores.push_back(static_cast<double>(scores.at(i, 0)));
    }
    return p;
  };
  return {convert(out.pred_xy.back(), out.overlap_x.back()), convert(out.pred_yx.back(), out.overlap_y.back())};
}

SolverKind parse_solver_kind(std::string_view s) {
  if (s == "direct") return SolverKind::kDirect;
  if (s == "ransac-baseline") return SolverKind::kRansacBaseline;
  if (s == "regtr+ransac") return SolverKind::kRegtrRansac;
  throw InvalidArgument("unknown solver '" + std::string(s) + "' (expected direct|ransac-baseline|regtr+ransac)");
}

std::string_view to_string(SolverKind k) {
  switch (k) {
    case SolverKind::kDirect: return "direct";
    case SolverKind::kRansacBaseline: return "ransac-baseline";
    case SolverKind::kRegtrRansac: return "regtr+ransac";
  }
  return "direct";
}

template <typename T>
RegisterResult register_pair(const PointCloud& source, const PointCloud& target, const ModelConfig& cfg,
                             const ModelParams<T>& params, const RegisterOptions& options) {
  RegisterResult r;
  auto t0 = std::chrono::steady_clock::now();
  const CloudGeometry gx = prepare_geometry(source, cfg);
  const CloudGeometry gy = prepare_geometry(target, cfg);
  r.t_pre_ms = ms_since(t0);

  t0 = std::chrono::steady_clock::now();
  const ForwardOutput<T> out = forward(gx, gy, cfg, params);
  auto [xy, yx] = to_predictions(out);
  r.t_feat_ms = ms_since(t0);

  t0 = std::chrono::steady_clock::now();
  r.source_keypoints = gx.keypoints;
  r.target_keypoints = gy.keypoints;
  RansacOptions ro;
  ro.iterations = options.ransac_iterations;
  ro.inlier_threshold = options.ransac_threshold > 0 ? options.ransac_threshold : 2 * cfg.effective_overlap_radius();
  ro.seed = options.seed;
  switch (options.solver) {
    case SolverKind::kDirect:
      r.transform = weighted_kabsch(assemble(gx.keypoints, gy.keypoints, xy, yx));
      break;
    case SolverKind::kRegtrRansac: {
      const CorrespondenceBundle b = assemble(gx.keypoints, gy.keypoints, xy, yx);
      std::vector<Correspondence> c;
      for (std::size_t i = 0; i < b.size(); ++i) c.push_back({b.source[i], b.target[i], 1.0});
      r.transform = ransac_estimate(c, ro).transform;
      break;
    }
    case SolverKind::kRansacBaseline: {
      // Mutual-free argmax matching in both directions under the bilinear score.
      const auto w_f = feature_matrix(params.feat_u);
      const auto scores = ad::matmul_nt(ad::matmul(out.encoded.x.back(), w_f), out.encoded.y.back());
      const std::size_t m = scores.rows(), n = scores.cols();
      const auto s = scores.values();
      std::vector<Correspondence> c;
      for (std::size_t i = 0; i < m; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < n; ++j) {
          if (s[i * n + j] > s[i * n + best]) best = j;
        }
        c.push_back({gx.keypoints[i], gy.keypoints[best], 1.0});
      }
      for (std::size_t j = 0; j < n; ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < m; ++i) {
          if (s[i * n + j] > s[best * n + j]) best = i;
        }
        c.push_back({gx.keypoints[best], gy.keypoints[j], 1.0});
      }
      r.transform = ransac_estimate(c, ro).transform;
      break;
    }
  }
  r.t_pose_ms = ms_since(t0);
  r.source_to_target = std::move(xy);
  r.target_to_source = std::move(yx);
  return r;
}

#define REGTR_INSTANTIATE(T)                                                                                   \
  template struct ModelParams<T>;                                                                              \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                                   \
  template ModelParams<T> clone_params(const ModelParams<T>&);                                                 \
  template ad::Tensor<T> keypoint_encoding(const PointCloud&, const ModelConfig&, const ModelParams<T>&);      \
  template ForwardOutput<T> forward(const CloudGeometry&, const CloudGeometry&, const ModelConfig&,            \
                                    const ModelParams<T>&, bool);                                              \
  template PairLoss<T> pair_loss(const CloudGeometry&, const CloudGeometry&, const PairTargets&,               \
                                 const ModelConfig&, const ModelParams<T>&);                                   \
  template std::pair<PredictionSet, PredictionSet> to_predictions(const ForwardOutput<T>&);                    \
  template RegisterResult register_pair(const PointCloud&, const PointCloud&, const ModelConfig&,              \
                                        const ModelParams<T>&, const RegisterOptions&);

REGTR_INSTANTIATE(float)
REGTR_INSTANTIATE(double)
#undef REGTR_INSTANTIATE

template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);
template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, float>(const ModelParams<float>&);
template ModelParams<double> cast_params<double, double>(const ModelParams<double>&);

}  // namespace regtr
