#include "regtr/gradsuite.hpp"

#include "regtr/backbone.hpp"
#include "regtr/heads.hpp"
#include "regtr/losses.hpp"
#include "regtr/params.hpp"
#include "regtr/synth.hpp"
#include "regtr/xencoder.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <utility>

namespace regtr {
namespace {

using T = ad::Tensor<double>;
using Inputs = std::vector<std::pair<std::string, T>>;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  T uniform(std::size_t r, std::size_t c, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(r * c);
    for (double& x : v) x = u(rng_);
    return T::from(r, c, std::move(v));
  }

  // Magnitudes in [0.2, 1] with random signs: clear of the kink at zero.
  T away_from_zero(std::size_t r, std::size_t c) {
    std::uniform_real_distribution<double> u(0.2, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(r * c);
    for (double& x : v) x = sign(rng_) ? u(rng_) : -u(rng_);
    return T::from(r, c, std::move(v));
  }

  Linear<double> linear(std::size_t in, std::size_t out) {
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    return {uniform(in, out, -s, s), uniform(1, out, -0.1, 0.1)};
  }

  AttentionParams<double> attention(std::size_t d) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    return {uniform(d, d, -s, s), uniform(d, d, -s, s), uniform(d, d, -s, s), uniform(d, d, -s, s)};
  }

  LayerNormParams<double> layer_norm(std::size_t d) { return {uniform(1, d, 0.5, 1.5), uniform(1, d, -0.2, 0.2)}; }

  PointCloud cloud(std::size_t n, double extent) {
    std::uniform_real_distribution<double> u(0, extent);
    std::vector<Vec3> pts(n);
    for (auto& p : pts) p = Vec3(u(rng_), u(rng_), u(rng_));
    return PointCloud(std::move(pts));
  }

  synth::Rng& rng() { return rng_; }

 private:
  synth::Rng rng_;
};

void add_linear(Inputs& in, const std::string& prefix, const Linear<double>& l) {
  in.emplace_back(prefix + ".w", l.w);
  in.emplace_back(prefix + ".b", l.b);
}

void add_attention(Inputs& in, const std::string& prefix, const AttentionParams<double>& a) {
  in.emplace_back(prefix + ".wq", a.wq);
  in.emplace_back(prefix + ".wk", a.wk);
  in.emplace_back(prefix + ".wv", a.wv);
  in.emplace_back(prefix + ".wo", a.wo);
}

void add_layer_norm(Inputs& in, const std::string& prefix, const LayerNormParams<double>& l) {
  in.emplace_back(prefix + ".gamma", l.gamma);
  in.emplace_back(prefix + ".beta", l.beta);
}

class Suite {
 public:
  Suite(const GradSuiteOptions& options) : options_(options), gen_(options.seed) {}

  Gen& gen() { return gen_; }

  // Scalarises f's output with a fixed random weighting and checks it.
  void check(const std::string& name, const Inputs& inputs, const std::function<T()>& f) {
    const T probe = f();
    const T weights = gen_.uniform(probe.rows(), probe.cols(), 0.5, 1.5);
    auto scalar = [&] { return ad::sum(ad::mul(f(), weights)); };
    cases_.push_back({name, ad::grad_check(scalar, inputs, options_.step)});
  }

  std::vector<GradSuiteCase> take() { return std::move(cases_); }

 private:
  GradSuiteOptions options_;
  Gen gen_;
  std::vector<GradSuiteCase> cases_;
};

void primitive_ops(Suite& s) {
  Gen& g = s.gen();
  {
    const T a = g.uniform(3, 4), b = g.uniform(4, 2);
    s.check("matmul", {{"a", a}, {"b", b}}, [=] { return ad::matmul(a, b); });
  }
  {
    const T a = g.uniform(3, 4), b = g.uniform(5, 4);
    s.check("matmul_nt", {{"a", a}, {"b", b}}, [=] { return ad::matmul_nt(a, b); });
  }
  {
    const T a = g.uniform(3, 4);
    s.check("transpose", {{"a", a}}, [=] { return ad::transpose(a); });
  }
  {
    const T a = g.uniform(3, 4), b = g.uniform(3, 4), bias = g.uniform(1, 4);
    s.check("add", {{"a", a}, {"b", b}}, [=] { return ad::add(a, b); });
    s.check("add_bias", {{"a", a}, {"bias", bias}}, [=] { return ad::add(a, bias); });
    s.check("sub", {{"a", a}, {"b", b}}, [=] { return ad::sub(a, b); });
    s.check("sub_bias", {{"a", a}, {"bias", bias}}, [=] { return ad::sub(a, bias); });
    s.check("mul", {{"a", a}, {"b", b}}, [=] { return ad::mul(a, b); });
    s.check("scale", {{"a", a}}, [=] { return ad::scale(a, 1.7); });
    s.check("add_scalar", {{"a", a}}, [=] { return ad::add_scalar(a, 0.3); });
    s.check("sigmoid", {{"a", a}}, [=] { return ad::sigmoid(a); });
    s.check("exp", {{"a", a}}, [=] { return ad::exp(a); });
    s.check("softplus", {{"a", a}}, [=] { return ad::softplus(ad::scale(a, 3.0)); });
    s.check("softmax_rows", {{"a", a}}, [=] { return ad::softmax_rows(ad::scale(a, 2.0)); });
    s.check("l2_normalize_rows", {{"a", a}}, [=] { return ad::l2_normalize_rows(a); });
    s.check("sum", {{"a", a}}, [=] { return ad::sum(a); });
    s.check("mean", {{"a", a}}, [=] { return ad::mean(a); });
    s.check("sum_cols", {{"a", a}}, [=] { return ad::sum_cols(a); });
  }
  {
    const T x = g.uniform(3, 4), w = g.uniform(3, 1);
    s.check("scale_rows", {{"x", x}, {"w", w}}, [=] { return ad::scale_rows(x, w); });
  }
  {
    const T a = g.away_from_zero(3, 4);
    s.check("relu", {{"a", a}}, [=] { return ad::relu(a); });
    s.check("abs", {{"a", a}}, [=] { return ad::abs(a); });
  }
  {
    const T a = g.uniform(3, 4, 0.5, 2.0);
    s.check("log", {{"a", a}}, [=] { return ad::log(a); });
    s.check("sqrt", {{"a", a}}, [=] { return ad::sqrt(a); });
  }
  {
    // Values straddle both bounds but stay clear of them.
    const T a = g.uniform(3, 4);
    for (double& v : a.mutable_values()) {
      if (std::abs(std::abs(v) - 0.5) < 0.05) v = 0.0;
    }
    s.check("clamp", {{"a", a}}, [=] { return ad::clamp(a, -0.5, 0.5); });
  }
  {
    const T a = g.uniform(3, 2), b = g.uniform(3, 3);
    s.check("concat_cols", {{"a", a}, {"b", b}}, [=] { return ad::concat_cols<double>({a, b}); });
    const T c = g.uniform(2, 3), d = g.uniform(4, 3);
    s.check("concat_rows", {{"c", c}, {"d", d}}, [=] { return ad::concat_rows<double>({c, d}); });
  }
  {
    const T a = g.uniform(5, 5);
    s.check("slice_cols", {{"a", a}}, [=] { return ad::slice_cols(a, 1, 4); });
    s.check("slice_rows", {{"a", a}}, [=] { return ad::slice_rows(a, 1, 3); });
    const std::vector<std::size_t> rows = {2, 0, 2, 4};
    s.check("gather_rows", {{"a", a}}, [=] { return ad::gather_rows(a, std::span<const std::size_t>(rows)); });
  }
  {
    const T a = g.uniform(3, 4);
    const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 1};
    s.check("masked_logsumexp_rows", {{"a", a}},
            [=] { return ad::masked_logsumexp_rows(a, std::span<const std::uint8_t>(mask)); });
  }
  {
    const T x = g.uniform(3, 6), gamma = g.uniform(1, 6, 0.5, 1.5), beta = g.uniform(1, 6);
    s.check("layer_norm", {{"x", x}, {"gamma", gamma}, {"beta", beta}}, [=] { return ad::layer_norm(x, gamma, beta); });
  }
  {
    const T a = g.uniform(6, 3);
    const std::vector<std::vector<std::size_t>> groups = {{0, 1, 2}, {3}, {4, 5, 1}};
    s.check("group_max", {{"a", a}}, [=] { return ad::group_max(a, groups); });
    s.check("group_mean", {{"a", a}}, [=] { return ad::group_mean(a, groups); });
  }
}

void composites(Suite& s) {
  Gen& g = s.gen();
  const std::size_t d = 8, heads = 2, n = 4, m = 5;

  {
    const T q = g.uniform(n, d), k = g.uniform(m, d), v = g.uniform(m, d);
    const AttentionParams<double> a = g.attention(d);
    Inputs in = {{"q", q}, {"k", k}, {"v", v}};
    add_attention(in, "attn", a);
    s.check("attention", in, [=] { return mh_attention(q, k, v, a, heads); });
  }
  {
    const T fx = g.uniform(n, d), fy = g.uniform(m, d), px = g.uniform(n, d, -0.5, 0.5), py = g.uniform(m, d, -0.5, 0.5);
    EncoderLayerParams<double> p{g.layer_norm(d), g.layer_norm(d), g.layer_norm(d), g.attention(d), g.attention(d),
                                 g.linear(d, 12), g.linear(12, d)};
    Inputs in = {{"fx", fx}, {"fy", fy}};
    add_layer_norm(in, "ln_self", p.ln_self);
    add_layer_norm(in, "ln_cross", p.ln_cross);
    add_layer_norm(in, "ln_ffn", p.ln_ffn);
    add_attention(in, "self_attn", p.self_attn);
    add_attention(in, "cross_attn", p.cross_attn);
    add_linear(in, "ffn1", p.ffn1);
    add_linear(in, "ffn2", p.ffn2);
    s.check("cross_encoder_layer", in, [=] {
      const auto [x, y] = cross_encoder_layer(fx, fy, px, py, p, heads);
      return ad::concat_rows<double>({x, y});
    });
  }
  {
    auto geometry = std::make_shared<CloudGeometry>();
    geometry->keypoints = g.cloud(3, 1.0);
    const T offsets = g.uniform(7, 3);
    geometry->neighbor_offsets.assign(offsets.values().begin(), offsets.values().end());
    geometry->neighbor_groups = {{0, 1, 2}, {3, 4}, {5, 6, 0}};
    const BackboneParams<double> p{g.linear(3, 5), g.linear(5, 5), g.linear(10, 6), g.linear(6, 4)};
    Inputs in;
    add_linear(in, "point1", p.point1);
    add_linear(in, "point2", p.point2);
    add_linear(in, "mix1", p.mix1);
    add_linear(in, "mix2", p.mix2);
    s.check("backbone", in, [=] { return extract(*geometry, p).features; });
  }

  HeadParams<double> hp;
  hp.reg1 = g.linear(d, 6);
  hp.reg2 = g.linear(6, 3);
  hp.wq_out = g.uniform(d, d, -0.4, 0.4);
  hp.wk_out = g.uniform(d, d, -0.4, 0.4);
  hp.overlap = g.linear(d, 1);
  {
    const T f = g.uniform(n, d);
    Inputs in = {{"f", f}};
    add_linear(in, "reg1", hp.reg1);
    add_linear(in, "reg2", hp.reg2);
    s.check("decode_regress", in, [=] { return decode_regress(f, hp); });
  }
  {
    const T fx = g.uniform(n, d), fy = g.uniform(m, d);
    const T coords = coords_tensor<double>(g.cloud(m, 2.0));
    s.check("decode_weighted", {{"fx", fx}, {"fy", fy}, {"wq_out", hp.wq_out}, {"wk_out", hp.wk_out}},
            [=] { return decode_weighted(fx, fy, coords, hp); });
  }
  {
    const T f = g.uniform(n, d);
    Inputs in = {{"f", f}};
    add_linear(in, "overlap", hp.overlap);
    s.check("decode_overlap", in, [=] { return decode_overlap(f, hp); });
  }

  {
    const T z = g.uniform(6, 1, -2, 2);
    const std::vector<double> labels = {1, 0, 0.5, 1, 0.25, 0};
    s.check("overlap_loss", {{"z", z}}, [=] { return overlap_loss(ad::sigmoid(z), std::span<const double>(labels)); });
  }

  // Keypoints for the correspondence and feature losses: ky holds noisy gt
  // images of the first kx points plus distractors, so anchors have both
  // positives and negatives.
  const RigidTransform gt = RigidTransform::from_axis_angle(Vec3(0.3, -0.5, 0.8).normalized(), 0.4, Vec3(0.2, -0.1, 0.3));
  const PointCloud kx = g.cloud(6, 3.0);
  std::vector<Vec3> ky_pts;
  for (std::size_t i = 0; i < 5; ++i) ky_pts.push_back(gt(kx[i]) + Vec3(0.02, -0.01, 0.015));
  for (const Vec3& p : g.cloud(2, 3.0)) ky_pts.push_back(p + Vec3(4, 4, 4));
  const PointCloud ky(std::move(ky_pts));
  {
    // Offsets of at least 0.2 per axis keep |pred - target| off its kink.
    const T noise = g.away_from_zero(kx.size(), 3);
    std::vector<double> pv;
    for (std::size_t i = 0; i < kx.size(); ++i) {
      const Vec3 t = gt(kx[i]);
      for (int a = 0; a < 3; ++a) pv.push_back(t[a] + noise.at(i, a));
    }
    const T pred = T::from(kx.size(), 3, std::move(pv));
    const std::vector<double> labels = {1, 0.5, 0, 1, 0.75, 1};
    s.check("correspondence_loss", {{"pred", pred}},
            [=] { return correspondence_loss(pred, kx, gt, std::span<const double>(labels)); });
  }
  {
    const T fx = g.uniform(kx.size(), d), fy = g.uniform(ky.size(), d), u = g.uniform(d, d, -0.3, 0.3);
    const FeatureLossParams flp = FeatureLossParams::from_margin(0.3);
    s.check("feature_matrix", {{"u", u}}, [=] { return feature_matrix(u); });
    s.check("infonce_loss", {{"fx", fx}, {"fy", fy}, {"u", u}},
            [=] { return infonce_loss(fx, fy, kx, ky, gt, feature_matrix(u), flp); });
  }
  {
    const T c = T::scalar(0.7), o = T::scalar(0.4), f = T::scalar(1.3);
    ModelConfig cfg;
    cfg.lambda_o = 0.8;
    cfg.lambda_f = 0.3;
    s.check("total_loss", {{"correspondence", c}, {"overlap", o}, {"feature", f}},
            [=] { return total_loss<double>({c, o, f}, cfg); });
  }
}

}  // namespace

std::vector<GradSuiteCase> run_grad_suite(const GradSuiteOptions& options) {
  Suite suite(options);
  primitive_ops(suite);
  composites(suite);
  return suite.take();
}

}  // namespace regtr
