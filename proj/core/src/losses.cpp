#include "regtr/losses.hpp"

#include "regtr/error.hpp"
#include "regtr/grid_index.hpp"
#include "regtr/log.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace regtr {
namespace {

// Anchor rows with their positive column and the active (positive or
// negative) mask over the other cloud's keypoints.
struct Anchors {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> positive;
  std::vector<std::uint8_t> active;  // rows.size() x n
  std::vector<std::uint8_t> negative;
};

Anchors find_anchors(const PointCloud& from, const PointCloud& to, const RigidTransform& t, const FeatureLossParams& flp) {
  Anchors a;
  const GridIndex index(to);
  const std::size_t n = to.size();
  const double rn2 = flp.r_n * flp.r_n;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const Vec3 q = t(from[i]);
    const NearestNeighbor nn = index.nearest(q);
    if (!(nn.distance <= flp.r_p)) continue;
    a.rows.push_back(i);
    a.positive.push_back(nn.index);
    for (std::size_t j = 0; j < n; ++j) {
      const bool neg = (to[j] - q).squaredNorm() > rn2;
      a.negative.push_back(neg ? 1 : 0);
      a.active.push_back(neg || j == nn.index ? 1 : 0);
    }
  }
  return a;
}

template <typename T>
ad::Tensor<T> onehot(const Anchors& a, std::size_t n) {
  auto t = ad::Tensor<T>::zeros(a.rows.size(), n);
  auto v = t.mutable_values();
  for (std::size_t r = 0; r < a.rows.size(); ++r) v[r * n + a.positive[r]] = T(1);
  return t;
}

template <typename T>
ad::Tensor<T> infonce_direction(const ad::Tensor<T>& scores, const Anchors& a) {
  if (a.rows.empty()) {
    log::warn("infonce_loss: no anchors with a positive match; term is 0");
    return ad::Tensor<T>::scalar(T(0));
  }
  const std::size_t n = scores.cols();
  const auto s = ad::gather_rows(scores, std::span<const std::size_t>(a.rows));
  const auto lse = ad::masked_logsumexp_rows(s, std::span<const std::uint8_t>(a.active));
  const auto pos = ad::sum_cols(ad::mul(s, onehot<T>(a, n)));
  return ad::mean(ad::sub(lse, pos));
}

// Anchors that have at least one negative; circle loss needs both sets.
Anchors with_negatives(const Anchors& a, std::size_t n) {
  Anchors out;
  for (std::size_t r = 0; r < a.rows.size(); ++r) {
    const auto b = a.negative.begin() + static_cast<std::ptrdiff_t>(r * n);
    if (std::find(b, b + static_cast<std::ptrdiff_t>(n), 1) == b + static_cast<std::ptrdiff_t>(n)) continue;
    out.rows.push_back(a.rows[r]);
    out.positive.push_back(a.positive[r]);
    out.active.insert(out.active.end(), a.active.begin() + static_cast<std::ptrdiff_t>(r * n),
                      a.active.begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
    out.negative.insert(out.negative.end(), b, b + static_cast<std::ptrdiff_t>(n));
  }
  return out;
}

template <typename T>
ad::Tensor<T> circle_direction(const ad::Tensor<T>& dist, const Anchors& all, const CircleLossParams& cp) {
  const std::size_t n = dist.cols();
  const Anchors a = with_negatives(all, n);
  if (a.rows.empty()) {
    log::warn("circle_loss: no anchors with both a positive and a negative; term is 0");
    return ad::Tensor<T>::scalar(T(0));
  }
  const std::size_t m = a.rows.size();
  const auto d = ad::gather_rows(dist, std::span<const std::size_t>(a.rows));
  const auto dv = d.values();
  // Per-pair weights are treated as constants, as in the usual formulation.
  std::vector<T> pos_coef(m * n, T(0)), neg_coef(m * n, T(0));
  std::vector<T> pos_off(m * n, T(0)), neg_off(m * n, T(0));
  std::vector<std::uint8_t> pos_mask(m * n, 0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = r * n + j;
      if (j == a.positive[r]) {
        pos_mask[k] = 1;
        const T w = std::max<T>(T(0), dv[k] - T(cp.pos_margin));
        pos_coef[k] = T(cp.log_scale) * w;
        pos_off[k] = -T(cp.log_scale) * w * T(cp.pos_margin);
      }
      if (a.negative[k]) {
        const T w = std::max<T>(T(0), T(cp.neg_margin) - dv[k]);
        neg_coef[k] = -T(cp.log_scale) * w;
        neg_off[k] = T(cp.log_scale) * w * T(cp.neg_margin);
      }
    }
  }
  auto affine = [&](std::vector<T> coef, std::vector<T> off) {
    return ad::add(ad::mul(d, ad::Tensor<T>::from(m, n, std::move(coef))), ad::Tensor<T>::from(m, n, std::move(off)));
  };
  const auto lp = ad::masked_logsumexp_rows(affine(std::move(pos_coef), std::move(pos_off)),
                                            std::span<const std::uint8_t>(pos_mask));
  const auto ln = ad::masked_logsumexp_rows(affine(std::move(neg_coef), std::move(neg_off)),
                                            std::span<const std::uint8_t>(a.negative));
  return ad::mean(ad::softplus(ad::add(lp, ln)));
}

}  // namespace

OverlapLabels overlap_labels(const PointCloud& cloud, const PointCloud& other, const RigidTransform& to_other,
                             const std::vector<std::vector<std::size_t>>& pooling, double r_o) {
  if (!(r_o > 0)) throw InvalidArgument("overlap_labels: r_o must be > 0");
  OverlapLabels out;
  const GridIndex index(other);
  out.dense.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    out.dense[i] = index.nearest(to_other(cloud[i])).distance < r_o ? 1.0 : 0.0;
  }
  out.keypoint.reserve(pooling.size());
  for (const auto& group : pooling) {
    if (group.empty()) throw InvalidArgument("overlap_labels: empty pooling list");
    double s = 0;
    for (const std::size_t i : group) {
      if (i >= cloud.size()) throw InvalidArgument("overlap_labels: pooling index out of range");
      s += out.dense[i];
    }
    out.keypoint.push_back(s / static_cast<double>(group.size()));
  }
  return out;
}

template <typename T>
ad::Tensor<T> overlap_loss(const ad::Tensor<T>& scores, std::span<const double> labels) {
  if (scores.cols() != 1 || scores.rows() != labels.size()) {
    throw InvalidArgument("overlap_loss: scores " + scores.shape_str() + " vs " + std::to_string(labels.size()) +
                          " labels");
  }
  const std::size_t n = labels.size();
  std::vector<T> pos(labels.begin(), labels.end()), neg(n);
  for (std::size_t i = 0; i < n; ++i) neg[i] = T(1) - pos[i];
  const auto s = ad::clamp(scores, T(1e-7), T(1) - T(1e-7));
  const auto term = ad::add(ad::mul(ad::Tensor<T>::from(n, 1, std::move(pos)), ad::log(s)),
                            ad::mul(ad::Tensor<T>::from(n, 1, std::move(neg)), ad::log(ad::add_scalar(ad::scale(s, T(-1)), T(1)))));
  return ad::scale(ad::mean(term), T(-1));
}

template <typename T>
ad::Tensor<T> correspondence_loss(const ad::Tensor<T>& pred, const PointCloud& keypoints,
                                  const RigidTransform& to_other, std::span<const double> labels) {
  if (pred.rows() != keypoints.size() || pred.cols() != 3 || labels.size() != keypoints.size()) {
    throw InvalidArgument("correspondence_loss: predictions " + pred.shape_str() + ", " +
                          std::to_string(keypoints.size()) + " keypoints, " + std::to_string(labels.size()) + " labels");
  }
  double wsum = 0;
  for (const double w : labels) wsum += w;
  if (!(wsum > 0)) {
    log::warn("correspondence_loss: all overlap labels are zero; term is 0");
    return ad::Tensor<T>::scalar(T(0));
  }
  std::vector<T> target;
  target.reserve(keypoints.size() * 3);
  for (const Vec3& k : keypoints) {
    const Vec3 p = to_other(k);
    target.insert(target.end(), {T(p.x()), T(p.y()), T(p.z())});
  }
  std::vector<T> w(labels.begin(), labels.end());
  const auto diff = ad::abs(ad::sub(pred, ad::Tensor<T>::from(keypoints.size(), 3, std::move(target))));
  const auto weighted = ad::scale_rows(diff, ad::Tensor<T>::from(keypoints.size(), 1, std::move(w)));
  return ad::scale(ad::sum(weighted), T(1.0 / wsum));
}

template <typename T>
ad::Tensor<T> feature_matrix(const ad::Tensor<T>& feat_u) {
  const std::size_t d = feat_u.rows();
  if (feat_u.cols() != d) throw InvalidArgument("feature_matrix: U must be square, got " + feat_u.shape_str());
  auto mask = ad::Tensor<T>::zeros(d, d);
  auto mv = mask.mutable_values();
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) mv[i * d + j] = T(1);
  }
  const auto u = ad::mul(feat_u, mask);
  return ad::add(u, ad::transpose(u));
}

template <typename T>
ad::Tensor<T> infonce_loss(const ad::Tensor<T>& fx, const ad::Tensor<T>& fy, const PointCloud& kx,
                           const PointCloud& ky, const RigidTransform& gt, const ad::Tensor<T>& w_f,
                           const FeatureLossParams& flp) {
  if (!(flp.r_p > 0 && flp.r_p < flp.r_n)) throw InvalidArgument("infonce_loss: need 0 < r_p < r_n");
  if (fx.rows() != kx.size() || fy.rows() != ky.size() || fx.cols() != fy.cols() || w_f.rows() != fx.cols() ||
      w_f.cols() != fx.cols()) {
    throw InvalidArgument("infonce_loss: features " + fx.shape_str() + "/" + fy.shape_str() + " vs W_f " +
                          w_f.shape_str());
  }
  const auto scores = ad::matmul_nt(ad::matmul(fx, w_f), fy);  // M' x N'
  const Anchors ax = find_anchors(kx, ky, gt, flp);
  const Anchors ay = find_anchors(ky, kx, invert(gt), flp);
  return ad::add(infonce_direction(scores, ax), infonce_direction(ad::transpose(scores), ay));
}

template <typename T>
ad::Tensor<T> circle_loss(const ad::Tensor<T>& fx, const ad::Tensor<T>& fy, const PointCloud& kx,
                          const PointCloud& ky, const RigidTransform& gt, const FeatureLossParams& flp,
                          const CircleLossParams& cp) {
  if (!(flp.r_p > 0 && flp.r_p < flp.r_n)) throw InvalidArgument("circle_loss: need 0 < r_p < r_n");
  if (fx.rows() != kx.size() || fy.rows() != ky.size() || fx.cols() != fy.cols()) {
    throw InvalidArgument("circle_loss: features " + fx.shape_str() + "/" + fy.shape_str());
  }
  const auto nx = ad::l2_normalize_rows(fx);
  const auto ny = ad::l2_normalize_rows(fy);
  // |a - b| = sqrt(2 - 2 a.b) for unit vectors; the floor keeps sqrt smooth.
  const auto sq = ad::clamp(ad::add_scalar(ad::scale(ad::matmul_nt(nx, ny), T(-2)), T(2)), T(1e-6), T(4));
  const auto dist = ad::sqrt(sq);
  const Anchors ax = find_anchors(kx, ky, gt, flp);
  const Anchors ay = find_anchors(ky, kx, invert(gt), flp);
  return ad::add(circle_direction(dist, ax, cp), circle_direction(ad::transpose(dist), ay, cp));
}

template <typename T>
ad::Tensor<T> total_loss(const LossComponents<T>& c, const ModelConfig& cfg) {
  const std::pair<const char*, const ad::Tensor<T>*> parts[] = {
      {"correspondence", &c.correspondence}, {"overlap", &c.overlap}, {"feature", &c.feature}};
  for (const auto& [name, t] : parts) {
    if (!t->defined() || t->size() != 1) throw InvalidArgument(std::string("total_loss: ") + name + " must be a scalar");
    if (!std::isfinite(static_cast<double>(t->item()))) {
      throw NumericalError(std::string("total_loss: non-finite ") + name + " loss");
    }
  }
  return ad::add(ad::add(c.correspondence, ad::scale(c.overlap, T(cfg.lambda_o))), ad::scale(c.feature, T(cfg.lambda_f)));
}

#define REGTR_INSTANTIATE(T)                                                                                      \
  template ad::Tensor<T> overlap_loss(const ad::Tensor<T>&, std::span<const double>);                           \
  template ad::Tensor<T> correspondence_loss(const ad::Tensor<T>&, const PointCloud&, const RigidTransform&,    \
                                             std::span<const double>);                                          \
  template ad::Tensor<T> feature_matrix(const ad::Tensor<T>&);                                                  \
  template ad::Tensor<T> infonce_loss(const ad::Tensor<T>&, const ad::Tensor<T>&, const PointCloud&,            \
                                      const PointCloud&, const RigidTransform&, const ad::Tensor<T>&,           \
                                      const FeatureLossParams&);                                                \
  template ad::Tensor<T> circle_loss(const ad::Tensor<T>&, const ad::Tensor<T>&, const PointCloud&,             \
                                     const PointCloud&, const RigidTransform&, const FeatureLossParams&,        \
                                     const CircleLossParams&);                                                  \
  template ad::Tensor<T> total_loss(const LossComponents<T>&, const ModelConfig&);

REGTR_INSTANTIATE(float)
REGTR_INSTANTIATE(double)
#undef REGTR_INSTANTIATE

}  // namespace regtr
