#include "regtr/synth.hpp"

#include "regtr/error.hpp"
#include "regtr/grid_index.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_map>

namespace regtr::synth {
namespace {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double gaussian(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

PointCloud normalize_to_unit_sphere(std::vector<Vec3> pts) {
  Vec3 lo = pts.front();
  Vec3 hi = pts.front();
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 center = 0.5 * (lo + hi);
  double r = 0.0;
  for (auto& p : pts) {
    p -= center;
    r = std::max(r, p.norm());
  }
  if (r > 0.0) {
    for (auto& p : pts) p /= r;
  }
  return PointCloud(std::move(pts));
}

std::pair<Vec3, Vec3> basis_perpendicular_to(const Vec3& a) {
  const Vec3 helper = std::abs(a.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 e1 = a.cross(helper).normalized();
  return {e1, a.cross(e1)};
}

// Axis-aligned box surface, area-weighted face choice.
void sample_box_surface(const Vec3& center, const Vec3& half, std::size_t n, Rng& rng, std::vector<Vec3>& out,
                        bool skip_bottom = false) {
  std::array<double, 6> area{};
  for (int f = 0; f < 6; ++f) {
    const int axis = f / 2;
    area[f] = 4.0 * half[(axis + 1) % 3] * half[(axis + 2) % 3];
    if (skip_bottom && f == 4) area[f] = 0.0;  // -z face rests on the floor
  }
  std::discrete_distribution<int> face(area.begin(), area.end());
  for (std::size_t i = 0; i < n; ++i) {
    const int f = face(rng);
    const int axis = f / 2;
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = uniform(rng, -half[a], half[a]);
    p[axis] = (f % 2 == 0) ? half[axis] : -half[axis];
    out.push_back(center + p);
  }
}

PointCloud make_sphere_cap(std::size_t n, Rng& rng) {
  // Cap with an irregular rim so no rotation about the cap axis is a symmetry.
  const Vec3 axis = random_unit_vector(rng);
  const auto [e1, e2] = basis_perpendicular_to(axis);
  const double theta0 = uniform(rng, 50.0, 80.0) * std::numbers::pi / 180.0;
  const double a1 = uniform(rng, 0.15, 0.3);
  const double a2 = uniform(rng, 0.1, 0.2);
  const double ph1 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double ph2 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  std::vector<Vec3> pts;
  pts.reserve(n);
  while (pts.size() < n) {
    const Vec3 p = random_unit_vector(rng);
    const double theta = std::acos(std::clamp(p.dot(axis), -1.0, 1.0));
    const double phi = std::atan2(p.dot(e2), p.dot(e1));
    const double limit = theta0 * (1.0 + a1 * std::sin(phi + ph1) + a2 * std::cos(2.0 * phi + ph2));
    if (theta <= limit) pts.push_back(p);
  }
  return PointCloud(std::move(pts));
}

PointCloud make_box(std::size_t n, Rng& rng) {
  Vec3 half(uniform(rng, 0.4, 1.0), uniform(rng, 0.4, 1.0), uniform(rng, 0.4, 1.0));
  half /= half.norm();
  std::vector<Vec3> pts;
  pts.reserve(n);
  sample_box_surface(Vec3::Zero(), half, n, rng, pts);
  return PointCloud(std::move(pts));
}

PointCloud make_plane_with_bumps(std::size_t n, Rng& rng) {
  struct Bump {
    double cx, cy, amp, s;
  };
  const int nb = std::uniform_int_distribution<int>(3, 6)(rng);
  std::vector<Bump> bumps;
  for (int k = 0; k < nb; ++k) {
    const double sign = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    bumps.push_back({uniform(rng, -0.7, 0.7), uniform(rng, -0.7, 0.7), sign * uniform(rng, 0.2, 0.5),
                     uniform(rng, 0.15, 0.35)});
  }
  std::vector<Vec3> pts;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = uniform(rng, -1.0, 1.0);
    const double y = uniform(rng, -1.0, 1.0);
    double z = 0.0;
    for (const auto& b : bumps) {
      const double r2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
      z += b.amp * std::exp(-r2 / (2.0 * b.s * b.s));
    }
    pts.emplace_back(x, y, z);
  }
  return normalize_to_unit_sphere(std::move(pts));
}

PointCloud make_composite_room(std::size_t n, Rng& rng) {
  // Floor [-1,1]^2 at z=0, walls at x=-1 and y=-1 of height h, one box on the floor.
  const double h = uniform(rng, 0.6, 1.0);
  const Vec3 half(uniform(rng, 0.15, 0.35), uniform(rng, 0.15, 0.35), uniform(rng, 0.1, 0.3));
  const Vec3 center(uniform(rng, -0.5, 0.6), uniform(rng, -0.5, 0.6), half.z());
  const double box_area = 4.0 * (half.x() * half.y() + 2.0 * half.z() * (half.x() + half.y()));
  const std::array<double, 4> area{4.0, 2.0 * h, 2.0 * h, box_area};
  std::discrete_distribution<int> part(area.begin(), area.end());
  std::vector<Vec3> pts;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (part(rng)) {
      case 0:
        pts.emplace_back(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), 0.0);
        break;
      case 1:
        pts.emplace_back(-1.0, uniform(rng, -1.0, 1.0), uniform(rng, 0.0, h));
        break;
      case 2:
        pts.emplace_back(uniform(rng, -1.0, 1.0), -1.0, uniform(rng, 0.0, h));
        break;
      default:
        sample_box_surface(center, half, 1, rng, pts, /*skip_bottom=*/true);
        break;
    }
  }
  return normalize_to_unit_sphere(std::move(pts));
}

struct VoxelKey {
  std::int64_t x, y, z;
  auto operator<=>(const VoxelKey&) const = default;
};

void permute_in_place(std::vector<Vec3>& a, const std::vector<std::size_t>& perm) {
  std::vector<Vec3> out(a.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out[i] = a[perm[i]];
  a.swap(out);
}

}  // namespace

ShapeKind parse_shape_kind(std::string_view name) {
  if (name == "plane-with-bumps") return ShapeKind::kPlaneWithBumps;
  if (name == "box") return ShapeKind::kBox;
  if (name == "sphere-cap") return ShapeKind::kSphereCap;
  if (name == "composite-room") return ShapeKind::kCompositeRoom;
  throw InvalidArgument("unknown shape kind: " + std::string(name));
}

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kPlaneWithBumps: return "plane-with-bumps";
    case ShapeKind::kBox: return "box";
    case ShapeKind::kSphereCap: return "sphere-cap";
    case ShapeKind::kCompositeRoom: return "composite-room";
  }
  throw InvalidArgument("unknown shape kind");
}

Vec3 random_unit_vector(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Vec3 v(g(rng), g(rng), g(rng));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

PointCloud generate_shape(ShapeKind kind, std::size_t n, Rng& rng) {
  if (n < 64) throw InvalidArgument("generate_shape: need n >= 64");
  switch (kind) {
    case ShapeKind::kPlaneWithBumps: return make_plane_with_bumps(n, rng);
    case ShapeKind::kBox: return make_box(n, rng);
    case ShapeKind::kSphereCap: return make_sphere_cap(n, rng);
    case ShapeKind::kCompositeRoom: return make_composite_room(n, rng);
  }
  throw InvalidArgument("unknown shape kind");
}

SubsampleResult voxel_subsample(const PointCloud& pc, double voxel_size) {
  if (!(voxel_size > 0.0)) throw InvalidArgument("voxel_subsample: voxel_size must be > 0");
  if (pc.empty()) throw InvalidArgument("empty point cloud");
  Vec3 lo = pc[0];
  for (const auto& p : pc) lo = lo.cwiseMin(p);

  std::vector<VoxelKey> keys(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Vec3 q = (pc[i] - lo) / voxel_size;
    keys[i] = {static_cast<std::int64_t>(std::floor(q.x())), static_cast<std::int64_t>(std::floor(q.y())),
               static_cast<std::int64_t>(std::floor(q.z()))};
  }
  std::vector<std::size_t> order(pc.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

  SubsampleResult out;
  std::vector<Vec3> centroids;
  for (std::size_t k = 0; k < order.size();) {
    std::size_t e = k;
    std::vector<std::size_t> members;
    Vec3 sum = Vec3::Zero();
    while (e < order.size() && keys[order[e]] == keys[order[k]]) {
      members.push_back(order[e]);
      sum += pc[order[e]];
      ++e;
    }
    centroids.push_back(sum / static_cast<double>(members.size()));
    out.pooling_indices.push_back(std::move(members));
    k = e;
  }
  out.keypoints = PointCloud(std::move(centroids));
  return out;
}

CropResult halfspace_crop(const PointCloud& pc, double keep_fraction, Rng& rng) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw InvalidArgument("halfspace_crop: keep fraction must be in (0, 1]");
  }
  if (pc.empty()) throw InvalidArgument("empty point cloud");
  CropResult out;
  out.normal = random_unit_vector(rng);
  const std::size_t m = pc.size();
  // ceil with a small guard so 0.7 * 100 keeps 70, not 71.
  const std::size_t keep = std::min<std::size_t>(
      m, static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(m) - 1e-9)));

  std::vector<double> dist(m);
  for (std::size_t i = 0; i < m; ++i) dist[i] = out.normal.dot(pc[i]);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });

  out.kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(out.kept.begin(), out.kept.end());
  const double last_kept = dist[order[keep - 1]];
  out.offset = keep < m ? 0.5 * (last_kept + dist[order[keep]]) : last_kept;
  if (keep < m && out.offset > last_kept) out.offset = last_kept;
  out.points = pc.select(out.kept);
  return out;
}

std::vector<Correspondence> PairSample::gt_correspondences() const {
  std::vector<Correspondence> out;
  if (source_ids.size() != source_clean.size() || target_ids.size() != target_clean.size()) return out;
  std::unordered_map<std::size_t, std::size_t> target_of;
  for (std::size_t j = 0; j < target_ids.size(); ++j) target_of.emplace(target_ids[j], j);
  for (std::size_t i = 0; i < source_ids.size(); ++i) {
    const auto it = target_of.find(source_ids[i]);
    if (it != target_of.end()) out.push_back({source_clean[i], target_clean[it->second], 1.0});
  }
  return out;
}

double overlap_fraction(const PairSample& pair, double radius) {
  const PointCloud& src = pair.source_clean.empty() ? pair.source : pair.source_clean;
  const PointCloud& tgt = pair.target_clean.empty() ? pair.target : pair.target_clean;
  const GridIndex index(tgt);
  std::size_t hits = 0;
  for (const auto& p : src) {
    if (index.nearest(pair.gt_transform(p)).distance < radius) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(src.size());
}

namespace {

std::vector<std::size_t> resample(std::vector<std::size_t> ids, std::size_t count, Rng& rng) {
  if (ids.size() <= count) return ids;
  // Partial Fisher-Yates: uniform selection without replacement.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

struct Cloud {
  std::vector<Vec3> noisy;
  std::vector<Vec3> clean;
  std::vector<std::size_t> ids;
};

void jitter_and_shuffle(Cloud& c, double sigma, bool shuffle, Rng& rng) {
  c.noisy.resize(c.clean.size());
  for (std::size_t i = 0; i < c.clean.size(); ++i) {
    c.noisy[i] = c.clean[i] + Vec3(gaussian(rng, sigma), gaussian(rng, sigma), gaussian(rng, sigma));
  }
  if (!shuffle) return;
  std::vector<std::size_t> perm(c.clean.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  permute_in_place(c.noisy, perm);
  permute_in_place(c.clean, perm);
  std::vector<std::size_t> ids(c.ids.size());
  for (std::size_t i = 0; i < perm.size(); ++i) ids[i] = c.ids[perm[i]];
  c.ids.swap(ids);
}

}  // namespace

PairSample make_modelnet_style_pair(const PointCloud& shape, double keep_fraction, Rng& rng,
                                    const PairOptions& options) {
  const CropResult src_crop = halfspace_crop(shape, keep_fraction, rng);
  const CropResult tgt_crop = halfspace_crop(shape, keep_fraction, rng);
  if (src_crop.kept.size() < options.min_points || tgt_crop.kept.size() < options.min_points) {
    throw InvalidArgument("make_modelnet_style_pair: shape too small after crop");
  }
  Cloud src;
  Cloud tgt;
  src.ids = resample(src_crop.kept, options.resample_count, rng);
  tgt.ids = resample(tgt_crop.kept, options.resample_count, rng);

  const Vec3 axis = random_unit_vector(rng);
  const double angle = uniform(rng, 0.0, options.max_rotation_deg) * std::numbers::pi / 180.0;
  const double mt = options.max_translation;
  const Vec3 trans(uniform(rng, -mt, mt), uniform(rng, -mt, mt), uniform(rng, -mt, mt));
  const RigidTransform perturb = RigidTransform::from_axis_angle(axis, angle, trans);

  for (std::size_t id : src.ids) src.clean.push_back(perturb(shape[id]));
  for (std::size_t id : tgt.ids) tgt.clean.push_back(shape[id]);
  jitter_and_shuffle(src, options.noise_sigma, options.shuffle, rng);
  jitter_and_shuffle(tgt, options.noise_sigma, options.shuffle, rng);

  PairSample pair;
  pair.source = PointCloud(std::move(src.noisy));
  pair.target = PointCloud(std::move(tgt.noisy));
  pair.source_clean = PointCloud(std::move(src.clean));
  pair.target_clean = PointCloud(std::move(tgt.clean));
  pair.source_ids = std::move(src.ids);
  pair.target_ids = std::move(tgt.ids);
  pair.gt_transform = invert(perturb);
  pair.overlap_fraction = overlap_fraction(pair, options.overlap_radius);
  return pair;
}

PairSample repose_pair(const PairSample& pair, Rng& rng, double max_rotation_deg, double max_translation) {
  const Vec3 axis = random_unit_vector(rng);
  const double angle = uniform(rng, 0.0, max_rotation_deg) * std::numbers::pi / 180.0;
  const Vec3 trans(uniform(rng, -max_translation, max_translation), uniform(rng, -max_translation, max_translation),
                   uniform(rng, -max_translation, max_translation));
  const RigidTransform perturb = RigidTransform::from_axis_angle(axis, angle, trans);
  const RigidTransform move = compose(perturb, pair.gt_transform);
  PairSample out = pair;
  out.source = apply(move, pair.source);
  if (!pair.source_clean.empty()) out.source_clean = apply(move, pair.source_clean);
  out.gt_transform = invert(perturb);
  return out;
}

PairSample augment_scene_pair(const PairSample& pair, Rng& rng, const AugmentOptions& options) {
  const Vec3 axis = random_unit_vector(rng);
  const double angle = gaussian(rng, options.rotation_sigma);
  const Vec3 trans(gaussian(rng, options.translation_sigma), gaussian(rng, options.translation_sigma),
                   gaussian(rng, options.translation_sigma));
  const RigidTransform perturb = RigidTransform::from_axis_angle(axis, angle, trans);

  Cloud src;
  Cloud tgt;
  const bool has_clean = pair.source_clean.size() == pair.source.size() && pair.target_clean.size() == pair.target.size();
  // Jitter is applied on top of the existing (possibly noisy) positions; the
  // clean copies only move rigidly.
  for (std::size_t i = 0; i < pair.source.size(); ++i) src.clean.push_back(perturb(pair.source[i]));
  for (const auto& p : pair.target) tgt.clean.push_back(p);
  src.ids = pair.source_ids;
  tgt.ids = pair.target_ids;
  if (src.ids.size() != src.clean.size()) src.ids.clear();
  if (tgt.ids.size() != tgt.clean.size()) tgt.ids.clear();

  std::vector<Vec3> src_clean;
  std::vector<Vec3> tgt_clean;
  if (has_clean) {
    for (const auto& p : pair.source_clean) src_clean.push_back(perturb(p));
    tgt_clean = pair.target_clean.points();
  }

  // One permutation per cloud, applied to noisy points, clean copies and ids.
  auto finish = [&](Cloud& c, std::vector<Vec3>& clean_copy) {
    const std::size_t n = c.clean.size();
    c.noisy.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      c.noisy[i] = c.clean[i] + Vec3(gaussian(rng, options.jitter_sigma), gaussian(rng, options.jitter_sigma),
                                     gaussian(rng, options.jitter_sigma));
    }
    if (!options.shuffle) return;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    permute_in_place(c.noisy, perm);
    if (!clean_copy.empty()) permute_in_place(clean_copy, perm);
    if (!c.ids.empty()) {
      std::vector<std::size_t> ids(n);
      for (std::size_t i = 0; i < n; ++i) ids[i] = c.ids[perm[i]];
      c.ids.swap(ids);
    }
  };
  finish(src, src_clean);
  finish(tgt, tgt_clean);

  PairSample out;
  out.source = PointCloud(std::move(src.noisy));
  out.target = PointCloud(std::move(tgt.noisy));
  out.source_clean = PointCloud(std::move(src_clean));
  out.target_clean = PointCloud(std::move(tgt_clean));
  out.source_ids = std::move(src.ids);
  out.target_ids = std::move(tgt.ids);
  out.gt_transform = compose(pair.gt_transform, invert(perturb));
  out.overlap_fraction = pair.overlap_fraction;
  return out;
}

}  // namespace regtr::synth
