#include "regtr/geom.hpp"

#include "regtr/error.hpp"
#include "regtr/grid_index.hpp"
#include "regtr/svd3.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace regtr {

bool is_finite(const Vec3& v) { return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z()); }

PointCloud::PointCloud(std::vector<Vec3> points) : points_(std::move(points)) {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!is_finite(points_[i])) {
      std::ostringstream msg;
      msg << "non-finite coordinate at point " << i;
      throw InvalidArgument(msg.str());
    }
  }
}

Vec3 PointCloud::centroid() const {
  if (points_.empty()) throw InvalidArgument("empty point cloud");
  Vec3 c = Vec3::Zero();
  for (const auto& p : points_) c += p;
  return c / static_cast<double>(points_.size());
}

PointCloud PointCloud::select(std::span<const std::size_t> indices) const {
  std::vector<Vec3> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= points_.size()) throw InvalidArgument("PointCloud::select: index out of range");
    out.push_back(points_[i]);
  }
  PointCloud pc;
  pc.points_ = std::move(out);
  return pc;
}

RigidTransform::RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!rotation.allFinite() || !is_finite(translation)) {
    throw InvalidArgument("RigidTransform: non-finite entries");
  }
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = rotation.determinant();
  if (ortho > kRotationTolerance || std::abs(det - 1.0) > kRotationTolerance) {
    std::ostringstream msg;
    msg << "RigidTransform: rotation not in SO(3) (|R^T R - I| = " << ortho << ", det = " << det << ")";
    throw InvalidArgument(msg.str());
  }
}

RigidTransform RigidTransform::from_approximate(const Mat3& rotation, const Vec3& translation) {
  if (!rotation.allFinite()) throw InvalidArgument("RigidTransform: non-finite entries");
  const Svd3 s = svd3(rotation);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (s.u * s.v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return {s.u * d * s.v.transpose(), translation};
}

RigidTransform RigidTransform::from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& translation) {
  if (axis.norm() == 0.0) return {Mat3::Identity(), translation};
  return {Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix(), translation};
}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Vec3 apply(const RigidTransform& t, const Vec3& p) { return t(p); }

PointCloud apply(const RigidTransform& t, const PointCloud& pc) {
  std::vector<Vec3> out;
  out.reserve(pc.size());
  for (const auto& p : pc) out.push_back(t(p));
  return PointCloud(std::move(out));
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

RigidTransform invert(const RigidTransform& t) {
  const Mat3 rt = t.rotation().transpose();
  return {rt, -(rt * t.translation())};
}

NearestNeighbor nearest_neighbor(const Vec3& query, const PointCloud& pc) {
  if (pc.empty()) throw InvalidArgument("empty point cloud");
  return GridIndex(pc).nearest(query);
}

namespace {

double mean_sq_nn(const PointCloud& from, const GridIndex& to) {
  double acc = 0.0;
  for (const auto& p : from) {
    const double d = to.nearest(p).distance;
    acc += d * d;
  }
  return acc / static_cast<double>(from.size());
}

}  // namespace

double chamfer_distance(const PointCloud& a, const PointCloud& b, ChamferMode mode) {
  if (a.empty() || b.empty()) throw InvalidArgument("empty point cloud");
  const GridIndex ia(a);
  const GridIndex ib(b);
  const double sum = mean_sq_nn(a, ib) + mean_sq_nn(b, ia);
  return mode == ChamferMode::kSumOfMeans ? sum : 0.5 * sum;
}

double rotation_error(const RigidTransform& est, const RigidTransform& gt) {
  // Same geodesic angle as acos((tr - 1) / 2), but atan2 keeps precision for
  // angles near 0 and pi where acos is ill-conditioned.
  const Mat3 q = est.rotation().transpose() * gt.rotation();
  const double c = std::clamp((q.trace() - 1.0) / 2.0, -1.0, 1.0);
  const Vec3 axis(q(2, 1) - q(1, 2), q(0, 2) - q(2, 0), q(1, 0) - q(0, 1));
  return std::atan2(0.5 * axis.norm(), c) * 180.0 / std::numbers::pi;
}

double translation_error(const RigidTransform& est, const RigidTransform& gt) {
  return (est.translation() - gt.translation()).norm();
}

}  // namespace regtr
