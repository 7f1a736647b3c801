#pragma once

#include <Eigen/Core>
#include <Eigen/LU>

#include <cstddef>
#include <span>
#include <vector>

namespace regtr {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Ordered list of finite 3D points. Immutable once constructed.
class PointCloud {
 public:
  PointCloud() = default;
  /// Throws InvalidArgument if any coordinate is NaN or Inf.
  explicit PointCloud(std::vector<Vec3> points);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<Vec3>& points() const { return points_; }
  auto begin() const { return points_.begin(); }
  auto end() const { return points_.end(); }

  Vec3 centroid() const;
  /// Subset in the order given by `indices`.
  PointCloud select(std::span<const std::size_t> indices) const;

 private:
  std::vector<Vec3> points_;
};

/// Rotation in SO(3) plus translation. The constructor rejects matrices that
/// are not orthonormal with det +1 to within `kRotationTolerance`.
class RigidTransform {
 public:
  static constexpr double kRotationTolerance = 1e-9;

  RigidTransform();
  RigidTransform(const Mat3& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  /// Projects an approximately orthonormal matrix onto SO(3) first. Use this
  /// for externally supplied rotations (text files, float32 round trips).
  static RigidTransform from_approximate(const Mat3& rotation, const Vec3& translation);
  static RigidTransform from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& translation = Vec3::Zero());

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Mat4 matrix() const;

  Vec3 operator()(const Vec3& p) const { return rotation_ * p + translation_; }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

struct Correspondence {
  Vec3 source_point;
  Vec3 target_point;
  double weight = 1.0;
};

struct NearestNeighbor {
  std::size_t index = 0;
  double distance = 0.0;
};

enum class ChamferMode {
  kSumOfMeans,   ///< mean_a d² + mean_b d²
  kMeanOfMeans,  ///< (mean_a d² + mean_b d²) / 2
};

PointCloud apply(const RigidTransform& t, const PointCloud& pc);
Vec3 apply(const RigidTransform& t, const Vec3& p);

/// apply(compose(a, b), x) == apply(a, apply(b, x))
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);

/// Lowest index wins on ties. Throws InvalidArgument("empty point cloud").
NearestNeighbor nearest_neighbor(const Vec3& query, const PointCloud& pc);

double chamfer_distance(const PointCloud& a, const PointCloud& b, ChamferMode mode = ChamferMode::kSumOfMeans);

/// Geodesic angle between the two rotations, in degrees.
double rotation_error(const RigidTransform& est, const RigidTransform& gt);
double translation_error(const RigidTransform& est, const RigidTransform& gt);

bool is_finite(const Vec3& v);

}  // namespace regtr
