#include "regtr/svd3.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>

namespace regtr {
namespace {

constexpr int kMaxSweeps = 64;

Vec3 any_perpendicular(const Vec3& u) {
  // Cross with the axis least aligned with u.
  Vec3 axis = Vec3::UnitX();
  if (std::abs(u.y()) < std::abs(u.x()) && std::abs(u.y()) <= std::abs(u.z())) {
    axis = Vec3::UnitY();
  } else if (std::abs(u.z()) < std::abs(u.x())) {
    axis = Vec3::UnitZ();
  }
  return u.cross(axis).normalized();
}

}  // namespace

Svd3 svd3(const Mat3& a, double tolerance) {
  Mat3 w = a;
  Mat3 v = Mat3::Identity();
  int sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        const double alpha = w.col(p).squaredNorm();
        const double beta = w.col(q).squaredNorm();
        const double gamma = w.col(p).dot(w.col(q));
        if (gamma == 0.0 || std::abs(gamma) <= tolerance * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int r = 0; r < 3; ++r) {
          const double wp = w(r, p);
          const double wq = w(r, q);
          w(r, p) = c * wp - s * wq;
          w(r, q) = s * wp + c * wq;
          const double vp = v(r, p);
          const double vq = v(r, q);
          v(r, p) = c * vp - s * vq;
          v(r, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::array<double, 3> norms{w.col(0).norm(), w.col(1).norm(), w.col(2).norm()};
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return norms[i] > norms[j]; });

  Svd3 out;
  out.sweeps = sweep;
  Mat3 ws;
  for (int k = 0; k < 3; ++k) {
    out.singular_values[k] = norms[order[k]];
    out.v.col(k) = v.col(order[k]);
    ws.col(k) = w.col(order[k]);
  }

  const double smax = out.singular_values[0];
  const double negligible = smax * 1e-14;
  if (smax == 0.0) {
    out.u = Mat3::Identity();
    return out;
  }
  out.u.col(0) = ws.col(0) / out.singular_values[0];
  if (out.singular_values[1] > negligible) {
    out.u.col(1) = ws.col(1) / out.singular_values[1];
    // Re-orthogonalise against u0 to remove residual drift.
    out.u.col(1) -= out.u.col(0).dot(out.u.col(1)) * out.u.col(0);
    out.u.col(1).normalize();
  } else {
    out.u.col(1) = any_perpendicular(out.u.col(0));
  }
  out.u.col(2) = out.u.col(0).cross(out.u.col(1));
  if (out.singular_values[2] > negligible && ws.col(2).dot(out.u.col(2)) < 0.0) {
    out.v.col(2) = -out.v.col(2);
  }
  return out;
}

}  // namespace regtr
