#pragma once

#include "regtr/geom.hpp"

namespace regtr {

/// a = u * diag(singular_values) * v^T, singular values sorted descending and
/// non-negative. `u` is always a proper rotation (det +1); the sign of the last
/// column of `v` absorbs any reflection.
struct Svd3 {
  Mat3 u;
  Vec3 singular_values;
  Mat3 v;
  int sweeps = 0;
};

/// One-sided Jacobi SVD specialised to 3x3. `tolerance` bounds the relative
/// column non-orthogonality at convergence.
Svd3 svd3(const Mat3& a, double tolerance = 1e-12);

}  // namespace regtr
