#include "ptzcalib/residuals.h"

#include <Eigen/Geometry>

#include "ptzcalib/geometry.h"

namespace ptzcalib {

namespace {

using Jacobian2x3 = Eigen::Matrix<double, 2, 3, Eigen::RowMajor>;

struct CameraProjection {
  Eigen::Vector2d pixel;
  // d pixel / d camera point
  Jacobian2x3 d_point;
  // d pixel / d f
  Eigen::Vector2d d_focal;
  // d pixel / d (k1, k2, p1, p2)
  Eigen::Matrix<double, 2, 4> d_coeffs;
};

bool ProjectWithJacobians(double f, const double* coeffs, double cx, double cy,
                          const Eigen::Vector3d& p, bool want_jacobians,
                          CameraProjection* out) {
  if (!p.allFinite() || p.z() <= kMinDepth) {
    return false;
  }
  Intrinsics intr;
  intr.f = f;
  intr.k1 = coeffs[0];
  intr.k2 = coeffs[1];
  intr.p1 = coeffs[2];
  intr.p2 = coeffs[3];
  const double inv_z = 1.0 / p.z();
  const Eigen::Vector2d n(p.x() * inv_z, p.y() * inv_z);
  const Eigen::Vector2d d = Distort(n, intr);
  out->pixel = Eigen::Vector2d(f * d.x() + cx, f * d.y() + cy);
  if (!want_jacobians) {
    return true;
  }
  Jacobian2x3 dn_dp;
  dn_dp << inv_z, 0.0, -n.x() * inv_z, 0.0, inv_z, -n.y() * inv_z;
  out->d_point = f * DistortJacobian(n, intr) * dn_dp;
  out->d_focal = d;
  out->d_coeffs = f * DistortCoeffJacobian(n);
  return true;
}

Eigen::Quaterniond QuaternionFrom(const double* q) {
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized();
}

template <int Cols>
void Store(const Eigen::Matrix<double, 2, Cols>& m, double* out) {
  using Mapped = Eigen::Map<Eigen::Matrix<
      double, 2, Cols, Cols == 1 ? Eigen::ColMajor : Eigen::RowMajor>>;
  Mapped mapped(out);
  mapped = m;
}

void StoreOptional(std::span<double* const> jacobians, size_t i,
                   const auto& m) {
  if (jacobians.size() > i && jacobians[i] != nullptr) {
    Store(Eigen::Matrix<double, 2, std::decay_t<decltype(m)>::ColsAtCompileTime>(m),
          jacobians[i]);
  }
}

}  // namespace

std::vector<BlockLayout> RayReprojectionCost::Layout() const {
  return {{Manifold::kEuclidean, 1},
          {Manifold::kEuclidean, 4},
          {Manifold::kRotation, 4},
          {Manifold::kUnitVector, 3}};
}

bool RayReprojectionCost::Evaluate(std::span<const double* const> parameters,
                                   double* residuals,
                                   std::span<double* const> jacobians) const {
  const double f = parameters[0][0];
  const double* coeffs = parameters[1];
  const Eigen::Quaterniond rotation = QuaternionFrom(parameters[2]);
  const Eigen::Vector3d ray =
      Eigen::Vector3d(parameters[3][0], parameters[3][1], parameters[3][2])
          .normalized();
  const Eigen::Vector3d p = rotation * ray;

  const bool want = !jacobians.empty();
  CameraProjection proj;
  if (!ProjectWithJacobians(f, coeffs, cx_, cy_, p, want, &proj)) {
    return false;
  }
  residuals[0] = proj.pixel.x() - observed_.x();
  residuals[1] = proj.pixel.y() - observed_.y();
  if (!want) {
    return true;
  }
  StoreOptional(jacobians, 0, proj.d_focal);
  StoreOptional(jacobians, 1, proj.d_coeffs);
  const Eigen::Matrix<double, 2, 3> d_rotation = -proj.d_point * Skew(p);
  StoreOptional(jacobians, 2, d_rotation);
  const Eigen::Matrix<double, 2, 2> d_ray =
      proj.d_point * rotation.toRotationMatrix() * SphereTangentBasis(ray);
  StoreOptional(jacobians, 3, d_ray);
  return true;
}

std::vector<BlockLayout> PointReprojectionCost::Layout() const {
  return {{Manifold::kEuclidean, 1},
          {Manifold::kEuclidean, 4},
          {Manifold::kRotation, 4},
          {Manifold::kRotation, 4},
          {Manifold::kEuclidean, 3}};
}

bool PointReprojectionCost::Evaluate(std::span<const double* const> parameters,
                                     double* residuals,
                                     std::span<double* const> jacobians) const {
  const double f = parameters[0][0];
  const double* coeffs = parameters[1];
  const Eigen::Quaterniond rotation = QuaternionFrom(parameters[2]);
  const Eigen::Quaterniond transform_rotation = QuaternionFrom(parameters[3]);
  const Eigen::Vector3d translation(parameters[4][0], parameters[4][1],
                                    parameters[4][2]);
  const Eigen::Vector3d rotated_world = transform_rotation * world_point_;
  const Eigen::Vector3d local = rotated_world + translation;
  const Eigen::Vector3d p = rotation * local;

  const bool want = !jacobians.empty();
  CameraProjection proj;
  if (!ProjectWithJacobians(f, coeffs, cx_, cy_, p, want, &proj)) {
    return false;
  }
  residuals[0] = proj.pixel.x() - observed_.x();
  residuals[1] = proj.pixel.y() - observed_.y();
  if (!want) {
    return true;
  }
  const Eigen::Matrix3d r = rotation.toRotationMatrix();
  StoreOptional(jacobians, 0, proj.d_focal);
  StoreOptional(jacobians, 1, proj.d_coeffs);
  const Eigen::Matrix<double, 2, 3> d_rotation = -proj.d_point * Skew(p);
  StoreOptional(jacobians, 2, d_rotation);
  const Eigen::Matrix<double, 2, 3> d_transform_rotation =
      -proj.d_point * r * Skew(rotated_world);
  StoreOptional(jacobians, 3, d_transform_rotation);
  const Eigen::Matrix<double, 2, 3> d_translation = proj.d_point * r;
  StoreOptional(jacobians, 4, d_translation);
  return true;
}

}  // namespace ptzcalib
