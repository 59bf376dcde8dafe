#include "ptzcalib/geometry.h"

#include <cmath>
#include <limits>

#include <Eigen/SVD>

namespace ptzcalib {

namespace {

bool AllFinite(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return v.allFinite();
}

constexpr int kUndistortFixedPointIterations = 20;
constexpr int kUndistortNewtonIterations = 20;
constexpr double kUndistortStepTolerance = 1e-12;

}  // namespace

Intrinsics Intrinsics::Centered(int width, int height, double f) {
  Intrinsics intrinsics;
  intrinsics.f = f;
  intrinsics.width = width;
  intrinsics.height = height;
  intrinsics.cx = 0.5 * width;
  intrinsics.cy = 0.5 * height;
  return intrinsics;
}

Eigen::Matrix3d Intrinsics::K() const {
  Eigen::Matrix3d k;
  k << f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0;
  return k;
}

Eigen::Matrix3d Intrinsics::InverseK() const {
  Eigen::Matrix3d k_inv;
  k_inv << 1.0 / f, 0.0, -cx / f, 0.0, 1.0 / f, -cy / f, 0.0, 0.0, 1.0;
  return k_inv;
}

bool Intrinsics::IsValid() const {
  return std::isfinite(f) && f > 0.0 && width > 0 && height > 0 &&
         std::isfinite(cx) && std::isfinite(cy) && std::isfinite(k1) &&
         std::isfinite(k2) && std::isfinite(p1) && std::isfinite(p2) &&
         std::abs(k1) <= kMaxRadialCoeff && std::abs(k2) <= kMaxRadialCoeff &&
         std::abs(p1) <= kMaxTangentialCoeff &&
         std::abs(p2) <= kMaxTangentialCoeff;
}

bool Intrinsics::HasDistortion() const {
  return k1 != 0.0 || k2 != 0.0 || p1 != 0.0 || p2 != 0.0;
}

double Intrinsics::MonotoneRadius2() const {
  // d/dr [r (1 + k1 r^2 + k2 r^4)] = 1 + 3 k1 s + 5 k2 s^2 with s = r^2.
  const double a = 5.0 * k2;
  const double b = 3.0 * k1;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  if (a == 0.0) {
    return b < 0.0 ? -1.0 / b : kInf;
  }
  const double disc = b * b - 4.0 * a;
  if (disc < 0.0) {
    return kInf;
  }
  const double sq = std::sqrt(disc);
  double best = kInf;
  for (const double root : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
    if (root > 0.0 && root < best) {
      best = root;
    }
  }
  return best;
}

std::optional<RayLandmark> RayLandmark::FromVector(const Eigen::Vector3d& v) {
  const double norm = v.norm();
  if (!std::isfinite(norm) || norm == 0.0) {
    return std::nullopt;
  }
  return RayLandmark{v / norm};
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
  RigidTransform out;
  out.rotation = (rotation * other.rotation).normalized();
  out.translation = rotation * other.translation + translation;
  return out;
}

RigidTransform RigidTransform::Inverse() const {
  RigidTransform out;
  out.rotation = rotation.conjugate();
  out.translation = -(out.rotation * translation);
  return out;
}

Eigen::Vector2d Distort(const Eigen::Vector2d& normalized,
                        const Intrinsics& intrinsics) {
  const double x = normalized.x();
  const double y = normalized.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + intrinsics.k1 * r2 + intrinsics.k2 * r2 * r2;
  const double xy = x * y;
  return {x * radial + 2.0 * intrinsics.p1 * xy +
              intrinsics.p2 * (r2 + 2.0 * x * x),
          y * radial + intrinsics.p1 * (r2 + 2.0 * y * y) +
              2.0 * intrinsics.p2 * xy};
}

Eigen::Matrix2d DistortJacobian(const Eigen::Vector2d& normalized,
                                const Intrinsics& intrinsics) {
  const double x = normalized.x();
  const double y = normalized.y();
  const double k1 = intrinsics.k1;
  const double k2 = intrinsics.k2;
  const double p1 = intrinsics.p1;
  const double p2 = intrinsics.p2;
  const double r2 = x * x + y * y;
  const double radial = 1.0 + k1 * r2 + k2 * r2 * r2;
  // d(radial)/dx = (2 k1 + 4 k2 r2) x
  const double dradial = 2.0 * k1 + 4.0 * k2 * r2;
  Eigen::Matrix2d jac;
  jac(0, 0) = radial + x * dradial * x + 2.0 * p1 * y + 6.0 * p2 * x;
  jac(0, 1) = x * dradial * y + 2.0 * p1 * x + 2.0 * p2 * y;
  jac(1, 0) = y * dradial * x + 2.0 * p1 * x + 2.0 * p2 * y;
  jac(1, 1) = radial + y * dradial * y + 6.0 * p1 * y + 2.0 * p2 * x;
  return jac;
}

Eigen::Matrix<double, 2, 4> DistortCoeffJacobian(
    const Eigen::Vector2d& normalized) {
  const double x = normalized.x();
  const double y = normalized.y();
  const double r2 = x * x + y * y;
  Eigen::Matrix<double, 2, 4> jac;
  jac << x * r2, x * r2 * r2, 2.0 * x * y, r2 + 2.0 * x * x,  //
      y * r2, y * r2 * r2, r2 + 2.0 * y * y, 2.0 * x * y;
  return jac;
}

std::optional<Eigen::Vector2d> Undistort(const Eigen::Vector2d& distorted,
                                         const Intrinsics& intrinsics) {
  if (!distorted.allFinite()) {
    return std::nullopt;
  }
  if (!intrinsics.HasDistortion()) {
    return distorted;
  }
  const double k1 = intrinsics.k1;
  const double k2 = intrinsics.k2;
  const double p1 = intrinsics.p1;
  const double p2 = intrinsics.p2;
  // Beyond the monotone radius the radial map folds back; a solution there
  // is not the physical preimage.
  const double max_r2 = intrinsics.MonotoneRadius2();
  const auto on_branch = [max_r2](const Eigen::Vector2d& v) -> std::optional<Eigen::Vector2d> {
    if (v.squaredNorm() > max_r2) {
      return std::nullopt;
    }
    return v;
  };

  Eigen::Vector2d x = distorted;
  for (int iter = 0; iter < kUndistortFixedPointIterations; ++iter) {
    const double r2 = x.squaredNorm();
    const double radial = 1.0 + k1 * r2 + k2 * r2 * r2;
    const double xy = x.x() * x.y();
    const Eigen::Vector2d tangential(
        2.0 * p1 * xy + p2 * (r2 + 2.0 * x.x() * x.x()),
        p1 * (r2 + 2.0 * x.y() * x.y()) + 2.0 * p2 * xy);
    const Eigen::Vector2d next = (distorted - tangential) / radial;
    if (!next.allFinite()) {
      break;
    }
    const double step = (next - x).norm();
    x = next;
    if (step < kUndistortStepTolerance) {
      return on_branch(x);
    }
  }

  // Slowly contracting near the image corners under strong distortion; finish
  // with Newton steps from the fixed-point estimate.
  if (!x.allFinite()) {
    x = distorted;
  }
  for (int iter = 0; iter < kUndistortNewtonIterations; ++iter) {
    const Eigen::Vector2d residual = Distort(x, intrinsics) - distorted;
    const Eigen::Matrix2d jac = DistortJacobian(x, intrinsics);
    if (std::abs(jac.determinant()) < 1e-12) {
      return std::nullopt;
    }
    const Eigen::Vector2d step = jac.inverse() * residual;
    x -= step;
    if (!x.allFinite()) {
      return std::nullopt;
    }
    if (step.norm() < kUndistortStepTolerance) {
      return on_branch(x);
    }
  }
  return std::nullopt;
}

std::optional<Eigen::Vector2d> ProjectCameraPoint(const Intrinsics& intrinsics,
                                                  const Eigen::Vector3d& point) {
  if (!AllFinite(point) || point.z() <= kMinDepth) {
    return std::nullopt;
  }
  const Eigen::Vector2d normalized = point.head<2>() / point.z();
  const Eigen::Vector2d distorted = Distort(normalized, intrinsics);
  return Eigen::Vector2d(intrinsics.f * distorted.x() + intrinsics.cx,
                         intrinsics.f * distorted.y() + intrinsics.cy);
}

std::optional<Eigen::Vector2d> ProjectPoint(const ViewParams& view,
                                            const Eigen::Vector3d& point) {
  if (!AllFinite(point)) {
    return std::nullopt;
  }
  const Eigen::Vector3d camera_point =
      view.pose.rotation * (point - view.pose.center);
  return ProjectCameraPoint(view.intrinsics, camera_point);
}

std::optional<Eigen::Vector2d> ProjectRay(const ViewParams& view,
                                          const RayLandmark& ray) {
  return ProjectCameraPoint(view.intrinsics, view.pose.rotation * ray.dir);
}

std::optional<Eigen::Vector2d> PixelToNormalized(const Intrinsics& intrinsics,
                                                 const Eigen::Vector2d& pixel) {
  if (!pixel.allFinite()) {
    return std::nullopt;
  }
  const Eigen::Vector2d distorted((pixel.x() - intrinsics.cx) / intrinsics.f,
                                  (pixel.y() - intrinsics.cy) / intrinsics.f);
  return Undistort(distorted, intrinsics);
}

std::optional<RayLandmark> PixelToRay(const ViewParams& view,
                                      const Eigen::Vector2d& pixel) {
  const auto normalized = PixelToNormalized(view.intrinsics, pixel);
  if (!normalized) {
    return std::nullopt;
  }
  const Eigen::Vector3d camera_ray(normalized->x(), normalized->y(), 1.0);
  return RayLandmark::FromVector(view.pose.rotation.conjugate() * camera_ray);
}

Eigen::Matrix3d NearestRotation(const Eigen::Matrix3d& m) {
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d correction = Eigen::Matrix3d::Identity();
  correction(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant();
  return svd.matrixU() * correction * svd.matrixV().transpose();
}

std::optional<Eigen::Quaterniond> RotationFromHomography(
    const Intrinsics& intrinsics_i, const Eigen::Matrix3d& homography,
    const Intrinsics& intrinsics_j) {
  if (!homography.allFinite()) {
    return std::nullopt;
  }
  Eigen::Matrix3d m =
      intrinsics_i.InverseK() * homography * intrinsics_j.K();
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(m);
  const Eigen::Vector3d sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(2) < 1e-9 * sv(0)) {
    return std::nullopt;
  }
  // A homography is defined up to scale, including sign.
  if (m.determinant() < 0.0) {
    m = -m;
  }
  return Eigen::Quaterniond(NearestRotation(m)).normalized();
}

double RotationAngle(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  const Eigen::Quaterniond d = a.conjugate() * b;
  return 2.0 * std::atan2(d.vec().norm(), std::abs(d.w()));
}

Eigen::Quaterniond ExpSO3(const Eigen::Vector3d& omega) {
  const double theta = omega.norm();
  const double half = 0.5 * theta;
  double scale;
  if (theta < 1e-8) {
    scale = 0.5 - theta * theta / 48.0;
  } else {
    scale = std::sin(half) / theta;
  }
  Eigen::Quaterniond q(std::cos(half), scale * omega.x(), scale * omega.y(),
                       scale * omega.z());
  return q.normalized();
}

Eigen::Vector3d LogSO3(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = q_in.normalized();
  if (q.w() < 0.0) {
    q.coeffs() = -q.coeffs();
  }
  const double vnorm = q.vec().norm();
  if (vnorm < 1e-12) {
    return 2.0 * q.vec();
  }
  const double theta = 2.0 * std::atan2(vnorm, q.w());
  return theta / vnorm * q.vec();
}

Eigen::Matrix3d Skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Eigen::Matrix<double, 3, 2> SphereTangentBasis(const Eigen::Vector3d& dir) {
  Eigen::Index axis = 0;
  dir.cwiseAbs().minCoeff(&axis);
  const Eigen::Vector3d helper = Eigen::Vector3d::Unit(axis);
  const Eigen::Vector3d b1 = dir.cross(helper).normalized();
  const Eigen::Vector3d b2 = dir.cross(b1).normalized();
  Eigen::Matrix<double, 3, 2> basis;
  basis.col(0) = b1;
  basis.col(1) = b2;
  return basis;
}

Eigen::Vector3d SpherePlus(const Eigen::Vector3d& dir,
                           const Eigen::Vector2d& delta) {
  const Eigen::Vector3d v = SphereTangentBasis(dir) * delta;
  const double theta = v.norm();
  if (theta < 1e-15) {
    return (dir + v).normalized();
  }
  return (std::cos(theta) * dir + std::sin(theta) / theta * v).normalized();
}

}  // namespace ptzcalib
