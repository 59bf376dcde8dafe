#pragma once

#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ptzcalib {

using ViewId = int;
using TrackId = int;

// Camera-frame depth below which a point is treated as behind the camera.
inline constexpr double kMinDepth = 1e-6;

// Sanity bounds on the Brown distortion coefficients.
inline constexpr double kMaxRadialCoeff = 1.0;
inline constexpr double kMaxTangentialCoeff = 0.1;

// Square pixels, zero skew, principal point at the image center.
struct Intrinsics {
  double f = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;
  int width = 0;
  int height = 0;

  static Intrinsics Centered(int width, int height, double f);

  Eigen::Matrix3d K() const;
  Eigen::Matrix3d InverseK() const;
  bool IsValid() const;
  bool HasDistortion() const;

  // Squared undistorted radius beyond which the radial polynomial stops being
  // monotone (infinity when it never folds over).
  double MonotoneRadius2() const;
};

// World-to-camera rotation and projection center. All views of one PTZ camera
// share the center, which is the origin of the local frame.
struct PoseLocal {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
};

struct ViewParams {
  Intrinsics intrinsics;
  PoseLocal pose;
};

struct RayLandmark {
  Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();

  // Normalizes `v`; returns nullopt for a zero or non-finite vector.
  static std::optional<RayLandmark> FromVector(const Eigen::Vector3d& v);
};

// X_local = rotation * X_world + translation.
struct RigidTransform {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d operator*(const Eigen::Vector3d& x) const {
    return rotation * x + translation;
  }
  RigidTransform operator*(const RigidTransform& other) const;
  RigidTransform Inverse() const;
};

// Full imaging chain: rigid transform, perspective divide, distortion,
// intrinsics. nullopt when the point is behind the camera or non-finite.
std::optional<Eigen::Vector2d> ProjectPoint(const ViewParams& view,
                                            const Eigen::Vector3d& point);

// ProjectPoint with X = C + r.
std::optional<Eigen::Vector2d> ProjectRay(const ViewParams& view,
                                          const RayLandmark& ray);

// Projects a camera-frame point; shared by the two functions above.
std::optional<Eigen::Vector2d> ProjectCameraPoint(const Intrinsics& intrinsics,
                                                  const Eigen::Vector3d& point);

// Inverse of the imaging chain. nullopt when undistortion fails to converge.
std::optional<RayLandmark> PixelToRay(const ViewParams& view,
                                      const Eigen::Vector2d& pixel);

// Normalized camera coordinates of an undistorted pixel (inverse of K and of
// the distortion), or nullopt on non-convergence.
std::optional<Eigen::Vector2d> PixelToNormalized(const Intrinsics& intrinsics,
                                                 const Eigen::Vector2d& pixel);

Eigen::Vector2d Distort(const Eigen::Vector2d& normalized,
                        const Intrinsics& intrinsics);

// d(distorted) / d(normalized).
Eigen::Matrix2d DistortJacobian(const Eigen::Vector2d& normalized,
                                const Intrinsics& intrinsics);

// d(distorted) / d(k1, k2, p1, p2).
Eigen::Matrix<double, 2, 4> DistortCoeffJacobian(
    const Eigen::Vector2d& normalized);

std::optional<Eigen::Vector2d> Undistort(const Eigen::Vector2d& distorted,
                                         const Intrinsics& intrinsics);

// Nearest rotation (Frobenius) to K_i^-1 H_ij K_j. For x_i ~ H_ij x_j this is
// R_i R_j^T. nullopt for a rank-deficient or non-finite homography.
std::optional<Eigen::Quaterniond> RotationFromHomography(
    const Intrinsics& intrinsics_i, const Eigen::Matrix3d& homography,
    const Intrinsics& intrinsics_j);

// Nearest proper rotation to `m` under the Frobenius norm.
Eigen::Matrix3d NearestRotation(const Eigen::Matrix3d& m);

// Geodesic angle between two rotations, radians.
double RotationAngle(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b);

// Rotation exp map (axis * angle) and its inverse.
Eigen::Quaterniond ExpSO3(const Eigen::Vector3d& omega);
Eigen::Vector3d LogSO3(const Eigen::Quaterniond& q);

Eigen::Matrix3d Skew(const Eigen::Vector3d& v);

// Orthonormal basis of the tangent plane of the unit sphere at `dir`.
Eigen::Matrix<double, 3, 2> SphereTangentBasis(const Eigen::Vector3d& dir);

// Moves `dir` along the great circle given by the tangent step `delta`.
Eigen::Vector3d SpherePlus(const Eigen::Vector3d& dir,
                           const Eigen::Vector2d& delta);

}  // namespace ptzcalib
