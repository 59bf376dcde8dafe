#pragma once

#include <Eigen/Core>

#include "ptzcalib/solver.h"

namespace ptzcalib {

// Parameter blocks shared by the reprojection residuals:
//   focal      [f]                    euclidean
//   distortion [k1, k2, p1, p2]       euclidean
//   rotation   [w, x, y, z]           rotation (world -> camera)

// Residual pi(P_i, r_k) - x_ik for a ray landmark.
// Blocks: focal, distortion, rotation, ray (unit vector).
class RayReprojectionCost : public CostFunction {
 public:
  RayReprojectionCost(const Eigen::Vector2d& observed, double cx, double cy)
      : observed_(observed), cx_(cx), cy_(cy) {}

  int NumResiduals() const override { return 2; }
  std::vector<BlockLayout> Layout() const override;
  bool Evaluate(std::span<const double* const> parameters, double* residuals,
                std::span<double* const> jacobians) const override;

 private:
  Eigen::Vector2d observed_;
  double cx_;
  double cy_;
};

// Residual pi(P_i, T * X_j) - x_ij for an annotated world point, with T the
// world-to-local rigid transform.
// Blocks: focal, distortion, rotation, transform rotation, transform
// translation (3).
class PointReprojectionCost : public CostFunction {
 public:
  PointReprojectionCost(const Eigen::Vector2d& observed,
                        const Eigen::Vector3d& world_point, double cx,
                        double cy)
      : observed_(observed), world_point_(world_point), cx_(cx), cy_(cy) {}

  int NumResiduals() const override { return 2; }
  std::vector<BlockLayout> Layout() const override;
  bool Evaluate(std::span<const double* const> parameters, double* residuals,
                std::span<double* const> jacobians) const override;

 private:
  Eigen::Vector2d observed_;
  Eigen::Vector3d world_point_;
  double cx_;
  double cy_;
};

}  // namespace ptzcalib
