#pragma once

#include <map>
#include <set>
#include <vector>

#include "ptzcalib/reconstruction.h"
#include "ptzcalib/solver.h"

namespace ptzcalib {

// One pixel observation of a known ray.
struct RayObservation {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  RayLandmark ray;
};

struct ViewSolveResult {
  ViewParams view;
  SolveReport report;
  // Observations reprojecting within the Huber threshold after the solve.
  int inliers = 0;
};

// Refines focal, distortion and rotation of one view against fixed rays,
// starting from `initial`. Distortion is held fixed when `fix_distortion`.
ViewSolveResult SolveViewAgainstRays(const ViewParams& initial,
                                     const std::vector<RayObservation>& observations,
                                     const SolverOptions& options,
                                     bool fix_distortion = false);

struct BundleOptions {
  // Views whose parameters are refined; empty means every registered view.
  std::set<ViewId> active_views;
  // Views whose rotation is held fixed (gauge).
  std::set<ViewId> fixed_rotations;
  bool refine_landmarks = true;
};

// Least-squares problem over a reconstruction's views and landmarks. Only
// registered observations of existing landmarks contribute.
class Bundle {
 public:
  struct Term {
    ViewId view = 0;
    TrackId track = 0;
    Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
    int residual_block = 0;
  };

  Bundle(const Reconstruction& recon, const BundleOptions& options,
         double huber_delta_px);

  Problem& problem() { return problem_; }
  const Problem& problem() const { return problem_; }
  const std::vector<Term>& terms() const { return terms_; }

  int FocalBlock(ViewId id) const { return focal_.at(id); }
  int DistortionBlock(ViewId id) const { return distortion_.at(id); }
  int RotationBlock(ViewId id) const { return rotation_.at(id); }

  // Copies the current block values into `recon` (renormalizing rotations
  // and rays).
  void WriteBack(Reconstruction* recon) const;

 private:
  Problem problem_;
  std::map<ViewId, int> focal_;
  std::map<ViewId, int> distortion_;
  std::map<ViewId, int> rotation_;
  std::map<TrackId, int> landmark_;
  std::vector<Term> terms_;
};

// Adds the coefficient sanity bounds to a distortion block and a positive
// lower bound to a focal block.
void BoundIntrinsics(Problem* problem, int focal_block, int distortion_block);

std::vector<double> DistortionValues(const Intrinsics& intrinsics);
void SetDistortion(const std::vector<double>& values, Intrinsics* intrinsics);
std::vector<double> QuaternionValues(const Eigen::Quaterniond& q);
Eigen::Quaterniond QuaternionFromValues(std::span<const double> values);

}  // namespace ptzcalib
