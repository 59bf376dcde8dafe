#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ptzcalib/io.h"
#include "ptzcalib/reconstruction.h"
#include "ptzcalib/solver.h"

namespace ptzcalib {

struct GeorefConfig {
  int min_annotations_per_view = 4;
  // Candidate transforms closer than this are averaged.
  double merge_angle_deg = 5.0;
  // Candidates further apart than this are inconsistent.
  double conflict_angle_deg = 15.0;
  SolverOptions solver;

  void Validate() const;
};

struct GeoReconstruction {
  Reconstruction reconstruction;
  // World to local.
  RigidTransform transform;
  Eigen::Vector3d world_center = Eigen::Vector3d::Zero();
};

struct TransformEstimate {
  std::optional<RigidTransform> transform;
  std::string error;
  // One per annotated view that produced a candidate.
  std::vector<RigidTransform> candidates;
};

// World pose of one view from 2D-3D annotations, with the view's intrinsics
// held at their calibrated values. Returns nullopt on degenerate input.
std::optional<RigidTransform> SolveViewPnP(const ViewParams& view,
                                           const std::vector<Annotation>& annotations);

TransformEstimate EstimateInitialTransform(const Reconstruction& recon,
                                           const std::vector<Annotation>& annotations,
                                           const GeorefConfig& config);

// Sum of annotation reprojection errors (pixels) under `transform`.
double AnnotationError(const Reconstruction& recon,
                       const std::vector<Annotation>& annotations,
                       const RigidTransform& transform);

struct GeorefResult {
  std::optional<GeoReconstruction> geo;
  SolveReport report;
  // Post-solve annotation residual norms, in input order.
  std::vector<double> residuals_px;
  // Indices of annotations with residual above 3 Huber thresholds.
  std::vector<int> flagged;
};

// Joint refinement of every view, every landmark and the transform against
// landmark and annotation reprojection errors.
GeorefResult GeorefBundleAdjust(const Reconstruction& recon,
                                const std::vector<Annotation>& annotations,
                                const RigidTransform& initial,
                                const GeorefConfig& config);

// World-frame pose: rotation world->camera and the world center. Throws
// std::out_of_range for an unknown view.
ViewParams AbsolutePose(const GeoReconstruction& geo, ViewId view);

GeoReconstruction MakeGeoReconstruction(Reconstruction recon,
                                        const RigidTransform& transform);

}  // namespace ptzcalib
