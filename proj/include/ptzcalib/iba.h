#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ptzcalib/correspondence.h"
#include "ptzcalib/reconstruction.h"
#include "ptzcalib/solver.h"

namespace ptzcalib {

struct IbaConfig {
  double ba_growth_factor = 1.3;
  int max_register_attempts = 3;
  int min_inlier_landmarks = 12;
  double focal_init_multiplier = 1.2;
  // Rays of a track must all lie within this angle of their mean.
  double max_triangulation_angle_deg = 2.0;
  // Registered observations needed before a track becomes a landmark.
  int min_track_len = 2;
  bool share_distortion = false;
  SolverOptions solver;

  void Validate() const;
};

// View maximizing the summed weight of its incident edges; ties go to the
// smallest id.
std::optional<ViewId> SelectInitialFrame(const MatchGraph& graph,
                                         const std::set<ViewId>& exclude);

// Unregistered view with the most matches to registered views, skipping views
// that exhausted their registration attempts.
std::optional<ViewId> NextBestView(const Reconstruction& recon,
                                   const MatchGraph& graph,
                                   const IbaConfig& config);

// Seeds a reconstruction from two views sharing a verified edge. `tracks` are
// the filtered candidate tracks of the whole graph.
std::optional<Reconstruction> InitializePair(const MatchGraph& graph,
                                             const std::vector<Track>& tracks,
                                             ViewId frame0, ViewId frame1,
                                             const IbaConfig& config);

struct RegistrationResult {
  bool ok = false;
  int correspondences = 0;
  int inliers = 0;
  std::string reason;
};

// Solves one view against the fixed landmarks it observes. On failure the
// view's attempt counter is incremented.
RegistrationResult RegisterImage(Reconstruction* recon, ViewId view,
                                 const MatchGraph& graph,
                                 const IbaConfig& config);

// Mean of the per-view rays of a track's registered observations.
std::optional<RayLandmark> TriangulateRays(const Reconstruction& recon,
                                           const Track& track,
                                           const IbaConfig& config);

// Triangulates every track that is not yet a landmark; returns the count.
int TriangulateNewTracks(Reconstruction* recon, const IbaConfig& config);

// Joint refinement of all registered views and landmarks with the first
// registered view's rotation fixed. Prunes landmarks whose observations
// reproject worse than 3 Huber thresholds.
SolveReport GlobalBundleAdjust(Reconstruction* recon, const IbaConfig& config);

// Incremental reconstruction from a verified match graph.
Reconstruction RunIba(const MatchGraph& graph, const IbaConfig& config);

// Returns a description of every violated reconstruction invariant.
std::vector<std::string> ValidateReconstruction(const Reconstruction& recon,
                                                const IbaConfig& config);

// Mean reprojection error (pixels) over all registered landmark observations.
double MeanReprojectionError(const Reconstruction& recon);

}  // namespace ptzcalib
