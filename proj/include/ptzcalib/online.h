#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ptzcalib/bundle.h"
#include "ptzcalib/correspondence.h"
#include "ptzcalib/reconstruction.h"

namespace ptzcalib {

// Calibrated reference views and their landmark observations.
class ReferenceDatabase {
 public:
  explicit ReferenceDatabase(Reconstruction recon);

  const Reconstruction& reconstruction() const { return recon_; }
  const std::vector<ViewId>& views() const { return recon_.registered; }
  const ViewParams& View(ViewId id) const { return recon_.views.at(id); }

  // Landmark observations (track id, pixel) of a reference view.
  const std::vector<std::pair<TrackId, Eigen::Vector2d>>& Observations(
      ViewId id) const;
  // Landmark observed at exactly `pixel` in view `id`, if any.
  std::optional<RayLandmark> LandmarkAt(ViewId id, const Eigen::Vector2d& pixel) const;

 private:
  Reconstruction recon_;
  std::map<ViewId, std::vector<std::pair<TrackId, Eigen::Vector2d>>> index_;
  std::map<ViewId, std::map<std::pair<double, double>, TrackId>> by_pixel_;
};

struct OnlineConfig {
  double overlap_threshold = 0.3;
  int overlap_grid = 16;
  int min_inlier_landmarks = 12;
  // Use the previous query frame to bootstrap the estimate.
  bool sequential = true;
  SolverOptions solver;

  void Validate() const;
};

// Fraction of an n x n grid of pixel centers of `a` whose rays land inside
// the image of `b` in front of it. Samples without a ray in `a` are ignored.
double FrustumOverlap(const ViewParams& a, const ViewParams& b, int grid = 16);
double SymmetricOverlap(const ViewParams& a, const ViewParams& b, int grid = 16);

// Verified pixel pairs (in `from`, in `to`) of the edge between two views.
std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> PixelPairs(
    const MatchGraph& graph, ViewId from, ViewId to);

// Solves the query against rays cast from the previous frame, starting at
// the previous frame's parameters. nullopt when there are too few matches.
std::optional<ViewSolveResult> BootstrapEstimate(const MatchGraph& graph,
                                                 ViewId query, ViewId previous,
                                                 const ViewParams& previous_params,
                                                 const OnlineConfig& config,
                                                 bool fix_distortion = false);

// Reference with the most verified matches among those whose symmetric
// overlap with `estimate` reaches the threshold; the highest-overlap
// reference when none does. Ties go to higher overlap, then smaller id.
ViewId SelectReference(const ViewParams& estimate, ViewId query,
                       const MatchGraph& graph, const ReferenceDatabase& db,
                       const OnlineConfig& config, double* overlap = nullptr);

// Solves the query against rays from reference `ref`: landmark rays where the
// reference pixel is a landmark observation, back-projected rays otherwise.
std::optional<ViewSolveResult> Localize(const MatchGraph& graph, ViewId query,
                                        ViewId ref, const ReferenceDatabase& db,
                                        const ViewParams& estimate,
                                        const OnlineConfig& config);

struct QueryResult {
  ViewId view_id = 0;
  // "localized", "bootstrap_only" or "failed".
  std::string status = "failed";
  ViewParams params;
  ViewId reference = -1;
  double overlap = 0.0;
  int inliers = 0;
  // Previous frame used for the estimate, -1 when the fallback was taken.
  ViewId bootstrap_from = -1;
  std::string message;
};

// Processes `queries` in order. `graph` holds verified query-reference and
// query-query edges.
std::vector<QueryResult> LocalizeQueries(const ReferenceDatabase& db,
                                         const MatchGraph& graph,
                                         const std::vector<ViewId>& queries,
                                         const OnlineConfig& config);

}  // namespace ptzcalib
