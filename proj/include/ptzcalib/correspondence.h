#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ptzcalib/geometry.h"

namespace ptzcalib {

// Paper-given verification settings: 4 px threshold, 40 surviving pairs.
inline constexpr double kDefaultRansacThresholdPx = 4.0;
inline constexpr int kMinVerifiedMatches = 40;

struct ViewInfo {
  ViewId id = 0;
  int width = 0;
  int height = 0;
};

struct Keypoint {
  ViewId view_id = 0;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
};

struct MatchSet {
  ViewId view_a = 0;
  ViewId view_b = 0;
  // Indices into the keypoint lists of view_a and view_b.
  std::vector<std::pair<int, int>> pairs;
  // Maps view_a pixels to view_b pixels once verified.
  std::optional<Eigen::Matrix3d> homography;
};

struct TrackElement {
  ViewId view_id = 0;
  int keypoint = 0;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
};

struct Track {
  TrackId id = 0;
  // Sorted by (view_id, keypoint).
  std::vector<TrackElement> elements;
  // More than one keypoint of some view.
  bool conflicted = false;

  size_t Length() const { return elements.size(); }
  const TrackElement* Find(ViewId view) const;
};

// Views, deduplicated per-view keypoints and pairwise match sets. Edge weight
// is the number of pairs of the (verified) match set.
class MatchGraph {
 public:
  void AddView(const ViewInfo& view);
  bool HasView(ViewId id) const { return views_.count(id) > 0; }
  const ViewInfo& View(ViewId id) const { return views_.at(id); }
  const std::map<ViewId, ViewInfo>& Views() const { return views_; }

  // Returns the index of the keypoint, reusing an identical position.
  int AddKeypoint(ViewId view, const Eigen::Vector2d& position);
  const std::vector<Eigen::Vector2d>& Keypoints(ViewId view) const;

  // Throws std::invalid_argument on a self edge, duplicate edge or bad index.
  void AddMatchSet(MatchSet match_set);
  const std::vector<MatchSet>& MatchSets() const { return match_sets_; }

  const MatchSet* Find(ViewId a, ViewId b) const;
  int Weight(ViewId a, ViewId b) const;
  // Sum of incident edge weights.
  int TotalWeight(ViewId view) const;
  std::vector<ViewId> Neighbors(ViewId view) const;

  // Copy with the same views and keypoints but no edges.
  MatchGraph WithoutEdges() const;

 private:
  std::map<ViewId, ViewInfo> views_;
  std::map<ViewId, std::vector<Eigen::Vector2d>> keypoints_;
  std::map<ViewId, std::map<std::pair<double, double>, int>> keypoint_index_;
  std::vector<MatchSet> match_sets_;
  std::map<std::pair<ViewId, ViewId>, size_t> edge_index_;
  std::map<ViewId, std::vector<std::pair<ViewId, size_t>>> adjacency_;
};

struct RansacOptions {
  double threshold_px = kDefaultRansacThresholdPx;
  int min_inliers = kMinVerifiedMatches;
  int max_iterations = 2000;
  double confidence = 0.999;
  uint64_t seed = 0;
};

// Direct linear transform on normalized coordinates; `from` -> `to`.
std::optional<Eigen::Matrix3d> FitHomography(
    const std::vector<Eigen::Vector2d>& from,
    const std::vector<Eigen::Vector2d>& to);

// RMS of the forward (a -> b) and backward transfer distances, pixels.
double SymmetricTransferError(const Eigen::Matrix3d& h,
                              const Eigen::Vector2d& a,
                              const Eigen::Vector2d& b);

// RANSAC homography verification of one edge. Returns the inlier match set
// carrying the homography, or nullopt when the edge is discarded.
std::optional<MatchSet> VerifyHomography(const MatchGraph& graph,
                                         const MatchSet& match_set,
                                         const RansacOptions& options);

// Verifies every edge; RANSAC seeds are derived from options.seed and the
// edge's view ids so the result is independent of processing order.
MatchGraph VerifyGraph(const MatchGraph& graph, const RansacOptions& options);

// Connected components of the keypoint match relation (union-find).
std::vector<Track> BuildTracks(const MatchGraph& graph);

// Drops conflicted tracks and tracks shorter than `min_track_len`.
std::vector<Track> FilterTracks(const std::vector<Track>& tracks,
                                size_t min_track_len);

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Match interchange file:
// {"views": [{"id", "width", "height"}],
//  "matches": [{"view_a", "view_b", "pairs": [[xa, ya, xb, yb], ...]}]}
MatchGraph LoadMatches(const std::filesystem::path& path);
MatchGraph ParseMatches(const std::string& text);
void SaveMatches(const MatchGraph& graph, const std::filesystem::path& path);
std::string SerializeMatches(const MatchGraph& graph);

}  // namespace ptzcalib
