#include "ptzcalib/online.h"

#include <stdexcept>

namespace ptzcalib {

namespace {

const std::vector<std::pair<TrackId, Eigen::Vector2d>> kNoObservations;

std::optional<Eigen::Matrix3d> HomographyBetween(const MatchGraph& graph,
                                                 ViewId from, ViewId to) {
  const MatchSet* m = graph.Find(from, to);
  if (m == nullptr || !m->homography) {
    return std::nullopt;
  }
  return m->view_a == from ? *m->homography : Eigen::Matrix3d(m->homography->inverse());
}

// Reference parameters moved by the homography-derived relative rotation.
ViewParams EstimateFromReference(const ViewParams& ref, const MatchGraph& graph,
                                 ViewId ref_id, ViewId query) {
  ViewParams estimate = ref;
  const ViewInfo& info = graph.View(query);
  estimate.intrinsics.width = info.width;
  estimate.intrinsics.height = info.height;
  estimate.intrinsics.cx = info.width / 2.0;
  estimate.intrinsics.cy = info.height / 2.0;
  if (const auto h = HomographyBetween(graph, ref_id, query)) {
    if (const auto r = RotationFromHomography(estimate.intrinsics, *h, ref.intrinsics)) {
      estimate.pose.rotation = (*r * ref.pose.rotation).normalized();
    }
  }
  return estimate;
}

std::optional<ViewSolveResult> SolveChecked(const ViewParams& initial,
                                            const std::vector<RayObservation>& obs,
                                            const OnlineConfig& config,
                                            bool fix_distortion) {
  if (static_cast<int>(obs.size()) < config.min_inlier_landmarks) {
    return std::nullopt;
  }
  ViewSolveResult solved =
      SolveViewAgainstRays(initial, obs, config.solver, fix_distortion);
  if (!solved.report.Usable()) {
    return std::nullopt;
  }
  return solved;
}

}  // namespace

ReferenceDatabase::ReferenceDatabase(Reconstruction recon) : recon_(std::move(recon)) {
  for (const auto& [track_id, ray] : recon_.landmarks) {
    for (const TrackElement* e : recon_.RegisteredObservations(track_id)) {
      index_[e->view_id].emplace_back(track_id, e->position);
      by_pixel_[e->view_id][{e->position.x(), e->position.y()}] = track_id;
    }
  }
}

const std::vector<std::pair<TrackId, Eigen::Vector2d>>& ReferenceDatabase::Observations(
    ViewId id) const {
  const auto it = index_.find(id);
  return it == index_.end() ? kNoObservations : it->second;
}

std::optional<RayLandmark> ReferenceDatabase::LandmarkAt(
    ViewId id, const Eigen::Vector2d& pixel) const {
  const auto view = by_pixel_.find(id);
  if (view == by_pixel_.end()) {
    return std::nullopt;
  }
  const auto it = view->second.find({pixel.x(), pixel.y()});
  if (it == view->second.end()) {
    return std::nullopt;
  }
  return recon_.landmarks.at(it->second);
}

void OnlineConfig::Validate() const {
  if (!(overlap_threshold >= 0.0 && overlap_threshold <= 1.0)) {
    throw std::invalid_argument("overlap_threshold must be in [0, 1]");
  }
  if (overlap_grid < 1) {
    throw std::invalid_argument("overlap_grid must be >= 1");
  }
  if (min_inlier_landmarks < 1) {
    throw std::invalid_argument("min_inlier_landmarks must be >= 1");
  }
}

double FrustumOverlap(const ViewParams& a, const ViewParams& b, int grid) {
  const Intrinsics& ia = a.intrinsics;
  const Intrinsics& ib = b.intrinsics;
  const double max_r2 = ib.MonotoneRadius2();
  int valid = 0;
  int inside = 0;
  for (int j = 0; j < grid; ++j) {
    for (int i = 0; i < grid; ++i) {
      const Eigen::Vector2d px((i + 0.5) * ia.width / grid, (j + 0.5) * ia.height / grid);
      const auto ray = PixelToRay(a, px);
      if (!ray) {
        continue;
      }
      ++valid;
      const Eigen::Vector3d c = b.pose.rotation * ray->dir;
      if (c.z() <= 0.0 || (c.head<2>() / c.z()).squaredNorm() > max_r2) {
        continue;
      }
      const auto q = ProjectCameraPoint(ib, c);
      inside += q && q->x() >= 0.0 && q->x() < ib.width && q->y() >= 0.0 &&
                q->y() < ib.height;
    }
  }
  return valid > 0 ? static_cast<double>(inside) / valid : 0.0;
}

double SymmetricOverlap(const ViewParams& a, const ViewParams& b, int grid) {
  return std::min(FrustumOverlap(a, b, grid), FrustumOverlap(b, a, grid));
}

std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> PixelPairs(
    const MatchGraph& graph, ViewId from, ViewId to) {
  std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> out;
  const MatchSet* m = graph.Find(from, to);
  if (m == nullptr) {
    return out;
  }
  const auto& ka = graph.Keypoints(m->view_a);
  const auto& kb = graph.Keypoints(m->view_b);
  for (const auto& [a, b] : m->pairs) {
    if (m->view_a == from) {
      out.emplace_back(ka[a], kb[b]);
    } else {
      out.emplace_back(kb[b], ka[a]);
    }
  }
  return out;
}

std::optional<ViewSolveResult> BootstrapEstimate(const MatchGraph& graph,
                                                 ViewId query, ViewId previous,
                                                 const ViewParams& previous_params,
                                                 const OnlineConfig& config,
                                                 bool fix_distortion) {
  std::vector<RayObservation> obs;
  for (const auto& [prev_px, query_px] : PixelPairs(graph, previous, query)) {
    if (const auto ray = PixelToRay(previous_params, prev_px)) {
      obs.push_back({query_px, *ray});
    }
  }
  ViewParams initial = previous_params;
  const ViewInfo& info = graph.View(query);
  initial.intrinsics.width = info.width;
  initial.intrinsics.height = info.height;
  auto solved = SolveChecked(initial, obs, config, fix_distortion);
  if (!solved || solved->inliers < config.min_inlier_landmarks) {
    return std::nullopt;
  }
  return solved;
}

ViewId SelectReference(const ViewParams& estimate, ViewId query,
                       const MatchGraph& graph, const ReferenceDatabase& db,
                       const OnlineConfig& config, double* overlap) {
  if (db.views().empty()) {
    throw std::invalid_argument("reference database is empty");
  }
  ViewId best = -1;
  int best_matches = -1;
  double best_overlap = -1.0;
  ViewId widest = -1;
  double widest_overlap = -1.0;
  for (const ViewId ref : db.views()) {
    const double o = SymmetricOverlap(estimate, db.View(ref), config.overlap_grid);
    if (o > widest_overlap || (o == widest_overlap && ref < widest)) {
      widest = ref;
      widest_overlap = o;
    }
    if (o < config.overlap_threshold) {
      continue;
    }
    const int matches = graph.HasView(ref) ? graph.Weight(query, ref) : 0;
    if (matches > best_matches || (matches == best_matches && o > best_overlap)) {
      best = ref;
      best_matches = matches;
      best_overlap = o;
    }
  }
  if (best < 0 || best_matches <= 0) {
    best = widest;
    best_overlap = widest_overlap;
  }
  if (overlap != nullptr) {
    *overlap = best_overlap;
  }
  return best;
}

std::optional<ViewSolveResult> Localize(const MatchGraph& graph, ViewId query,
                                        ViewId ref, const ReferenceDatabase& db,
                                        const ViewParams& estimate,
                                        const OnlineConfig& config) {
  const ViewParams& ref_params = db.View(ref);
  std::vector<RayObservation> obs;
  for (const auto& [ref_px, query_px] : PixelPairs(graph, ref, query)) {
    std::optional<RayLandmark> ray = db.LandmarkAt(ref, ref_px);
    if (!ray) {
      ray = PixelToRay(ref_params, ref_px);
    }
    if (ray) {
      obs.push_back({query_px, *ray});
    }
  }
  auto solved =
      SolveChecked(estimate, obs, config, db.reconstruction().shared_distortion);
  if (!solved || solved->inliers < config.min_inlier_landmarks) {
    return std::nullopt;
  }
  return solved;
}

std::vector<QueryResult> LocalizeQueries(const ReferenceDatabase& db,
                                         const MatchGraph& graph,
                                         const std::vector<ViewId>& queries,
                                         const OnlineConfig& config) {
  config.Validate();
  const bool shared = db.reconstruction().shared_distortion;
  std::vector<QueryResult> results;
  std::optional<std::pair<ViewId, ViewParams>> previous;
  for (const ViewId query : queries) {
    QueryResult result;
    result.view_id = query;
    std::optional<ViewParams> estimate;
    if (config.sequential && previous) {
      if (const auto boot = BootstrapEstimate(graph, query, previous->first,
                                              previous->second, config, shared)) {
        estimate = boot->view;
        result.bootstrap_from = previous->first;
      }
    }
    if (!estimate) {
      // Fallback: start from the reference sharing the most matches.
      ViewId best = -1;
      int best_matches = 0;
      for (const ViewId ref : db.views()) {
        const int w = graph.HasView(ref) ? graph.Weight(query, ref) : 0;
        if (w > best_matches) {
          best = ref;
          best_matches = w;
        }
      }
      if (best < 0) {
        result.message = "no verified matches to any reference";
        results.push_back(result);
        continue;
      }
      estimate = EstimateFromReference(db.View(best), graph, best, query);
      if (const auto solved = Localize(graph, query, best, db, *estimate, config)) {
        estimate = solved->view;
      }
    }
    result.params = *estimate;
    result.reference =
        SelectReference(*estimate, query, graph, db, config, &result.overlap);
    if (const auto solved =
            Localize(graph, query, result.reference, db, *estimate, config)) {
      result.params = solved->view;
      result.inliers = solved->inliers;
      result.status = "localized";
    } else if (result.bootstrap_from >= 0) {
      result.status = "bootstrap_only";
      result.message = "too few inliers against the selected reference";
    } else {
      result.status = "failed";
      result.message = "too few inliers against the selected reference";
    }
    if (result.status != "failed") {
      previous = std::make_pair(query, result.params);
    }
    results.push_back(result);
  }
  return results;
}

}  // namespace ptzcalib
