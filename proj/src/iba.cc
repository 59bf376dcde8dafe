#include "ptzcalib/iba.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ptzcalib/bundle.h"

namespace ptzcalib {

namespace {

constexpr size_t kRegistrationSeeds = 3;

// Homography mapping pixels of `from` to pixels of `to`, if verified.
std::optional<Eigen::Matrix3d> HomographyBetween(const MatchGraph& graph,
                                                 ViewId from, ViewId to) {
  const MatchSet* m = graph.Find(from, to);
  if (m == nullptr || !m->homography) {
    return std::nullopt;
  }
  if (m->view_a == from) {
    return *m->homography;
  }
  return m->homography->inverse();
}

// Focal of the target view implied by H ~ K_to R K_from^-1.
std::optional<double> FocalFromHomography(const Eigen::Matrix3d& h,
                                          const Intrinsics& from, double cx,
                                          double cy) {
  Eigen::Matrix3d center_inverse = Eigen::Matrix3d::Identity();
  center_inverse(0, 2) = -cx;
  center_inverse(1, 2) = -cy;
  const Eigen::Matrix3d g = center_inverse * h * from.K();
  const double scale = g.row(2).norm();
  if (!(scale > 0.0)) {
    return std::nullopt;
  }
  const double f = 0.5 * (g.row(0).norm() + g.row(1).norm()) / scale;
  if (!std::isfinite(f) || f <= 0.0) {
    return std::nullopt;
  }
  return f;
}

// Registered neighbors by decreasing edge weight, ties by smaller id.
std::vector<ViewId> RegisteredNeighbors(const Reconstruction& recon,
                                        const MatchGraph& graph, ViewId view) {
  std::vector<ViewId> out;
  for (const ViewId n : graph.Neighbors(view)) {
    if (recon.IsRegistered(n)) {
      out.push_back(n);
    }
  }
  std::sort(out.begin(), out.end(), [&](ViewId a, ViewId b) {
    const int wa = graph.Weight(view, a);
    const int wb = graph.Weight(view, b);
    return wa != wb ? wa > wb : a < b;
  });
  return out;
}

// Neighbor parameters composed with the homography-derived relative rotation.
ViewParams InitialFromNeighbor(const Reconstruction& recon,
                               const MatchGraph& graph, ViewId view,
                               ViewId neighbor) {
  const ViewParams& reference = recon.views.at(neighbor);
  const ViewInfo& info = graph.View(view);
  ViewParams initial;
  initial.intrinsics = reference.intrinsics;
  initial.intrinsics.width = info.width;
  initial.intrinsics.height = info.height;
  initial.intrinsics.cx = info.width / 2.0;
  initial.intrinsics.cy = info.height / 2.0;
  initial.pose.rotation = reference.pose.rotation;
  const auto h = HomographyBetween(graph, neighbor, view);
  if (!h) {
    return initial;
  }
  const double f_ref = reference.intrinsics.f;
  const auto f = FocalFromHomography(*h, reference.intrinsics,
                                     initial.intrinsics.cx,
                                     initial.intrinsics.cy);
  if (f && *f > 0.3 * f_ref && *f < 3.0 * f_ref) {
    initial.intrinsics.f = *f;
  }
  if (const auto r = RotationFromHomography(initial.intrinsics, *h,
                                            reference.intrinsics)) {
    initial.pose.rotation = (*r * reference.pose.rotation).normalized();
  }
  return initial;
}

std::optional<ViewId> NextBestViewExcluding(const Reconstruction& recon,
                                            const MatchGraph& graph,
                                            const IbaConfig& config,
                                            const std::set<ViewId>& skip) {
  std::optional<ViewId> best;
  int best_weight = 0;
  for (const auto& [id, info] : graph.Views()) {
    if (recon.IsRegistered(id) || skip.count(id)) {
      continue;
    }
    const auto it = recon.failed_attempts.find(id);
    if (it != recon.failed_attempts.end() &&
        it->second >= config.max_register_attempts) {
      continue;
    }
    int weight = 0;
    for (const ViewId n : graph.Neighbors(id)) {
      if (recon.IsRegistered(n)) {
        weight += graph.Weight(id, n);
      }
    }
    if (weight > best_weight) {
      best = id;
      best_weight = weight;
    }
  }
  return best;
}

}  // namespace

void IbaConfig::Validate() const {
  if (!(ba_growth_factor > 1.0)) {
    throw std::invalid_argument("ba_growth_factor must be > 1");
  }
  if (max_register_attempts < 1) {
    throw std::invalid_argument("max_register_attempts must be >= 1");
  }
  if (min_inlier_landmarks < 1) {
    throw std::invalid_argument("min_inlier_landmarks must be >= 1");
  }
  if (!(focal_init_multiplier > 0.0)) {
    throw std::invalid_argument("focal_init_multiplier must be > 0");
  }
  if (min_track_len < 2) {
    throw std::invalid_argument("min_track_len must be >= 2");
  }
  if (!(solver.huber_delta_px > 0.0)) {
    throw std::invalid_argument("huber_delta_px must be > 0");
  }
}

std::optional<ViewId> SelectInitialFrame(const MatchGraph& graph,
                                         const std::set<ViewId>& exclude) {
  std::optional<ViewId> best;
  int best_weight = 0;
  for (const auto& [id, info] : graph.Views()) {
    if (exclude.count(id)) {
      continue;
    }
    const int weight = graph.TotalWeight(id);
    if (weight > best_weight) {
      best = id;
      best_weight = weight;
    }
  }
  return best;
}

std::optional<ViewId> NextBestView(const Reconstruction& recon,
                                   const MatchGraph& graph,
                                   const IbaConfig& config) {
  return NextBestViewExcluding(recon, graph, config, {});
}

std::optional<Reconstruction> InitializePair(const MatchGraph& graph,
                                             const std::vector<Track>& tracks,
                                             ViewId frame0, ViewId frame1,
                                             const IbaConfig& config) {
  const MatchSet* edge = graph.Find(frame0, frame1);
  if (edge == nullptr ||
      static_cast<int>(edge->pairs.size()) < kMinVerifiedMatches) {
    return std::nullopt;
  }
  const auto h10 = HomographyBetween(graph, frame0, frame1);
  if (!h10) {
    return std::nullopt;
  }
  Reconstruction recon;
  recon.shared_distortion = config.share_distortion;
  for (const Track& t : tracks) {
    recon.tracks[t.id] = t;
  }
  for (const ViewId id : {frame0, frame1}) {
    const ViewInfo& info = graph.View(id);
    ViewParams view;
    view.intrinsics = Intrinsics::Centered(
        info.width, info.height,
        config.focal_init_multiplier * std::max(info.width, info.height));
    recon.views[id] = view;
    recon.registered.push_back(id);
  }
  const auto r10 = RotationFromHomography(recon.views[frame1].intrinsics, *h10,
                                          recon.views[frame0].intrinsics);
  if (!r10) {
    return std::nullopt;
  }
  recon.views[frame1].pose.rotation = *r10;
  // Rays from the initial focal guess can disagree by more than the
  // consistency gate; the pair BA and its pruning take over that role here.
  IbaConfig ungated = config;
  ungated.max_triangulation_angle_deg = 180.0;
  if (TriangulateNewTracks(&recon, ungated) < config.min_inlier_landmarks) {
    return std::nullopt;
  }
  const SolveReport report = GlobalBundleAdjust(&recon, config);
  if (!report.Usable() ||
      static_cast<int>(recon.landmarks.size()) < config.min_inlier_landmarks) {
    return std::nullopt;
  }
  recon.registration_log.push_back(
      {frame0, "seed", static_cast<int>(recon.landmarks.size())});
  recon.registration_log.push_back(
      {frame1, "seed", static_cast<int>(recon.landmarks.size())});
  return recon;
}

RegistrationResult RegisterImage(Reconstruction* recon, ViewId view,
                                 const MatchGraph& graph,
                                 const IbaConfig& config) {
  RegistrationResult result;
  const auto fail = [&](const std::string& reason) {
    result.ok = false;
    result.reason = reason;
    const int attempts = ++recon->failed_attempts[view];
    recon->registration_log.push_back(
        {view, attempts >= config.max_register_attempts ? "discarded" : "failed",
         result.inliers});
    return result;
  };

  std::vector<RayObservation> observations;
  std::vector<const Track*> observed_tracks;
  for (const auto& [track_id, ray] : recon->landmarks) {
    const auto it = recon->tracks.find(track_id);
    if (it == recon->tracks.end()) {
      continue;
    }
    if (const TrackElement* e = it->second.Find(view)) {
      observations.push_back({e->position, ray});
      observed_tracks.push_back(&it->second);
    }
  }
  result.correspondences = static_cast<int>(observations.size());
  if (result.correspondences < config.min_inlier_landmarks) {
    return fail("too few landmark correspondences");
  }

  const std::vector<ViewId> neighbors =
      RegisteredNeighbors(*recon, graph, view);
  if (neighbors.empty()) {
    return fail("no registered neighbor");
  }
  // Landmarks on either side of a not yet closed loop can disagree, and a
  // robust solve over both settles in between. Each of the strongest
  // neighbors seeds a solve on the landmarks it shares with the view; the
  // seed with the most inliers overall is refined on its inliers.
  const double delta = config.solver.huber_delta_px;
  std::optional<ViewSolveResult> best;
  std::string last_error;
  for (size_t i = 0; i < std::min<size_t>(neighbors.size(), kRegistrationSeeds);
       ++i) {
    std::vector<RayObservation> shared;
    for (size_t k = 0; k < observations.size(); ++k) {
      if (observed_tracks[k]->Find(neighbors[i]) != nullptr) {
        shared.push_back(observations[k]);
      }
    }
    if (static_cast<int>(shared.size()) < config.min_inlier_landmarks) {
      shared = observations;
    }
    ViewSolveResult solved = SolveViewAgainstRays(
        InitialFromNeighbor(*recon, graph, view, neighbors[i]), shared,
        config.solver, recon->shared_distortion);
    if (!solved.report.Usable()) {
      last_error = solved.report.message;
      continue;
    }
    solved.inliers = 0;
    for (const RayObservation& o : observations) {
      const auto px = ProjectRay(solved.view, RayLandmark{o.ray});
      solved.inliers += px && (*px - o.pixel).norm() < delta;
    }
    if (!best || solved.inliers > best->inliers) {
      best = std::move(solved);
    }
  }
  if (best && best->inliers >= config.min_inlier_landmarks) {
    std::vector<RayObservation> inliers;
    for (const RayObservation& o : observations) {
      const auto px = ProjectRay(best->view, RayLandmark{o.ray});
      if (px && (*px - o.pixel).norm() < delta) {
        inliers.push_back(o);
      }
    }
    ViewSolveResult refined = SolveViewAgainstRays(
        best->view, inliers, config.solver, recon->shared_distortion);
    if (refined.report.Usable() && refined.inliers >= config.min_inlier_landmarks) {
      best = std::move(refined);
    }
  }
  if (!best) {
    return fail("solver failure: " + last_error);
  }
  const ViewSolveResult& solved = *best;
  result.inliers = solved.inliers;
  if (solved.inliers < config.min_inlier_landmarks) {
    return fail("too few inliers");
  }
  recon->views[view] = solved.view;
  recon->registered.push_back(view);
  recon->registration_log.push_back({view, "registered", solved.inliers});
  result.ok = true;
  return result;
}

std::optional<RayLandmark> TriangulateRays(const Reconstruction& recon,
                                           const Track& track,
                                           const IbaConfig& config) {
  std::vector<Eigen::Vector3d> rays;
  for (const TrackElement& e : track.elements) {
    const auto it = recon.views.find(e.view_id);
    if (it == recon.views.end()) {
      continue;
    }
    const auto ray = PixelToRay(it->second, e.position);
    if (!ray) {
      return std::nullopt;
    }
    rays.push_back(ray->dir);
  }
  if (static_cast<int>(rays.size()) < config.min_track_len) {
    return std::nullopt;
  }
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (const Eigen::Vector3d& r : rays) {
    sum += r;
  }
  const Eigen::Vector3d mean = sum / static_cast<double>(rays.size());
  if (mean.norm() < 1e-6) {
    return std::nullopt;
  }
  const Eigen::Vector3d dir = mean.normalized();
  const double max_angle = config.max_triangulation_angle_deg * M_PI / 180.0;
  for (const Eigen::Vector3d& r : rays) {
    if (std::atan2(r.cross(dir).norm(), r.dot(dir)) > max_angle) {
      return std::nullopt;
    }
  }
  return RayLandmark{dir};
}

int TriangulateNewTracks(Reconstruction* recon, const IbaConfig& config) {
  int added = 0;
  for (const auto& [id, track] : recon->tracks) {
    if (recon->landmarks.count(id) || recon->rejected_tracks.count(id)) {
      continue;
    }
    int registered = 0;
    for (const TrackElement& e : track.elements) {
      registered += recon->IsRegistered(e.view_id);
    }
    if (registered < config.min_track_len) {
      continue;
    }
    if (const auto ray = TriangulateRays(*recon, track, config)) {
      recon->landmarks[id] = *ray;
      ++added;
    }
  }
  return added;
}

SolveReport GlobalBundleAdjust(Reconstruction* recon, const IbaConfig& config) {
  BundleOptions options;
  if (!recon->registered.empty()) {
    options.fixed_rotations.insert(recon->registered.front());
  }
  Bundle bundle(*recon, options, config.solver.huber_delta_px);
  const SolveReport report = Solve(bundle.problem(), config.solver);
  recon->ba_log.push_back({static_cast<int>(recon->registered.size()),
                           report.initial_cost, report.final_cost,
                           report.iterations, TerminationName(report.termination)});
  if (!report.Usable()) {
    return report;
  }
  bundle.WriteBack(recon);

  const double limit = 3.0 * config.solver.huber_delta_px;
  std::set<TrackId> prune;
  Eigen::VectorXd r;
  for (const Bundle::Term& term : bundle.terms()) {
    if (!bundle.problem().ResidualOf(term.residual_block, &r) || r.norm() > limit) {
      prune.insert(term.track);
    }
  }
  for (const TrackId id : prune) {
    recon->landmarks.erase(id);
    recon->rejected_tracks.insert(id);
  }
  return report;
}

Reconstruction RunIba(const MatchGraph& graph, const IbaConfig& config) {
  config.Validate();
  std::vector<Track> tracks = FilterTracks(BuildTracks(graph), 2);

  std::set<ViewId> failed_seeds;
  std::optional<Reconstruction> seeded;
  while (!seeded) {
    const auto seed = SelectInitialFrame(graph, failed_seeds);
    if (!seed) {
      Reconstruction failed;
      failed.status = "failed";
      return failed;
    }
    ViewId partner = -1;
    int best = 0;
    for (const ViewId n : graph.Neighbors(*seed)) {
      const int w = graph.Weight(*seed, n);
      if (w > best || (w == best && partner >= 0 && n < partner)) {
        partner = n;
        best = w;
      }
    }
    if (partner >= 0) {
      seeded = InitializePair(graph, tracks, *seed, partner, config);
    }
    if (!seeded) {
      failed_seeds.insert(*seed);
    }
  }
  Reconstruction recon = std::move(*seeded);

  size_t count_at_last_ba = recon.registered.size();
  std::set<ViewId> failed_since_success;
  bool adjusted_for_retry = false;
  while (true) {
    const auto next =
        NextBestViewExcluding(recon, graph, config, failed_since_success);
    if (!next) {
      // Views that failed since the last success get another attempt once
      // the current state has been refined.
      if (failed_since_success.empty() || adjusted_for_retry) {
        break;
      }
      GlobalBundleAdjust(&recon, config);
      TriangulateNewTracks(&recon, config);
      count_at_last_ba = recon.registered.size();
      failed_since_success.clear();
      adjusted_for_retry = true;
      continue;
    }
    const RegistrationResult result = RegisterImage(&recon, *next, graph, config);
    if (!result.ok) {
      failed_since_success.insert(*next);
      continue;
    }
    failed_since_success.clear();
    adjusted_for_retry = false;
    TriangulateNewTracks(&recon, config);
    if (recon.registered.size() >=
        config.ba_growth_factor * static_cast<double>(count_at_last_ba)) {
      GlobalBundleAdjust(&recon, config);
      count_at_last_ba = recon.registered.size();
    }
  }
  GlobalBundleAdjust(&recon, config);
  recon.status = recon.registered.size() == graph.Views().size() ? "ok" : "partial";
  return recon;
}

std::vector<std::string> ValidateReconstruction(const Reconstruction& recon,
                                                const IbaConfig& config) {
  std::vector<std::string> problems;
  std::map<ViewId, int> observed;
  for (const auto& [id, ray] : recon.landmarks) {
    if (std::abs(ray.dir.norm() - 1.0) > 1e-9) {
      problems.push_back("landmark " + std::to_string(id) + " is not unit-norm");
    }
    const auto obs = recon.RegisteredObservations(id);
    if (static_cast<int>(obs.size()) < config.min_track_len) {
      problems.push_back("landmark " + std::to_string(id) + " has " +
                         std::to_string(obs.size()) + " registered observations");
    }
    for (const TrackElement* e : obs) {
      ++observed[e->view_id];
    }
  }
  for (const auto& [id, view] : recon.views) {
    if (std::abs(view.pose.rotation.norm() - 1.0) > 1e-9) {
      problems.push_back("view " + std::to_string(id) + " rotation is not unit-norm");
    }
    if (view.pose.center != Eigen::Vector3d::Zero()) {
      problems.push_back("view " + std::to_string(id) + " center is not the origin");
    }
    if (!view.intrinsics.IsValid()) {
      problems.push_back("view " + std::to_string(id) + " has invalid intrinsics");
    }
    if (observed[id] == 0) {
      problems.push_back("view " + std::to_string(id) + " observes no landmark");
    }
  }
  if (recon.registered.size() != recon.views.size()) {
    problems.push_back("registered list does not match the view set");
  }
  return problems;
}

double MeanReprojectionError(const Reconstruction& recon) {
  double sum = 0.0;
  int count = 0;
  for (const auto& [id, ray] : recon.landmarks) {
    for (const TrackElement* e : recon.RegisteredObservations(id)) {
      const auto px = ProjectRay(recon.views.at(e->view_id), ray);
      if (px) {
        sum += (*px - e->position).norm();
        ++count;
      }
    }
  }
  return count > 0 ? sum / count : 0.0;
}

}  // namespace ptzcalib
