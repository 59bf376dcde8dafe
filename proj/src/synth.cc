#include "ptzcalib/synth.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace ptzcalib {

namespace {

constexpr double kDeg = M_PI / 180.0;

// Independent generator per stage so that changing one stage does not shift
// the random streams of the others.
std::mt19937_64 StageRng(uint64_t seed, uint64_t stage) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(stage)};
  return std::mt19937_64(seq);
}

// World frame has z up. Camera axes: x right, y down, z forward.
Eigen::Quaterniond PanTiltRotation(double pan, double tilt) {
  const Eigen::Vector3d forward(std::cos(tilt) * std::cos(pan),
                                std::cos(tilt) * std::sin(pan), std::sin(tilt));
  const Eigen::Vector3d right(std::sin(pan), -std::cos(pan), 0.0);
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.row(0) = right;
  r.row(1) = down;
  r.row(2) = forward;
  return Eigen::Quaterniond(r).normalized();
}

bool Inside(const Eigen::Vector2d& x, int width, int height) {
  return x.x() >= 0.0 && x.y() >= 0.0 && x.x() < width && x.y() < height;
}

}  // namespace

void SceneConfig::Validate() const {
  const auto require = [](bool ok, const char* what) {
    if (!ok) {
      throw std::invalid_argument(what);
    }
  };
  require(noise_sigma_px >= 0.0 && std::isfinite(noise_sigma_px),
          "noise_sigma_px must be >= 0");
  require(num_ref_views >= 2, "num_ref_views must be >= 2");
  require(num_views >= num_ref_views, "num_views must be >= num_ref_views");
  require(pan_range_deg > 0.0 && pan_range_deg <= 360.0,
          "pan_range_deg must be in (0, 360]");
  require(num_points > 0, "num_points must be > 0");
  require(min_radius_m > 0.0 && max_radius_m >= min_radius_m,
          "invalid point shell radii");
  require(min_elevation_deg < max_elevation_deg &&
              min_elevation_deg >= -90.0 && max_elevation_deg <= 90.0,
          "invalid elevation band");
  require(focal_min_px > 0.0 && focal_max_px >= focal_min_px,
          "invalid focal range");
  require(tilt_min_deg <= tilt_max_deg, "invalid tilt range");
  require(width > 0 && height > 0, "invalid image size");
  require(std::abs(k1_range) <= kMaxRadialCoeff &&
              std::abs(k2_range) <= kMaxRadialCoeff &&
              std::abs(p_range) <= kMaxTangentialCoeff,
          "distortion ranges exceed the coefficient bounds");
  require(num_annotated_views >= 0 && num_annotated_views <= num_ref_views,
          "invalid annotated view count");
  require(points_per_annotated_view >= 0, "invalid annotation count");
  require(min_shared_points >= 1, "min_shared_points must be >= 1");
  require(outlier_fraction >= 0.0, "outlier_fraction must be >= 0");
}

std::pair<std::vector<ViewId>, std::vector<ViewId>> HoldoutViews(
    const std::vector<ViewId>& views, int query_count) {
  const int total = static_cast<int>(views.size());
  if (query_count < 0 || query_count >= total) {
    throw std::invalid_argument("query count must be in [0, number of views)");
  }
  const int num_refs = total - query_count;
  std::vector<char> is_ref(total, 0);
  for (int i = 0; i < num_refs; ++i) {
    is_ref[static_cast<int64_t>(i) * total / num_refs] = 1;
  }
  std::pair<std::vector<ViewId>, std::vector<ViewId>> out;
  for (int i = 0; i < total; ++i) {
    (is_ref[i] ? out.first : out.second).push_back(views[i]);
  }
  return out;
}

Scene GenerateScene(const SceneConfig& config) {
  config.Validate();
  Scene scene;
  scene.config = config;
  GroundTruth& truth = scene.truth;
  truth.seed = config.seed;
  truth.noise_sigma_px = config.noise_sigma_px;

  // Scene-level draws: schedules, lens, camera placement.
  std::mt19937_64 scene_rng = StageRng(config.seed, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double focal_span = config.focal_max_px - config.focal_min_px;
  const double focal_lo = config.focal_min_px + 0.25 * focal_span * unit(scene_rng);
  const double focal_hi = config.focal_max_px - 0.25 * focal_span * unit(scene_rng);
  const double zoom_phase = 2.0 * M_PI * unit(scene_rng);
  const double tilt_amplitude =
      std::min(config.tilt_amplitude_deg,
               0.5 * (config.tilt_max_deg - config.tilt_min_deg));
  const double tilt_base =
      config.tilt_min_deg + tilt_amplitude +
      (config.tilt_max_deg - config.tilt_min_deg - 2.0 * tilt_amplitude) *
          unit(scene_rng);
  const double tilt_phase = 2.0 * M_PI * unit(scene_rng);
  const double pan_offset = 2.0 * M_PI * unit(scene_rng);
  const auto symmetric = [&](double range) {
    return range * (2.0 * unit(scene_rng) - 1.0);
  };
  Intrinsics lens = Intrinsics::Centered(config.width, config.height, 1.0);
  lens.k1 = symmetric(config.k1_range);
  lens.k2 = symmetric(config.k2_range);
  lens.p1 = symmetric(config.p_range);
  lens.p2 = symmetric(config.p_range);
  const Eigen::Vector3d center(60.0 * unit(scene_rng) - 30.0,
                               60.0 * unit(scene_rng) - 30.0,
                               8.0 + 7.0 * unit(scene_rng));
  const double template_heading = 2.0 * M_PI * unit(scene_rng);

  // Views along the pan sweep.
  std::vector<ViewId> ids;
  for (int i = 0; i < config.num_views; ++i) {
    const double s = static_cast<double>(i) / config.num_views;
    const double pan = pan_offset + config.pan_range_deg * kDeg * s;
    const double phase = 2.0 * M_PI * s;
    const double tilt =
        (tilt_base + tilt_amplitude * std::sin(2.0 * phase + tilt_phase)) * kDeg;
    ViewParams view;
    view.intrinsics = lens;
    view.intrinsics.f =
        focal_lo + (focal_hi - focal_lo) * (0.5 + 0.5 * std::sin(phase + zoom_phase));
    view.pose.rotation = PanTiltRotation(pan, tilt);
    view.pose.center = center;
    truth.views[i] = view;
    ids.push_back(i);
  }
  std::tie(truth.reference_views, truth.query_views) =
      HoldoutViews(ids, config.num_views - config.num_ref_views);

  // The true local frame is the first reference camera's frame.
  const ViewParams& anchor = truth.views.at(truth.reference_views.front());
  truth.transform.rotation = anchor.pose.rotation;
  truth.transform.translation = -(anchor.pose.rotation * center);

  // Points on a shell around the camera, within an elevation band.
  std::mt19937_64 point_rng = StageRng(config.seed, 2);
  const double z_lo = std::sin(config.min_elevation_deg * kDeg);
  const double z_hi = std::sin(config.max_elevation_deg * kDeg);
  for (int j = 0; j < config.num_points; ++j) {
    const double z = z_lo + (z_hi - z_lo) * unit(point_rng);
    const double azimuth = 2.0 * M_PI * unit(point_rng);
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double radius =
        config.min_radius_m +
        (config.max_radius_m - config.min_radius_m) * unit(point_rng);
    truth.points[j] =
        center + radius * Eigen::Vector3d(rho * std::cos(azimuth),
                                          rho * std::sin(azimuth), z);
  }

  // Noisy observations. Points outside the monotone part of the distortion
  // polynomial are never observed.
  std::mt19937_64 noise_rng = StageRng(config.seed, 3);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double max_r2 = 0.9 * lens.MonotoneRadius2();
  for (const auto& [id, view] : truth.views) {
    auto& seen = scene.observations[id];
    for (const auto& [j, x] : truth.points) {
      const Eigen::Vector3d p = view.pose.rotation * (x - center);
      if (p.z() <= kMinDepth) {
        continue;
      }
      const Eigen::Vector2d n = p.head<2>() / p.z();
      if (n.squaredNorm() > max_r2) {
        continue;
      }
      const auto pixel = ProjectCameraPoint(view.intrinsics, p);
      if (!pixel || !Inside(*pixel, config.width, config.height)) {
        continue;
      }
      const Eigen::Vector2d noisy =
          *pixel + config.noise_sigma_px *
                       Eigen::Vector2d(noise(noise_rng), noise(noise_rng));
      if (!Inside(noisy, config.width, config.height)) {
        continue;
      }
      seen[j] = noisy;
    }
    if (static_cast<int>(seen.size()) < config.min_shared_points) {
      scene.warnings.push_back("view " + std::to_string(id) + " observes only " +
                               std::to_string(seen.size()) + " points");
    }
  }

  std::mt19937_64 outlier_rng = StageRng(config.seed, 4);
  std::uniform_real_distribution<double> ux(0.0, config.width);
  std::uniform_real_distribution<double> uy(0.0, config.height);
  const auto add_view = [&](MatchGraph& graph, ViewId id) {
    if (!graph.HasView(id)) {
      graph.AddView({id, config.width, config.height});
    }
  };
  const auto add_edge = [&](MatchGraph& graph, ViewId a, ViewId b) {
    const auto& oa = scene.observations.at(a);
    const auto& ob = scene.observations.at(b);
    MatchSet m{a, b, {}, std::nullopt};
    for (const auto& [j, xa] : oa) {
      const auto it = ob.find(j);
      if (it != ob.end()) {
        m.pairs.emplace_back(j, 0);
      }
    }
    if (static_cast<int>(m.pairs.size()) < config.min_shared_points) {
      return;
    }
    add_view(graph, a);
    add_view(graph, b);
    for (auto& [ia, ib] : m.pairs) {
      const int j = ia;
      ia = graph.AddKeypoint(a, oa.at(j));
      ib = graph.AddKeypoint(b, ob.at(j));
    }
    const int outliers =
        static_cast<int>(std::lround(config.outlier_fraction * m.pairs.size()));
    for (int k = 0; k < outliers; ++k) {
      const int ia = graph.AddKeypoint(a, {ux(outlier_rng), uy(outlier_rng)});
      const int ib = graph.AddKeypoint(b, {ux(outlier_rng), uy(outlier_rng)});
      m.pairs.emplace_back(ia, ib);
    }
    graph.AddMatchSet(std::move(m));
  };

  for (const ViewId id : truth.reference_views) {
    add_view(scene.reference_matches, id);
  }
  for (size_t i = 0; i < truth.reference_views.size(); ++i) {
    for (size_t k = i + 1; k < truth.reference_views.size(); ++k) {
      add_edge(scene.reference_matches, truth.reference_views[i],
               truth.reference_views[k]);
    }
  }
  for (size_t i = 0; i < truth.query_views.size(); ++i) {
    const ViewId q = truth.query_views[i];
    add_view(scene.query_matches, q);
    for (const ViewId r : truth.reference_views) {
      add_edge(scene.query_matches, r, q);
    }
    if (i > 0) {
      add_edge(scene.query_matches, truth.query_views[i - 1], q);
    }
  }

  // Annotations on evenly spaced reference views.
  std::mt19937_64 annotation_rng = StageRng(config.seed, 5);
  const int num_refs = static_cast<int>(truth.reference_views.size());
  for (int a = 0; a < config.num_annotated_views; ++a) {
    const ViewId id = truth.reference_views[a * num_refs / config.num_annotated_views];
    std::vector<int> candidates;
    for (const auto& [j, pixel] : scene.observations.at(id)) {
      candidates.push_back(j);
    }
    std::shuffle(candidates.begin(), candidates.end(), annotation_rng);
    const int count = std::min<int>(config.points_per_annotated_view,
                                    static_cast<int>(candidates.size()));
    std::sort(candidates.begin(), candidates.begin() + count);
    for (int k = 0; k < count; ++k) {
      const int j = candidates[k];
      scene.annotations.push_back(
          {id, scene.observations.at(id).at(j), truth.points.at(j)});
    }
  }

  // A 105 x 68 m field on the ground in front of the camera.
  const Eigen::Vector2d along(std::cos(template_heading), std::sin(template_heading));
  const Eigen::Vector2d across(-along.y(), along.x());
  const Eigen::Vector2d field_center = center.head<2>() + 60.0 * along;
  for (const auto& [s, t] : std::vector<std::pair<double, double>>{
           {-1, -1}, {1, -1}, {1, 1}, {-1, 1}}) {
    truth.template_polygon.push_back(field_center + 34.0 * s * along +
                                     52.5 * t * across);
  }
  return scene;
}

void WriteScene(const Scene& scene, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  WriteFile(dir / "matches.json", SerializeMatches(scene.reference_matches));
  WriteFile(dir / "query_matches.json", SerializeMatches(scene.query_matches));
  WriteFile(dir / "annotations.json", SerializeAnnotations(scene.annotations));
  WriteFile(dir / "truth.json", SerializeGroundTruth(scene.truth));
}

}  // namespace ptzcalib
