#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ptzcalib/correspondence.h"
#include "ptzcalib/io.h"

namespace ptzcalib {

struct SceneConfig {
  uint64_t seed = 1;
  int num_views = 180;
  int num_ref_views = 30;
  double pan_range_deg = 360.0;

  int num_points = 12000;
  double min_radius_m = 20.0;
  double max_radius_m = 100.0;
  double min_elevation_deg = -60.0;
  double max_elevation_deg = 40.0;

  // Per-scene zoom and tilt schedules are drawn inside these ranges.
  double focal_min_px = 1100.0;
  double focal_max_px = 2800.0;
  double tilt_min_deg = -22.0;
  double tilt_max_deg = -4.0;
  double tilt_amplitude_deg = 3.0;

  double noise_sigma_px = 3.0;
  // Symmetric ranges for the scene's lens distortion.
  double k1_range = 0.2;
  double k2_range = 0.05;
  double p_range = 0.01;

  int width = 1920;
  int height = 1080;

  int num_annotated_views = 2;
  int points_per_annotated_view = 30;

  // Pairs are emitted only between views sharing at least this many points.
  int min_shared_points = kMinVerifiedMatches;
  // Extra random pairs per emitted edge, as a fraction of its true pairs.
  double outlier_fraction = 0.0;

  // Throws std::invalid_argument describing the first violated invariant.
  void Validate() const;
};

struct Scene {
  SceneConfig config;
  GroundTruth truth;
  // Reference views only.
  MatchGraph reference_matches;
  // Query views against references and against the preceding query.
  MatchGraph query_matches;
  std::vector<Annotation> annotations;
  // Noisy observations keyed by hidden point id.
  std::map<ViewId, std::map<int, Eigen::Vector2d>> observations;
  std::vector<std::string> warnings;
};

// Splits view ids (in order) into evenly spaced references and the rest.
// Returns {references, queries}.
std::pair<std::vector<ViewId>, std::vector<ViewId>> HoldoutViews(
    const std::vector<ViewId>& views, int query_count);

Scene GenerateScene(const SceneConfig& config);

// Writes matches.json, query_matches.json, annotations.json and truth.json.
void WriteScene(const Scene& scene, const std::filesystem::path& dir);

}  // namespace ptzcalib
