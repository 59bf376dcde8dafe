#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptzcalib/eval.h"
#include "ptzcalib/georef.h"
#include "ptzcalib/iba.h"
#include "ptzcalib/io.h"
#include "ptzcalib/online.h"
#include "ptzcalib/synth.h"

namespace ptzcalib {

// Every module's settings plus the one seed that drives all randomness.
struct PipelineConfig {
  uint64_t seed = 1;
  SceneConfig scene;
  RansacOptions ransac;
  IbaConfig iba;
  GeorefConfig georef;
  OnlineConfig online;
  IouOptions iou;

  // Copies `seed` into the scene and RANSAC settings.
  void ApplySeed();
  void Validate() const;
};

// Overrides fields of `config` from a JSON object with optional sections
// "scene", "ransac", "iba", "georef", "online", "solver" (applied to every
// stage) and a top-level "seed". Unknown keys raise ParseError.
void ApplyConfigJson(const nlohmann::json& doc, PipelineConfig* config);
PipelineConfig LoadPipelineConfig(const std::filesystem::path& path);

// Verifies the raw match graph and runs incremental bundle adjustment.
Reconstruction Calibrate(const MatchGraph& raw_matches, const PipelineConfig& config);

struct GeorefOutcome {
  GeorefResult result;
  std::string error;
};

GeorefOutcome Georeference(const Reconstruction& recon,
                           const std::vector<Annotation>& annotations,
                           const PipelineConfig& config);

// Queries are the views of `raw_matches` that are not registered in the
// database, in id order.
std::vector<QueryResult> LocalizeMatches(const Reconstruction& db,
                                         const MatchGraph& raw_matches,
                                         const PipelineConfig& config);

// Query parameters (localized and bootstrap-only) in the database frame,
// with the database transform and per-query status as diagnostics.
CameraFile QueryCameraFile(const std::vector<QueryResult>& results,
                           const Reconstruction& db);

// Reports per stage: reference views are "offline", query views "online".
// Without a transform the local frame is rotation-aligned to the truth and
// translation/IoU metrics are omitted.
std::vector<MetricReport> EvaluateCameras(const CameraFile& pred,
                                          const GroundTruth& truth,
                                          const std::string& scene,
                                          const IouOptions& iou, bool with_iou);

}  // namespace ptzcalib
