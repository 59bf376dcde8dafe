#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptzcalib/correspondence.h"
#include "ptzcalib/geometry.h"
#include "ptzcalib/reconstruction.h"

namespace ptzcalib {

// Camera record: {view_id, f, cx, cy, k1, k2, p1, p2, width, height,
// quaternion [w, x, y, z], center [x, y, z]}.
nlohmann::json CameraToJson(ViewId id, const ViewParams& view);
std::pair<ViewId, ViewParams> CameraFromJson(const nlohmann::json& record,
                                             const std::string& context);

nlohmann::json TransformToJson(const RigidTransform& transform);
RigidTransform TransformFromJson(const nlohmann::json& record,
                                 const std::string& context);

// Camera parameter file: {"cameras": [...], "transform": {...}?}. The
// reconstruction file is a superset and loads as one.
struct CameraFile {
  std::map<ViewId, ViewParams> cameras;
  std::optional<RigidTransform> transform;
  nlohmann::json diagnostics;
};

std::string SerializeCameras(const CameraFile& file);
CameraFile ParseCameras(const std::string& text);
CameraFile LoadCameras(const std::filesystem::path& path);

// Reconstruction file: cameras, landmarks {track_id, dir, observations
// [[view_id, u, v], ...]}, registration_log, ba_log, status and an optional
// transform. Only registered observations are written.
std::string SerializeReconstruction(const Reconstruction& recon);
Reconstruction ParseReconstruction(const std::string& text);
Reconstruction LoadReconstruction(const std::filesystem::path& path);

struct Annotation {
  ViewId view_id = 0;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  Eigen::Vector3d world_point = Eigen::Vector3d::Zero();
};

// Annotation file: {"annotations": [{view_id, u, v, X, Y, Z}, ...]}.
std::string SerializeAnnotations(const std::vector<Annotation>& annotations);
std::vector<Annotation> ParseAnnotations(const std::string& text);
std::vector<Annotation> LoadAnnotations(const std::filesystem::path& path);

// Synthetic ground truth. View poses are in the world frame.
struct GroundTruth {
  uint64_t seed = 0;
  double noise_sigma_px = 0.0;
  std::map<ViewId, ViewParams> views;
  std::vector<ViewId> reference_views;
  std::vector<ViewId> query_views;
  RigidTransform transform;
  std::map<int, Eigen::Vector3d> points;
  // Ground-plane polygon (z = 0) used by the BEV metrics.
  std::vector<Eigen::Vector2d> template_polygon;

  // View parameters expressed in the true local frame.
  ViewParams LocalView(ViewId id) const;
};

std::string SerializeGroundTruth(const GroundTruth& truth);
GroundTruth ParseGroundTruth(const std::string& text);
GroundTruth LoadGroundTruth(const std::filesystem::path& path);

std::string ReadFile(const std::filesystem::path& path);
// Creates missing parent directories.
void WriteFile(const std::filesystem::path& path, const std::string& text);

}  // namespace ptzcalib
