#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ptzcalib/geometry.h"

namespace ptzcalib {

double FocalLengthError(double pred_f, double true_f);

struct PoseError {
  double rotation_deg = 0.0;
  double translation_m = 0.0;
};

// Both poses world-to-camera with their projection centers in one frame.
PoseError AbsolutePoseError(const PoseLocal& pred, const PoseLocal& truth);

// Local-frame parameters moved into the world frame of `transform` (world to
// local).
ViewParams ToWorld(const ViewParams& local, const RigidTransform& transform);

using Polygon2 = std::vector<Eigen::Vector2d>;

struct FootprintOptions {
  // Half-width of the square around the camera's ground position that bounds
  // above-horizon rays.
  double horizon_m = 10000.0;
  // Boundary samples per image side when the view has distortion.
  int samples_per_side = 64;
};

// Ground-plane (z = 0) region seen by a world-frame view, as a counter-
// clockwise polygon; empty when nothing below the horizon is visible. Throws
// std::invalid_argument when the camera is at or below the plane.
Polygon2 GroundFootprint(const ViewParams& view,
                         const FootprintOptions& options = {});

double PolygonArea(const Polygon2& polygon);
// Intersection of two simple polygons; may yield several pieces.
std::vector<Polygon2> PolygonIntersection(const Polygon2& a, const Polygon2& b);
// Area(A and B) / Area(A or B); 1 when both are empty.
double PolygonIoU(const Polygon2& a, const Polygon2& b);

enum class IouMode { kPart, kWhole };

struct IouOptions {
  FootprintOptions footprint;
  // Samples along the true footprint boundary in whole mode.
  int whole_boundary_samples = 64;
};

// Both views in the world frame. Part mode clips each footprint to the
// template; whole mode reprojects the true footprint into the image with both
// parameter sets and compares the image polygons.
double IouBev(const ViewParams& pred, const ViewParams& truth,
              const Polygon2& template_polygon, IouMode mode,
              const IouOptions& options = {});

struct ViewMetrics {
  int view_id = 0;
  double fle_px = 0.0;
  double ape_rot_deg = 0.0;
  std::optional<double> ape_trans_m;
  std::optional<double> iou_part;
  std::optional<double> iou_whole;
};

struct MetricReport {
  std::string scene;
  std::string stage;
  std::vector<ViewMetrics> views;
  // Truth views with no prediction.
  std::vector<int> missing;
};

struct Aggregate {
  double mean = 0.0;
  double median = 0.0;
  int count = 0;
};

Aggregate Summarize(std::vector<double> values);

// Per metric: {scene, stage, metric, mean, median, count} rows for every
// report plus an "all" row per stage and metric.
nlohmann::json SummarizeReports(const std::vector<MetricReport>& reports);

// Text table with one line per (scene, stage) and mean/median columns.
std::string FormatSummary(const nlohmann::json& summary);

}  // namespace ptzcalib
