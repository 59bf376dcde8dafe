#include "ptzcalib/eval.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <boost/geometry.hpp>
#include <boost/geometry/geometries/point_xy.hpp>
#include <boost/geometry/geometries/polygon.hpp>
#include <boost/geometry/geometries/multi_polygon.hpp>

namespace ptzcalib {
namespace {

namespace bg = boost::geometry;
using BgPoint = bg::model::d2::point_xy<double>;
using BgPolygon = bg::model::polygon<BgPoint, /*clockwise=*/false>;
using BgMulti = bg::model::multi_polygon<BgPolygon>;

BgPolygon ToBoost(const Polygon2& polygon) {
  BgPolygon out;
  for (const auto& p : polygon) bg::append(out.outer(), BgPoint(p.x(), p.y()));
  if (!polygon.empty()) {
    bg::append(out.outer(), BgPoint(polygon.front().x(), polygon.front().y()));
  }
  bg::correct(out);
  return out;
}

Polygon2 FromBoost(const BgPolygon& polygon) {
  Polygon2 out;
  const auto& ring = polygon.outer();
  for (size_t i = 0; i + 1 < ring.size(); ++i) {
    out.emplace_back(ring[i].x(), ring[i].y());
  }
  return out;
}

BgMulti Intersect(const BgMulti& a, const BgMulti& b) {
  BgMulti out;
  if (a.empty() || b.empty()) return out;
  bg::intersection(a, b, out);
  return out;
}

BgMulti Single(const Polygon2& polygon) {
  BgMulti out;
  if (polygon.size() >= 3) out.push_back(ToBoost(polygon));
  return out;
}

double IoU(const BgMulti& a, const BgMulti& b) {
  const double area_a = a.empty() ? 0.0 : bg::area(a);
  const double area_b = b.empty() ? 0.0 : bg::area(b);
  const double inter = bg::area(Intersect(a, b));
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 1.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// Image boundary pixels in order around the image.
std::vector<Eigen::Vector2d> BoundaryPixels(const Intrinsics& k, int per_side) {
  const double w = k.width;
  const double h = k.height;
  const Eigen::Vector2d corners[4] = {{0, 0}, {w, 0}, {w, h}, {0, h}};
  const int n = k.HasDistortion() ? std::max(per_side, 1) : 1;
  std::vector<Eigen::Vector2d> out;
  for (int side = 0; side < 4; ++side) {
    const Eigen::Vector2d& a = corners[side];
    const Eigen::Vector2d& b = corners[(side + 1) % 4];
    for (int i = 0; i < n; ++i) out.push_back(a + (b - a) * (double(i) / n));
  }
  return out;
}

// Convex polygon for {p : n.p + c <= 0} restricted to a box.
Polygon2 HalfPlaneInBox(const Eigen::Vector2d& n, double c,
                        const Eigen::Vector2d& lo, const Eigen::Vector2d& hi) {
  Polygon2 box = {lo, {hi.x(), lo.y()}, hi, {lo.x(), hi.y()}};
  Polygon2 out;
  for (size_t i = 0; i < box.size(); ++i) {
    const Eigen::Vector2d& p = box[i];
    const Eigen::Vector2d& q = box[(i + 1) % box.size()];
    const double sp = n.dot(p) + c;
    const double sq = n.dot(q) + c;
    if (sp <= 0.0) out.push_back(p);
    if ((sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0)) {
      out.push_back(p + (q - p) * (sp / (sp - sq)));
    }
  }
  return out;
}

}  // namespace

double FocalLengthError(double pred_f, double true_f) {
  return std::abs(pred_f - true_f);
}

PoseError AbsolutePoseError(const PoseLocal& pred, const PoseLocal& truth) {
  PoseError error;
  error.rotation_deg = RotationAngle(pred.rotation, truth.rotation) * 180.0 / M_PI;
  error.translation_m = (pred.center - truth.center).norm();
  return error;
}

ViewParams ToWorld(const ViewParams& local, const RigidTransform& transform) {
  ViewParams out = local;
  out.pose.rotation = (local.pose.rotation * transform.rotation).normalized();
  out.pose.center = transform.Inverse() * local.pose.center;
  return out;
}

Polygon2 GroundFootprint(const ViewParams& view,
                         const FootprintOptions& options) {
  const Eigen::Vector3d& c = view.pose.center;
  if (!(c.z() > 0.0)) {
    throw std::invalid_argument("camera is at or below the ground plane");
  }
  const Eigen::Matrix3d r_t = view.pose.rotation.toRotationMatrix().transpose();

  Polygon2 normalized;
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(1e300);
  Eigen::Vector2d hi = Eigen::Vector2d::Constant(-1e300);
  for (const auto& px : BoundaryPixels(view.intrinsics, options.samples_per_side)) {
    const auto x = PixelToNormalized(view.intrinsics, px);
    if (!x) continue;
    normalized.push_back(*x);
    lo = lo.cwiseMin(*x);
    hi = hi.cwiseMax(*x);
  }
  if (normalized.size() < 3) return {};

  // World z of the ray through normalized (x, y): a x + b y + e. Keep rays
  // steep enough that they land at least 1.5 horizons away.
  const Eigen::Vector3d zrow = r_t.row(2);
  const double steep = c.z() / std::hypot(c.z(), 1.5 * options.horizon_m);
  const Polygon2 below = HalfPlaneInBox(zrow.head<2>(), zrow.z() + steep,
                                        lo.array() - 1.0, hi.array() + 1.0);
  if (below.size() < 3) return {};
  const BgMulti clipped = Intersect(Single(normalized), Single(below));

  const Eigen::Vector2d g(c.x(), c.y());
  const double hz = options.horizon_m;
  const BgMulti horizon_box =
      Single({g + Eigen::Vector2d(-hz, -hz), g + Eigen::Vector2d(hz, -hz),
              g + Eigen::Vector2d(hz, hz), g + Eigen::Vector2d(-hz, hz)});

  Polygon2 best;
  double best_area = 0.0;
  for (const auto& piece : clipped) {
    Polygon2 ground;
    for (const auto& x : FromBoost(piece)) {
      const Eigen::Vector3d d = r_t * Eigen::Vector3d(x.x(), x.y(), 1.0);
      const double s = c.z() / -d.z();
      ground.push_back(g + s * d.head<2>());
    }
    for (const auto& part : Intersect(Single(ground), horizon_box)) {
      const double area = bg::area(part);
      if (area > best_area) {
        best_area = area;
        best = FromBoost(part);
      }
    }
  }
  return best;
}

double PolygonArea(const Polygon2& polygon) {
  if (polygon.size() < 3) return 0.0;
  return bg::area(ToBoost(polygon));
}

std::vector<Polygon2> PolygonIntersection(const Polygon2& a, const Polygon2& b) {
  std::vector<Polygon2> out;
  for (const auto& piece : Intersect(Single(a), Single(b))) {
    out.push_back(FromBoost(piece));
  }
  return out;
}

double PolygonIoU(const Polygon2& a, const Polygon2& b) {
  return IoU(Single(a), Single(b));
}

double IouBev(const ViewParams& pred, const ViewParams& truth,
              const Polygon2& template_polygon, IouMode mode,
              const IouOptions& options) {
  const Polygon2 true_fp = GroundFootprint(truth, options.footprint);
  if (mode == IouMode::kPart) {
    const Polygon2 pred_fp = GroundFootprint(pred, options.footprint);
    const BgMulti field = Single(template_polygon);
    return IoU(Intersect(Single(pred_fp), field),
               Intersect(Single(true_fp), field));
  }

  if (pred.pose.center.z() <= 0.0) {
    throw std::invalid_argument("camera is at or below the ground plane");
  }
  if (true_fp.size() < 3) return 1.0;
  // Footprint vertices plus evenly spaced boundary samples.
  const size_t n = true_fp.size();
  std::vector<double> cumulative(n + 1, 0.0);
  for (size_t i = 0; i < n; ++i) {
    cumulative[i + 1] = cumulative[i] + (true_fp[(i + 1) % n] - true_fp[i]).norm();
  }
  const double perimeter = cumulative[n];
  const int samples = std::max(options.whole_boundary_samples, 3);
  Polygon2 boundary;
  int k = 0;
  for (size_t i = 0; i < n; ++i) {
    boundary.push_back(true_fp[i]);
    const Eigen::Vector2d& a = true_fp[i];
    const Eigen::Vector2d& b = true_fp[(i + 1) % n];
    for (; k < samples; ++k) {
      const double s = perimeter * k / samples;
      if (s >= cumulative[i + 1]) break;
      if (s <= cumulative[i]) continue;
      boundary.push_back(a + (b - a) * ((s - cumulative[i]) /
                                        (cumulative[i + 1] - cumulative[i])));
    }
  }

  Polygon2 in_pred;
  Polygon2 in_true;
  for (const auto& p : boundary) {
    const Eigen::Vector3d x(p.x(), p.y(), 0.0);
    const auto u_pred = ProjectPoint(pred, x);
    const auto u_true = ProjectPoint(truth, x);
    if (!u_pred || !u_true) continue;
    in_pred.push_back(*u_pred);
    in_true.push_back(*u_true);
  }
  if (in_true.size() < 3) return 0.0;
  return PolygonIoU(in_pred, in_true);
}

Aggregate Summarize(std::vector<double> values) {
  Aggregate out;
  out.count = static_cast<int>(values.size());
  if (values.empty()) return out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  std::sort(values.begin(), values.end());
  const size_t mid = values.size() / 2;
  out.median = values.size() % 2 == 1 ? values[mid]
                                      : 0.5 * (values[mid - 1] + values[mid]);
  return out;
}

namespace {

using MetricColumns = std::map<std::string, std::vector<double>>;

const std::vector<std::string>& MetricOrder() {
  static const std::vector<std::string> order = {"fle_px", "ape_rot_deg",
                                                 "ape_trans_m", "iou_part",
                                                 "iou_whole"};
  return order;
}

void Collect(const MetricReport& report, MetricColumns* columns) {
  for (const auto& v : report.views) {
    (*columns)["fle_px"].push_back(v.fle_px);
    (*columns)["ape_rot_deg"].push_back(v.ape_rot_deg);
    if (v.ape_trans_m) (*columns)["ape_trans_m"].push_back(*v.ape_trans_m);
    if (v.iou_part) (*columns)["iou_part"].push_back(*v.iou_part);
    if (v.iou_whole) (*columns)["iou_whole"].push_back(*v.iou_whole);
  }
}

void AppendRows(const std::string& scene, const std::string& stage,
                const MetricColumns& columns, nlohmann::json* rows) {
  for (const auto& metric : MetricOrder()) {
    auto it = columns.find(metric);
    if (it == columns.end() || it->second.empty()) continue;
    const Aggregate a = Summarize(it->second);
    rows->push_back({{"scene", scene},
                     {"stage", stage},
                     {"metric", metric},
                     {"mean", a.mean},
                     {"median", a.median},
                     {"count", a.count}});
  }
}

}  // namespace

nlohmann::json SummarizeReports(const std::vector<MetricReport>& reports) {
  nlohmann::json rows = nlohmann::json::array();
  std::vector<std::string> stages;
  std::map<std::string, MetricColumns> by_stage;
  for (const auto& report : reports) {
    MetricColumns columns;
    Collect(report, &columns);
    AppendRows(report.scene, report.stage, columns, &rows);
    if (!by_stage.count(report.stage)) stages.push_back(report.stage);
    Collect(report, &by_stage[report.stage]);
  }
  for (const auto& stage : stages) AppendRows("all", stage, by_stage[stage], &rows);
  return {{"rows", rows}};
}

std::string FormatSummary(const nlohmann::json& summary) {
  // (scene, stage) in first-seen order, each with metric -> (mean, median).
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>,
           std::map<std::string, std::pair<double, double>>>
      cells;
  for (const auto& row : summary.at("rows")) {
    const auto key = std::make_pair(row.at("scene").get<std::string>(),
                                    row.at("stage").get<std::string>());
    if (!cells.count(key)) keys.push_back(key);
    cells[key][row.at("metric").get<std::string>()] = {
        row.at("mean").get<double>(), row.at("median").get<double>()};
  }

  std::ostringstream out;
  out << std::left << std::setw(10) << "scene" << std::setw(9) << "stage";
  for (const auto& metric : MetricOrder()) {
    out << std::right << std::setw(17) << (metric + ".mean") << std::setw(17)
        << (metric + ".med");
  }
  out << "\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& key : keys) {
    out << std::left << std::setw(10) << key.first << std::setw(9) << key.second;
    const auto& metrics = cells[key];
    for (const auto& metric : MetricOrder()) {
      auto it = metrics.find(metric);
      if (it == metrics.end()) {
        out << std::right << std::setw(17) << "-" << std::setw(17) << "-";
      } else {
        out << std::right << std::setw(17) << it->second.first << std::setw(17)
            << it->second.second;
      }
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace ptzcalib
