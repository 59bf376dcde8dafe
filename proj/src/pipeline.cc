#include "ptzcalib/pipeline.h"

#include <algorithm>
#include <cmath>
#include <set>

namespace ptzcalib {
namespace {

using nlohmann::json;

// Reads known keys of one config section and rejects the rest.
class Section {
 public:
  Section(const json& doc, const char* name) : name_(name) {
    if (doc.contains(name)) {
      obj_ = &doc.at(name);
      if (!obj_->is_object()) throw ParseError(name_ + ": section is not an object");
    }
  }

  template <typename T>
  Section& Get(const char* key, T* out) {
    if (obj_ && obj_->contains(key)) {
      used_.insert(key);
      try {
        *out = obj_->at(key).get<T>();
      } catch (const json::exception&) {
        throw ParseError(name_ + "." + key + ": wrong type");
      }
    }
    return *this;
  }

  void Finish() const {
    if (!obj_) return;
    for (const auto& item : obj_->items()) {
      if (!used_.count(item.key())) {
        throw ParseError(name_ + ": unknown key '" + item.key() + "'");
      }
    }
  }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> used_;
};

void ReadSolver(const json& doc, SolverOptions* s) {
  Section sec(doc, "solver");
  sec.Get("max_iterations", &s->max_iterations)
      .Get("function_tolerance", &s->function_tolerance)
      .Get("gradient_tolerance", &s->gradient_tolerance)
      .Get("parameter_tolerance", &s->parameter_tolerance)
      .Get("initial_lambda", &s->initial_lambda)
      .Get("huber_delta_px", &s->huber_delta_px)
      .Finish();
}

// Rotation Q minimizing the spread of R_pred Q against R_true, by sign-aligned
// quaternion averaging of R_pred^T R_true.
Eigen::Quaterniond AlignRotations(const std::vector<std::pair<Eigen::Quaterniond,
                                                              Eigen::Quaterniond>>& pairs) {
  Eigen::Vector4d sum = Eigen::Vector4d::Zero();
  Eigen::Vector4d first = Eigen::Vector4d::Zero();
  for (const auto& [pred, truth] : pairs) {
    const Eigen::Quaterniond q = pred.conjugate() * truth;
    Eigen::Vector4d v = q.coeffs();
    if (first.isZero()) first = v;
    if (v.dot(first) < 0.0) v = -v;
    sum += v;
  }
  if (sum.norm() == 0.0) return Eigen::Quaterniond::Identity();
  sum.normalize();
  return Eigen::Quaterniond(sum(3), sum(0), sum(1), sum(2));
}

}  // namespace

void PipelineConfig::ApplySeed() {
  scene.seed = seed;
  ransac.seed = seed;
}

void PipelineConfig::Validate() const {
  scene.Validate();
  iba.Validate();
  georef.Validate();
  online.Validate();
  if (!(ransac.threshold_px > 0.0) || ransac.min_inliers < 4 ||
      ransac.max_iterations < 1 || !(ransac.confidence > 0.0 && ransac.confidence < 1.0)) {
    throw std::invalid_argument("invalid RANSAC settings");
  }
}

void ApplyConfigJson(const json& doc, PipelineConfig* config) {
  if (!doc.is_object()) throw ParseError("config: top level is not an object");
  const std::set<std::string> sections = {"seed", "scene", "ransac", "iba",
                                          "georef", "online", "solver"};
  for (const auto& item : doc.items()) {
    if (!sections.count(item.key())) {
      throw ParseError("config: unknown key '" + item.key() + "'");
    }
  }
  if (doc.contains("seed")) {
    if (!doc.at("seed").is_number_unsigned()) throw ParseError("config: seed must be a non-negative integer");
    config->seed = doc.at("seed").get<uint64_t>();
  }

  SceneConfig& s = config->scene;
  Section(doc, "scene")
      .Get("num_views", &s.num_views)
      .Get("num_ref_views", &s.num_ref_views)
      .Get("pan_range_deg", &s.pan_range_deg)
      .Get("num_points", &s.num_points)
      .Get("min_radius_m", &s.min_radius_m)
      .Get("max_radius_m", &s.max_radius_m)
      .Get("min_elevation_deg", &s.min_elevation_deg)
      .Get("max_elevation_deg", &s.max_elevation_deg)
      .Get("focal_min_px", &s.focal_min_px)
      .Get("focal_max_px", &s.focal_max_px)
      .Get("tilt_min_deg", &s.tilt_min_deg)
      .Get("tilt_max_deg", &s.tilt_max_deg)
      .Get("tilt_amplitude_deg", &s.tilt_amplitude_deg)
      .Get("noise_sigma_px", &s.noise_sigma_px)
      .Get("k1_range", &s.k1_range)
      .Get("k2_range", &s.k2_range)
      .Get("p_range", &s.p_range)
      .Get("width", &s.width)
      .Get("height", &s.height)
      .Get("num_annotated_views", &s.num_annotated_views)
      .Get("points_per_annotated_view", &s.points_per_annotated_view)
      .Get("min_shared_points", &s.min_shared_points)
      .Get("outlier_fraction", &s.outlier_fraction)
      .Finish();

  RansacOptions& r = config->ransac;
  Section(doc, "ransac")
      .Get("threshold_px", &r.threshold_px)
      .Get("min_inliers", &r.min_inliers)
      .Get("max_iterations", &r.max_iterations)
      .Get("confidence", &r.confidence)
      .Finish();

  SolverOptions solver = config->iba.solver;
  ReadSolver(doc, &solver);
  config->iba.solver = config->georef.solver = config->online.solver = solver;

  IbaConfig& i = config->iba;
  Section(doc, "iba")
      .Get("ba_growth_factor", &i.ba_growth_factor)
      .Get("max_register_attempts", &i.max_register_attempts)
      .Get("min_inlier_landmarks", &i.min_inlier_landmarks)
      .Get("focal_init_multiplier", &i.focal_init_multiplier)
      .Get("max_triangulation_angle_deg", &i.max_triangulation_angle_deg)
      .Get("min_track_len", &i.min_track_len)
      .Get("share_distortion", &i.share_distortion)
      .Finish();

  GeorefConfig& g = config->georef;
  Section(doc, "georef")
      .Get("min_annotations_per_view", &g.min_annotations_per_view)
      .Get("merge_angle_deg", &g.merge_angle_deg)
      .Get("conflict_angle_deg", &g.conflict_angle_deg)
      .Finish();

  OnlineConfig& o = config->online;
  Section(doc, "online")
      .Get("overlap_threshold", &o.overlap_threshold)
      .Get("overlap_grid", &o.overlap_grid)
      .Get("min_inlier_landmarks", &o.min_inlier_landmarks)
      .Get("sequential", &o.sequential)
      .Finish();
}

PipelineConfig LoadPipelineConfig(const std::filesystem::path& path) {
  const std::string text = ReadFile(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + " is not valid JSON: " + e.what());
  }
  PipelineConfig config;
  ApplyConfigJson(doc, &config);
  return config;
}

Reconstruction Calibrate(const MatchGraph& raw_matches, const PipelineConfig& config) {
  const MatchGraph verified = VerifyGraph(raw_matches, config.ransac);
  return RunIba(verified, config.iba);
}

GeorefOutcome Georeference(const Reconstruction& recon,
                           const std::vector<Annotation>& annotations,
                           const PipelineConfig& config) {
  GeorefOutcome out;
  const TransformEstimate estimate =
      EstimateInitialTransform(recon, annotations, config.georef);
  if (!estimate.transform) {
    out.error = estimate.error;
    return out;
  }
  out.result = GeorefBundleAdjust(recon, annotations, *estimate.transform, config.georef);
  if (!out.result.geo) out.error = "georeferencing bundle adjustment failed";
  return out;
}

std::vector<QueryResult> LocalizeMatches(const Reconstruction& db,
                                         const MatchGraph& raw_matches,
                                         const PipelineConfig& config) {
  const MatchGraph verified = VerifyGraph(raw_matches, config.ransac);
  std::vector<ViewId> queries;
  for (const auto& [id, info] : raw_matches.Views()) {
    if (!db.IsRegistered(id)) queries.push_back(id);
  }
  return LocalizeQueries(ReferenceDatabase(db), verified, queries, config.online);
}

CameraFile QueryCameraFile(const std::vector<QueryResult>& results,
                           const Reconstruction& db) {
  CameraFile file;
  file.transform = db.transform;
  file.diagnostics = json::array();
  for (const auto& q : results) {
    if (q.status != "failed") file.cameras[q.view_id] = q.params;
    file.diagnostics.push_back({{"view_id", q.view_id},
                                {"status", q.status},
                                {"reference", q.reference},
                                {"overlap", q.overlap},
                                {"inliers", q.inliers},
                                {"bootstrap_from", q.bootstrap_from},
                                {"message", q.message}});
  }
  return file;
}

std::vector<MetricReport> EvaluateCameras(const CameraFile& pred,
                                          const GroundTruth& truth,
                                          const std::string& scene,
                                          const IouOptions& iou, bool with_iou) {
  std::optional<Eigen::Quaterniond> align;
  if (!pred.transform) {
    std::vector<std::pair<Eigen::Quaterniond, Eigen::Quaterniond>> pairs;
    for (const auto& [id, view] : pred.cameras) {
      if (truth.views.count(id)) {
        pairs.emplace_back(view.pose.rotation, truth.views.at(id).pose.rotation);
      }
    }
    align = AlignRotations(pairs);
  }

  const auto report_for = [&](const std::vector<ViewId>& ids, const char* stage) {
    MetricReport report;
    report.scene = scene;
    report.stage = stage;
    bool any = false;
    for (ViewId id : ids) any = any || pred.cameras.count(id);
    if (!any) return report;
    for (ViewId id : ids) {
      auto it = pred.cameras.find(id);
      if (it == pred.cameras.end()) {
        report.missing.push_back(id);
        continue;
      }
      const ViewParams& t = truth.views.at(id);
      ViewMetrics m;
      m.view_id = id;
      m.fle_px = FocalLengthError(it->second.intrinsics.f, t.intrinsics.f);
      if (pred.transform) {
        const ViewParams world = ToWorld(it->second, *pred.transform);
        const PoseError e = AbsolutePoseError(world.pose, t.pose);
        m.ape_rot_deg = e.rotation_deg;
        m.ape_trans_m = e.translation_m;
        if (with_iou && truth.template_polygon.size() >= 3) {
          m.iou_part = IouBev(world, t, truth.template_polygon, IouMode::kPart, iou);
          m.iou_whole = IouBev(world, t, truth.template_polygon, IouMode::kWhole, iou);
        }
      } else {
        m.ape_rot_deg = RotationAngle(it->second.pose.rotation * *align,
                                      t.pose.rotation) * 180.0 / M_PI;
      }
      report.views.push_back(m);
    }
    return report;
  };

  std::vector<MetricReport> out;
  for (auto report : {report_for(truth.reference_views, "offline"),
                      report_for(truth.query_views, "online")}) {
    if (!report.views.empty() || !report.missing.empty()) out.push_back(std::move(report));
  }
  return out;
}

}  // namespace ptzcalib
