#include "ptzcalib/io.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ptzcalib {

using json = nlohmann::json;

namespace {

double Number(const json& record, const char* key, const std::string& context) {
  if (!record.contains(key)) {
    throw ParseError(context + ": missing '" + key + "'");
  }
  const json& v = record.at(key);
  if (!v.is_number() || !std::isfinite(v.get<double>())) {
    throw ParseError(context + ": '" + key + "' is not a finite number");
  }
  return v.get<double>();
}

int Integer(const json& record, const char* key, const std::string& context) {
  if (!record.contains(key) || !record.at(key).is_number_integer()) {
    throw ParseError(context + ": '" + key + "' is not an integer");
  }
  return record.at(key).get<int>();
}

template <int N>
Eigen::Matrix<double, N, 1> Vector(const json& record, const char* key,
                                   const std::string& context) {
  if (!record.contains(key) || !record.at(key).is_array() ||
      record.at(key).size() != N) {
    throw ParseError(context + ": '" + key + "' must be an array of " +
                     std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> out;
  for (int i = 0; i < N; ++i) {
    const json& v = record.at(key)[i];
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      throw ParseError(context + ": '" + key + "' has a non-finite entry");
    }
    out(i) = v.get<double>();
  }
  return out;
}

Eigen::Quaterniond UnitQuaternion(const Eigen::Vector4d& wxyz,
                                  const std::string& context) {
  const double norm = wxyz.norm();
  if (std::abs(norm - 1.0) > 1e-6) {
    throw ParseError(context + ": quaternion is not unit-norm");
  }
  const Eigen::Quaterniond q(wxyz(0), wxyz(1), wxyz(2), wxyz(3));
  // Values already unit to rounding are kept bit-exact so files round-trip.
  return std::abs(norm - 1.0) < 1e-12 ? q : q.normalized();
}

json QuaternionToJson(const Eigen::Quaterniond& q) {
  return {q.w(), q.x(), q.y(), q.z()};
}

json VectorToJson(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

json ParseDocument(const std::string& text, const std::string& what) {
  try {
    json doc = json::parse(text);
    if (!doc.is_object()) {
      throw ParseError(what + ": top level is not an object");
    }
    return doc;
  } catch (const json::parse_error& e) {
    throw ParseError(what + " is not valid JSON: " + e.what());
  }
}

const json& ArrayField(const json& doc, const char* key, const std::string& what) {
  if (!doc.contains(key) || !doc.at(key).is_array()) {
    throw ParseError(what + ": missing '" + key + "' array");
  }
  return doc.at(key);
}

}  // namespace

json CameraToJson(ViewId id, const ViewParams& view) {
  const Intrinsics& in = view.intrinsics;
  return {{"view_id", id},
          {"f", in.f},
          {"cx", in.cx},
          {"cy", in.cy},
          {"k1", in.k1},
          {"k2", in.k2},
          {"p1", in.p1},
          {"p2", in.p2},
          {"width", in.width},
          {"height", in.height},
          {"quaternion", QuaternionToJson(view.pose.rotation)},
          {"center", VectorToJson(view.pose.center)}};
}

std::pair<ViewId, ViewParams> CameraFromJson(const json& record,
                                             const std::string& context) {
  if (!record.is_object()) {
    throw ParseError(context + ": camera record is not an object");
  }
  ViewParams view;
  const ViewId id = Integer(record, "view_id", context);
  Intrinsics& in = view.intrinsics;
  in.f = Number(record, "f", context);
  in.cx = Number(record, "cx", context);
  in.cy = Number(record, "cy", context);
  in.k1 = Number(record, "k1", context);
  in.k2 = Number(record, "k2", context);
  in.p1 = Number(record, "p1", context);
  in.p2 = Number(record, "p2", context);
  in.width = Integer(record, "width", context);
  in.height = Integer(record, "height", context);
  if (!in.IsValid()) {
    throw ParseError(context + ": invalid intrinsics for view " +
                     std::to_string(id));
  }
  view.pose.rotation =
      UnitQuaternion(Vector<4>(record, "quaternion", context), context);
  view.pose.center = Vector<3>(record, "center", context);
  return {id, view};
}

json TransformToJson(const RigidTransform& transform) {
  return {{"quaternion", QuaternionToJson(transform.rotation)},
          {"translation", VectorToJson(transform.translation)}};
}

RigidTransform TransformFromJson(const json& record, const std::string& context) {
  RigidTransform t;
  t.rotation = UnitQuaternion(Vector<4>(record, "quaternion", context), context);
  t.translation = Vector<3>(record, "translation", context);
  return t;
}

namespace {

json CamerasToJson(const std::map<ViewId, ViewParams>& cameras) {
  json out = json::array();
  for (const auto& [id, view] : cameras) {
    out.push_back(CameraToJson(id, view));
  }
  return out;
}

std::map<ViewId, ViewParams> CamerasFromJson(const json& doc,
                                             const std::string& what) {
  std::map<ViewId, ViewParams> cameras;
  size_t index = 0;
  for (const json& record : ArrayField(doc, "cameras", what)) {
    auto [id, view] =
        CameraFromJson(record, what + ", camera record " + std::to_string(index));
    if (!cameras.emplace(id, view).second) {
      throw ParseError(what + ": duplicate camera " + std::to_string(id));
    }
    ++index;
  }
  return cameras;
}

}  // namespace

std::string SerializeCameras(const CameraFile& file) {
  json doc;
  doc["cameras"] = CamerasToJson(file.cameras);
  if (file.transform) {
    doc["transform"] = TransformToJson(*file.transform);
  }
  if (!file.diagnostics.is_null()) {
    doc["diagnostics"] = file.diagnostics;
  }
  return doc.dump(1) + "\n";
}

CameraFile ParseCameras(const std::string& text) {
  const json doc = ParseDocument(text, "camera file");
  CameraFile file;
  file.cameras = CamerasFromJson(doc, "camera file");
  if (doc.contains("transform")) {
    file.transform = TransformFromJson(doc["transform"], "camera file transform");
  }
  if (doc.contains("diagnostics")) {
    file.diagnostics = doc["diagnostics"];
  }
  return file;
}

CameraFile LoadCameras(const std::filesystem::path& path) {
  return ParseCameras(ReadFile(path));
}

std::vector<const TrackElement*> Reconstruction::RegisteredObservations(
    TrackId id) const {
  std::vector<const TrackElement*> out;
  const auto it = tracks.find(id);
  if (it == tracks.end()) {
    return out;
  }
  for (const TrackElement& e : it->second.elements) {
    if (IsRegistered(e.view_id)) {
      out.push_back(&e);
    }
  }
  return out;
}

std::string SerializeReconstruction(const Reconstruction& recon) {
  json doc;
  doc["status"] = recon.status;
  doc["shared_distortion"] = recon.shared_distortion;
  doc["cameras"] = CamerasToJson(recon.views);
  json landmarks = json::array();
  for (const auto& [id, ray] : recon.landmarks) {
    json observations = json::array();
    for (const TrackElement* e : recon.RegisteredObservations(id)) {
      observations.push_back({e->view_id, e->position.x(), e->position.y()});
    }
    landmarks.push_back({{"track_id", id},
                         {"dir", VectorToJson(ray.dir)},
                         {"observations", std::move(observations)}});
  }
  doc["landmarks"] = std::move(landmarks);
  json registration = json::array();
  for (const RegistrationEvent& e : recon.registration_log) {
    registration.push_back(
        {{"view_id", e.view_id}, {"event", e.event}, {"inliers", e.inliers}});
  }
  doc["registration_log"] = std::move(registration);
  json ba = json::array();
  for (const BundleAdjustmentEvent& e : recon.ba_log) {
    ba.push_back({{"num_registered", e.num_registered},
                  {"initial_cost", e.initial_cost},
                  {"final_cost", e.final_cost},
                  {"iterations", e.iterations},
                  {"termination", e.termination}});
  }
  doc["ba_log"] = std::move(ba);
  if (recon.transform) {
    doc["transform"] = TransformToJson(*recon.transform);
  }
  return doc.dump(1) + "\n";
}

Reconstruction ParseReconstruction(const std::string& text) {
  const std::string what = "reconstruction file";
  const json doc = ParseDocument(text, what);
  Reconstruction recon;
  recon.views = CamerasFromJson(doc, what);
  for (const auto& [id, view] : recon.views) {
    recon.registered.push_back(id);
  }
  if (doc.contains("status") && doc["status"].is_string()) {
    recon.status = doc["status"].get<std::string>();
  }
  if (doc.contains("shared_distortion") && doc["shared_distortion"].is_boolean()) {
    recon.shared_distortion = doc["shared_distortion"].get<bool>();
  }
  if (doc.contains("landmarks")) {
    size_t index = 0;
    for (const json& record : ArrayField(doc, "landmarks", what)) {
      const std::string context = what + ", landmark " + std::to_string(index++);
      const TrackId id = Integer(record, "track_id", context);
      const Eigen::Vector3d dir = Vector<3>(record, "dir", context);
      auto ray = RayLandmark::FromVector(dir);
      if (!ray) {
        throw ParseError(context + ": zero direction");
      }
      if (std::abs(dir.norm() - 1.0) < 1e-12) {
        ray->dir = dir;
      }
      Track track;
      track.id = id;
      int k = 0;
      for (const json& obs : ArrayField(record, "observations", context)) {
        if (!obs.is_array() || obs.size() != 3 || !obs[0].is_number_integer() ||
            !obs[1].is_number() || !obs[2].is_number()) {
          throw ParseError(context + ": observation must be [view_id, u, v]");
        }
        const ViewId view = obs[0].get<ViewId>();
        if (!recon.IsRegistered(view)) {
          throw ParseError(context + ": observation in unknown view " +
                           std::to_string(view));
        }
        track.elements.push_back(
            {view, k++, {obs[1].get<double>(), obs[2].get<double>()}});
      }
      std::sort(track.elements.begin(), track.elements.end(),
                [](const TrackElement& a, const TrackElement& b) {
                  return a.view_id < b.view_id;
                });
      recon.landmarks[id] = *ray;
      recon.tracks[id] = std::move(track);
    }
  }
  if (doc.contains("registration_log") && doc["registration_log"].is_array()) {
    for (const json& e : doc["registration_log"]) {
      recon.registration_log.push_back({e.value("view_id", 0),
                                        e.value("event", std::string()),
                                        e.value("inliers", 0)});
    }
  }
  if (doc.contains("ba_log") && doc["ba_log"].is_array()) {
    for (const json& e : doc["ba_log"]) {
      recon.ba_log.push_back({e.value("num_registered", 0),
                              e.value("initial_cost", 0.0),
                              e.value("final_cost", 0.0),
                              e.value("iterations", 0),
                              e.value("termination", std::string())});
    }
  }
  if (doc.contains("transform")) {
    recon.transform = TransformFromJson(doc["transform"], what + " transform");
  }
  return recon;
}

Reconstruction LoadReconstruction(const std::filesystem::path& path) {
  return ParseReconstruction(ReadFile(path));
}

std::string SerializeAnnotations(const std::vector<Annotation>& annotations) {
  json records = json::array();
  for (const Annotation& a : annotations) {
    records.push_back({{"view_id", a.view_id},
                       {"u", a.pixel.x()},
                       {"v", a.pixel.y()},
                       {"X", a.world_point.x()},
                       {"Y", a.world_point.y()},
                       {"Z", a.world_point.z()}});
  }
  json doc;
  doc["annotations"] = std::move(records);
  return doc.dump(1) + "\n";
}

std::vector<Annotation> ParseAnnotations(const std::string& text) {
  const std::string what = "annotation file";
  const json doc = ParseDocument(text, what);
  std::vector<Annotation> out;
  size_t index = 0;
  for (const json& record : ArrayField(doc, "annotations", what)) {
    const std::string context = what + ", record " + std::to_string(index++);
    Annotation a;
    a.view_id = Integer(record, "view_id", context);
    a.pixel = Eigen::Vector2d(Number(record, "u", context), Number(record, "v", context));
    a.world_point = Eigen::Vector3d(Number(record, "X", context),
                                    Number(record, "Y", context),
                                    Number(record, "Z", context));
    out.push_back(a);
  }
  return out;
}

std::vector<Annotation> LoadAnnotations(const std::filesystem::path& path) {
  return ParseAnnotations(ReadFile(path));
}

ViewParams GroundTruth::LocalView(ViewId id) const {
  ViewParams view = views.at(id);
  view.pose.rotation = (view.pose.rotation * transform.rotation.conjugate()).normalized();
  view.pose.center = Eigen::Vector3d::Zero();
  return view;
}

std::string SerializeGroundTruth(const GroundTruth& truth) {
  json doc;
  doc["seed"] = truth.seed;
  doc["noise_sigma_px"] = truth.noise_sigma_px;
  doc["cameras"] = CamerasToJson(truth.views);
  doc["reference_views"] = truth.reference_views;
  doc["query_views"] = truth.query_views;
  doc["transform"] = TransformToJson(truth.transform);
  json points = json::array();
  for (const auto& [id, x] : truth.points) {
    points.push_back({{"id", id}, {"xyz", VectorToJson(x)}});
  }
  doc["points"] = std::move(points);
  json polygon = json::array();
  for (const Eigen::Vector2d& p : truth.template_polygon) {
    polygon.push_back({p.x(), p.y()});
  }
  doc["template"] = std::move(polygon);
  return doc.dump(1) + "\n";
}

GroundTruth ParseGroundTruth(const std::string& text) {
  const std::string what = "ground truth file";
  const json doc = ParseDocument(text, what);
  GroundTruth truth;
  if (doc.contains("seed") && doc["seed"].is_number_unsigned()) {
    truth.seed = doc["seed"].get<uint64_t>();
  }
  if (doc.contains("noise_sigma_px")) {
    truth.noise_sigma_px = Number(doc, "noise_sigma_px", what);
  }
  truth.views = CamerasFromJson(doc, what);
  for (const char* key : {"reference_views", "query_views"}) {
    if (!doc.contains(key)) {
      continue;
    }
    auto& list = std::string(key) == "reference_views" ? truth.reference_views
                                                       : truth.query_views;
    for (const json& v : ArrayField(doc, key, what)) {
      if (!v.is_number_integer()) {
        throw ParseError(what + ": '" + key + "' entries must be integers");
      }
      list.push_back(v.get<ViewId>());
    }
  }
  if (!doc.contains("transform")) {
    throw ParseError(what + ": missing 'transform'");
  }
  truth.transform = TransformFromJson(doc["transform"], what + " transform");
  if (doc.contains("points")) {
    size_t index = 0;
    for (const json& p : ArrayField(doc, "points", what)) {
      const std::string context = what + ", point " + std::to_string(index++);
      truth.points[Integer(p, "id", context)] = Vector<3>(p, "xyz", context);
    }
  }
  if (doc.contains("template")) {
    for (const json& p : ArrayField(doc, "template", what)) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
        throw ParseError(what + ": template vertices must be [x, y]");
      }
      truth.template_polygon.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
  }
  return truth;
}

GroundTruth LoadGroundTruth(const std::filesystem::path& path) {
  return ParseGroundTruth(ReadFile(path));
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError("cannot open " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void WriteFile(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << text;
  if (!out) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

}  // namespace ptzcalib
