#include "ptzcalib/georef.h"

#include <cmath>
#include <map>
#include <stdexcept>

#include <Eigen/SVD>
#include <opencv2/calib3d.hpp>
#include <opencv2/core.hpp>
#include <opencv2/core/eigen.hpp>

#include "ptzcalib/bundle.h"
#include "ptzcalib/residuals.h"

namespace ptzcalib {

namespace {

constexpr double kDeg = M_PI / 180.0;

std::map<ViewId, std::vector<Annotation>> ByView(
    const std::vector<Annotation>& annotations) {
  std::map<ViewId, std::vector<Annotation>> out;
  for (const Annotation& a : annotations) {
    out[a.view_id].push_back(a);
  }
  return out;
}

// Candidate world-to-local transform from a view's world pose and its local
// rotation: R_T = R_l^T R_w, t = R_l^T t_w.
RigidTransform CandidateTransform(const Eigen::Quaterniond& local_rotation,
                                  const RigidTransform& world_pose) {
  RigidTransform t;
  t.rotation = (local_rotation.conjugate() * world_pose.rotation).normalized();
  t.translation = local_rotation.conjugate() * world_pose.translation;
  return t;
}

RigidTransform AverageTransforms(const std::vector<RigidTransform>& candidates) {
  Eigen::Vector4d q_sum = Eigen::Vector4d::Zero();
  Eigen::Vector3d center_sum = Eigen::Vector3d::Zero();
  const Eigen::Vector4d ref = candidates.front().rotation.coeffs();
  for (const RigidTransform& c : candidates) {
    Eigen::Vector4d q = c.rotation.coeffs();
    if (q.dot(ref) < 0.0) {
      q = -q;
    }
    q_sum += q;
    center_sum += -(c.rotation.conjugate() * c.translation);
  }
  RigidTransform avg;
  avg.rotation = Eigen::Quaterniond(q_sum.normalized());
  const Eigen::Vector3d center = center_sum / static_cast<double>(candidates.size());
  avg.translation = -(avg.rotation * center);
  return avg;
}

}  // namespace

void GeorefConfig::Validate() const {
  if (min_annotations_per_view < 4) {
    throw std::invalid_argument("min_annotations_per_view must be >= 4");
  }
  if (!(merge_angle_deg >= 0.0) || !(conflict_angle_deg >= merge_angle_deg)) {
    throw std::invalid_argument("candidate angle thresholds out of order");
  }
}

std::optional<RigidTransform> SolveViewPnP(const ViewParams& view,
                                           const std::vector<Annotation>& annotations) {
  if (annotations.size() < 4) {
    return std::nullopt;
  }
  std::vector<cv::Point3d> object;
  std::vector<cv::Point2d> image;
  Eigen::MatrixXd bearings(annotations.size(), 3);
  for (size_t i = 0; i < annotations.size(); ++i) {
    const auto n = PixelToNormalized(view.intrinsics, annotations[i].pixel);
    if (!n) {
      return std::nullopt;
    }
    const Eigen::Vector3d& x = annotations[i].world_point;
    object.emplace_back(x.x(), x.y(), x.z());
    image.emplace_back(n->x(), n->y());
    bearings.row(static_cast<Eigen::Index>(i)) = n->homogeneous().normalized();
  }
  // Bearings confined to a plane through the center (including a single ray)
  // leave the pose unresolved.
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(bearings);
  const Eigen::Vector3d s = svd.singularValues();
  if (s(2) < 1e-6 * s(0)) {
    return std::nullopt;
  }
  const cv::Mat camera = cv::Mat::eye(3, 3, CV_64F);
  cv::Mat rvec;
  cv::Mat tvec;
  bool ok = false;
  try {
    ok = cv::solvePnP(object, image, camera, cv::noArray(), rvec, tvec, false,
                      cv::SOLVEPNP_SQPNP);
    if (ok) {
      cv::solvePnPRefineLM(object, image, camera, cv::noArray(), rvec, tvec,
                           cv::TermCriteria(cv::TermCriteria::COUNT +
                                                cv::TermCriteria::EPS,
                                            50, 1e-15));
    }
  } catch (const cv::Exception&) {
    return std::nullopt;
  }
  if (!ok) {
    return std::nullopt;
  }
  cv::Mat rmat;
  cv::Rodrigues(rvec, rmat);
  Eigen::Matrix3d r;
  Eigen::Vector3d t;
  cv::cv2eigen(rmat, r);
  cv::cv2eigen(tvec, t);
  if (!r.allFinite() || !t.allFinite()) {
    return std::nullopt;
  }
  RigidTransform pose;
  pose.rotation = Eigen::Quaterniond(NearestRotation(r)).normalized();
  pose.translation = t;
  // Every annotated point has to lie in front of the camera.
  for (const Annotation& a : annotations) {
    if ((pose * a.world_point).z() <= 0.0) {
      return std::nullopt;
    }
  }
  return pose;
}

double AnnotationError(const Reconstruction& recon,
                       const std::vector<Annotation>& annotations,
                       const RigidTransform& transform) {
  double total = 0.0;
  for (const Annotation& a : annotations) {
    const auto it = recon.views.find(a.view_id);
    if (it == recon.views.end()) {
      continue;
    }
    const auto px = ProjectPoint(it->second, transform * a.world_point);
    total += px ? (*px - a.pixel).norm() : 1e12;
  }
  return total;
}

TransformEstimate EstimateInitialTransform(const Reconstruction& recon,
                                           const std::vector<Annotation>& annotations,
                                           const GeorefConfig& config) {
  config.Validate();
  TransformEstimate out;
  for (const auto& [view_id, group] : ByView(annotations)) {
    if (!recon.IsRegistered(view_id)) {
      out.error = "annotated view " + std::to_string(view_id) + " is not registered";
      return out;
    }
    if (static_cast<int>(group.size()) < config.min_annotations_per_view) {
      continue;
    }
    const ViewParams& view = recon.views.at(view_id);
    const auto pose = SolveViewPnP(view, group);
    if (!pose) {
      out.error = "PnP is degenerate for view " + std::to_string(view_id);
      return out;
    }
    out.candidates.push_back(CandidateTransform(view.pose.rotation, *pose));
  }
  if (out.candidates.empty()) {
    out.error = "no annotated view has " +
                std::to_string(config.min_annotations_per_view) + " annotations";
    return out;
  }
  double max_angle = 0.0;
  for (size_t i = 0; i < out.candidates.size(); ++i) {
    for (size_t j = i + 1; j < out.candidates.size(); ++j) {
      max_angle = std::max(max_angle, RotationAngle(out.candidates[i].rotation,
                                                    out.candidates[j].rotation));
    }
  }
  if (max_angle > config.conflict_angle_deg * kDeg) {
    out.error = "candidate transforms disagree by " +
                std::to_string(max_angle / kDeg) + " degrees";
    return out;
  }
  std::vector<RigidTransform> choices = out.candidates;
  if (out.candidates.size() > 1 && max_angle <= config.merge_angle_deg * kDeg) {
    choices.push_back(AverageTransforms(out.candidates));
  }
  double best = std::numeric_limits<double>::infinity();
  for (const RigidTransform& c : choices) {
    const double e = AnnotationError(recon, annotations, c);
    if (e < best) {
      best = e;
      out.transform = c;
    }
  }
  return out;
}

GeoReconstruction MakeGeoReconstruction(Reconstruction recon,
                                        const RigidTransform& transform) {
  GeoReconstruction geo;
  recon.transform = transform;
  geo.reconstruction = std::move(recon);
  geo.transform = transform;
  geo.world_center = transform.Inverse().translation;
  return geo;
}

GeorefResult GeorefBundleAdjust(const Reconstruction& recon,
                                const std::vector<Annotation>& annotations,
                                const RigidTransform& initial,
                                const GeorefConfig& config) {
  config.Validate();
  GeorefResult result;
  BundleOptions options;
  // The local frame's rotation is a gauge of the joint objective even with
  // annotations (it cancels against the transform), so it stays pinned.
  if (!recon.registered.empty()) {
    options.fixed_rotations.insert(recon.registered.front());
  }
  const double delta = config.solver.huber_delta_px;
  Bundle bundle(recon, options, delta);
  Problem& problem = bundle.problem();
  const int t_rotation =
      problem.AddParameterBlock(QuaternionValues(initial.rotation), Manifold::kRotation);
  const int t_translation = problem.AddParameterBlock(
      {initial.translation.x(), initial.translation.y(), initial.translation.z()});
  std::vector<int> annotation_blocks;
  for (const Annotation& a : annotations) {
    if (!recon.IsRegistered(a.view_id)) {
      throw std::invalid_argument("annotated view " + std::to_string(a.view_id) +
                                  " is not registered");
    }
    const Intrinsics& in = recon.views.at(a.view_id).intrinsics;
    annotation_blocks.push_back(problem.NumResidualBlocks());
    problem.AddResidualBlock(
        std::make_shared<PointReprojectionCost>(a.pixel, a.world_point, in.cx, in.cy),
        LossFunction::Huber(delta),
        {bundle.FocalBlock(a.view_id), bundle.DistortionBlock(a.view_id),
         bundle.RotationBlock(a.view_id), t_rotation, t_translation});
  }
  result.report = Solve(problem, config.solver);
  if (!result.report.Usable()) {
    return result;
  }
  Reconstruction refined = recon;
  bundle.WriteBack(&refined);
  RigidTransform transform;
  transform.rotation = QuaternionFromValues(problem.Values(t_rotation));
  const auto t = problem.Values(t_translation);
  transform.translation = Eigen::Vector3d(t[0], t[1], t[2]);
  result.geo = MakeGeoReconstruction(std::move(refined), transform);

  Eigen::VectorXd r;
  for (size_t i = 0; i < annotations.size(); ++i) {
    const bool ok = problem.ResidualOf(annotation_blocks[i], &r);
    const double norm = ok ? r.norm() : std::numeric_limits<double>::infinity();
    result.residuals_px.push_back(norm);
    if (norm > 3.0 * delta) {
      result.flagged.push_back(static_cast<int>(i));
    }
  }
  return result;
}

ViewParams AbsolutePose(const GeoReconstruction& geo, ViewId view) {
  ViewParams out = geo.reconstruction.views.at(view);
  out.pose.rotation = (out.pose.rotation * geo.transform.rotation).normalized();
  out.pose.center = geo.world_center;
  return out;
}

}  // namespace ptzcalib
