#include "ptzcalib/bundle.h"

#include <memory>

#include "ptzcalib/residuals.h"

namespace ptzcalib {

std::vector<double> DistortionValues(const Intrinsics& intrinsics) {
  return {intrinsics.k1, intrinsics.k2, intrinsics.p1, intrinsics.p2};
}

void SetDistortion(const std::vector<double>& values, Intrinsics* intrinsics) {
  intrinsics->k1 = values[0];
  intrinsics->k2 = values[1];
  intrinsics->p1 = values[2];
  intrinsics->p2 = values[3];
}

std::vector<double> QuaternionValues(const Eigen::Quaterniond& q) {
  const Eigen::Quaterniond n = q.normalized();
  return {n.w(), n.x(), n.y(), n.z()};
}

Eigen::Quaterniond QuaternionFromValues(std::span<const double> values) {
  return Eigen::Quaterniond(values[0], values[1], values[2], values[3])
      .normalized();
}

void BoundIntrinsics(Problem* problem, int focal_block, int distortion_block) {
  if (focal_block >= 0) {
    problem->SetBounds(focal_block, 0, 1.0,
                       std::numeric_limits<double>::infinity());
  }
  if (distortion_block >= 0) {
    problem->SetBounds(distortion_block, 0, -kMaxRadialCoeff, kMaxRadialCoeff);
    problem->SetBounds(distortion_block, 1, -kMaxRadialCoeff, kMaxRadialCoeff);
    problem->SetBounds(distortion_block, 2, -kMaxTangentialCoeff,
                       kMaxTangentialCoeff);
    problem->SetBounds(distortion_block, 3, -kMaxTangentialCoeff,
                       kMaxTangentialCoeff);
  }
}

ViewSolveResult SolveViewAgainstRays(const ViewParams& initial,
                                     const std::vector<RayObservation>& observations,
                                     const SolverOptions& options,
                                     bool fix_distortion) {
  const Intrinsics& in = initial.intrinsics;
  Problem problem;
  const int focal = problem.AddParameterBlock({in.f});
  const int distortion = problem.AddParameterBlock(DistortionValues(in));
  const int rotation = problem.AddParameterBlock(
      QuaternionValues(initial.pose.rotation), Manifold::kRotation);
  BoundIntrinsics(&problem, focal, distortion);
  if (fix_distortion) {
    problem.SetFixed(distortion);
  }
  const LossFunction loss = LossFunction::Huber(options.huber_delta_px);
  for (const RayObservation& o : observations) {
    const Eigen::Vector3d& d = o.ray.dir;
    const int ray = problem.AddParameterBlock({d.x(), d.y(), d.z()},
                                              Manifold::kUnitVector);
    problem.SetFixed(ray);
    problem.AddResidualBlock(
        std::make_shared<RayReprojectionCost>(o.pixel, in.cx, in.cy), loss,
        {focal, distortion, rotation, ray});
  }

  ViewSolveResult result;
  result.report = Solve(problem, options);
  result.view = initial;
  if (!result.report.Usable()) {
    return result;
  }
  result.view.intrinsics.f = problem.Values(focal)[0];
  const auto dist = problem.Values(distortion);
  SetDistortion({dist.begin(), dist.end()}, &result.view.intrinsics);
  result.view.pose.rotation = QuaternionFromValues(problem.Values(rotation));
  Eigen::VectorXd r;
  for (int i = 0; i < problem.NumResidualBlocks(); ++i) {
    if (problem.ResidualOf(i, &r) && r.norm() < options.huber_delta_px) {
      ++result.inliers;
    }
  }
  return result;
}

Bundle::Bundle(const Reconstruction& recon, const BundleOptions& options,
               double huber_delta_px) {
  std::set<ViewId> active = options.active_views;
  if (active.empty()) {
    for (const auto& [id, view] : recon.views) {
      active.insert(id);
    }
  }
  int shared = -1;
  for (const auto& [id, view] : recon.views) {
    const Intrinsics& in = view.intrinsics;
    focal_[id] = problem_.AddParameterBlock({in.f});
    if (recon.shared_distortion && shared >= 0) {
      distortion_[id] = shared;
    } else {
      distortion_[id] = problem_.AddParameterBlock(DistortionValues(in));
      shared = distortion_[id];
      BoundIntrinsics(&problem_, -1, distortion_[id]);
    }
    rotation_[id] = problem_.AddParameterBlock(
        QuaternionValues(view.pose.rotation), Manifold::kRotation);
    BoundIntrinsics(&problem_, focal_[id], -1);
    if (!active.count(id)) {
      problem_.SetFixed(focal_[id]);
      problem_.SetFixed(rotation_[id]);
      if (!recon.shared_distortion) {
        problem_.SetFixed(distortion_[id]);
      }
    }
    if (options.fixed_rotations.count(id)) {
      problem_.SetFixed(rotation_[id]);
    }
  }
  if (recon.shared_distortion && shared >= 0) {
    bool any_active = false;
    for (const ViewId id : active) {
      any_active |= recon.views.count(id) > 0;
    }
    problem_.SetFixed(shared, !any_active);
  }

  const LossFunction loss = LossFunction::Huber(huber_delta_px);
  for (const auto& [track_id, ray] : recon.landmarks) {
    const std::vector<const TrackElement*> obs = recon.RegisteredObservations(track_id);
    if (obs.empty()) {
      continue;
    }
    const int block = problem_.AddParameterBlock(
        {ray.dir.x(), ray.dir.y(), ray.dir.z()}, Manifold::kUnitVector);
    landmark_[track_id] = block;
    if (options.refine_landmarks) {
      problem_.SetEliminated(block);
    } else {
      problem_.SetFixed(block);
    }
    for (const TrackElement* e : obs) {
      const Intrinsics& in = recon.views.at(e->view_id).intrinsics;
      const int residual = problem_.NumResidualBlocks();
      problem_.AddResidualBlock(
          std::make_shared<RayReprojectionCost>(e->position, in.cx, in.cy), loss,
          {focal_[e->view_id], distortion_[e->view_id], rotation_[e->view_id],
           block});
      terms_.push_back({e->view_id, track_id, e->position, residual});
    }
  }
}

void Bundle::WriteBack(Reconstruction* recon) const {
  for (auto& [id, view] : recon->views) {
    const auto it = focal_.find(id);
    if (it == focal_.end()) {
      continue;
    }
    view.intrinsics.f = problem_.Values(it->second)[0];
    const auto dist = problem_.Values(distortion_.at(id));
    SetDistortion({dist.begin(), dist.end()}, &view.intrinsics);
    view.pose.rotation = QuaternionFromValues(problem_.Values(rotation_.at(id)));
  }
  for (const auto& [track_id, block] : landmark_) {
    const auto v = problem_.Values(block);
    recon->landmarks[track_id].dir = Eigen::Vector3d(v[0], v[1], v[2]).normalized();
  }
}

}  // namespace ptzcalib
