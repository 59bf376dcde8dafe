#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ptzcalib/correspondence.h"
#include "ptzcalib/geometry.h"

namespace ptzcalib {

struct RegistrationEvent {
  ViewId view_id = 0;
  // "seed", "registered", "failed" or "discarded".
  std::string event;
  int inliers = 0;
};

struct BundleAdjustmentEvent {
  int num_registered = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  std::string termination;
};

// Rotation-only reconstruction in the local frame. Registered views share the
// projection center at the origin.
struct Reconstruction {
  std::map<ViewId, ViewParams> views;
  std::vector<ViewId> registered;
  std::map<TrackId, RayLandmark> landmarks;
  // Candidate tracks; observations in unregistered views are kept so that
  // later registrations can use them.
  std::map<TrackId, Track> tracks;
  std::map<ViewId, int> failed_attempts;
  // Tracks pruned by bundle adjustment; never retriangulated.
  std::set<TrackId> rejected_tracks;
  bool shared_distortion = false;

  std::vector<RegistrationEvent> registration_log;
  std::vector<BundleAdjustmentEvent> ba_log;
  // "ok", "partial" or "failed".
  std::string status = "ok";
  // World-to-local transform once georeferenced.
  std::optional<RigidTransform> transform;

  bool IsRegistered(ViewId id) const { return views.count(id) > 0; }
  // Observations of one landmark in registered views.
  std::vector<const TrackElement*> RegisteredObservations(TrackId id) const;
};

}  // namespace ptzcalib
