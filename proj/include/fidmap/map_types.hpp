#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "fidmap/geometry.hpp"

namespace fidmap {

struct MapStats {
  double mean_reprojection_px = 0.0;
  int frames_used = 0;
};

/// Markers of one connected component; poses map marker -> global.
struct MarkerMap {
  std::string version = "1";
  double side = 0.0;
  int component_id = 0;
  std::map<int, Pose6> markers;
  MapStats stats;

  std::map<int, Transform> transforms() const;
};

struct TrajectoryEntry {
  int frame_id = 0;
  double timestamp = 0.0;
  Pose6 pose;  // global -> camera
  bool low_confidence = false;
};

/// Entries sorted by strictly increasing frame id.
using Trajectory = std::vector<TrajectoryEntry>;

/// Ground-truth corner positions per marker id, corner order c1..c4.
using GroundTruthCorners = std::map<int, std::array<Vec3, 4>>;

}  // namespace fidmap
