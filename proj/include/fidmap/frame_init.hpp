#pragma once

#include <map>
#include <vector>

#include "fidmap/geometry.hpp"
#include "fidmap/planar_pose.hpp"
#include "fidmap/quiver.hpp"

namespace fidmap {

/// Marker id -> marker-to-global transform.
using MarkerPoses = std::map<int, Transform>;

enum class Solution { kBest = 0, kAlt = 1 };

struct FramePoseCandidate {
  int marker_id = 0;
  Solution which = Solution::kBest;
  Transform frame_pose;  // global -> camera
  Transform marker_pose; // the planar solution it came from (marker -> camera)
  double score = 0.0;    // px^2 over all mapped markers of the frame
};

struct FramePoseCandidateSet {
  int frame_id = 0;
  std::vector<FramePoseCandidate> candidates;
  int mapped_markers = 0;   // observed markers present in the map
  int skipped_markers = 0;  // observed markers absent from the map
};

struct FramePoseEstimate {
  int frame_id = 0;
  Transform pose;  // global -> camera
  double score = 0.0;
  int marker_id = 0;
  Solution which = Solution::kBest;
  bool low_confidence = false;  // fewer than two mapped markers
};

/// Lifts both planar solutions of every mapped marker to a frame pose and
/// scores each. Throws not-localizable if no mapped marker is visible.
FramePoseCandidateSet enumerate_frame_candidates(const FrameDetections& frame, const MarkerPoses& map,
                                                 const MarkerGeometry& geom, const CameraIntrinsics& k,
                                                 const PlanarPoseConfig& config = {});

/// Sum over every observed mapped marker j of the reprojection error of its
/// corners, placed in the global frame by the map, under `frame_pose`.
double score_candidate(const Transform& frame_pose, const FrameDetections& frame, const MarkerPoses& map,
                       const MarkerGeometry& geom, const CameraIntrinsics& k);

/// Argmin over the candidates; ties go to the lowest (marker id, best before alt).
FramePoseEstimate select_frame_pose(const FramePoseCandidateSet& set);

/// enumerate + select.
FramePoseEstimate estimate_frame_pose(const FrameDetections& frame, const MarkerPoses& map,
                                      const MarkerGeometry& geom, const CameraIntrinsics& k,
                                      const PlanarPoseConfig& config = {});

}  // namespace fidmap
