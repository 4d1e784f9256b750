#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "fidmap/geometry.hpp"
#include "fidmap/planar_pose.hpp"

namespace fidmap {

/// All corner observations of one frame. Marker ids are unique per frame.
struct FrameDetections {
  int frame_id = 0;
  std::optional<double> timestamp;
  std::vector<CornerObservation> observations;

  const CornerObservation* find(int marker_id) const;
};

/// Unambiguous marker->camera poses of one frame.
struct FramePoseSet {
  int frame_id = 0;
  std::map<int, Transform> poses;
  int ambiguous = 0;   // observations dropped by the ambiguity gate
  int degenerate = 0;  // observations with no valid solution
};

/// One relative pose observation between markers i < j; `rel` maps points
/// from marker i's frame into marker j's frame.
struct QuiverEdge {
  int i = 0;
  int j = 0;
  int frame_id = 0;
  Transform rel;
};

using MarkerPair = std::pair<int, int>;

struct BestEdge {
  Transform rel;  // marker i -> marker j
  double score = 0.0;
  int source_frame = 0;
};

/// Throws invalid-argument if a frame repeats a marker id or frame ids repeat.
void validate_frames(const std::vector<FrameDetections>& frames);

std::vector<FramePoseSet> build_frame_pose_sets(const std::vector<FrameDetections>& frames,
                                                const MarkerGeometry& geom, const CameraIntrinsics& k,
                                                const PlanarPoseConfig& config = {});

/// Every pair i < j present in the same pose set yields one edge.
std::vector<QuiverEdge> build_quiver(const std::vector<FramePoseSet>& pose_sets);

/// Reprojection error in `frame` of marker i's corners carried into marker
/// j's frame by `rel` and projected with j's pose in that frame.
double cross_frame_error(const Transform& rel, const FramePoseSet& poses, const FrameDetections& detections,
                         int i, int j, const MarkerGeometry& geom, const CameraIntrinsics& k);

/// For every marker pair, the quiver edge minimizing the summed
/// cross-frame error over all frames with usable poses of both markers.
/// Ties go to the lowest source frame id. Pairs whose candidate x frame
/// product exceeds `max_products` are scored on evenly spaced subsets.
std::map<MarkerPair, BestEdge> select_best_edges(const std::vector<QuiverEdge>& quiver,
                                                 const std::vector<FramePoseSet>& pose_sets,
                                                 const std::vector<FrameDetections>& frames,
                                                 const MarkerGeometry& geom, const CameraIntrinsics& k,
                                                 std::size_t max_products = 10000);

}  // namespace fidmap
