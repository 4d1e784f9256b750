#pragma once

// End-to-end mapping: planar poses per frame, pose quiver, best-edge pose
// graph, cycle correction per connected component, frame initialization and
// the global LM refinement.

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "fidmap/cycle_opt.hpp"
#include "fidmap/frame_init.hpp"
#include "fidmap/global_opt.hpp"
#include "fidmap/map_types.hpp"
#include "fidmap/planar_pose.hpp"
#include "fidmap/posegraph.hpp"
#include "fidmap/quiver.hpp"

namespace fidmap {

struct PipelineConfig {
  double side = 0.0;
  PlanarPoseConfig planar;
  CycleOptConfig cycle;
  LMConfig lm;
  bool optimize_intrinsics = false;
  /// Root marker of the component containing it; others choose their own.
  std::optional<int> seed_root;
  double outlier_z = 2.58;
  /// Initialize markers by plain tree composition instead of the corrected graph.
  bool skip_cycle_correction = false;
  bool skip_global_optimization = false;
};

struct ComponentResult {
  int component_id = 0;
  SpanningTree tree;
  PoseGraph graph;  // after outlier removal
  int removed_edges = 0;
  std::size_t cycles = 0;
  int rotation_iterations = 0;
  std::map<int, Transform> initial_markers;
  std::map<int, Transform> markers;  // marker -> global, root at identity
  std::map<int, Transform> frames;   // frame id -> global -> camera
  std::set<int> low_confidence_frames;
  LMReport report;

  MarkerMap to_map(double side) const;
};

struct PipelineStats {
  int frames = 0;
  int detections = 0;
  int ambiguous = 0;
  int degenerate = 0;
  int quiver_edges = 0;
  int graph_nodes = 0;
  int graph_edges = 0;
  int components = 0;
  int cycles = 0;
  int lm_iterations = 0;
  double mean_reprojection_px = 0.0;
};

struct PipelineResult {
  std::vector<ComponentResult> components;
  PipelineStats stats;
  CameraIntrinsics intrinsics;  // refined when intrinsics are optimized

  /// Frames of every component, by frame id; timestamps from `frames`.
  Trajectory trajectory(const std::vector<FrameDetections>& frames) const;
};

/// Throws insufficient-co-observations when no frame has two usable markers.
PipelineResult build_map(const std::vector<FrameDetections>& frames, const CameraIntrinsics& k,
                         const PipelineConfig& config, std::ostream* log = nullptr);

/// Frame poses against a fixed map. Frames without mapped markers are
/// skipped. With `refine`, each pose is polished by LM on its own
/// reprojection error with the markers held fixed.
Trajectory localize_frames(const std::vector<FrameDetections>& frames, const MarkerMap& map,
                           const CameraIntrinsics& k, bool refine, const PlanarPoseConfig& planar = {},
                           std::ostream* log = nullptr);

}  // namespace fidmap
