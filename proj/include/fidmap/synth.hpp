#pragma once

// Synthetic scenes and camera sequences with exact ground truth.
//
// Random numbers come from std::mt19937_64, whose output sequence is fixed by
// the standard. Uniform and normal variates are derived from its raw 64-bit
// output here (53-bit mantissa uniforms, Box-Muller normals) rather than
// through <random> distributions, whose algorithms differ between standard
// libraries. A seed therefore reproduces the same scene and detections on
// every platform.
//
// A marker is visible when it faces the camera within the maximum viewing
// angle, its whole quad lands inside the image and no interior wall of the
// layout blocks the line of sight to any of its corners.

#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fidmap/geometry.hpp"
#include "fidmap/map_types.hpp"
#include "fidmap/quiver.hpp"

namespace fidmap {

enum class SceneLayout { kPlaneGrid, kBox, kRoomWalls, kTwoRooms };
enum class TrajectoryKind { kOrbit, kWalkthrough, kRotateInPlace };

/// Parses "plane-grid", "box", "room-walls", "two-rooms".
SceneLayout parse_layout(const std::string& name);
std::string to_string(SceneLayout layout);
/// Parses "orbit", "walkthrough", "rotate-in-place".
TrajectoryKind parse_trajectory(const std::string& name);

/// Standard normal and uniform variates on top of mt19937_64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct RoomSize {
  double width = 6.0;   // along x
  double depth = 4.0;   // along y
  double height = 2.5;  // along z
};

/// Vertical wall rectangle standing on the floor.
struct Occluder {
  Vec3 origin;   // floor point at one end
  Vec3 tangent;  // unit, along the wall
  double length = 0.0;
  double height = 0.0;

  /// True when the open segment a -> b crosses the rectangle.
  bool blocks(const Vec3& a, const Vec3& b) const;
};

struct SyntheticScene {
  SceneLayout layout = SceneLayout::kPlaneGrid;
  MarkerGeometry geom{1.0};
  std::map<int, Transform> marker_poses;  // marker -> global
  std::uint64_t seed = 0;
  RoomSize room;
  Vec3 center = Vec3::Zero();
  double extent = 0.0;  // characteristic size of the layout in meters
  std::vector<Occluder> occluders;

  GroundTruthCorners corners() const;
};

/// Deterministic marker placement. Markers are numbered 0..n-1. Throws
/// invalid-argument for n < 1 and too-many-markers when the layout cannot
/// hold n non-overlapping markers.
SyntheticScene generate_scene(SceneLayout layout, int n_markers, double side, std::uint64_t seed,
                              const RoomSize& room = {});

struct VisibilityParams {
  double max_view_angle_deg = 70.0;
  double max_distance = std::numeric_limits<double>::infinity();
};

struct SequenceOptions {
  double radius = 0.0;  // orbit radius / path scale; 0 picks one from the layout
  double frame_rate = 30.0;
  VisibilityParams visibility;
};

struct SyntheticSequence {
  SyntheticScene scene;
  CameraIntrinsics camera;
  std::vector<Transform> frame_poses;  // global -> camera
  std::vector<FrameDetections> detections;
  double noise_sigma = 0.0;
  VisibilityParams visibility;
  /// False when no frame sees two markers; `warning` says why.
  bool usable = true;
  std::string warning;

  Trajectory ground_truth() const;
};

/// Camera path of the given kind, projected detections with Gaussian pixel
/// noise. Pixel coordinates and timestamps are rounded to 9 significant
/// digits so that they survive a text round trip unchanged.
SyntheticSequence generate_sequence(const SyntheticScene& scene, TrajectoryKind kind, int n_frames,
                                    double noise_sigma, const CameraIntrinsics& camera, std::uint64_t seed,
                                    const SequenceOptions& options = {});

/// Detections for given camera poses (global -> camera), with the same
/// visibility rules and noise model as generate_sequence. Frame ids are
/// 0..n-1 in pose order.
SyntheticSequence render_sequence(const SyntheticScene& scene, const std::vector<Transform>& frame_poses,
                                  double noise_sigma, const CameraIntrinsics& camera, std::uint64_t seed,
                                  const SequenceOptions& options = {});

/// Default synthetic camera: 1280x960, f = 800 px, no distortion.
CameraIntrinsics default_camera();

/// Camera (global -> camera) at `eye` looking at `target`, image y axis
/// pointing down relative to world z.
Transform look_at(const Vec3& eye, const Vec3& target);

/// Rounds to 9 significant digits.
double quantize9(double v);

}  // namespace fidmap
