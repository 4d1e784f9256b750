#pragma once

// Text file formats. All writers are deterministic; file writes go to a
// temporary sibling first and are renamed into place.
//
// Detections, one frame per line ('#' starts a comment):
//   frame_id timestamp n { marker_id x1 y1 x2 y2 x3 y3 x4 y4 } * n
// corners in marker order c1..c4, timestamp in seconds or '-' when unknown,
// floats with 9 significant digits.
//
// Calibration: "key value" lines with keys width height fx fy cx cy k1 k2 p1
// p2 k3. fx, fy, cx, cy are required, distortion defaults to zero.
//
// Marker map:
//   version 1
//   side <m>
//   component <id>
//   stats <mean reprojection px> <frames used>
//   marker <id> rx ry rz tx ty tz      (one per marker, marker -> global)
//
// Trajectory: frame_id timestamp rx ry rz tx ty tz ok|low, global -> camera.
// TUM export: timestamp tx ty tz qx qy qz qw, camera -> global, qw >= 0,
// quaternion components with 12 decimals.
// Ground truth corners: marker_id x1 y1 z1 ... x4 y4 z4.

#include <sstream>
#include <string>
#include <vector>

#include "fidmap/geometry.hpp"
#include "fidmap/map_types.hpp"
#include "fidmap/quiver.hpp"

namespace fidmap {

std::vector<FrameDetections> read_detections(std::istream& in);
void write_detections(std::ostream& out, const std::vector<FrameDetections>& frames);

CameraIntrinsics read_calibration(std::istream& in);
void write_calibration(std::ostream& out, const CameraIntrinsics& k);

MarkerMap read_map(std::istream& in);
void write_map(std::ostream& out, const MarkerMap& map);

Trajectory read_trajectory(std::istream& in);
void write_trajectory(std::ostream& out, const Trajectory& traj);

/// Frame ids of an imported TUM trajectory are the line indices.
Trajectory read_tum(std::istream& in);
void write_tum(std::ostream& out, const Trajectory& traj);

GroundTruthCorners read_gt_corners(std::istream& in);
void write_gt_corners(std::ostream& out, const GroundTruthCorners& corners);

/// Throws io-error if the file cannot be read.
std::string read_text_file(const std::string& path);
/// Writes to `path`.tmp and renames it over `path`; throws io-error.
void write_text_file_atomic(const std::string& path, const std::string& content);

/// Parses a whole file with one of the readers above.
template <class Reader>
auto read_file(const std::string& path, Reader reader) {
  std::istringstream in(read_text_file(path));
  return reader(in);
}

}  // namespace fidmap
