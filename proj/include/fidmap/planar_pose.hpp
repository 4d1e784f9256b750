#pragma once

#include <array>
#include <limits>

#include "fidmap/geometry.hpp"

namespace fidmap {

/// Pixel locations of the four corners of one marker, in the same order as
/// MarkerGeometry::corners().
struct CornerObservation {
  int marker_id = 0;
  std::array<Vec2, 4> pixels;
};

struct PlanarPoseConfig {
  /// Observations with err_alt / max(err_best, floor) below this are ambiguous.
  double ambiguity_ratio = 3.0;
  double error_floor = 1e-12;
  int max_iterations = 25;
  double step_tolerance = 1e-8;
};

/// Both solutions of the planar pose problem for one observation. Poses map
/// marker coordinates into the camera frame; errors are the mean squared
/// corner reprojection error in px^2.
struct PoseCandidatePair {
  Transform best;
  Transform alt;
  double err_best = 0.0;
  double err_alt = std::numeric_limits<double>::infinity();
  bool ambiguous = false;
  /// False when only one physically valid solution survived (alt == best).
  bool has_alt = true;
};

/// Sum over the four corners of the squared pixel distance between the
/// projection of the marker corners under `marker_to_camera` and the
/// observation. Returns +inf if any corner falls behind the camera.
double reprojection_error(const Transform& marker_to_camera, const MarkerGeometry& geom,
                          const CornerObservation& obs, const CameraIntrinsics& k);

/// Throws degenerate-observation unless the four pixels form a strictly
/// convex quadrilateral with non-negligible area.
void check_quadrilateral(const CornerObservation& obs);

/// Homography estimation from the undistorted corners, two-fold rotation
/// decomposition, then damped Gauss-Newton refinement of both candidates on
/// the full distorted projection model.
PoseCandidatePair solve_planar_pose(const MarkerGeometry& geom, const CornerObservation& obs,
                                    const CameraIntrinsics& k, const PlanarPoseConfig& config = {});

/// Normalized DLT homography mapping the plane points `src` onto `dst`
/// (exact for four points in general position). Scaled so H(2,2) = 1.
Mat3 estimate_homography(const std::array<Vec2, 4>& src, const std::array<Vec2, 4>& dst);

}  // namespace fidmap
