#pragma once

#include <string>
#include <vector>

#include "fidmap/geometry.hpp"
#include "fidmap/map_types.hpp"

namespace fidmap {

/// y = scale * rotation * x + translation.
struct Alignment {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
};

/// Closed-form (unit quaternion) least-squares alignment of `source` onto
/// `target`. With `with_scale` the scale is the least-squares optimum for the
/// recovered rotation. Throws degenerate-correspondences for fewer than three
/// pairs or collinear source points.
Alignment horn_align(const std::vector<Vec3>& source, const std::vector<Vec3>& target, bool with_scale);

/// RMSE of |a.apply(source_k) - target_k|.
double alignment_rmse(const Alignment& a, const std::vector<Vec3>& source, const std::vector<Vec3>& target);

struct AceResult {
  double ace = 0.0;
  int matched_markers = 0;
  Alignment alignment;
};

/// Corners of the markers common to both sides, aligned rigidly (or by a
/// similarity) onto the ground truth; RMSE over all matched corners.
/// Throws no-overlap when no marker is shared.
AceResult compute_ace(const std::map<int, Transform>& est_markers, const GroundTruthCorners& gt,
                      const MarkerGeometry& geom, bool with_scale = false);

struct AteResult {
  double ate = 0.0;
  double scale = 1.0;  // estimate units per ground-truth unit
  int matched_frames = 0;
  Alignment alignment;
};

/// Camera-center RMSE after alignment. Entries are associated by frame id,
/// or by nearest timestamp within 10 ms when no frame id matches. With
/// `scale_search` the estimate is divided by every scale of the grid
/// 0.01, 0.011, ..., 3 before rigid alignment and the best scale is kept.
/// Throws no-overlap with fewer than two associations.
AteResult compute_ate(const Trajectory& est, const Trajectory& gt, bool scale_search = false);

/// Camera center -R^T t of a global -> camera pose.
Vec3 camera_center(const Pose6& pose);

struct EvalReport {
  bool has_ace = false;
  AceResult ace;
  bool has_ate = false;
  AteResult ate;

  std::string to_json() const;
};

}  // namespace fidmap
