#include "fidmap/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "fidmap/error.hpp"

namespace fidmap {

namespace {

constexpr double kTimestampTolerance = 0.010;

struct Centered {
  Vec3 mean_x = Vec3::Zero();
  Vec3 mean_y = Vec3::Zero();
  Mat3 cross = Mat3::Zero();  // sum x' y'^T
  double xx = 0.0;            // sum |x'|^2
  double yy = 0.0;
};

Centered center(const std::vector<Vec3>& x, const std::vector<Vec3>& y) {
  Centered c;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    c.mean_x += x[i];
    c.mean_y += y[i];
  }
  c.mean_x /= n;
  c.mean_y /= n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Vec3 a = x[i] - c.mean_x;
    const Vec3 b = y[i] - c.mean_y;
    c.cross += a * b.transpose();
    c.xx += a.squaredNorm();
    c.yy += b.squaredNorm();
  }
  return c;
}

// Rotation maximizing sum y'.R x' from the dominant eigenvector of Horn's
// symmetric 4x4 matrix.
Mat3 horn_rotation(const Mat3& S) {
  Eigen::Matrix4d N;
  const double sxx = S(0, 0), sxy = S(0, 1), sxz = S(0, 2);
  const double syx = S(1, 0), syy = S(1, 1), syz = S(1, 2);
  const double szx = S(2, 0), szy = S(2, 1), szz = S(2, 2);
  N << sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
       syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
       szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
       sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(N);
  const Eigen::Vector4d q = es.eigenvectors().col(3);
  return Eigen::Quaterniond(q(0), q(1), q(2), q(3)).normalized().toRotationMatrix();
}

Alignment align_unchecked(const std::vector<Vec3>& x, const std::vector<Vec3>& y, bool with_scale) {
  const Centered c = center(x, y);
  Alignment a;
  a.rotation = horn_rotation(c.cross);
  if (with_scale && c.xx > 0.0) {
    a.scale = (a.rotation.cwiseProduct(c.cross.transpose())).sum() / c.xx;
    if (!(a.scale > 0.0)) {
      throw Error(ErrorCode::kDegenerateCorrespondences, "aligned scale is not positive");
    }
  }
  a.translation = c.mean_y - a.scale * (a.rotation * c.mean_x);
  return a;
}

// Pairs of estimated and ground-truth camera centers.
void associate(const Trajectory& est, const Trajectory& gt, std::vector<Vec3>& xe, std::vector<Vec3>& yg) {
  std::map<int, const TrajectoryEntry*> by_id;
  for (const auto& e : gt) by_id[e.frame_id] = &e;
  for (const auto& e : est) {
    const auto it = by_id.find(e.frame_id);
    if (it == by_id.end()) continue;
    xe.push_back(camera_center(e.pose));
    yg.push_back(camera_center(it->second->pose));
  }
  if (!xe.empty()) return;

  std::vector<const TrajectoryEntry*> sorted;
  for (const auto& e : gt) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->timestamp < b->timestamp; });
  for (const auto& e : est) {
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), e.timestamp,
                                     [](const auto* a, double t) { return a->timestamp < t; });
    const TrajectoryEntry* best = nullptr;
    double best_dt = kTimestampTolerance;
    for (auto c = it == sorted.begin() ? it : it - 1; c != sorted.end() && c <= it; ++c) {
      const double dt = std::abs((*c)->timestamp - e.timestamp);
      if (dt <= best_dt) {
        best_dt = dt;
        best = *c;
      }
    }
    if (best) {
      xe.push_back(camera_center(e.pose));
      yg.push_back(camera_center(best->pose));
    }
  }
}

}  // namespace

Alignment horn_align(const std::vector<Vec3>& source, const std::vector<Vec3>& target, bool with_scale) {
  if (source.size() != target.size()) {
    throw Error(ErrorCode::kInvalidArgument, "source and target sizes differ");
  }
  if (source.size() < 3) {
    throw Error(ErrorCode::kDegenerateCorrespondences, "alignment needs at least three correspondences");
  }
  const Centered c = center(source, target);
  Mat3 cov = Mat3::Zero();
  for (const auto& p : source) cov += (p - c.mean_x) * (p - c.mean_x).transpose();
  const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Mat3>(cov).eigenvalues();
  if (!(ev(1) > 1e-12 * std::max(ev(2), 1e-300))) {
    throw Error(ErrorCode::kDegenerateCorrespondences, "source points are collinear");
  }
  return align_unchecked(source, target, with_scale);
}

double alignment_rmse(const Alignment& a, const std::vector<Vec3>& source, const std::vector<Vec3>& target) {
  if (source.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) sum += (a.apply(source[i]) - target[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(source.size()));
}

AceResult compute_ace(const std::map<int, Transform>& est_markers, const GroundTruthCorners& gt,
                      const MarkerGeometry& geom, bool with_scale) {
  std::vector<Vec3> x;
  std::vector<Vec3> y;
  AceResult out;
  for (const auto& [id, pose] : est_markers) {
    const auto it = gt.find(id);
    if (it == gt.end()) continue;
    ++out.matched_markers;
    for (int k = 0; k < 4; ++k) {
      x.push_back(pose * geom.corners()[k]);
      y.push_back(it->second[k]);
    }
  }
  if (out.matched_markers == 0) throw Error(ErrorCode::kNoOverlap, "no marker is common to map and ground truth");
  // A single marker still gives four non-collinear corners.
  out.alignment = horn_align(x, y, with_scale);
  out.ace = alignment_rmse(out.alignment, x, y);
  return out;
}

Vec3 camera_center(const Pose6& pose) {
  const Mat3 R = rodrigues_to_matrix(pose.r);
  return -(R.transpose() * pose.t);
}

AteResult compute_ate(const Trajectory& est, const Trajectory& gt, bool scale_search) {
  std::vector<Vec3> x;
  std::vector<Vec3> y;
  associate(est, gt, x, y);
  if (x.size() < 2) throw Error(ErrorCode::kNoOverlap, "fewer than two frames associate with the ground truth");

  AteResult out;
  out.matched_frames = static_cast<int>(x.size());
  if (!scale_search) {
    out.alignment = align_unchecked(x, y, false);
    out.ate = alignment_rmse(out.alignment, x, y);
    return out;
  }

  // Dividing the estimate by s leaves the optimal rotation unchanged, so the
  // aligned RMSE at every grid scale follows in closed form.
  const Centered c = center(x, y);
  const Mat3 R = horn_rotation(c.cross);
  const double cross = R.cwiseProduct(c.cross.transpose()).sum();
  const double n = static_cast<double>(x.size());
  double best = std::numeric_limits<double>::infinity();
  double best_s = 1.0;
  for (int k = 0; k <= 2990; ++k) {
    const double s = 0.01 + 0.001 * k;
    const double sq = std::max(0.0, c.xx / (s * s) - 2.0 * cross / s + c.yy);
    if (sq < best) {
      best = sq;
      best_s = s;
    }
  }
  out.scale = best_s;
  out.alignment.rotation = R;
  out.alignment.scale = 1.0 / best_s;
  out.alignment.translation = c.mean_y - out.alignment.scale * (R * c.mean_x);
  out.ate = std::sqrt(best / n);
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  if (has_ace) {
    j["ace"] = ace.ace;
    j["matched_markers"] = ace.matched_markers;
  }
  if (has_ate) {
    j["ate"] = ate.ate;
    j["scale_used"] = ate.scale;
    j["matched_frames"] = ate.matched_frames;
  } else {
    j["scale_used"] = has_ace ? ace.alignment.scale : 1.0;
  }
  return j.dump(2);
}

}  // namespace fidmap
