#include "fidmap/planar_pose.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include <Eigen/Dense>

#include "fidmap/error.hpp"

namespace fidmap {

namespace {

using Mat86 = Eigen::Matrix<double, 8, 6>;
using Vec8 = Eigen::Matrix<double, 8, 1>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

// Similarity moving the centroid to the origin with mean distance sqrt(2).
Mat3 normalizing_transform(const std::array<Vec2, 4>& pts) {
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= 4.0;
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= 4.0;
  const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Mat3 T;
  T << s, 0.0, -s * centroid.x(),
       0.0, s, -s * centroid.y(),
       0.0, 0.0, 1.0;
  return T;
}

// Rotation taking the unit vector along `a` onto the z axis.
Mat3 rotate_to_z_axis(const Vec3& a) {
  const Vec3 n = a.normalized();
  const double c = n.z();
  Mat3 R;
  if (std::abs(1.0 + c) < 1e-7) {
    R = Vec3(1.0, 1.0, -1.0).asDiagonal();
    return R;
  }
  const double d = 1.0 / (1.0 + c);
  const double ax2 = n.x() * n.x();
  const double ay2 = n.y() * n.y();
  const double axay = n.x() * n.y();
  R << 1.0 - ax2 * d, -axay * d, -n.x(),
       -axay * d, 1.0 - ay2 * d, -n.y(),
       n.x(), n.y(), 1.0 - (ax2 + ay2) * d;
  return R;
}

// The two rotations consistent with the first-order behaviour of the
// plane-to-image homography at the marker center. They differ by a
// reflection of the plane about the viewing ray.
std::array<Mat3, 2> homography_rotations(const Mat3& Hin) {
  const Mat3 H = Hin / Hin(2, 2);
  Eigen::Matrix2d J;
  J << H(0, 0) - H(2, 0) * H(0, 2), H(0, 1) - H(2, 1) * H(0, 2),
       H(1, 0) - H(2, 0) * H(1, 2), H(1, 1) - H(2, 1) * H(1, 2);
  const double p = H(0, 2);
  const double q = H(1, 2);

  const Mat3 Rv = rotate_to_z_axis(Vec3(p, q, 1.0)).transpose();
  Eigen::Matrix2d B;
  B << Rv(0, 0) - p * Rv(2, 0), Rv(0, 1) - p * Rv(2, 1),
       Rv(1, 0) - q * Rv(2, 0), Rv(1, 1) - q * Rv(2, 1);
  const Eigen::Matrix2d A = B.inverse() * J;

  const Eigen::Matrix2d AtA = A * A.transpose();
  const double tr = AtA(0, 0) + AtA(1, 1);
  const double diff = AtA(0, 0) - AtA(1, 1);
  const double gamma = std::sqrt(0.5 * (tr + std::sqrt(diff * diff + 4.0 * AtA(0, 1) * AtA(0, 1))));
  const Eigen::Matrix2d Rt = A / gamma;

  const double b0 = std::sqrt(std::max(0.0, 1.0 - Rt(0, 0) * Rt(0, 0) - Rt(1, 0) * Rt(1, 0)));
  double b1 = std::sqrt(std::max(0.0, 1.0 - Rt(0, 1) * Rt(0, 1) - Rt(1, 1) * Rt(1, 1)));
  if (-Rt(0, 0) * Rt(0, 1) - Rt(1, 0) * Rt(1, 1) < 0.0) b1 = -b1;

  std::array<Mat3, 2> out;
  for (int sign = 0; sign < 2; ++sign) {
    const double s = sign == 0 ? 1.0 : -1.0;
    const Vec3 c0(Rt(0, 0), Rt(1, 0), s * b0);
    const Vec3 c1(Rt(0, 1), Rt(1, 1), s * b1);
    Mat3 local;
    local.col(0) = c0;
    local.col(1) = c1;
    local.col(2) = c0.cross(c1);
    out[sign] = nearest_rotation(Rv * local);
  }
  return out;
}

// Least-squares translation for a known rotation from normalized image points.
Vec3 translation_for_rotation(const Mat3& R, const std::array<Vec3, 4>& object,
                              const std::array<Vec2, 4>& normalized) {
  Eigen::Matrix<double, 8, 3> A;
  Vec8 b;
  for (int i = 0; i < 4; ++i) {
    const Vec3 rp = R * object[i];
    const double x = normalized[i].x();
    const double y = normalized[i].y();
    A.row(2 * i) << 1.0, 0.0, -x;
    A.row(2 * i + 1) << 0.0, 1.0, -y;
    b[2 * i] = x * rp.z() - rp.x();
    b[2 * i + 1] = y * rp.z() - rp.y();
  }
  return A.colPivHouseholderQr().solve(b);
}

bool residuals_and_jacobian(const Transform& pose, const MarkerGeometry& geom, const CornerObservation& obs,
                            const CameraIntrinsics& k, const Vec3& r, Vec8& res, Mat86* J) {
  const Mat3 Jr = J != nullptr ? right_jacobian(r) : Mat3::Identity();
  for (int c = 0; c < 4; ++c) {
    const Vec3& corner = geom.corners()[c];
    const Vec3 pc = pose * corner;
    Eigen::Matrix<double, 2, 3> dp;
    const auto u = project_camera_point(k, pc, J != nullptr ? &dp : nullptr);
    if (!u) return false;
    res.segment<2>(2 * c) = *u - obs.pixels[c];
    if (J != nullptr) {
      J->block<2, 3>(2 * c, 0) = -dp * pose.rotation() * skew(corner) * Jr;
      J->block<2, 3>(2 * c, 3) = dp;
    }
  }
  return true;
}

struct Refined {
  Transform pose;
  double error;  // sum of squared corner errors
};

// Damped Gauss-Newton on the corner reprojection error. With
// `fixed_rotation` only the translation moves.
std::optional<Refined> refine(const Transform& init, const MarkerGeometry& geom, const CornerObservation& obs,
                              const CameraIntrinsics& k, const PlanarPoseConfig& cfg, bool fixed_rotation = false) {
  Pose6 z = zeta_from_gamma(init);
  Transform pose = init;
  Vec8 res;
  if (!residuals_and_jacobian(pose, geom, obs, k, z.r, res, nullptr)) return std::nullopt;
  double cost = res.squaredNorm();
  double mu = 1e-6;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    Mat86 J;
    residuals_and_jacobian(pose, geom, obs, k, z.r, res, &J);
    Eigen::Matrix<double, 6, 6> H = J.transpose() * J;
    const Vec6 g = J.transpose() * res;
    H.diagonal() += mu * H.diagonal().cwiseMax(1e-12);
    Vec6 step = Vec6::Zero();
    if (fixed_rotation) {
      step.tail<3>() = H.bottomRightCorner<3, 3>().ldlt().solve(-g.tail<3>());
    } else {
      step = H.ldlt().solve(-g);
    }
    if (!step.allFinite()) break;

    Pose6 cand = z;
    cand.r += step.head<3>();
    cand.t += step.tail<3>();
    const Transform cand_pose = gamma_from_zeta(cand);
    Vec8 cand_res;
    const bool valid = residuals_and_jacobian(cand_pose, geom, obs, k, cand.r, cand_res, nullptr);
    if (valid && cand_res.squaredNorm() <= cost) {
      z = cand.canonical();
      pose = gamma_from_zeta(z);
      cost = cand_res.squaredNorm();
      mu = std::max(mu * 0.1, 1e-12);
    } else {
      mu *= 10.0;
    }
    if (step.norm() < cfg.step_tolerance) break;
  }
  return Refined{pose, cost};
}

// Rotation whose plane normal is the reflection of the pose's normal about
// the ray through the marker center. Both project the marker alike to first
// order, which is the source of the planar ambiguity.
Mat3 mirror_rotation(const Transform& pose) {
  const Vec3 v = pose.translation().normalized();
  const Vec3 n = pose.rotation().col(2);
  const Vec3 m = 2.0 * n.dot(v) * v - n;
  const Vec3 axis = n.cross(m);
  const double s = axis.norm();
  if (s < 1e-15) return pose.rotation();
  const double angle = std::atan2(s, n.dot(m));
  return Eigen::AngleAxisd(angle, axis / s).toRotationMatrix() * pose.rotation();
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  return matrix_to_rodrigues(nearest_rotation(a.transpose() * b)).norm();
}

}  // namespace

double reprojection_error(const Transform& marker_to_camera, const MarkerGeometry& geom,
                          const CornerObservation& obs, const CameraIntrinsics& k) {
  double sum = 0.0;
  for (int c = 0; c < 4; ++c) {
    const auto u = project(k, marker_to_camera, geom.corners()[c]);
    if (!u) return std::numeric_limits<double>::infinity();
    sum += (*u - obs.pixels[c]).squaredNorm();
  }
  return sum;
}

void check_quadrilateral(const CornerObservation& obs) {
  double sign = 0.0;
  double area = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Vec2& a = obs.pixels[i];
    const Vec2& b = obs.pixels[(i + 1) % 4];
    const Vec2& c = obs.pixels[(i + 2) % 4];
    if (!a.allFinite()) throw Error(ErrorCode::kDegenerateObservation, "non-finite corner pixel");
    const Vec2 e1 = b - a;
    const Vec2 e2 = c - b;
    const double cross = e1.x() * e2.y() - e1.y() * e2.x();
    if (cross == 0.0 || (sign != 0.0 && (cross > 0.0) != (sign > 0.0))) {
      throw Error(ErrorCode::kDegenerateObservation,
                  "corners of marker " + std::to_string(obs.marker_id) + " do not form a convex quadrilateral");
    }
    sign = cross;
    area += a.x() * b.y() - b.x() * a.y();
  }
  if (std::abs(0.5 * area) < 1e-3) {
    throw Error(ErrorCode::kDegenerateObservation,
                "corners of marker " + std::to_string(obs.marker_id) + " span no area");
  }
}

Mat3 estimate_homography(const std::array<Vec2, 4>& src, const std::array<Vec2, 4>& dst) {
  const Mat3 Ts = normalizing_transform(src);
  const Mat3 Td = normalizing_transform(dst);
  Eigen::Matrix<double, 8, 9> A;
  for (int i = 0; i < 4; ++i) {
    const Vec3 s = Ts * src[i].homogeneous();
    const Vec3 d = Td * dst[i].homogeneous();
    A.row(2 * i) << 0.0, 0.0, 0.0, -d.z() * s.transpose(), d.y() * s.transpose();
    A.row(2 * i + 1) << d.z() * s.transpose(), 0.0, 0.0, 0.0, -d.x() * s.transpose();
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 8, 9>> svd(A, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
  Mat3 Hn;
  Hn << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
  Mat3 H = Td.inverse() * Hn * Ts;
  if (std::abs(H(2, 2)) < 1e-15 || !H.allFinite()) {
    throw Error(ErrorCode::kDegenerateObservation, "homography is degenerate");
  }
  return H / H(2, 2);
}

PoseCandidatePair solve_planar_pose(const MarkerGeometry& geom, const CornerObservation& obs,
                                    const CameraIntrinsics& k, const PlanarPoseConfig& config) {
  check_quadrilateral(obs);

  std::array<Vec2, 4> plane;
  std::array<Vec2, 4> normalized;
  for (int c = 0; c < 4; ++c) {
    plane[c] = geom.corners()[c].head<2>();
    normalized[c] = undistort_pixel(k, obs.pixels[c]);
  }
  const Mat3 H = estimate_homography(plane, normalized);
  const auto rotations = homography_rotations(H);

  std::array<std::optional<Refined>, 2> initial;
  std::array<std::optional<Refined>, 2> refined;
  for (int s = 0; s < 2; ++s) {
    const Transform pose(rotations[s], translation_for_rotation(rotations[s], geom.corners(), normalized));
    const double err = reprojection_error(pose, geom, obs, k);
    if (!std::isfinite(err)) continue;
    initial[s] = Refined{pose, err};
    refined[s] = refine(pose, geom, obs, k, config);
  }
  if (!refined[0] && !refined[1]) {
    throw Error(ErrorCode::kDegenerateObservation,
                "no solution places marker " + std::to_string(obs.marker_id) + " in front of the camera");
  }

  // When both candidates slide into the same minimum there is no distinct
  // second basin; restart from the mirror twin of the refined pose, and if that
  // falls back into the same basin keep the twin with only its translation
  // refined.
  if (refined[0] && refined[1]) {
    const double drot = rotation_angle_between(refined[0]->pose.rotation(), refined[1]->pose.rotation());
    const double dt = (refined[0]->pose.translation() - refined[1]->pose.translation()).norm();
    if (drot < 1e-6 && dt < 1e-6 * (1.0 + refined[0]->pose.translation().norm())) {
      const int keep = refined[0]->error <= refined[1]->error ? 0 : 1;
      const Mat3 R = mirror_rotation(refined[keep]->pose);
      const Transform twin(R, translation_for_rotation(R, geom.corners(), normalized));
      auto full = refine(twin, geom, obs, k, config);
      if (full && rotation_angle_between(full->pose.rotation(), refined[keep]->pose.rotation()) > 1e-6) {
        refined[1 - keep] = full;
      } else {
        refined[1 - keep] = refine(twin, geom, obs, k, config, true);
      }
    }
  }

  PoseCandidatePair out;
  if (refined[0] && refined[1]) {
    const int lo = refined[0]->error <= refined[1]->error ? 0 : 1;
    out.best = refined[lo]->pose;
    out.alt = refined[1 - lo]->pose;
    out.err_best = refined[lo]->error / 4.0;
    out.err_alt = refined[1 - lo]->error / 4.0;
    out.has_alt = true;
    out.ambiguous = out.err_alt / std::max(out.err_best, config.error_floor) < config.ambiguity_ratio;
  } else {
    const auto& only = refined[0] ? *refined[0] : *refined[1];
    out.best = only.pose;
    out.alt = only.pose;
    out.err_best = only.error / 4.0;
    out.err_alt = std::numeric_limits<double>::infinity();
    out.has_alt = false;
    out.ambiguous = false;
  }
  return out;
}

}  // namespace fidmap
