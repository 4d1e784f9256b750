#pragma once

// Rigid-transform algebra and the pinhole + radial/tangential camera model.
//
// Conventions: a Pose6 is a minimal (axis-angle, translation) pair; the
// rotation is exp([r]x), so applying a pose to a point is p_b = R p_a + t.
// Transforms compose right-to-left: (a * b) * p == a * (b * p).

#include <array>
#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace fidmap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Axis-angle rotation r (radians * unit axis) plus translation t (meters).
struct Pose6 {
  Vec3 r = Vec3::Zero();
  Vec3 t = Vec3::Zero();

  /// Same rotation with |r| in [0, pi]. At exactly pi the sign is chosen so
  /// the first non-negligible component of the axis is positive.
  Pose6 canonical() const;
  bool finite() const { return r.allFinite() && t.allFinite(); }
};

/// Rigid transform kept as a rotation block plus translation. Construction from
/// (R, t) trusts the caller; use Transform::checked for data from outside.
class Transform {
 public:
  Transform() : R_(Mat3::Identity()), t_(Vec3::Zero()) {}
  Transform(const Mat3& R, const Vec3& t) : R_(R), t_(t) {}

  static Transform identity() { return {}; }
  /// Validates the bottom row and the orthonormality of the rotation block.
  static Transform checked(const Mat4& m);
  static Transform checked(const Mat3& R, const Vec3& t);

  const Mat3& rotation() const { return R_; }
  const Vec3& translation() const { return t_; }
  Mat4 matrix() const;

  Transform inverse() const { return {R_.transpose(), -(R_.transpose() * t_)}; }
  Transform operator*(const Transform& o) const { return {R_ * o.R_, R_ * o.t_ + t_}; }
  Vec3 operator*(const Vec3& p) const { return R_ * p + t_; }

 private:
  Mat3 R_;
  Vec3 t_;
};

/// True when R^T R = I and det(R) = 1 within `tol`.
bool is_rotation(const Mat3& R, double tol = 1e-9);

Mat3 skew(const Vec3& v);

/// exp([r]x) via Rodrigues' formula. Throws invalid-argument on non-finite input.
Mat3 rodrigues_to_matrix(const Vec3& r);

/// Inverse of rodrigues_to_matrix with |r| in [0, pi]. Requires R orthonormal
/// within 1e-6, otherwise throws invalid-argument.
Vec3 matrix_to_rodrigues(const Mat3& R);

/// Right Jacobian of the rotation exponential: d(R(r) p)/dr = -R [p]x Jr(r).
Mat3 right_jacobian(const Vec3& r);

/// Closest rotation in Frobenius norm (orthogonal polar factor).
Mat3 nearest_rotation(const Mat3& M);

Transform gamma_from_zeta(const Pose6& z);
Pose6 zeta_from_gamma(const Transform& g);

inline Vec3 transform_point(const Transform& g, const Vec3& p) { return g * p; }

/// Pinhole intrinsics with the 5-coefficient radial-tangential distortion
/// model (k1, k2, p1, p2, k3). Distortion defaults to zero.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;
  double k3 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;
  int width = 0;
  int height = 0;

  static constexpr int kNumParams = 9;

  /// Parameter vector order: fx, fy, cx, cy, k1, k2, p1, p2, k3.
  Eigen::Matrix<double, kNumParams, 1> to_vector() const;
  void set_from_vector(const Eigen::Matrix<double, kNumParams, 1>& v);

  /// Throws invalid-argument if fx, fy <= 0 or the principal point lies
  /// outside the image.
  void validate() const;
};

/// Square marker of side s with corners, in marker coordinates,
/// c1=(s/2,-s/2,0), c2=(s/2,s/2,0), c3=(-s/2,s/2,0), c4=(-s/2,-s/2,0).
class MarkerGeometry {
 public:
  explicit MarkerGeometry(double side);

  double side() const { return side_; }
  const std::array<Vec3, 4>& corners() const { return corners_; }

 private:
  double side_;
  std::array<Vec3, 4> corners_;
};

/// Applies lens distortion to normalized image coordinates.
Vec2 distort(const CameraIntrinsics& k, const Vec2& xn);

/// Fixed-point inversion of `distort` from pixel coordinates back to
/// normalized coordinates.
Vec2 undistort_pixel(const CameraIntrinsics& k, const Vec2& px, int iterations = 10);

/// Projects a point already expressed in the camera frame. Returns nullopt if
/// the point is not in front of the camera (z <= 1e-9). Optional outputs
/// receive d(pixel)/d(point) and d(pixel)/d(intrinsics vector).
std::optional<Vec2> project_camera_point(const CameraIntrinsics& k, const Vec3& pc,
                                         Eigen::Matrix<double, 2, 3>* d_point = nullptr,
                                         Eigen::Matrix<double, 2, 9>* d_intrinsics = nullptr);

/// u = Psi(delta, g, p): transforms p by g and projects it.
std::optional<Vec2> project(const CameraIntrinsics& k, const Transform& g, const Vec3& p);

}  // namespace fidmap
