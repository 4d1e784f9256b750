#include "fidmap/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/SVD>

#include "fidmap/error.hpp"

namespace fidmap {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSmallAngle = 1e-12;

// Near pi the axis from the antisymmetric part loses precision; switch to
// the symmetric part once cos(theta) drops below this.
constexpr double kNearPiCos = -0.999;

Vec3 vee_antisymmetric(const Mat3& R) {
  return 0.5 * Vec3(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
}

// For an axis-angle vector at angle pi, r and -r describe the same rotation.
Vec3 fix_half_turn_sign(const Vec3& r) {
  for (int i = 0; i < 3; ++i) {
    if (std::abs(r[i]) > 1e-9) return r[i] < 0 ? Vec3(-r) : r;
  }
  return r;
}

}  // namespace

Pose6 Pose6::canonical() const {
  Pose6 out = *this;
  const double theta = r.norm();
  if (theta <= kSmallAngle) return out;
  Vec3 axis = r / theta;
  double angle = theta;
  if (angle > kPi) {
    angle = std::fmod(angle, 2.0 * kPi);
    if (angle > kPi) {
      angle = 2.0 * kPi - angle;
      axis = -axis;
    }
  }
  out.r = axis * angle;
  if (std::abs(angle - kPi) < kSmallAngle) out.r = fix_half_turn_sign(out.r);
  return out;
}

Mat4 Transform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = R_;
  m.topRightCorner<3, 1>() = t_;
  return m;
}

Transform Transform::checked(const Mat4& m) {
  if (!m.allFinite()) throw Error(ErrorCode::kInvalidArgument, "transform has non-finite entries");
  if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "transform bottom row must be (0,0,0,1)");
  }
  return checked(Mat3(m.topLeftCorner<3, 3>()), Vec3(m.topRightCorner<3, 1>()));
}

Transform Transform::checked(const Mat3& R, const Vec3& t) {
  if (!R.allFinite() || !t.allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "transform has non-finite entries");
  }
  if (!is_rotation(R)) throw Error(ErrorCode::kInvalidArgument, "rotation block is not orthonormal");
  return {R, t};
}

bool is_rotation(const Mat3& R, double tol) {
  return (R.transpose() * R - Mat3::Identity()).norm() < tol && std::abs(R.determinant() - 1.0) < tol;
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 rodrigues_to_matrix(const Vec3& r) {
  if (!r.allFinite()) throw Error(ErrorCode::kInvalidArgument, "rotation vector is not finite");
  const double theta = r.norm();
  if (theta < kSmallAngle) return Mat3::Identity() + skew(r);
  const Mat3 K = skew(r / theta);
  const double half = std::sin(0.5 * theta);
  return Mat3::Identity() + std::sin(theta) * K + (2.0 * half * half) * K * K;
}

Vec3 matrix_to_rodrigues(const Mat3& R) {
  if (!R.allFinite() || !is_rotation(R, 1e-6)) {
    throw Error(ErrorCode::kInvalidArgument, "matrix is not a rotation");
  }
  const double c = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const Vec3 v = vee_antisymmetric(R);  // sin(theta) * axis
  const double s = v.norm();
  const double theta = std::atan2(s, c);
  if (theta < kSmallAngle) return v;
  if (c > kNearPiCos) return v * (theta / s);

  // (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) a a^T
  const Mat3 B = 0.5 * (R + R.transpose()) - c * Mat3::Identity();
  int k = 0;
  B.diagonal().maxCoeff(&k);
  Vec3 axis = B.col(k).normalized();
  const double side = axis.dot(v);
  if (std::abs(side) > 1e-15) {
    if (side < 0) axis = -axis;
  } else {
    axis = fix_half_turn_sign(axis);
  }
  return axis * theta;
}

Mat3 right_jacobian(const Vec3& r) {
  const double theta2 = r.squaredNorm();
  const Mat3 K = skew(r);
  double a;
  double b;
  if (theta2 < 1e-8) {
    a = 0.5 - theta2 / 24.0;
    b = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = (1.0 - std::cos(theta)) / theta2;
    b = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() - a * K + b * K * K;
}

Mat3 nearest_rotation(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) D(2, 2) = -1.0;
  return svd.matrixU() * D * svd.matrixV().transpose();
}

Transform gamma_from_zeta(const Pose6& z) {
  if (!z.finite()) throw Error(ErrorCode::kInvalidArgument, "pose has non-finite components");
  return {rodrigues_to_matrix(z.r), z.t};
}

Pose6 zeta_from_gamma(const Transform& g) {
  if (!g.translation().allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "transform has non-finite translation");
  }
  if (!is_rotation(g.rotation())) throw Error(ErrorCode::kInvalidArgument, "rotation block is not orthonormal");
  return Pose6{matrix_to_rodrigues(g.rotation()), g.translation()};
}

Eigen::Matrix<double, 9, 1> CameraIntrinsics::to_vector() const {
  Eigen::Matrix<double, 9, 1> v;
  v << fx, fy, cx, cy, k1, k2, p1, p2, k3;
  return v;
}

void CameraIntrinsics::set_from_vector(const Eigen::Matrix<double, 9, 1>& v) {
  fx = v[0];
  fy = v[1];
  cx = v[2];
  cy = v[3];
  k1 = v[4];
  k2 = v[5];
  p1 = v[6];
  p2 = v[7];
  k3 = v[8];
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::kInvalidArgument, "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::kInvalidArgument, "image size must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw Error(ErrorCode::kInvalidArgument, "principal point outside the image");
  }
  if (!to_vector().allFinite()) throw Error(ErrorCode::kInvalidArgument, "non-finite intrinsics");
}

MarkerGeometry::MarkerGeometry(double side) : side_(side) {
  if (!(side > 0.0) || !std::isfinite(side)) {
    throw Error(ErrorCode::kInvalidArgument, "marker side must be positive");
  }
  const double h = 0.5 * side;
  corners_ = {Vec3(h, -h, 0.0), Vec3(h, h, 0.0), Vec3(-h, h, 0.0), Vec3(-h, -h, 0.0)};
}

Vec2 distort(const CameraIntrinsics& k, const Vec2& xn) {
  const double x = xn.x();
  const double y = xn.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (k.k1 + r2 * (k.k2 + r2 * k.k3));
  return {x * radial + 2.0 * k.p1 * x * y + k.p2 * (r2 + 2.0 * x * x),
          y * radial + k.p1 * (r2 + 2.0 * y * y) + 2.0 * k.p2 * x * y};
}

Vec2 undistort_pixel(const CameraIntrinsics& k, const Vec2& px, int iterations) {
  const Vec2 xd((px.x() - k.cx) / k.fx, (px.y() - k.cy) / k.fy);
  Vec2 x = xd;
  for (int it = 0; it < iterations; ++it) {
    const double r2 = x.squaredNorm();
    const double radial = 1.0 + r2 * (k.k1 + r2 * (k.k2 + r2 * k.k3));
    const double dx = 2.0 * k.p1 * x.x() * x.y() + k.p2 * (r2 + 2.0 * x.x() * x.x());
    const double dy = k.p1 * (r2 + 2.0 * x.y() * x.y()) + 2.0 * k.p2 * x.x() * x.y();
    x = Vec2((xd.x() - dx) / radial, (xd.y() - dy) / radial);
  }
  return x;
}

std::optional<Vec2> project_camera_point(const CameraIntrinsics& k, const Vec3& pc,
                                         Eigen::Matrix<double, 2, 3>* d_point,
                                         Eigen::Matrix<double, 2, 9>* d_intrinsics) {
  if (!(pc.z() > 1e-9)) return std::nullopt;
  const double iz = 1.0 / pc.z();
  const double x = pc.x() * iz;
  const double y = pc.y() * iz;
  const double r2 = x * x + y * y;
  const double r4 = r2 * r2;
  const double r6 = r4 * r2;
  const double radial = 1.0 + k.k1 * r2 + k.k2 * r4 + k.k3 * r6;
  const double xd = x * radial + 2.0 * k.p1 * x * y + k.p2 * (r2 + 2.0 * x * x);
  const double yd = y * radial + k.p1 * (r2 + 2.0 * y * y) + 2.0 * k.p2 * x * y;

  if (d_point != nullptr) {
    const double drad = k.k1 + 2.0 * k.k2 * r2 + 3.0 * k.k3 * r4;  // d radial / d r2
    Eigen::Matrix2d d_dist;
    d_dist(0, 0) = radial + 2.0 * x * x * drad + 2.0 * k.p1 * y + 6.0 * k.p2 * x;
    d_dist(0, 1) = 2.0 * x * y * drad + 2.0 * k.p1 * x + 2.0 * k.p2 * y;
    d_dist(1, 0) = 2.0 * x * y * drad + 2.0 * k.p1 * x + 2.0 * k.p2 * y;
    d_dist(1, 1) = radial + 2.0 * y * y * drad + 6.0 * k.p1 * y + 2.0 * k.p2 * x;
    Eigen::Matrix<double, 2, 3> d_norm;
    d_norm << iz, 0.0, -x * iz,
              0.0, iz, -y * iz;
    const Eigen::Matrix2d focal = Eigen::Vector2d(k.fx, k.fy).asDiagonal();
    *d_point = focal * d_dist * d_norm;
  }
  if (d_intrinsics != nullptr) {
    auto& J = *d_intrinsics;
    J.setZero();
    J(0, 0) = xd;
    J(1, 1) = yd;
    J(0, 2) = 1.0;
    J(1, 3) = 1.0;
    J(0, 4) = k.fx * x * r2;
    J(1, 4) = k.fy * y * r2;
    J(0, 5) = k.fx * x * r4;
    J(1, 5) = k.fy * y * r4;
    J(0, 6) = k.fx * 2.0 * x * y;
    J(1, 6) = k.fy * (r2 + 2.0 * y * y);
    J(0, 7) = k.fx * (r2 + 2.0 * x * x);
    J(1, 7) = k.fy * 2.0 * x * y;
    J(0, 8) = k.fx * x * r6;
    J(1, 8) = k.fy * y * r6;
  }
  return Vec2(k.fx * xd + k.cx, k.fy * yd + k.cy);
}

std::optional<Vec2> project(const CameraIntrinsics& k, const Transform& g, const Vec3& p) {
  return project_camera_point(k, g * p);
}

}  // namespace fidmap
