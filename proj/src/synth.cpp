#include "fidmap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>

#include "fidmap/error.hpp"

namespace fidmap {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSpacing = 1.6;  // marker pitch in units of the side

double deg(double d) { return d * kPi / 180.0; }

// Marker frame whose z axis is `normal` and whose y axis is as close to
// `up` as possible.
Mat3 facing(const Vec3& normal, const Vec3& up) {
  const Vec3 z = normal.normalized();
  const Vec3 x = up.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R.col(0) = x;
  R.col(1) = y;
  R.col(2) = z;
  return R;
}

Vec3 up_for(const Vec3& normal) {
  return std::abs(normal.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(0, 1, 0);
}

// Camera (global -> camera) at `eye` with optical axis `forward`; the image
// y axis points away from `up`.
Transform camera_pose(const Vec3& eye, const Vec3& forward, const Vec3& up) {
  const Vec3 z = forward.normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) x = z.cross(Vec3(0, 1, 0));
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 Rwc;
  Rwc.col(0) = x;
  Rwc.col(1) = y;
  Rwc.col(2) = z;
  const Mat3 R = Rwc.transpose();
  return {R, -(R * eye)};
}

struct WallSegment {
  Vec3 origin;   // start point on the floor
  Vec3 tangent;  // unit, along the wall
  double length;
  Vec3 normal;   // unit, pointing into the room
};

std::vector<WallSegment> wall_segments(SceneLayout layout, const RoomSize& room) {
  const double W = room.width;
  const double D = room.depth;
  std::vector<WallSegment> walls;
  if (layout == SceneLayout::kRoomWalls) {
    walls.push_back({{-W / 2, -D / 2, 0}, {1, 0, 0}, W, {0, 1, 0}});
    walls.push_back({{W / 2, -D / 2, 0}, {0, 1, 0}, D, {-1, 0, 0}});
    walls.push_back({{W / 2, D / 2, 0}, {-1, 0, 0}, W, {0, -1, 0}});
    walls.push_back({{-W / 2, D / 2, 0}, {0, -1, 0}, D, {1, 0, 0}});
  } else {
    // Two W x D rooms side by side, split at x = 0 by a wall with a 1 m
    // doorway at its +y end.
    const double door = 1.0;
    walls.push_back({{-W, -D / 2, 0}, {1, 0, 0}, 2 * W, {0, 1, 0}});
    walls.push_back({{W, -D / 2, 0}, {0, 1, 0}, D, {-1, 0, 0}});
    walls.push_back({{W, D / 2, 0}, {-1, 0, 0}, 2 * W, {0, -1, 0}});
    walls.push_back({{-W, D / 2, 0}, {0, -1, 0}, D, {1, 0, 0}});
    walls.push_back({{0, -D / 2, 0}, {0, 1, 0}, D - door, {1, 0, 0}});
    walls.push_back({{0, D / 2 - door, 0}, {0, -1, 0}, D - door, {-1, 0, 0}});
  }
  return walls;
}

// Splits n over the walls in proportion to their lengths (largest remainder,
// ties to the earlier wall).
std::vector<int> allocate(int n, const std::vector<WallSegment>& walls) {
  double total = 0.0;
  for (const auto& w : walls) total += w.length;
  std::vector<int> count(walls.size());
  std::vector<std::pair<double, std::size_t>> rem;
  int used = 0;
  for (std::size_t i = 0; i < walls.size(); ++i) {
    const double exact = n * walls[i].length / total;
    count[i] = static_cast<int>(std::floor(exact));
    used += count[i];
    rem.push_back({-(exact - count[i]), i});
  }
  std::sort(rem.begin(), rem.end());
  for (int k = 0; used < n; ++k, ++used) ++count[rem[static_cast<std::size_t>(k) % rem.size()].second];
  return count;
}

void place_on_walls(SyntheticScene& scene, int n, Rng& rng) {
  const double s = scene.geom.side();
  const auto walls = wall_segments(scene.layout, scene.room);
  const auto count = allocate(n, walls);
  const double pitch = kSpacing * s;
  const double usable_height = scene.room.height - 0.4;
  int id = 0;
  for (std::size_t w = 0; w < walls.size(); ++w) {
    const auto& wall = walls[w];
    const int per_row = static_cast<int>(std::floor((wall.length - pitch) / pitch));
    const int rows = per_row > 0 ? (count[w] + per_row - 1) / per_row : (count[w] > 0 ? 1 << 20 : 0);
    if (count[w] > 0 && (per_row <= 0 || rows * pitch > usable_height)) {
      throw Error(ErrorCode::kTooManyMarkers, "room walls cannot hold " + std::to_string(n) + " markers of side " +
                                                  std::to_string(s));
    }
    const Mat3 R = facing(wall.normal, Vec3(0, 0, 1));
    for (int r = 0; r < rows; ++r) {
      const int in_row = std::min(per_row, count[w] - r * per_row);
      const double base = 1.5 + (r - 0.5 * (rows - 1)) * pitch;
      // Height jitter only where it cannot make rows overlap.
      const double jitter = rows == 1 ? std::min(0.3, 0.5 * usable_height - 2 * s) : 0.0;
      for (int k = 0; k < in_row; ++k) {
        const double along = (k + 0.5) * wall.length / in_row;
        const double h = base + (jitter > 0 ? rng.uniform(-jitter, jitter) : 0.0);
        const Vec3 p = wall.origin + along * wall.tangent + Vec3(0, 0, h) + 1e-3 * wall.normal;
        scene.marker_poses[id++] = Transform(R, p);
      }
    }
  }
}

void place_on_grid(SyntheticScene& scene, int n) {
  if (n > 10000) throw Error(ErrorCode::kTooManyMarkers, "plane grid holds at most 10000 markers");
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = (n + cols - 1) / cols;
  const double pitch = kSpacing * scene.geom.side();
  for (int id = 0; id < n; ++id) {
    const int r = id / cols;
    const int c = id % cols;
    const Vec3 p((c - 0.5 * (cols - 1)) * pitch, (0.5 * (rows - 1) - r) * pitch, 0.0);
    scene.marker_poses[id] = Transform(Mat3::Identity(), p);
  }
  scene.extent = std::hypot(cols * pitch, rows * pitch);
}

void place_on_box(SyntheticScene& scene, int n) {
  if (n > 6 * 2500) throw Error(ErrorCode::kTooManyMarkers, "box holds at most 15000 markers");
  const int per_face = (n + 5) / 6;
  const int g = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(per_face))));
  const double pitch = kSpacing * scene.geom.side();
  const double half = 0.5 * g * pitch;
  const std::array<Vec3, 6> normals = {Vec3(1, 0, 0), Vec3(0, 1, 0),  Vec3(-1, 0, 0),
                                       Vec3(0, -1, 0), Vec3(0, 0, 1), Vec3(0, 0, -1)};
  for (int id = 0; id < n; ++id) {
    const Vec3& nrm = normals[id % 6];
    const int slot = id / 6;
    const Mat3 R = facing(nrm, up_for(nrm));
    const double a = (slot % g - 0.5 * (g - 1)) * pitch;
    const double b = (0.5 * (g - 1) - slot / g) * pitch;
    const Vec3 p = half * nrm + a * R.col(0) + b * R.col(1);
    scene.marker_poses[id] = Transform(R, p);
  }
  scene.extent = 2 * half;
}

Vec3 eye_for(const SyntheticScene& scene, TrajectoryKind kind, double tau, double radius, Vec3* forward,
             Rng& rng) {
  const Vec3 c = scene.center;
  const bool rooms = scene.layout == SceneLayout::kRoomWalls || scene.layout == SceneLayout::kTwoRooms;
  const double W = scene.room.width;
  const double D = scene.room.depth;
  const double eye_h = 1.5;

  if (!rooms) {
    if (kind == TrajectoryKind::kRotateInPlace) {
      const double az = 2 * kPi * tau;
      *forward = Vec3(std::sin(deg(30)) * std::cos(az), std::sin(deg(30)) * std::sin(az), -std::cos(deg(30)));
      return c + Vec3(0, 0, radius);
    }
    double elev;
    double d = radius;
    if (scene.layout == SceneLayout::kPlaneGrid) {
      elev = deg(55 + 15 * std::sin(2 * kPi * 3 * tau));
    } else {
      elev = deg(10 + 55 * std::sin(2 * kPi * 2 * tau));
    }
    if (kind == TrajectoryKind::kWalkthrough) d *= 1.0 + 0.3 * std::sin(2 * kPi * 2 * tau);
    const double az = 2 * kPi * 2 * tau;
    const Vec3 eye = c + d * Vec3(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az), std::sin(elev));
    const double j = 0.1 * scene.extent;
    const Vec3 target = c + Vec3(rng.uniform(-j, j), rng.uniform(-j, j), rng.uniform(-j, j));
    *forward = target - eye;
    return eye;
  }

  const double yaw_wobble = deg(25) * std::sin(2 * kPi * 5 * tau);
  const double pitch = deg(5) * std::sin(2 * kPi * 3 * tau);
  auto heading = [&](double angle) {
    return Vec3(std::cos(angle) * std::cos(pitch), std::sin(angle) * std::cos(pitch), std::sin(pitch));
  };

  if (kind == TrajectoryKind::kRotateInPlace) {
    Vec3 eye = Vec3(0.15 * W, 0.1 * D, eye_h);
    if (scene.layout == SceneLayout::kTwoRooms) eye.x() -= 0.5 * W;
    *forward = heading(2 * kPi * tau);
    return c + eye;
  }

  const double theta = 2 * kPi * tau;
  if (scene.layout == SceneLayout::kRoomWalls) {
    const double scale = radius > 0 ? radius : 0.3;
    const Vec3 eye(scale * W * std::cos(theta), scale * D * std::sin(theta), eye_h);
    const double angle = kind == TrajectoryKind::kOrbit ? theta : theta + yaw_wobble;
    *forward = heading(angle);
    return c + eye;
  }
  // Figure-eight through the doorway, looking away from the centre of the
  // room the camera is in.
  const double scale = radius > 0 ? radius : 0.75;
  const double dy = 0.5 * D - 0.5;  // doorway centre
  const double s = std::sin(theta);
  const Vec3 eye(scale * W * s, dy - (dy + 0.3) * s * s - 0.15 * D * std::sin(2 * theta), eye_h);
  const Vec3 room_c(eye.x() >= 0 ? 0.5 * W : -0.5 * W, 0, eye_h);
  Vec3 out = eye - room_c;
  out.z() = 0;
  double angle = out.norm() < 0.3 ? (eye.x() >= 0 ? 0.0 : kPi) : std::atan2(out.y(), out.x());
  if (kind == TrajectoryKind::kWalkthrough) angle += yaw_wobble;
  *forward = heading(angle);
  return c + eye;
}

double default_radius(const SyntheticScene& scene, TrajectoryKind kind) {
  switch (scene.layout) {
    case SceneLayout::kPlaneGrid:
      return 1.5 * scene.extent;
    case SceneLayout::kBox:
      return kind == TrajectoryKind::kRotateInPlace ? 3.0 * scene.extent : 5.5 * scene.extent;
    default:
      return 0.0;
  }
}

}  // namespace

SceneLayout parse_layout(const std::string& name) {
  if (name == "plane-grid") return SceneLayout::kPlaneGrid;
  if (name == "box") return SceneLayout::kBox;
  if (name == "room-walls") return SceneLayout::kRoomWalls;
  if (name == "two-rooms") return SceneLayout::kTwoRooms;
  throw Error(ErrorCode::kInvalidArgument, "unknown layout '" + name + "'");
}

std::string to_string(SceneLayout layout) {
  switch (layout) {
    case SceneLayout::kPlaneGrid:
      return "plane-grid";
    case SceneLayout::kBox:
      return "box";
    case SceneLayout::kRoomWalls:
      return "room-walls";
    case SceneLayout::kTwoRooms:
      return "two-rooms";
  }
  return "?";
}

TrajectoryKind parse_trajectory(const std::string& name) {
  if (name == "orbit") return TrajectoryKind::kOrbit;
  if (name == "walkthrough") return TrajectoryKind::kWalkthrough;
  if (name == "rotate-in-place") return TrajectoryKind::kRotateInPlace;
  throw Error(ErrorCode::kInvalidArgument, "unknown trajectory '" + name + "'");
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double rad = std::sqrt(-2.0 * std::log(u1));
  spare_ = rad * std::sin(2 * kPi * u2);
  has_spare_ = true;
  return rad * std::cos(2 * kPi * u2);
}

bool Occluder::blocks(const Vec3& a, const Vec3& b) const {
  const Vec3 normal = tangent.cross(Vec3(0, 0, 1));
  const double da = normal.dot(a - origin);
  const double db = normal.dot(b - origin);
  // Both ends strictly on one side, or touching the wall plane (markers
  // mounted on the wall itself), do not count as crossing.
  if (da * db >= 0.0 || std::abs(db) < 1e-2 || std::abs(da) < 1e-2) return false;
  const Vec3 hit = a + (da / (da - db)) * (b - a);
  const double along = tangent.dot(hit - origin);
  return along >= 0.0 && along <= length && hit.z() >= 0.0 && hit.z() <= height;
}

GroundTruthCorners SyntheticScene::corners() const {
  GroundTruthCorners out;
  for (const auto& [id, pose] : marker_poses) {
    for (int k = 0; k < 4; ++k) out[id][k] = pose * geom.corners()[k];
  }
  return out;
}

SyntheticScene generate_scene(SceneLayout layout, int n_markers, double side, std::uint64_t seed,
                              const RoomSize& room) {
  if (n_markers < 1) throw Error(ErrorCode::kInvalidArgument, "a scene needs at least one marker");
  if (!(side > 0.0)) throw Error(ErrorCode::kInvalidArgument, "marker side must be positive");
  SyntheticScene scene;
  scene.layout = layout;
  scene.geom = MarkerGeometry(side);
  scene.seed = seed;
  scene.room = room;
  Rng rng(seed);
  switch (layout) {
    case SceneLayout::kPlaneGrid:
      place_on_grid(scene, n_markers);
      break;
    case SceneLayout::kBox:
      place_on_box(scene, n_markers);
      break;
    case SceneLayout::kRoomWalls:
      place_on_walls(scene, n_markers, rng);
      scene.extent = std::max(room.width, room.depth);
      break;
    case SceneLayout::kTwoRooms:
      place_on_walls(scene, n_markers, rng);
      scene.extent = std::max(2 * room.width, room.depth);
      scene.occluders.push_back({Vec3(0, -room.depth / 2, 0), Vec3(0, 1, 0), room.depth - 1.0, room.height});
      break;
  }
  return scene;
}

CameraIntrinsics default_camera() {
  CameraIntrinsics k;
  k.width = 1280;
  k.height = 960;
  k.fx = 800.0;
  k.fy = 800.0;
  k.cx = 640.0;
  k.cy = 480.0;
  return k;
}

Transform look_at(const Vec3& eye, const Vec3& target) { return camera_pose(eye, target - eye, Vec3(0, 0, 1)); }

double quantize9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

Trajectory SyntheticSequence::ground_truth() const {
  Trajectory out;
  for (std::size_t i = 0; i < frame_poses.size(); ++i) {
    TrajectoryEntry e;
    e.frame_id = detections[i].frame_id;
    e.timestamp = detections[i].timestamp.value_or(0.0);
    e.pose = zeta_from_gamma(frame_poses[i]);
    out.push_back(e);
  }
  return out;
}

SyntheticSequence render_sequence(const SyntheticScene& scene, const std::vector<Transform>& frame_poses,
                                  double noise_sigma, const CameraIntrinsics& camera, std::uint64_t seed,
                                  const SequenceOptions& options) {
  if (frame_poses.empty()) throw Error(ErrorCode::kInvalidArgument, "a sequence needs at least one frame");
  if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "noise sigma must be non-negative");
  camera.validate();

  SyntheticSequence seq;
  seq.scene = scene;
  seq.camera = camera;
  seq.noise_sigma = noise_sigma;
  seq.visibility = options.visibility;
  seq.frame_poses = frame_poses;
  Rng noise_rng(seed);
  const double cos_max = std::cos(deg(options.visibility.max_view_angle_deg));
  const auto& corners = scene.geom.corners();

  bool any_pair = false;
  for (std::size_t f = 0; f < frame_poses.size(); ++f) {
    const Transform& F = frame_poses[f];
    const Vec3 eye = F.inverse().translation();

    FrameDetections det;
    det.frame_id = static_cast<int>(f);
    det.timestamp = quantize9(static_cast<double>(f) / options.frame_rate);
    for (const auto& [id, M] : scene.marker_poses) {
      const Vec3 cam_in_marker = M.inverse() * eye;
      const double dist = cam_in_marker.norm();
      if (cam_in_marker.z() <= 0.0 || cam_in_marker.z() < cos_max * dist) continue;
      if (dist > options.visibility.max_distance) continue;
      bool hidden = false;
      for (const auto& occ : scene.occluders) {
        for (const auto& c : corners) hidden = hidden || occ.blocks(eye, M * c);
      }
      if (hidden) continue;
      const Transform g = F * M;
      CornerObservation obs;
      obs.marker_id = id;
      bool inside = true;
      for (int k = 0; k < 4 && inside; ++k) {
        const auto u = project(camera, g, corners[k]);
        if (!u) {
          inside = false;
          break;
        }
        Vec2 px = *u;
        if (noise_sigma > 0.0) {
          px.x() += noise_sigma * noise_rng.normal();
          px.y() += noise_sigma * noise_rng.normal();
        }
        px = Vec2(quantize9(px.x()), quantize9(px.y()));
        if (!(u->x() >= 0 && u->y() >= 0 && u->x() < camera.width && u->y() < camera.height)) inside = false;
        if (!(px.x() >= 0 && px.y() >= 0 && px.x() < camera.width && px.y() < camera.height)) inside = false;
        obs.pixels[k] = px;
      }
      if (inside) det.observations.push_back(obs);
    }
    if (det.observations.size() >= 2) any_pair = true;
    seq.detections.push_back(std::move(det));
  }
  if (!any_pair) {
    seq.usable = false;
    seq.warning = "unusable sequence: no frame sees two markers";
  }
  return seq;
}

SyntheticSequence generate_sequence(const SyntheticScene& scene, TrajectoryKind kind, int n_frames,
                                    double noise_sigma, const CameraIntrinsics& camera, std::uint64_t seed,
                                    const SequenceOptions& options) {
  if (n_frames < 1) throw Error(ErrorCode::kInvalidArgument, "a sequence needs at least one frame");
  Rng path_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const double radius = options.radius > 0 ? options.radius : default_radius(scene, kind);
  std::vector<Transform> poses;
  for (int f = 0; f < n_frames; ++f) {
    const double tau = static_cast<double>(f) / n_frames;
    Vec3 forward;
    const Vec3 eye = eye_for(scene, kind, tau, radius, &forward, path_rng);
    poses.push_back(camera_pose(eye, forward, Vec3(0, 0, 1)));
  }
  return render_sequence(scene, poses, noise_sigma, camera, seed, options);
}

}  // namespace fidmap
