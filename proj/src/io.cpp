#include "fidmap/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "fidmap/error.hpp"

namespace fidmap {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string g9(double v) { return fmt("%.9g", v); }

// Unit quaternion components at the 12 decimals the TUM writer prints.
double quantize_unit(double v) { return std::strtod(fmt("%.12f", v).c_str(), nullptr) + 0.0; }

std::string g17(double v) { return fmt("%.17g", v); }

// Splits a line into whitespace separated tokens after stripping comments.
std::vector<std::string> tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line.substr(0, line.find('#')));
  std::string t;
  while (ss >> t) out.push_back(t);
  return out;
}

class LineParser {
 public:
  LineParser(const char* what, int line, std::vector<std::string> toks)
      : what_(what), line_(line), toks_(std::move(toks)) {}

  bool done() const { return pos_ >= toks_.size(); }
  std::size_t remaining() const { return toks_.size() - pos_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::kParse, std::string(what_) + " line " + std::to_string(line_) + ": " + msg);
  }

  const std::string& word() {
    if (done()) fail("unexpected end of line");
    return toks_[pos_++];
  }

  double number() {
    const std::string& t = word();
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end == t.c_str() || *end != '\0' || !std::isfinite(v)) fail("bad number '" + t + "'");
    return v;
  }

  int integer() {
    const std::string& t = word();
    char* end = nullptr;
    const long v = std::strtol(t.c_str(), &end, 10);
    if (end == t.c_str() || *end != '\0' || v < -2147483647L || v > 2147483647L) fail("bad integer '" + t + "'");
    return static_cast<int>(v);
  }

  void expect_end() const {
    if (!done()) fail("trailing tokens");
  }

 private:
  const char* what_;
  int line_;
  std::vector<std::string> toks_;
  std::size_t pos_ = 0;
};

// Calls fn(parser) for every non-empty line.
template <class Fn>
void for_each_line(std::istream& in, const char* what, Fn fn) {
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto toks = tokens(line);
    if (toks.empty()) continue;
    LineParser p(what, n, std::move(toks));
    fn(p);
  }
}

std::string pose_fields(const Pose6& p) {
  std::string s;
  for (int i = 0; i < 3; ++i) s += " " + g17(p.r[i]);
  for (int i = 0; i < 3; ++i) s += " " + g17(p.t[i]);
  return s;
}

Pose6 read_pose(LineParser& p) {
  Pose6 z;
  for (int i = 0; i < 3; ++i) z.r[i] = p.number();
  for (int i = 0; i < 3; ++i) z.t[i] = p.number();
  if (z.r.norm() > std::numbers::pi + 1e-9) p.fail("rotation vector longer than pi");
  return z;
}

}  // namespace

std::map<int, Transform> MarkerMap::transforms() const {
  std::map<int, Transform> out;
  for (const auto& [id, z] : markers) out[id] = gamma_from_zeta(z);
  return out;
}

std::vector<FrameDetections> read_detections(std::istream& in) {
  std::vector<FrameDetections> frames;
  for_each_line(in, "detections", [&](LineParser& p) {
    FrameDetections f;
    f.frame_id = p.integer();
    const std::string ts = p.word();
    if (ts != "-") {
      char* end = nullptr;
      const double v = std::strtod(ts.c_str(), &end);
      if (end == ts.c_str() || *end != '\0' || !std::isfinite(v)) p.fail("bad timestamp '" + ts + "'");
      f.timestamp = v;
    }
    const int n = p.integer();
    if (n < 0) p.fail("negative marker count");
    if (p.remaining() != static_cast<std::size_t>(n) * 9) {
      p.fail("expected " + std::to_string(n * 9) + " values after the marker count, got " +
             std::to_string(p.remaining()));
    }
    std::set<int> seen;
    for (int m = 0; m < n; ++m) {
      CornerObservation obs;
      obs.marker_id = p.integer();
      if (!seen.insert(obs.marker_id).second) p.fail("marker " + std::to_string(obs.marker_id) + " repeated");
      for (auto& px : obs.pixels) {
        px.x() = p.number();
        px.y() = p.number();
      }
      f.observations.push_back(obs);
    }
    frames.push_back(std::move(f));
  });
  return frames;
}

void write_detections(std::ostream& out, const std::vector<FrameDetections>& frames) {
  out << "# frame_id timestamp n { marker_id x1 y1 x2 y2 x3 y3 x4 y4 }\n";
  for (const auto& f : frames) {
    out << f.frame_id << ' ' << (f.timestamp ? g9(*f.timestamp) : std::string("-")) << ' '
        << f.observations.size();
    for (const auto& o : f.observations) {
      out << ' ' << o.marker_id;
      for (const auto& px : o.pixels) out << ' ' << g9(px.x()) << ' ' << g9(px.y());
    }
    out << '\n';
  }
}

CameraIntrinsics read_calibration(std::istream& in) {
  CameraIntrinsics k;
  std::set<std::string> seen;
  for_each_line(in, "calibration", [&](LineParser& p) {
    std::string key = p.word();
    if (!key.empty() && (key.back() == ':' || key.back() == '=')) key.pop_back();
    if (!seen.insert(key).second) p.fail("duplicate key '" + key + "'");
    if (key == "width") {
      k.width = p.integer();
    } else if (key == "height") {
      k.height = p.integer();
    } else {
      const double v = p.number();
      if (key == "fx") k.fx = v;
      else if (key == "fy") k.fy = v;
      else if (key == "cx") k.cx = v;
      else if (key == "cy") k.cy = v;
      else if (key == "k1") k.k1 = v;
      else if (key == "k2") k.k2 = v;
      else if (key == "k3") k.k3 = v;
      else if (key == "p1") k.p1 = v;
      else if (key == "p2") k.p2 = v;
      else p.fail("unknown key '" + key + "'");
    }
    p.expect_end();
  });
  for (const char* req : {"fx", "fy", "cx", "cy"}) {
    if (!seen.count(req)) throw Error(ErrorCode::kConfig, std::string("calibration is missing ") + req);
  }
  try {
    k.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  return k;
}

void write_calibration(std::ostream& out, const CameraIntrinsics& k) {
  out << "width " << k.width << "\nheight " << k.height << '\n';
  const std::pair<const char*, double> vals[] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
                                                 {"k1", k.k1}, {"k2", k.k2}, {"p1", k.p1}, {"p2", k.p2},
                                                 {"k3", k.k3}};
  for (const auto& [key, v] : vals) out << key << ' ' << g17(v) << '\n';
}

MarkerMap read_map(std::istream& in) {
  MarkerMap m;
  bool has_version = false;
  bool has_side = false;
  for_each_line(in, "map", [&](LineParser& p) {
    const std::string key = p.word();
    if (key == "version") {
      m.version = p.word();
      has_version = true;
    } else if (key == "side") {
      m.side = p.number();
      if (!(m.side > 0)) p.fail("side must be positive");
      has_side = true;
    } else if (key == "component") {
      m.component_id = p.integer();
    } else if (key == "stats") {
      m.stats.mean_reprojection_px = p.number();
      m.stats.frames_used = p.integer();
    } else if (key == "marker") {
      const int id = p.integer();
      if (m.markers.count(id)) p.fail("marker " + std::to_string(id) + " repeated");
      m.markers[id] = read_pose(p);
    } else {
      p.fail("unknown record '" + key + "'");
    }
    p.expect_end();
  });
  if (!has_version || !has_side) throw Error(ErrorCode::kParse, "map: missing version or side record");
  return m;
}

void write_map(std::ostream& out, const MarkerMap& m) {
  out << "version " << m.version << '\n';
  out << "side " << g17(m.side) << '\n';
  out << "component " << m.component_id << '\n';
  out << "stats " << g17(m.stats.mean_reprojection_px) << ' ' << m.stats.frames_used << '\n';
  for (const auto& [id, z] : m.markers) out << "marker " << id << pose_fields(z) << '\n';
}

Trajectory read_trajectory(std::istream& in) {
  Trajectory t;
  for_each_line(in, "trajectory", [&](LineParser& p) {
    TrajectoryEntry e;
    e.frame_id = p.integer();
    if (!t.empty() && e.frame_id <= t.back().frame_id) p.fail("frame ids must increase");
    e.timestamp = p.number();
    e.pose = read_pose(p);
    const std::string flag = p.word();
    if (flag != "ok" && flag != "low") p.fail("confidence must be 'ok' or 'low'");
    e.low_confidence = flag == "low";
    p.expect_end();
    t.push_back(e);
  });
  return t;
}

void write_trajectory(std::ostream& out, const Trajectory& traj) {
  out << "# frame_id timestamp rx ry rz tx ty tz confidence\n";
  for (const auto& e : traj) {
    out << e.frame_id << ' ' << g17(e.timestamp) << pose_fields(e.pose) << ' ' << (e.low_confidence ? "low" : "ok")
        << '\n';
  }
}

Trajectory read_tum(std::istream& in) {
  Trajectory t;
  for_each_line(in, "tum", [&](LineParser& p) {
    TrajectoryEntry e;
    e.frame_id = static_cast<int>(t.size());
    e.timestamp = p.number();
    Vec3 pos;
    for (int i = 0; i < 3; ++i) pos[i] = p.number();
    Eigen::Quaterniond q;
    q.x() = p.number();
    q.y() = p.number();
    q.z() = p.number();
    q.w() = p.number();
    p.expect_end();
    if (std::abs(q.norm() - 1.0) > 1e-6) p.fail("quaternion is not normalized");
    const Transform cam_to_world(q.normalized().toRotationMatrix(), pos);
    e.pose = zeta_from_gamma(cam_to_world.inverse());
    t.push_back(e);
  });
  return t;
}

void write_tum(std::ostream& out, const Trajectory& traj) {
  for (const auto& e : traj) {
    const Transform cam_to_world = gamma_from_zeta(e.pose).inverse();
    Eigen::Quaterniond q(cam_to_world.rotation());
    q.normalize();
    if (q.w() < 0) q.coeffs() *= -1.0;
    // Quaternions are printed with 12 decimals, chosen so that they survive
    // normalization on import and export -> import -> export reproduces the
    // same text. A fixed point whose normalized value sits on a rounding edge
    // gets its largest component nudged by one printed unit.
    auto round12 = [](const Eigen::Vector4d& v) { return Eigen::Vector4d(v.unaryExpr(&quantize_unit)); };
    auto on_edge = [&](const Eigen::Vector4d& n) {
      const Eigen::Vector4d d = Eigen::Vector4d::Constant(1e-15);
      return round12(n + d) != round12(n - d);
    };
    Eigen::Vector4d c = round12(q.coeffs());
    for (int it = 0; it < 32; ++it) {
      const Eigen::Vector4d n = c.normalized();
      const Eigen::Vector4d next = round12(n);
      if (next != c) {
        c = next;
      } else if (on_edge(n)) {
        Eigen::Index i = 0;
        c.cwiseAbs().maxCoeff(&i);
        c[i] = quantize_unit(c[i] - std::copysign(1e-12, c[i]));
      } else {
        break;
      }
    }
    const Vec3& p = cam_to_world.translation();
    out << fmt("%.6f", e.timestamp);
    for (int i = 0; i < 3; ++i) out << ' ' << g9(p[i]);
    for (int i = 0; i < 4; ++i) out << ' ' << fmt("%.12f", c[i]);
    out << '\n';
  }
}

GroundTruthCorners read_gt_corners(std::istream& in) {
  GroundTruthCorners gt;
  for_each_line(in, "ground truth", [&](LineParser& p) {
    const int id = p.integer();
    if (gt.count(id)) p.fail("marker " + std::to_string(id) + " repeated");
    auto& c = gt[id];
    for (auto& v : c) {
      for (int i = 0; i < 3; ++i) v[i] = p.number();
    }
    p.expect_end();
  });
  return gt;
}

void write_gt_corners(std::ostream& out, const GroundTruthCorners& corners) {
  out << "# marker_id x1 y1 z1 x2 y2 z2 x3 y3 z3 x4 y4 z4\n";
  for (const auto& [id, c] : corners) {
    out << id;
    for (const auto& v : c) out << ' ' << g17(v.x()) << ' ' << g17(v.y()) << ' ' << g17(v.z());
    out << '\n';
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write '" + tmp + "'");
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::kIo, "write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

}  // namespace fidmap
