// fidmap command line: map, localize, eval, synth.
//
// Exit codes: 0 success, 1 failure, 2 map built but the pose graph is
// disconnected (one map file per component), 64 usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "fidmap/error.hpp"
#include "fidmap/eval.hpp"
#include "fidmap/io.hpp"
#include "fidmap/pipeline.hpp"
#include "fidmap/synth.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitDisconnected = 2;
constexpr int kExitUsage = 64;

template <class Writer, class Value>
void write_atomic(const std::string& path, Writer writer, const Value& value) {
  std::ostringstream out;
  writer(out, value);
  fidmap::write_text_file_atomic(path, out.str());
}

// Writes log lines to stderr and, when requested, to a log file.
class Log {
 public:
  explicit Log(const std::string& path) {
    if (!path.empty()) file_.open(path);
  }
  std::ostream& stream() { return buffer_; }
  void flush() {
    const std::string s = buffer_.str();
    std::cerr << s;
    if (file_) file_ << s;
    buffer_.str("");
  }

 private:
  std::ostringstream buffer_;
  std::ofstream file_;
};

struct MapArgs {
  std::string detections, calib, out, trajectory, log;
  double side = 0.0;
  double ambiguity_ratio = 3.0;
  bool optimize_intrinsics = false;
  int seed_root = -1;
  bool has_seed_root = false;
};

int run_map(const MapArgs& a) {
  Log log(a.log);
  const auto frames = fidmap::read_file(a.detections, fidmap::read_detections);
  const auto k = fidmap::read_file(a.calib, fidmap::read_calibration);
  fidmap::PipelineConfig cfg;
  cfg.side = a.side;
  cfg.planar.ambiguity_ratio = a.ambiguity_ratio;
  cfg.optimize_intrinsics = a.optimize_intrinsics;
  if (a.has_seed_root) cfg.seed_root = a.seed_root;
  fidmap::PipelineResult result;
  try {
    result = fidmap::build_map(frames, k, cfg, &log.stream());
  } catch (...) {
    log.flush();
    throw;
  }
  for (const auto& c : result.components) {
    const std::string path = c.component_id == 0 ? a.out : a.out + "." + std::to_string(c.component_id);
    write_atomic(path, fidmap::write_map, c.to_map(a.side));
    log.stream() << "wrote " << path << " (" << c.markers.size() << " markers)\n";
  }
  if (!a.trajectory.empty()) {
    write_atomic(a.trajectory, fidmap::write_trajectory, result.trajectory(frames));
    log.stream() << "wrote " << a.trajectory << '\n';
  }
  if (a.optimize_intrinsics) {
    write_atomic(a.out + ".calib", fidmap::write_calibration, result.intrinsics);
  }
  const bool disconnected = result.components.size() > 1;
  if (disconnected) log.stream() << "warning: pose graph is disconnected\n";
  log.flush();
  return disconnected ? kExitDisconnected : 0;
}

struct LocalizeArgs {
  std::string map, detections, calib, out, tum;
  bool refine = false;
};

int run_localize(const LocalizeArgs& a) {
  const auto map = fidmap::read_file(a.map, fidmap::read_map);
  const auto frames = fidmap::read_file(a.detections, fidmap::read_detections);
  const auto k = fidmap::read_file(a.calib, fidmap::read_calibration);
  const auto traj = fidmap::localize_frames(frames, map, k, a.refine, {}, &std::cerr);
  write_atomic(a.out, fidmap::write_trajectory, traj);
  if (!a.tum.empty()) write_atomic(a.tum, fidmap::write_tum, traj);
  return 0;
}

struct EvalArgs {
  std::string est_map, gt_corners, est_traj, gt_traj;
  bool scale_search = false;
  bool similarity = false;
};

int run_eval(const EvalArgs& a) {
  fidmap::EvalReport report;
  if (!a.est_map.empty()) {
    const auto map = fidmap::read_file(a.est_map, fidmap::read_map);
    const auto gt = fidmap::read_file(a.gt_corners, fidmap::read_gt_corners);
    report.ace = fidmap::compute_ace(map.transforms(), gt, fidmap::MarkerGeometry(map.side), a.similarity);
    report.has_ace = true;
  }
  if (!a.est_traj.empty()) {
    const auto est = fidmap::read_file(a.est_traj, fidmap::read_trajectory);
    const auto gt = fidmap::read_file(a.gt_traj, fidmap::read_trajectory);
    report.ate = fidmap::compute_ate(est, gt, a.scale_search);
    report.has_ate = true;
  }
  std::cout << report.to_json() << '\n';
  return 0;
}

struct SynthArgs {
  std::string layout, trajectory, out;
  int markers = 0;
  double side = 0.0;
  int frames = 0;
  double noise = 0.0;
  unsigned long long seed = 0;
};

int run_synth(const SynthArgs& a) {
  const auto layout = fidmap::parse_layout(a.layout);
  std::string kind_name = a.trajectory;
  if (kind_name.empty()) {
    const bool rooms = layout == fidmap::SceneLayout::kRoomWalls || layout == fidmap::SceneLayout::kTwoRooms;
    kind_name = rooms ? "walkthrough" : "orbit";
  }
  const auto scene = fidmap::generate_scene(layout, a.markers, a.side, a.seed);
  const auto cam = fidmap::default_camera();
  const auto seq =
      fidmap::generate_sequence(scene, fidmap::parse_trajectory(kind_name), a.frames, a.noise, cam, a.seed);
  if (!seq.usable) std::cerr << "warning: " << seq.warning << '\n';
  write_atomic(a.out + ".detections", fidmap::write_detections, seq.detections);
  write_atomic(a.out + ".calib", fidmap::write_calibration, cam);
  write_atomic(a.out + ".gt_corners", fidmap::write_gt_corners, scene.corners());
  write_atomic(a.out + ".gt_traj", fidmap::write_trajectory, seq.ground_truth());
  std::size_t detections = 0;
  for (const auto& f : seq.detections) detections += f.observations.size();
  std::cerr << "synth: " << seq.detections.size() << " frames, " << detections << " detections, "
            << scene.marker_poses.size() << " markers\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fiducial marker mapping from corner detections"};
  app.require_subcommand(1);

  MapArgs map_args;
  auto* map = app.add_subcommand("map", "Build marker maps from detections");
  map->add_option("--detections", map_args.detections, "Detections file")->required();
  map->add_option("--calib", map_args.calib, "Calibration file")->required();
  map->add_option("--side", map_args.side, "Marker side in meters")->required()->check(CLI::PositiveNumber);
  map->add_option("--ambiguity-ratio", map_args.ambiguity_ratio, "Ambiguity gate ratio")->check(CLI::PositiveNumber);
  map->add_flag("--optimize-intrinsics", map_args.optimize_intrinsics, "Refine the intrinsics too");
  auto* root_opt = map->add_option("--seed-root", map_args.seed_root, "Root marker id");
  map->add_option("-o,--output", map_args.out, "Map file (extra components get .1, .2, ...)")->required();
  map->add_option("--trajectory", map_args.trajectory, "Trajectory output");
  map->add_option("--log", map_args.log, "Log file");

  LocalizeArgs loc_args;
  auto* loc = app.add_subcommand("localize", "Estimate frame poses against a map");
  loc->add_option("--map", loc_args.map, "Map file")->required();
  loc->add_option("--detections", loc_args.detections, "Detections file")->required();
  loc->add_option("--calib", loc_args.calib, "Calibration file")->required();
  loc->add_option("-o,--output", loc_args.out, "Trajectory output")->required();
  loc->add_option("--tum", loc_args.tum, "Also export timestamp tx ty tz qx qy qz qw");
  loc->add_flag("--refine", loc_args.refine, "Refine each frame pose");

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "Compare against ground truth; JSON on stdout");
  auto* em = ev->add_option("--est-map", eval_args.est_map, "Estimated map");
  auto* gc = ev->add_option("--gt-corners", eval_args.gt_corners, "Ground-truth corners");
  auto* et = ev->add_option("--est-traj", eval_args.est_traj, "Estimated trajectory");
  auto* gt = ev->add_option("--gt-traj", eval_args.gt_traj, "Ground-truth trajectory");
  ev->add_flag("--scale-search", eval_args.scale_search, "Grid search the trajectory scale");
  ev->add_flag("--similarity", eval_args.similarity, "Similarity instead of rigid alignment for corners");
  em->needs(gc);
  gc->needs(em);
  et->needs(gt);
  gt->needs(et);

  SynthArgs synth_args;
  auto* syn = app.add_subcommand("synth", "Generate a synthetic scene and sequence");
  syn->add_option("--layout", synth_args.layout, "plane-grid, box, room-walls or two-rooms")->required();
  syn->add_option("--markers", synth_args.markers, "Number of markers")->required()->check(CLI::PositiveNumber);
  syn->add_option("--side", synth_args.side, "Marker side in meters")->required()->check(CLI::PositiveNumber);
  syn->add_option("--frames", synth_args.frames, "Number of frames")->required()->check(CLI::PositiveNumber);
  syn->add_option("--noise", synth_args.noise, "Pixel noise sigma")->required()->check(CLI::NonNegativeNumber);
  syn->add_option("--seed", synth_args.seed, "Random seed")->required();
  syn->add_option("--trajectory", synth_args.trajectory, "orbit, walkthrough or rotate-in-place");
  syn->add_option("-o,--output", synth_args.out, "Output prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  if (ev->parsed() && eval_args.est_map.empty() && eval_args.est_traj.empty()) {
    std::cerr << "eval: give --est-map/--gt-corners or --est-traj/--gt-traj\n";
    return kExitUsage;
  }
  map_args.has_seed_root = root_opt->count() > 0;

  try {
    if (map->parsed()) return run_map(map_args);
    if (loc->parsed()) return run_localize(loc_args);
    if (ev->parsed()) return run_eval(eval_args);
    if (syn->parsed()) return run_synth(synth_args);
  } catch (const fidmap::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
