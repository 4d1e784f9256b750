#include "fidmap/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "fidmap/error.hpp"

namespace fidmap {

namespace {

void say(std::ostream* log, const char* format, auto... args) {
  if (!log) return;
  char buf[256];
  std::snprintf(buf, sizeof buf, format, args...);
  *log << buf << '\n';
}

bool usable_quad(const CornerObservation& obs) {
  try {
    check_quadrilateral(obs);
    return true;
  } catch (const Error&) {
    return false;
  }
}

// Frames of this component seen with at least two mapped markers.
std::vector<const FrameDetections*> frames_for(const std::vector<FrameDetections>& frames,
                                               const std::map<int, Transform>& markers) {
  std::vector<const FrameDetections*> out;
  for (const auto& f : frames) {
    int mapped = 0;
    for (const auto& o : f.observations) mapped += markers.count(o.marker_id) ? 1 : 0;
    if (mapped >= 2) out.push_back(&f);
  }
  return out;
}

}  // namespace

MarkerMap ComponentResult::to_map(double side) const {
  MarkerMap m;
  m.side = side;
  m.component_id = component_id;
  for (const auto& [id, pose] : markers) m.markers[id] = zeta_from_gamma(pose);
  m.stats.mean_reprojection_px = report.mean_reprojection_px;
  m.stats.frames_used = static_cast<int>(frames.size());
  return m;
}

Trajectory PipelineResult::trajectory(const std::vector<FrameDetections>& frames) const {
  std::map<int, TrajectoryEntry> by_id;
  std::map<int, double> stamps;
  for (const auto& f : frames) stamps[f.frame_id] = f.timestamp.value_or(0.0);
  for (const auto& c : components) {
    for (const auto& [fid, pose] : c.frames) {
      if (by_id.count(fid)) continue;
      TrajectoryEntry e;
      e.frame_id = fid;
      e.timestamp = stamps.count(fid) ? stamps.at(fid) : 0.0;
      e.pose = zeta_from_gamma(pose);
      e.low_confidence = c.low_confidence_frames.count(fid) != 0;
      by_id[fid] = e;
    }
  }
  Trajectory out;
  for (const auto& [fid, e] : by_id) out.push_back(e);
  return out;
}

PipelineResult build_map(const std::vector<FrameDetections>& frames, const CameraIntrinsics& k,
                         const PipelineConfig& config, std::ostream* log) {
  k.validate();
  validate_frames(frames);
  const MarkerGeometry geom(config.side);
  PipelineResult result;
  result.intrinsics = k;
  PipelineStats& st = result.stats;
  st.frames = static_cast<int>(frames.size());
  for (const auto& f : frames) st.detections += static_cast<int>(f.observations.size());

  const auto pose_sets = build_frame_pose_sets(frames, geom, k, config.planar);
  for (const auto& ps : pose_sets) {
    st.ambiguous += ps.ambiguous;
    st.degenerate += ps.degenerate;
  }
  const auto quiver = build_quiver(pose_sets);
  st.quiver_edges = static_cast<int>(quiver.size());
  say(log, "frames %d, detections %d, ambiguous discarded %d, degenerate %d, quiver edges %d", st.frames,
      st.detections, st.ambiguous, st.degenerate, st.quiver_edges);
  if (quiver.empty()) {
    throw Error(ErrorCode::kInsufficientCoObservations,
                "insufficient co-observations: no frame has two unambiguous markers");
  }

  const auto best = select_best_edges(quiver, pose_sets, frames, geom, k);
  const PoseGraph graph = build_graph(best);
  const auto components = graph.connected_components();
  st.graph_nodes = static_cast<int>(graph.nodes().size());
  st.graph_edges = static_cast<int>(graph.undirected_edge_count());
  st.components = static_cast<int>(components.size());
  say(log, "pose graph: %d nodes, %d edges, %d components", st.graph_nodes, st.graph_edges, st.components);

  double reproj_sum = 0.0;
  int reproj_frames = 0;
  for (std::size_t ci = 0; ci < components.size(); ++ci) {
    ComponentResult comp;
    comp.component_id = static_cast<int>(ci);
    const PoseGraph sub = graph.subgraph(components[ci]);
    const bool seeded = config.seed_root && components[ci].count(*config.seed_root);
    SpanningTree tree = seeded ? shortest_path_tree(sub, *config.seed_root) : choose_start_node(sub);
    comp.graph = filter_outliers(sub, tree, config.outlier_z);
    comp.removed_edges = static_cast<int>(sub.undirected_edge_count() - comp.graph.undirected_edge_count());
    comp.tree = tree;

    if (config.skip_cycle_correction) {
      comp.cycles = compute_cycle_basis(comp.graph, tree).cycles.size();
      comp.initial_markers = initial_marker_poses(comp.graph, tree);
    } else {
      const CorrectedGraph corrected = correct_graph(comp.graph, tree, config.cycle);
      comp.cycles = corrected.cycle_count;
      comp.rotation_iterations = corrected.rotation.iterations;
      comp.initial_markers = initial_marker_poses(corrected.graph, tree);
    }
    st.cycles += static_cast<int>(comp.cycles);
    say(log, "component %zu: root %d, %zu markers, tree depth %d, %d outlier edges removed, %zu cycles", ci,
        tree.root, components[ci].size(), tree.max_depth(), comp.removed_edges, comp.cycles);

    // Frame initialization against the initial map.
    OptimizationProblem problem;
    problem.geom = geom;
    problem.intrinsics = result.intrinsics;
    problem.optimize_intrinsics = config.optimize_intrinsics;
    std::map<int, int> marker_index;
    for (const auto& [id, pose] : comp.initial_markers) {
      marker_index[id] = static_cast<int>(problem.markers.size());
      problem.marker_ids.push_back(id);
      problem.markers.push_back(zeta_from_gamma(pose));
      problem.marker_fixed.push_back(id == tree.root);
    }
    for (const FrameDetections* f : frames_for(frames, comp.initial_markers)) {
      FramePoseEstimate est;
      try {
        est = estimate_frame_pose(*f, comp.initial_markers, geom, result.intrinsics, config.planar);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNotLocalizable) throw;
        continue;
      }
      const int fi = static_cast<int>(problem.frames.size());
      problem.frame_ids.push_back(f->frame_id);
      problem.frames.push_back(zeta_from_gamma(est.pose));
      for (const auto& o : f->observations) {
        const auto it = marker_index.find(o.marker_id);
        if (it == marker_index.end() || !usable_quad(o)) continue;
        problem.observations.push_back({fi, it->second, o.pixels});
      }
    }
    say(log, "component %zu: %zu frames initialized, %zu observations, %d parameters", ci, problem.frames.size(),
        problem.observations.size(), problem.parameter_count());

    if (config.skip_global_optimization || problem.frames.empty()) {
      comp.report.initial_cost = comp.report.final_cost = total_cost(problem);
      const auto [mean, rms] = reprojection_stats(problem);
      comp.report.mean_reprojection_px = mean;
      comp.report.rms_reprojection_px = rms;
      comp.report.termination = "skipped";
    } else {
      OptimizationResult opt = optimize(problem, config.lm, log);
      problem = std::move(opt.problem);
      comp.report = std::move(opt.report);
      if (config.optimize_intrinsics) result.intrinsics = problem.intrinsics;
    }
    for (std::size_t m = 0; m < problem.markers.size(); ++m) {
      comp.markers[problem.marker_ids[m]] = gamma_from_zeta(problem.markers[m]);
    }
    for (std::size_t f = 0; f < problem.frames.size(); ++f) {
      comp.frames[problem.frame_ids[f]] = gamma_from_zeta(problem.frames[f]);
    }
    st.lm_iterations += comp.report.iterations;
    reproj_sum += comp.report.mean_reprojection_px * static_cast<double>(problem.frames.size());
    reproj_frames += static_cast<int>(problem.frames.size());
    say(log, "component %zu: %d LM iterations, mean reprojection error %.6g px", ci, comp.report.iterations,
        comp.report.mean_reprojection_px);
    result.components.push_back(std::move(comp));
  }
  st.mean_reprojection_px = reproj_frames > 0 ? reproj_sum / reproj_frames : 0.0;
  say(log, "total: %d cycles, %d LM iterations, mean reprojection error %.6g px", st.cycles, st.lm_iterations,
      st.mean_reprojection_px);
  return result;
}

Trajectory localize_frames(const std::vector<FrameDetections>& frames, const MarkerMap& map,
                           const CameraIntrinsics& k, bool refine, const PlanarPoseConfig& planar,
                           std::ostream* log) {
  k.validate();
  validate_frames(frames);
  const MarkerGeometry geom(map.side);
  const auto markers = map.transforms();
  Trajectory out;
  int skipped = 0;
  for (const auto& f : frames) {
    FramePoseEstimate est;
    try {
      est = estimate_frame_pose(f, markers, geom, k, planar);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotLocalizable) throw;
      ++skipped;
      continue;
    }
    Transform pose = est.pose;
    if (refine) {
      OptimizationProblem p;
      p.geom = geom;
      p.intrinsics = k;
      p.frame_ids = {f.frame_id};
      p.frames = {zeta_from_gamma(pose)};
      for (const auto& o : f.observations) {
        const auto it = markers.find(o.marker_id);
        if (it == markers.end() || !usable_quad(o)) continue;
        p.observations.push_back({0, static_cast<int>(p.markers.size()), o.pixels});
        p.marker_ids.push_back(o.marker_id);
        p.markers.push_back(zeta_from_gamma(it->second));
        p.marker_fixed.push_back(true);
      }
      if (!p.observations.empty()) pose = gamma_from_zeta(optimize(p).problem.frames[0]);
    }
    TrajectoryEntry e;
    e.frame_id = f.frame_id;
    e.timestamp = f.timestamp.value_or(0.0);
    e.pose = zeta_from_gamma(pose);
    e.low_confidence = est.low_confidence;
    out.push_back(e);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.frame_id < b.frame_id; });
  say(log, "localized %zu of %zu frames, %d without mapped markers", out.size(), frames.size(), skipped);
  return out;
}

}  // namespace fidmap
