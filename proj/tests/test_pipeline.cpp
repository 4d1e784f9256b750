#include <gtest/gtest.h>

#include <sstream>

#include "fidmap/error.hpp"
#include "fidmap/eval.hpp"
#include "fidmap/pipeline.hpp"
#include "fidmap/synth.hpp"
#include "test_util.hpp"

using namespace fidmap;
using fidmap::test::Random;
using fidmap::test::rotation_angle;

namespace {

SyntheticSequence grid_orbit(double sigma, int frames = 80, std::uint64_t seed = 5) {
  const auto scene = generate_scene(SceneLayout::kPlaneGrid, 12, 0.05, seed);
  return generate_sequence(scene, TrajectoryKind::kOrbit, frames, sigma, default_camera(), seed);
}

PipelineConfig config_for(const SyntheticSequence& seq) {
  PipelineConfig cfg;
  cfg.side = seq.scene.geom.side();
  return cfg;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST(BuildMap, SingleMarkerFramesAreInsufficient) {
  auto seq = grid_orbit(0.3, 20);
  for (auto& f : seq.detections) {
    if (f.observations.size() > 1) f.observations.resize(1);
  }
  EXPECT_EQ(code_of([&] { build_map(seq.detections, seq.camera, config_for(seq)); }),
            ErrorCode::kInsufficientCoObservations);
  EXPECT_EQ(code_of([&] { build_map({}, seq.camera, config_for(seq)); }), ErrorCode::kInsufficientCoObservations);
}

TEST(BuildMap, ZeroNoiseIsExactUpToGauge) {
  const auto seq = grid_orbit(0.0);
  const auto result = build_map(seq.detections, seq.camera, config_for(seq));
  ASSERT_EQ(result.components.size(), 1u);
  const auto& c = result.components[0];
  EXPECT_EQ(c.markers.size(), 12u);
  EXPECT_LT(compute_ace(c.markers, seq.scene.corners(), seq.scene.geom).ace, 1e-6);
  EXPECT_LT(compute_ate(result.trajectory(seq.detections), seq.ground_truth()).ate, 1e-6);
  EXPECT_LT(c.report.rms_reprojection_px, 1e-6);
}

TEST(BuildMap, RootMarkerIsTheOrigin) {
  const auto seq = grid_orbit(0.5);
  auto cfg = config_for(seq);
  cfg.seed_root = 7;
  const auto result = build_map(seq.detections, seq.camera, cfg);
  const auto& c = result.components.at(0);
  EXPECT_EQ(c.tree.root, 7);
  EXPECT_LT(test::transform_distance(c.markers.at(7), Transform()), 1e-12);
}

TEST(BuildMap, NoiseStaysInTheMillimetreRange) {
  const auto seq = grid_orbit(0.5, 150);
  const auto result = build_map(seq.detections, seq.camera, config_for(seq));
  const auto& c = result.components.at(0);
  EXPECT_LT(compute_ace(c.markers, seq.scene.corners(), seq.scene.geom).ace, 2e-3);
  EXPECT_LT(c.report.final_cost, c.report.initial_cost);
  EXPECT_GT(c.report.rms_reprojection_px, 0.3);
  EXPECT_LT(c.report.rms_reprojection_px, 0.8);
}

TEST(BuildMap, StatsAndLog) {
  const auto seq = grid_orbit(0.5, 40);
  std::ostringstream log;
  const auto result = build_map(seq.detections, seq.camera, config_for(seq), &log);
  int detections = 0;
  for (const auto& f : seq.detections) detections += static_cast<int>(f.observations.size());
  EXPECT_EQ(result.stats.frames, 40);
  EXPECT_EQ(result.stats.detections, detections);
  EXPECT_EQ(result.stats.components, 1);
  EXPECT_EQ(result.stats.graph_nodes, 12);
  EXPECT_GE(result.stats.graph_edges, 11);
  // Cycles are counted after outlier edges are dropped.
  const auto& c = result.components[0];
  EXPECT_EQ(static_cast<int>(c.graph.undirected_edge_count()) + c.removed_edges, result.stats.graph_edges);
  EXPECT_EQ(result.stats.cycles, static_cast<int>(c.graph.undirected_edge_count()) - 12 + 1);
  EXPECT_EQ(result.stats.lm_iterations, result.components[0].report.iterations);
  const std::string text = log.str();
  for (const char* word : {"frames", "detections", "ambiguous", "nodes", "edges", "components", "cycles",
                           "LM iterations", "mean reprojection error"}) {
    EXPECT_NE(text.find(word), std::string::npos) << word;
  }
}

TEST(BuildMap, SameInputSameOutput) {
  const auto seq = grid_orbit(0.5, 40);
  const auto a = build_map(seq.detections, seq.camera, config_for(seq));
  const auto b = build_map(seq.detections, seq.camera, config_for(seq));
  for (const auto& [id, m] : a.components[0].markers) {
    EXPECT_EQ(m.matrix(), b.components[0].markers.at(id).matrix());
  }
  for (const auto& [id, f] : a.components[0].frames) EXPECT_EQ(f.matrix(), b.components[0].frames.at(id).matrix());
}

TEST(BuildMap, DisconnectedGraphGivesOneMapPerComponent) {
  const MarkerGeometry geom(0.1);
  const CameraIntrinsics k = default_camera();
  Random rng(3);
  // Two pairs of markers one metre apart; no frame sees both pairs.
  std::map<int, Transform> left, right;
  left[0] = Transform(Eigen::AngleAxisd(test::kPi, Vec3::UnitX()).toRotationMatrix(), Vec3(-0.6, -0.1, 0));
  left[1] = Transform(left[0].rotation(), Vec3(-0.4, 0.1, 0));
  right[2] = Transform(left[0].rotation(), Vec3(0.4, -0.1, 0));
  right[3] = Transform(left[0].rotation(), Vec3(0.6, 0.1, 0));
  std::vector<FrameDetections> frames;
  for (int i = 0; i < 16; ++i) {
    const auto& group = i % 2 == 0 ? left : right;
    const double x = i % 2 == 0 ? -0.5 : 0.5;
    const Vec3 eye(x + rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), -rng.uniform(0.6, 0.9));
    frames.push_back(test::observe_all(i, look_at(eye, Vec3(x, 0, 0)), group, geom, k, &rng, 0.3));
  }
  PipelineConfig cfg;
  cfg.side = 0.1;
  const auto result = build_map(frames, k, cfg);
  ASSERT_EQ(result.components.size(), 2u);
  EXPECT_EQ(result.stats.components, 2);
  for (const auto& c : result.components) {
    EXPECT_EQ(c.markers.size(), 2u);
    EXPECT_EQ(c.frames.size(), 8u);
    EXPECT_LT(test::transform_distance(c.markers.at(c.tree.root), Transform()), 1e-12);
    EXPECT_EQ(c.to_map(0.1).component_id, c.component_id);
  }
  EXPECT_NE(result.components[0].component_id, result.components[1].component_id);
  EXPECT_EQ(result.trajectory(frames).size(), 16u);
}

TEST(BuildMap, SkippingCycleCorrectionStillWorksOnEasyScenes) {
  const auto seq = grid_orbit(0.0);
  auto cfg = config_for(seq);
  cfg.skip_cycle_correction = true;
  cfg.skip_global_optimization = true;
  const auto result = build_map(seq.detections, seq.camera, cfg);
  const auto& c = result.components.at(0);
  EXPECT_EQ(c.report.iterations, 0);
  EXPECT_LT(compute_ace(c.markers, seq.scene.corners(), seq.scene.geom).ace, 1e-6);
}

TEST(BuildMap, CycleCorrectionChangesOnlyTheInitialization) {
  const auto scene = generate_scene(SceneLayout::kRoomWalls, 21, 0.2, 2);
  const auto seq = generate_sequence(scene, TrajectoryKind::kWalkthrough, 200, 1.0, default_camera(), 2);
  auto cfg = config_for(seq);
  cfg.skip_global_optimization = true;
  const auto corrected = build_map(seq.detections, seq.camera, cfg);
  cfg.skip_cycle_correction = true;
  const auto plain = build_map(seq.detections, seq.camera, cfg);
  ASSERT_EQ(corrected.components.size(), 1u);
  ASSERT_EQ(plain.components.size(), 1u);
  const auto& a = corrected.components[0];
  const auto& b = plain.components[0];
  EXPECT_GT(a.cycles, 0u);
  EXPECT_EQ(a.tree.root, b.tree.root);
  EXPECT_EQ(a.tree.parent, b.tree.parent);
  EXPECT_EQ(a.graph.undirected_edge_count(), b.graph.undirected_edge_count());
  // Markers one step from the root may match; deeper ones must differ.
  double moved = 0.0;
  for (const auto& [id, m] : a.initial_markers) moved = std::max(moved, test::transform_distance(m, b.initial_markers.at(id)));
  EXPECT_GT(moved, 1e-6);
  EXPECT_LT(test::transform_distance(a.initial_markers.at(a.tree.root), Transform()), 1e-12);
}

TEST(Localize, GroundTruthMapGivesGroundTruthPoses) {
  const auto seq = grid_orbit(0.3, 60);
  MarkerMap map;
  map.side = seq.scene.geom.side();
  for (const auto& [id, m] : seq.scene.marker_poses) map.markers[id] = zeta_from_gamma(m);
  for (const bool refine : {false, true}) {
    const auto traj = localize_frames(seq.detections, map, seq.camera, refine);
    ASSERT_FALSE(traj.empty());
    for (const auto& e : traj) {
      const Transform est = gamma_from_zeta(e.pose);
      const Transform& truth = seq.frame_poses.at(e.frame_id);
      EXPECT_LT(rotation_angle(est.rotation(), truth.rotation()), test::deg(2.0)) << e.frame_id;
      EXPECT_LT((est.inverse().translation() - truth.inverse().translation()).norm(), 0.02) << e.frame_id;
    }
  }
}

TEST(Localize, RefinementDoesNotIncreaseReprojectionError) {
  const auto seq = grid_orbit(0.5, 60);
  MarkerMap map;
  map.side = seq.scene.geom.side();
  for (const auto& [id, m] : seq.scene.marker_poses) map.markers[id] = zeta_from_gamma(m);
  const auto raw = localize_frames(seq.detections, map, seq.camera, false);
  const auto refined = localize_frames(seq.detections, map, seq.camera, true);
  ASSERT_EQ(raw.size(), refined.size());
  const auto markers = map.transforms();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& f = *std::find_if(seq.detections.begin(), seq.detections.end(),
                                  [&](const FrameDetections& d) { return d.frame_id == raw[i].frame_id; });
    const double before = score_candidate(gamma_from_zeta(raw[i].pose), f, markers, seq.scene.geom, seq.camera);
    const double after = score_candidate(gamma_from_zeta(refined[i].pose), f, markers, seq.scene.geom, seq.camera);
    EXPECT_LE(after, before * (1 + 1e-9) + 1e-12);
  }
}

TEST(Localize, FramesWithoutMappedMarkersAreSkipped) {
  const auto seq = grid_orbit(0.3, 30);
  MarkerMap map;
  map.side = seq.scene.geom.side();
  map.markers[0] = zeta_from_gamma(seq.scene.marker_poses.at(0));
  map.markers[1] = zeta_from_gamma(seq.scene.marker_poses.at(1));
  std::size_t seeing = 0;
  for (const auto& f : seq.detections) {
    seeing += std::any_of(f.observations.begin(), f.observations.end(),
                          [](const CornerObservation& o) { return o.marker_id <= 1; });
  }
  const auto traj = localize_frames(seq.detections, map, seq.camera, false);
  EXPECT_EQ(traj.size(), seeing);
  for (std::size_t i = 1; i < traj.size(); ++i) EXPECT_GT(traj[i].frame_id, traj[i - 1].frame_id);
}
