#include <gtest/gtest.h>

#include <limits>

#include "fidmap/error.hpp"
#include "fidmap/posegraph.hpp"
#include "fidmap/synth.hpp"
#include "test_util.hpp"

using namespace fidmap;
using fidmap::test::deg;
using fidmap::test::kPi;
using fidmap::test::observe_all;
using fidmap::test::Random;
using fidmap::test::rotation_angle;

namespace {

PoseGraph weighted(const std::vector<std::tuple<int, int, double>>& edges, Random* rng = nullptr) {
  PoseGraph g;
  for (const auto& [i, j, w] : edges) g.add_edge(i, j, rng ? rng->transform() : Transform::identity(), w);
  return g;
}

// Bellman-Ford distances, independent of the library's Floyd-Warshall and Dijkstra.
std::map<int, double> distances_from(const PoseGraph& g, int root) {
  std::map<int, double> d;
  for (const int n : g.nodes()) d[n] = std::numeric_limits<double>::infinity();
  d[root] = 0.0;
  for (std::size_t pass = 0; pass < g.nodes().size(); ++pass) {
    for (const auto& [key, e] : g.edges()) d[key.second] = std::min(d[key.second], d[key.first] + e.weight);
  }
  return d;
}

PoseGraph random_connected(Random& rng, int n, int extra) {
  PoseGraph g;
  for (int v = 1; v < n; ++v) g.add_edge(rng.integer(0, v - 1), v, rng.transform(), rng.uniform(0.1, 2.0));
  for (int e = 0; e < extra; ++e) {
    const int a = rng.integer(0, n - 1);
    const int b = rng.integer(0, n - 1);
    if (a != b && !g.has_edge(a, b)) g.add_edge(a, b, rng.transform(), rng.uniform(0.1, 2.0));
  }
  return g;
}

}  // namespace

TEST(PoseGraph, BothDirectionsStored) {
  Random rng(1);
  std::map<MarkerPair, BestEdge> best;
  best[{1, 2}] = {rng.transform(), 0.7, 0};
  best[{1, 3}] = {rng.transform(), 0.2, 1};
  best[{2, 3}] = {rng.transform(), 0.4, 2};
  const PoseGraph g = build_graph(best);
  EXPECT_EQ(g.edges().size(), 6u);
  EXPECT_EQ(g.undirected_edge_count(), 3u);
  EXPECT_EQ(g.nodes(), (std::set<int>{1, 2, 3}));
  for (const auto& [pair, e] : best) {
    const auto& fwd = g.edge(pair.first, pair.second);
    const auto& rev = g.edge(pair.second, pair.first);
    EXPECT_EQ(fwd.pose.matrix(), e.rel.matrix());
    EXPECT_LT(((rev.pose * fwd.pose).matrix() - Eigen::Matrix4d::Identity()).norm(), 1e-9);
    EXPECT_EQ(fwd.weight, rev.weight);
  }
}

TEST(PoseGraph, EdgeBookkeeping) {
  PoseGraph g = weighted({{1, 2, 1.0}, {2, 3, 1.0}, {5, 6, 1.0}});
  g.add_node(9);
  EXPECT_EQ(g.neighbors(2), (std::vector<int>{1, 3}));
  EXPECT_THROW(g.add_edge(4, 4, Transform::identity(), 1.0), Error);
  EXPECT_THROW(g.edge(1, 3), Error);
  g.remove_edge(3, 2);
  EXPECT_FALSE(g.has_edge(2, 3));
  EXPECT_FALSE(g.has_edge(3, 2));
  const auto comps = g.connected_components();
  ASSERT_EQ(comps.size(), 4u);
  EXPECT_EQ(comps[0], (std::set<int>{1, 2}));
  EXPECT_EQ(comps[1], (std::set<int>{3}));
  EXPECT_EQ(comps[2], (std::set<int>{5, 6}));
  EXPECT_EQ(comps[3], (std::set<int>{9}));
  const PoseGraph sub = g.subgraph({5, 6, 1});
  EXPECT_EQ(sub.nodes(), (std::set<int>{1, 5, 6}));
  EXPECT_EQ(sub.undirected_edge_count(), 1u);
}

TEST(StartNode, PathCenter) {
  const auto tree = choose_start_node(weighted({{1, 2, 1.0}, {2, 3, 1.0}}));
  EXPECT_EQ(tree.root, 2);
  EXPECT_EQ(tree.parent.at(1), 2);
  EXPECT_EQ(tree.parent.at(3), 2);
}

TEST(StartNode, StarHub) {
  const auto tree = choose_start_node(weighted({{7, 1, 0.5}, {7, 2, 0.8}, {7, 3, 0.3}, {7, 4, 1.1}, {7, 5, 0.9}}));
  EXPECT_EQ(tree.root, 7);
  EXPECT_EQ(tree.max_depth(), 1);
}

TEST(StartNode, FourMarkerExample) {
  // Equal unit weights on the chain 1-2-3-4 with two heavier shortcuts. Nodes 2
  // and 3 have the same total distance; the lower id wins.
  const auto tree = choose_start_node(weighted({{1, 2, 1.0}, {2, 3, 1.0}, {3, 4, 1.0}, {1, 3, 3.0}, {2, 4, 3.0}}));
  EXPECT_EQ(tree.root, 2);
  EXPECT_EQ(tree.parent.size(), 3u);
  EXPECT_EQ(tree.parent.at(1), 2);
  EXPECT_EQ(tree.parent.at(3), 2);
  EXPECT_EQ(tree.parent.at(4), 3);
  EXPECT_TRUE(tree.is_tree_edge(4, 3));
  EXPECT_FALSE(tree.is_tree_edge(2, 4));
  EXPECT_EQ(tree.path_to_root(4), (std::vector<int>{4, 3, 2}));
  EXPECT_EQ(tree.depth.at(4), 2);
  EXPECT_DOUBLE_EQ(tree.distance.at(4), 2.0);
}

TEST(StartNode, DisconnectedOrEmptyThrows) {
  EXPECT_THROW(choose_start_node(weighted({{1, 2, 1.0}, {3, 4, 1.0}})), Error);
  EXPECT_THROW(choose_start_node(PoseGraph{}), Error);
  const auto trees = choose_start_nodes(weighted({{1, 2, 1.0}, {2, 3, 1.0}, {4, 5, 1.0}, {5, 6, 1.0}, {5, 7, 1.0}}));
  ASSERT_EQ(trees.size(), 2u);
  EXPECT_EQ(trees[0].root, 2);
  EXPECT_EQ(trees[1].root, 5);
}

TEST(StartNode, MatchesBruteForceOnRandomGraphs) {
  Random rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const PoseGraph g = random_connected(rng, rng.integer(2, 15), rng.integer(0, 20));
    auto cost_of = [&](int r) {
      double cost = 0.0;
      for (const auto& [n, d] : distances_from(g, r)) cost += d;
      return cost;
    };
    double best_cost = std::numeric_limits<double>::infinity();
    for (const int r : g.nodes()) best_cost = std::min(best_cost, cost_of(r));
    const auto tree = choose_start_node(g);
    // Symmetric graphs can tie up to rounding.
    ASSERT_LE(cost_of(tree.root), best_cost + 1e-9);
    const auto d = distances_from(g, tree.root);
    for (const int n : g.nodes()) {
      ASSERT_TRUE(tree.contains(n));
      ASSERT_NEAR(tree.distance.at(n), d.at(n), 1e-9);
      if (n == tree.root) continue;
      const int p = tree.parent.at(n);
      ASSERT_NEAR(tree.distance.at(n), tree.distance.at(p) + g.edge(n, p).weight, 1e-9);
      ASSERT_EQ(tree.depth.at(n), tree.depth.at(p) + 1);
    }
  }
}

TEST(Outliers, EqualWeightsKeepEverything) {
  const PoseGraph g = weighted({{1, 2, 1.0}, {2, 3, 1.0}, {1, 3, 1.0}, {3, 4, 1.0}, {2, 4, 1.0}});
  const auto tree = choose_start_node(g);
  EXPECT_EQ(filter_outliers(g, tree).undirected_edge_count(), 5u);
}

TEST(Outliers, HeavyNonTreeEdgeRemoved) {
  // Tree edges weigh 1 and 3: mean 2, sigma 1. The limit is 4.58.
  PoseGraph g = weighted({{1, 2, 1.0}, {2, 3, 3.0}, {1, 3, 4.5}});
  const auto tree = shortest_path_tree(g, 2);
  EXPECT_EQ(filter_outliers(g, tree).undirected_edge_count(), 3u);
  g.add_edge(1, 3, Transform::identity(), 2.0 + 10.0);
  const PoseGraph f = filter_outliers(g, tree);
  EXPECT_FALSE(f.has_edge(1, 3));
  EXPECT_FALSE(f.has_edge(3, 1));
  EXPECT_TRUE(f.has_edge(1, 2));
  EXPECT_TRUE(f.has_edge(2, 3));
  EXPECT_EQ(f.nodes(), g.nodes());
}

TEST(Outliers, NeverDisconnects) {
  Random rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const PoseGraph g = random_connected(rng, rng.integer(2, 20), rng.integer(0, 30));
    const auto tree = choose_start_node(g);
    const PoseGraph f = filter_outliers(g, tree, rng.uniform(0.0, 3.0));
    ASSERT_EQ(f.connected_components().size(), 1u);
    for (const auto& [child, parent] : tree.parent) ASSERT_TRUE(f.has_edge(child, parent));
  }
}

TEST(Outliers, CorruptedEdgeIsTheOneRemoved) {
  const MarkerGeometry geom(0.1);
  const CameraIntrinsics k = default_camera();
  Random rng(4);
  std::map<int, Transform> markers;
  for (int m = 0; m < 6; ++m) {
    markers[m] = Transform(rng.rotation(deg(15)), Vec3(0.25 * (m % 3), 0.25 * (m / 3), 0.0));
  }
  std::vector<FrameDetections> frames;
  for (int f = 0; f < 12; ++f) {
    const Mat3 R = rng.rotation(deg(10));
    const Vec3 eye = Vec3(0.25, 0.12, -1.0) + rng.vec3(-0.1, 0.1);
    frames.push_back(observe_all(f, Transform(R, -(R * eye)), markers, geom, k, &rng, 0.3));
  }
  PlanarPoseConfig loose;
  loose.ambiguity_ratio = 1.0;
  const auto sets = build_frame_pose_sets(frames, geom, k, loose);
  auto best = select_best_edges(build_quiver(sets), sets, frames, geom, k);
  const PoseGraph clean = build_graph(best);
  const auto clean_tree = choose_start_node(clean);
  const PoseGraph clean_filtered = filter_outliers(clean, clean_tree);

  // Corrupt one surviving non-tree edge with a wrong relative rotation and rescore it.
  MarkerPair victim{-1, -1};
  for (const auto& [pair, e] : best) {
    if (!clean_tree.is_tree_edge(pair.first, pair.second) && clean_filtered.has_edge(pair.first, pair.second)) {
      victim = pair;
      break;
    }
  }
  ASSERT_NE(victim.first, -1);
  BestEdge& bad = best.at(victim);
  bad.rel = Transform(Eigen::AngleAxisd(deg(25), Vec3::UnitX()).toRotationMatrix(), Vec3::Zero()) * bad.rel;
  bad.score = 0.0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    bad.score += cross_frame_error(bad.rel, sets[f], frames[f], victim.first, victim.second, geom, k);
  }

  const PoseGraph g = build_graph(best);
  const auto tree = choose_start_node(g);
  ASSERT_EQ(tree.root, clean_tree.root);
  const PoseGraph f = filter_outliers(g, tree);
  // Exactly the clean graph's filtering plus the corrupted edge.
  EXPECT_FALSE(f.has_edge(victim.first, victim.second));
  for (const auto& [key, e] : clean_filtered.edges()) {
    if (MarkerPair(std::min(key.first, key.second), std::max(key.first, key.second)) == victim) continue;
    EXPECT_TRUE(f.has_edge(key.first, key.second));
  }
  EXPECT_EQ(f.undirected_edge_count(), clean_filtered.undirected_edge_count() - 1);
}

TEST(InitialPoses, RootIsIdentity) {
  Random rng(5);
  const PoseGraph g = random_connected(rng, 6, 4);
  const auto tree = choose_start_node(g);
  const auto poses = initial_marker_poses(g, tree);
  EXPECT_EQ(poses.at(tree.root).matrix(), Eigen::Matrix4d::Identity());
  EXPECT_EQ(poses.size(), 6u);
}

TEST(InitialPoses, ChildTranslation) {
  // Marker 1's origin sits at (1,0,0) in marker 0's frame.
  PoseGraph g;
  g.add_edge(1, 0, Transform(Mat3::Identity(), Vec3(1, 0, 0)), 1.0);
  const auto poses = initial_marker_poses(g, shortest_path_tree(g, 0));
  EXPECT_LT((poses.at(1).translation() - Vec3(1, 0, 0)).norm(), 1e-12);
}

TEST(InitialPoses, ComposedAlongTree) {
  Random rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const PoseGraph g = random_connected(rng, rng.integer(2, 12), rng.integer(0, 10));
    const auto tree = choose_start_node(g);
    const auto poses = initial_marker_poses(g, tree);
    for (const auto& [child, parent] : tree.parent) {
      const Transform expected = poses.at(parent) * g.edge(child, parent).pose;
      ASSERT_LT((poses.at(child).matrix() - expected.matrix()).norm(), 1e-9);
    }
  }
}

TEST(InitialPoses, ChainOfFiveMatchesTruth) {
  Random rng(7);
  std::map<int, Transform> truth;
  for (int m = 0; m < 5; ++m) truth[m] = rng.transform(kPi, 2.0);
  PoseGraph g;
  for (int m = 0; m + 1 < 5; ++m) g.add_edge(m, m + 1, truth[m + 1].inverse() * truth[m], 1.0);
  const auto tree = choose_start_node(g);
  EXPECT_EQ(tree.root, 2);
  const auto poses = initial_marker_poses(g, tree);
  const Transform to_root = truth[tree.root].inverse();
  for (int m = 0; m < 5; ++m) {
    const Transform gt = to_root * truth[m];
    EXPECT_LT(rotation_angle(poses.at(m).rotation(), gt.rotation()), 1e-6);
    EXPECT_LT((poses.at(m).translation() - gt.translation()).norm(), 1e-6);
  }
}
