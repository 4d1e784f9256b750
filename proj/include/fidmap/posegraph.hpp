#pragma once

#include <map>
#include <set>
#include <vector>

#include "fidmap/geometry.hpp"
#include "fidmap/quiver.hpp"

namespace fidmap {

struct GraphEdge {
  Transform pose;  // maps points of the edge's first marker into the second's frame
  double weight = 0.0;
};

/// Markers as nodes, best relative poses as edges. Both directions of every
/// edge are stored; the reverse pose is the inverse and the weight is shared.
class PoseGraph {
 public:
  void add_node(int id) { nodes_.insert(id); }
  /// Inserts (i,j) and (j,i). `pose` maps marker i's frame into marker j's.
  void add_edge(int i, int j, const Transform& pose, double weight);
  void remove_edge(int i, int j);

  bool has_edge(int i, int j) const { return edges_.count({i, j}) != 0; }
  const GraphEdge& edge(int i, int j) const;
  const std::set<int>& nodes() const { return nodes_; }
  const std::map<MarkerPair, GraphEdge>& edges() const { return edges_; }
  std::vector<int> neighbors(int id) const;
  std::size_t undirected_edge_count() const { return edges_.size() / 2; }

  /// Components sorted by their smallest node id.
  std::vector<std::set<int>> connected_components() const;
  PoseGraph subgraph(const std::set<int>& keep) const;

 private:
  std::set<int> nodes_;
  std::map<MarkerPair, GraphEdge> edges_;
};

/// Shortest-path tree of one connected component.
struct SpanningTree {
  int root = 0;
  std::map<int, int> parent;      // absent for the root
  std::map<int, int> depth;       // root has depth 0
  std::map<int, double> distance; // shortest-path distance to the root

  bool contains(int node) const { return depth.count(node) != 0; }
  bool is_tree_edge(int a, int b) const;
  int max_depth() const;
  /// Nodes from `node` up to and including the root.
  std::vector<int> path_to_root(int node) const;
};

PoseGraph build_graph(const std::map<MarkerPair, BestEdge>& best_edges);

/// Dijkstra tree from `root` over the nodes reachable from it. A node keeps
/// its first parent on equal distances.
SpanningTree shortest_path_tree(const PoseGraph& g, int root);

/// Floyd-Warshall all-pairs distances under the edge weights; the root is the
/// node with the smallest summed distance to the others (ties: lowest id).
/// Requires a connected, non-empty graph.
SpanningTree choose_start_node(const PoseGraph& g);

/// One tree per connected component, in component order.
std::vector<SpanningTree> choose_start_nodes(const PoseGraph& g);

/// Removes non-tree edges whose weight exceeds mean + z * stddev of the tree
/// edge weights. Tree edges are always kept.
PoseGraph filter_outliers(const PoseGraph& g, const SpanningTree& tree, double z = 2.58);

/// Marker -> global poses obtained by composing edge poses down the tree; the
/// root is the identity.
std::map<int, Transform> initial_marker_poses(const PoseGraph& g, const SpanningTree& tree);

}  // namespace fidmap
