#include "fidmap/posegraph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <queue>

#include "fidmap/error.hpp"

namespace fidmap {

void PoseGraph::add_edge(int i, int j, const Transform& pose, double weight) {
  if (i == j) throw Error(ErrorCode::kInvalidArgument, "self edge on marker " + std::to_string(i));
  nodes_.insert(i);
  nodes_.insert(j);
  edges_[{i, j}] = {pose, weight};
  edges_[{j, i}] = {pose.inverse(), weight};
}

void PoseGraph::remove_edge(int i, int j) {
  edges_.erase({i, j});
  edges_.erase({j, i});
}

const GraphEdge& PoseGraph::edge(int i, int j) const {
  const auto it = edges_.find({i, j});
  if (it == edges_.end()) {
    throw Error(ErrorCode::kInvalidArgument, "no edge " + std::to_string(i) + "->" + std::to_string(j));
  }
  return it->second;
}

std::vector<int> PoseGraph::neighbors(int id) const {
  std::vector<int> out;
  for (auto it = edges_.lower_bound({id, std::numeric_limits<int>::min()});
       it != edges_.end() && it->first.first == id; ++it) {
    out.push_back(it->first.second);
  }
  return out;
}

std::vector<std::set<int>> PoseGraph::connected_components() const {
  std::vector<std::set<int>> out;
  std::set<int> seen;
  for (const int start : nodes_) {
    if (seen.count(start)) continue;
    std::set<int> comp;
    std::deque<int> queue{start};
    seen.insert(start);
    while (!queue.empty()) {
      const int n = queue.front();
      queue.pop_front();
      comp.insert(n);
      for (const int m : neighbors(n)) {
        if (seen.insert(m).second) queue.push_back(m);
      }
    }
    out.push_back(std::move(comp));
  }
  return out;
}

PoseGraph PoseGraph::subgraph(const std::set<int>& keep) const {
  PoseGraph g;
  for (const int n : keep) {
    if (nodes_.count(n)) g.add_node(n);
  }
  for (const auto& [key, e] : edges_) {
    if (keep.count(key.first) && keep.count(key.second)) g.edges_[key] = e;
  }
  return g;
}

bool SpanningTree::is_tree_edge(int a, int b) const {
  const auto pa = parent.find(a);
  if (pa != parent.end() && pa->second == b) return true;
  const auto pb = parent.find(b);
  return pb != parent.end() && pb->second == a;
}

int SpanningTree::max_depth() const {
  int d = 0;
  for (const auto& [n, depth_n] : depth) d = std::max(d, depth_n);
  return d;
}

std::vector<int> SpanningTree::path_to_root(int node) const {
  std::vector<int> path{node};
  while (node != root) {
    node = parent.at(node);
    path.push_back(node);
  }
  return path;
}

PoseGraph build_graph(const std::map<MarkerPair, BestEdge>& best_edges) {
  PoseGraph g;
  for (const auto& [pair, e] : best_edges) g.add_edge(pair.first, pair.second, e.rel, e.score);
  return g;
}

SpanningTree shortest_path_tree(const PoseGraph& g, int root) {
  SpanningTree tree;
  tree.root = root;
  std::map<int, double> dist;
  for (const int n : g.nodes()) dist[n] = std::numeric_limits<double>::infinity();
  dist[root] = 0.0;
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  heap.push({0.0, root});
  std::set<int> done;
  tree.depth[root] = 0;
  while (!heap.empty()) {
    const auto [d, n] = heap.top();
    heap.pop();
    if (!done.insert(n).second) continue;
    tree.distance[n] = d;
    for (const int m : g.neighbors(n)) {
      if (done.count(m)) continue;
      const double cand = d + g.edge(n, m).weight;
      if (cand < dist[m]) {
        dist[m] = cand;
        tree.parent[m] = n;
        tree.depth[m] = tree.depth[n] + 1;
        heap.push({cand, m});
      }
    }
  }
  return tree;
}

SpanningTree choose_start_node(const PoseGraph& g) {
  if (g.nodes().empty()) throw Error(ErrorCode::kInvalidArgument, "empty pose graph");
  const std::vector<int> ids(g.nodes().begin(), g.nodes().end());
  const std::size_t n = ids.size();
  std::map<int, std::size_t> index;
  for (std::size_t a = 0; a < n; ++a) index[ids[a]] = a;

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(n * n, inf);
  for (std::size_t a = 0; a < n; ++a) d[a * n + a] = 0.0;
  for (const auto& [key, e] : g.edges()) {
    auto& slot = d[index[key.first] * n + index[key.second]];
    slot = std::min(slot, e.weight);
  }
  for (std::size_t m = 0; m < n; ++m) {
    for (std::size_t a = 0; a < n; ++a) {
      const double dam = d[a * n + m];
      if (dam == inf) continue;
      for (std::size_t b = 0; b < n; ++b) {
        const double via = dam + d[m * n + b];
        if (via < d[a * n + b]) d[a * n + b] = via;
      }
    }
  }

  std::size_t best = 0;
  double best_cost = inf;
  for (std::size_t a = 0; a < n; ++a) {
    double cost = 0.0;
    for (std::size_t b = 0; b < n; ++b) cost += d[a * n + b];
    if (cost == inf) throw Error(ErrorCode::kInvalidArgument, "pose graph is not connected");
    if (cost < best_cost) {
      best_cost = cost;
      best = a;
    }
  }
  return shortest_path_tree(g, ids[best]);
}

std::vector<SpanningTree> choose_start_nodes(const PoseGraph& g) {
  std::vector<SpanningTree> out;
  for (const auto& comp : g.connected_components()) out.push_back(choose_start_node(g.subgraph(comp)));
  return out;
}

PoseGraph filter_outliers(const PoseGraph& g, const SpanningTree& tree, double z) {
  std::vector<double> w;
  for (const auto& [child, parent] : tree.parent) w.push_back(g.edge(child, parent).weight);
  PoseGraph out = g;
  if (w.empty()) return out;
  double mean = 0.0;
  for (const double x : w) mean += x;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (const double x : w) var += (x - mean) * (x - mean);
  const double sigma = std::sqrt(var / static_cast<double>(w.size()));
  const double limit = mean + z * sigma;
  for (const auto& [key, e] : g.edges()) {
    if (key.first > key.second) continue;
    if (!tree.is_tree_edge(key.first, key.second) && e.weight > limit) out.remove_edge(key.first, key.second);
  }
  return out;
}

std::map<int, Transform> initial_marker_poses(const PoseGraph& g, const SpanningTree& tree) {
  std::map<int, std::vector<int>> children;
  for (const auto& [child, parent] : tree.parent) children[parent].push_back(child);
  std::map<int, Transform> poses;
  poses[tree.root] = Transform::identity();
  std::deque<int> queue{tree.root};
  while (!queue.empty()) {
    const int p = queue.front();
    queue.pop_front();
    for (const int c : children[p]) {
      poses[c] = poses[p] * g.edge(c, p).pose;
      queue.push_back(c);
    }
  }
  return poses;
}

}  // namespace fidmap
