#include "fidmap/quiver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>

#include "fidmap/error.hpp"

namespace fidmap {

namespace {

std::vector<std::size_t> evenly_spaced(std::size_t n, std::size_t m) {
  std::vector<std::size_t> idx;
  if (m >= n) {
    idx.resize(n);
    for (std::size_t k = 0; k < n; ++k) idx[k] = k;
    return idx;
  }
  idx.reserve(m);
  for (std::size_t k = 0; k < m; ++k) idx.push_back(k * n / m);
  return idx;
}

}  // namespace

const CornerObservation* FrameDetections::find(int marker_id) const {
  for (const auto& o : observations) {
    if (o.marker_id == marker_id) return &o;
  }
  return nullptr;
}

void validate_frames(const std::vector<FrameDetections>& frames) {
  std::set<int> frame_ids;
  for (const auto& f : frames) {
    if (!frame_ids.insert(f.frame_id).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate frame id " + std::to_string(f.frame_id));
    }
    std::set<int> ids;
    for (const auto& o : f.observations) {
      if (o.marker_id < 0) throw Error(ErrorCode::kInvalidArgument, "negative marker id");
      if (!ids.insert(o.marker_id).second) {
        throw Error(ErrorCode::kInvalidArgument, "marker " + std::to_string(o.marker_id) +
                                                     " repeated in frame " + std::to_string(f.frame_id));
      }
    }
  }
}

std::vector<FramePoseSet> build_frame_pose_sets(const std::vector<FrameDetections>& frames,
                                                const MarkerGeometry& geom, const CameraIntrinsics& k,
                                                const PlanarPoseConfig& config) {
  validate_frames(frames);
  std::vector<FramePoseSet> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    FramePoseSet set;
    set.frame_id = f.frame_id;
    for (const auto& obs : f.observations) {
      try {
        const auto pair = solve_planar_pose(geom, obs, k, config);
        if (pair.ambiguous) {
          ++set.ambiguous;
          continue;
        }
        set.poses.emplace(obs.marker_id, pair.best);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDegenerateObservation) throw;
        ++set.degenerate;
      }
    }
    out.push_back(std::move(set));
  }
  return out;
}

std::vector<QuiverEdge> build_quiver(const std::vector<FramePoseSet>& pose_sets) {
  std::vector<QuiverEdge> edges;
  for (const auto& set : pose_sets) {
    for (auto a = set.poses.begin(); a != set.poses.end(); ++a) {
      for (auto b = std::next(a); b != set.poses.end(); ++b) {
        // std::map iterates in increasing id, so a->first < b->first.
        edges.push_back({a->first, b->first, set.frame_id, b->second.inverse() * a->second});
      }
    }
  }
  return edges;
}

double cross_frame_error(const Transform& rel, const FramePoseSet& poses, const FrameDetections& detections,
                         int i, int j, const MarkerGeometry& geom, const CameraIntrinsics& k) {
  const auto pj = poses.poses.find(j);
  const CornerObservation* obs_i = detections.find(i);
  if (pj == poses.poses.end() || obs_i == nullptr || poses.poses.count(i) == 0) {
    throw Error(ErrorCode::kInvalidArgument, "frame " + std::to_string(poses.frame_id) +
                                                 " does not observe both markers " + std::to_string(i) +
                                                 " and " + std::to_string(j));
  }
  const Transform i_to_camera = pj->second * rel;
  return reprojection_error(i_to_camera, geom, *obs_i, k);
}

std::map<MarkerPair, BestEdge> select_best_edges(const std::vector<QuiverEdge>& quiver,
                                                 const std::vector<FramePoseSet>& pose_sets,
                                                 const std::vector<FrameDetections>& frames,
                                                 const MarkerGeometry& geom, const CameraIntrinsics& k,
                                                 std::size_t max_products) {
  std::unordered_map<int, const FramePoseSet*> set_by_id;
  std::unordered_map<int, const FrameDetections*> det_by_id;
  for (const auto& s : pose_sets) set_by_id[s.frame_id] = &s;
  for (const auto& f : frames) det_by_id[f.frame_id] = &f;

  std::map<MarkerPair, std::vector<const QuiverEdge*>> candidates;
  for (const auto& e : quiver) candidates[{e.i, e.j}].push_back(&e);

  std::map<MarkerPair, BestEdge> best;
  for (auto& [pair, cands] : candidates) {
    std::sort(cands.begin(), cands.end(),
              [](const QuiverEdge* a, const QuiverEdge* b) { return a->frame_id < b->frame_id; });

    // F_{i,j}: frames where both markers have a usable pose.
    std::vector<int> frame_ids;
    for (const auto* c : cands) frame_ids.push_back(c->frame_id);
    frame_ids.erase(std::unique(frame_ids.begin(), frame_ids.end()), frame_ids.end());

    std::size_t n_cand = cands.size();
    std::size_t n_frames = frame_ids.size();
    if (max_products > 0 && n_cand * n_frames > max_products) {
      const auto root = static_cast<std::size_t>(std::sqrt(static_cast<double>(max_products)));
      if (n_frames <= root) {
        n_cand = std::max<std::size_t>(1, max_products / n_frames);
      } else if (n_cand <= root) {
        n_frames = std::max<std::size_t>(1, max_products / n_cand);
      } else {
        n_cand = root;
        n_frames = root;
      }
    }
    const auto cand_idx = evenly_spaced(cands.size(), n_cand);
    const auto frame_idx = evenly_spaced(frame_ids.size(), n_frames);

    BestEdge chosen;
    chosen.score = std::numeric_limits<double>::infinity();
    bool have = false;
    for (const auto ci : cand_idx) {
      const QuiverEdge& cand = *cands[ci];
      double score = 0.0;
      for (const auto fi : frame_idx) {
        const int fid = frame_ids[fi];
        score += cross_frame_error(cand.rel, *set_by_id.at(fid), *det_by_id.at(fid), pair.first, pair.second,
                                   geom, k);
      }
      // Candidates are visited in increasing frame id, so strict < keeps the lowest id on ties.
      if (!have || score < chosen.score) {
        chosen = {cand.rel, score, cand.frame_id};
        have = true;
      }
    }
    best.emplace(pair, chosen);
  }
  return best;
}

}  // namespace fidmap
