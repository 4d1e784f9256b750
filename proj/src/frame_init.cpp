#include "fidmap/frame_init.hpp"

#include <cmath>
#include <limits>
#include <tuple>

#include "fidmap/error.hpp"

namespace fidmap {

double score_candidate(const Transform& frame_pose, const FrameDetections& frame, const MarkerPoses& map,
                       const MarkerGeometry& geom, const CameraIntrinsics& k) {
  double sum = 0.0;
  for (const auto& obs : frame.observations) {
    const auto it = map.find(obs.marker_id);
    if (it == map.end()) continue;
    sum += reprojection_error(frame_pose * it->second, geom, obs, k);
  }
  return sum;
}

FramePoseCandidateSet enumerate_frame_candidates(const FrameDetections& frame, const MarkerPoses& map,
                                                 const MarkerGeometry& geom, const CameraIntrinsics& k,
                                                 const PlanarPoseConfig& config) {
  FramePoseCandidateSet set;
  set.frame_id = frame.frame_id;
  for (const auto& obs : frame.observations) {
    const auto it = map.find(obs.marker_id);
    if (it == map.end()) {
      ++set.skipped_markers;
      continue;
    }
    ++set.mapped_markers;
    PoseCandidatePair pair;
    try {
      pair = solve_planar_pose(geom, obs, k, config);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateObservation) throw;
      continue;
    }
    const Transform marker_inv = it->second.inverse();
    set.candidates.push_back({obs.marker_id, Solution::kBest, pair.best * marker_inv, pair.best, 0.0});
    if (pair.has_alt) set.candidates.push_back({obs.marker_id, Solution::kAlt, pair.alt * marker_inv, pair.alt, 0.0});
  }
  if (set.mapped_markers == 0) {
    throw Error(ErrorCode::kNotLocalizable, "frame " + std::to_string(frame.frame_id) + " sees no mapped marker");
  }
  for (auto& c : set.candidates) c.score = score_candidate(c.frame_pose, frame, map, geom, k);
  return set;
}

FramePoseEstimate select_frame_pose(const FramePoseCandidateSet& set) {
  if (set.candidates.empty()) {
    throw Error(ErrorCode::kNotLocalizable, "frame " + std::to_string(set.frame_id) + " has no pose candidate");
  }
  const FramePoseCandidate* best = nullptr;
  auto key = [](const FramePoseCandidate& c) {
    const double s = std::isnan(c.score) ? std::numeric_limits<double>::infinity() : c.score;
    return std::make_tuple(s, c.marker_id, static_cast<int>(c.which));
  };
  for (const auto& c : set.candidates) {
    if (best == nullptr || key(c) < key(*best)) best = &c;
  }
  FramePoseEstimate out;
  out.frame_id = set.frame_id;
  out.pose = best->frame_pose;
  out.score = best->score;
  out.marker_id = best->marker_id;
  out.which = best->which;
  out.low_confidence = set.mapped_markers < 2;
  return out;
}

FramePoseEstimate estimate_frame_pose(const FrameDetections& frame, const MarkerPoses& map,
                                      const MarkerGeometry& geom, const CameraIntrinsics& k,
                                      const PlanarPoseConfig& config) {
  return select_frame_pose(enumerate_frame_candidates(frame, map, geom, k, config));
}

}  // namespace fidmap
