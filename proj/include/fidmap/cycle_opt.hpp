#pragma once

// Error distribution along the basis cycles of a pose graph.
//
// Edge state is kept once per undirected edge, keyed by (lo, hi) with
// lo < hi, in the direction of g.edge(lo, hi): a map from marker lo's frame
// into marker hi's frame. Reverse directions are always derived by inversion.
//
// A cycle (n1, ..., nk) is composed as T1 T2 ... Tk, where Tm maps the frame
// of n(m+1) into the frame of nm (indices wrap), so a consistent cycle
// composes to the identity.

#include <map>
#include <vector>

#include "fidmap/geometry.hpp"
#include "fidmap/posegraph.hpp"

namespace fidmap {

struct Cycle {
  std::vector<int> nodes;
  MarkerPair generator;  // the non-tree edge, lower id first
};

struct CycleBasis {
  std::vector<Cycle> cycles;
};

/// Per-cycle edge fractions: alpha[m] = e_m / sum(e) is the share of the cycle
/// residual given to step m, w[m] = (1/e_m) / sum(1/e) its confidence.
/// Both sum to one.
struct CycleFractions {
  std::vector<double> alpha;
  std::vector<double> w;
};

struct CycleOptConfig {
  int max_iterations = 1000;
  double rotation_tolerance = 1e-10;  // rad, max per-edge change per iteration
  /// Weight the translation objective by the edge confidences.
  bool weighted_translation = false;
};

struct RotationCorrection {
  std::map<MarkerPair, Mat3> rotations;  // canonical direction
  int iterations = 0;
  double last_change = 0.0;
};

using EdgeVectors = std::map<MarkerPair, Vec3>;

struct CorrectedGraph {
  PoseGraph graph;
  RotationCorrection rotation;
  EdgeVectors decoupled;
  EdgeVectors translations;
  std::size_t cycle_count = 0;
};

CycleBasis compute_cycle_basis(const PoseGraph& g, const SpanningTree& tree);

CycleFractions cycle_fractions(const PoseGraph& g, const Cycle& cycle);

/// Rotation of step m of a cycle (frame of n(m+1) -> frame of nm) given the
/// canonical edge rotations.
Mat3 cycle_step_rotation(const std::map<MarkerPair, Mat3>& rotations, const Cycle& cycle, std::size_t m);

/// Iteratively splits each cycle's residual rotation across its edges in
/// proportion to alpha and averages (chordal mean) the estimates of edges
/// shared between cycles. Throws degenerate-cycle when a residual is a half
/// turn.
RotationCorrection distribute_rotation_errors(const PoseGraph& g, const CycleBasis& basis,
                                              const CycleOptConfig& config = {});

/// t' = (R_hat - R_tilde) c + t_hat with c the midpoint of both marker
/// origins expressed in the edge's input frame.
EdgeVectors decouple_translations(const PoseGraph& g, const std::map<MarkerPair, Mat3>& rotations);

/// Minimizes sum |t - t'|^2 subject to translational closure of every basis
/// cycle under the fixed corrected rotations (Lagrange multipliers).
/// Throws rank-deficiency if the constraint system is singular.
EdgeVectors optimize_translations(const PoseGraph& g, const CycleBasis& basis,
                                  const std::map<MarkerPair, Mat3>& rotations, const EdgeVectors& decoupled,
                                  const CycleOptConfig& config = {});

/// Full pass producing the corrected graph.
CorrectedGraph correct_graph(const PoseGraph& g, const SpanningTree& tree, const CycleOptConfig& config = {});

/// Frobenius distance of the composed cycle transform from the identity.
double cycle_closure_error(const PoseGraph& g, const Cycle& cycle);

}  // namespace fidmap
