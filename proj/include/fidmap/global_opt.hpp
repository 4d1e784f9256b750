#pragma once

// Joint refinement of marker poses, frame poses and (optionally) intrinsics by
// sparse Levenberg-Marquardt on the corner reprojection error. Each marker
// contributes six parameters for its four corners, so marker rigidity holds
// by construction.

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "fidmap/geometry.hpp"

namespace fidmap {

struct MarkerObservation {
  int frame = 0;   // index into OptimizationProblem::frames
  int marker = 0;  // index into OptimizationProblem::markers
  std::array<Vec2, 4> pixels;
};

struct OptimizationProblem {
  MarkerGeometry geom{1.0};
  CameraIntrinsics intrinsics;
  std::vector<int> marker_ids;
  std::vector<Pose6> markers;      // marker -> global
  std::vector<bool> marker_fixed;  // gauge: at least one marker is normally fixed
  std::vector<int> frame_ids;
  std::vector<Pose6> frames;       // global -> camera
  std::vector<MarkerObservation> observations;
  bool optimize_intrinsics = false;

  /// Throws invalid-argument on inconsistent sizes or dangling indices.
  void validate() const;
  int parameter_count() const;
  int residual_count() const { return 8 * static_cast<int>(observations.size()); }
};

/// 6 * free markers + 6 * frames (+ 9 with intrinsics).
int parameter_count(int markers, int fixed_markers, int frames, bool intrinsics);

/// Stacked corner residuals (predicted - observed), 8 per observation.
/// Observations with a corner behind the camera get every residual set to
/// kBehindCameraResidual and are reported through `flagged`.
Eigen::VectorXd residuals(const OptimizationProblem& problem, std::vector<bool>* flagged = nullptr);

inline constexpr double kBehindCameraResidual = 1e4;

/// Analytic Jacobian of `residuals`. Columns: free markers (problem order),
/// then frames, then intrinsics when enabled.
Eigen::SparseMatrix<double> jacobian(const OptimizationProblem& problem);

enum class Damping { kScaledDiagonal, kIdentity };

struct LMConfig {
  int max_iterations = 200;
  double relative_tolerance = 1e-10;
  double step_tolerance = 1e-12;
  Damping damping = Damping::kScaledDiagonal;
  double lambda_decrease = 3.0;
  double lambda_increase = 2.0;
  double lambda_max = 1e12;
  /// Huber threshold on per-corner residual norms in px; 0 disables it.
  double huber_delta = 0.0;
};

struct LMIteration {
  int iteration = 0;
  double cost = 0.0;
  double lambda = 0.0;
  double step_norm = 0.0;
  bool accepted = false;
};

struct LMReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;  // accepted steps
  std::vector<LMIteration> log;
  double mean_reprojection_px = 0.0;
  double rms_reprojection_px = 0.0;
  int flagged_observations = 0;
  std::string termination;
};

struct OptimizationResult {
  OptimizationProblem problem;
  LMReport report;
};

/// Squared-norm cost of the residuals (Huber cost when enabled).
double total_cost(const OptimizationProblem& problem, double huber_delta = 0.0);

/// Mean and RMS corner reprojection error in px over usable observations.
std::pair<double, double> reprojection_stats(const OptimizationProblem& problem);

/// Runs LM from the problem's current values. Throws invalid-initialization
/// when the starting cost is not finite, numerical-failure if the damped
/// system cannot be factorized even at lambda_max. Writes one line per
/// iteration to `log` when given.
OptimizationResult optimize(const OptimizationProblem& problem, const LMConfig& config = {},
                            std::ostream* log = nullptr);

}  // namespace fidmap
