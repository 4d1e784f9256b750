#include "fidmap/global_opt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include <Eigen/SparseCholesky>

#include "fidmap/error.hpp"

namespace fidmap {

namespace {

using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat29 = Eigen::Matrix<double, 2, 9>;

// Column offsets of every parameter block; -1 marks a fixed block.
struct Layout {
  std::vector<int> marker_col;
  std::vector<int> frame_col;
  int intrinsics_col = -1;
  int cols = 0;
};

Layout make_layout(const OptimizationProblem& p) {
  Layout l;
  l.marker_col.assign(p.markers.size(), -1);
  for (std::size_t i = 0; i < p.markers.size(); ++i) {
    if (!p.marker_fixed[i]) {
      l.marker_col[i] = l.cols;
      l.cols += 6;
    }
  }
  l.frame_col.resize(p.frames.size());
  for (std::size_t i = 0; i < p.frames.size(); ++i) {
    l.frame_col[i] = l.cols;
    l.cols += 6;
  }
  if (p.optimize_intrinsics) {
    l.intrinsics_col = l.cols;
    l.cols += CameraIntrinsics::kNumParams;
  }
  return l;
}

struct Cached {
  std::vector<Transform> markers;
  std::vector<Transform> frames;
};

Cached cache_transforms(const OptimizationProblem& p) {
  Cached c;
  c.markers.reserve(p.markers.size());
  for (const auto& z : p.markers) c.markers.push_back(gamma_from_zeta(z));
  c.frames.reserve(p.frames.size());
  for (const auto& z : p.frames) c.frames.push_back(gamma_from_zeta(z));
  return c;
}

// Per-corner weights for the Huber loss applied to corner residual norms.
double huber_weight(double norm, double delta) {
  if (delta <= 0.0 || norm <= delta) return 1.0;
  return delta / norm;
}

double huber_cost(double norm, double delta) {
  if (delta <= 0.0 || norm <= delta) return norm * norm;
  return 2.0 * delta * norm - delta * delta;
}

double robust_cost(const Eigen::VectorXd& r, double delta) {
  if (delta <= 0.0) return r.squaredNorm();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < r.size(); i += 2) sum += huber_cost(r.segment<2>(i).norm(), delta);
  return sum;
}

OptimizationProblem apply_step(const OptimizationProblem& p, const Layout& l, const Eigen::VectorXd& step) {
  OptimizationProblem out = p;
  for (std::size_t i = 0; i < p.markers.size(); ++i) {
    if (l.marker_col[i] < 0) continue;
    out.markers[i].r += step.segment<3>(l.marker_col[i]);
    out.markers[i].t += step.segment<3>(l.marker_col[i] + 3);
    out.markers[i] = out.markers[i].canonical();
  }
  for (std::size_t i = 0; i < p.frames.size(); ++i) {
    out.frames[i].r += step.segment<3>(l.frame_col[i]);
    out.frames[i].t += step.segment<3>(l.frame_col[i] + 3);
    out.frames[i] = out.frames[i].canonical();
  }
  if (l.intrinsics_col >= 0) {
    out.intrinsics.set_from_vector(p.intrinsics.to_vector() + step.segment<9>(l.intrinsics_col));
  }
  return out;
}

}  // namespace

void OptimizationProblem::validate() const {
  if (markers.size() != marker_ids.size() || markers.size() != marker_fixed.size()) {
    throw Error(ErrorCode::kInvalidArgument, "marker arrays have inconsistent sizes");
  }
  if (frames.size() != frame_ids.size()) {
    throw Error(ErrorCode::kInvalidArgument, "frame arrays have inconsistent sizes");
  }
  for (const auto& o : observations) {
    if (o.frame < 0 || o.frame >= static_cast<int>(frames.size()) || o.marker < 0 ||
        o.marker >= static_cast<int>(markers.size())) {
      throw Error(ErrorCode::kInvalidArgument, "observation references a missing frame or marker");
    }
  }
}

int OptimizationProblem::parameter_count() const {
  const int fixed = static_cast<int>(std::count(marker_fixed.begin(), marker_fixed.end(), true));
  return fidmap::parameter_count(static_cast<int>(markers.size()), fixed, static_cast<int>(frames.size()),
                                 optimize_intrinsics);
}

int parameter_count(int markers, int fixed_markers, int frames, bool intrinsics) {
  return 6 * (markers - fixed_markers) + 6 * frames + (intrinsics ? CameraIntrinsics::kNumParams : 0);
}

Eigen::VectorXd residuals(const OptimizationProblem& problem, std::vector<bool>* flagged) {
  problem.validate();
  const Cached c = cache_transforms(problem);
  const auto& corners = problem.geom.corners();
  Eigen::VectorXd r(problem.residual_count());
  if (flagged) flagged->assign(problem.observations.size(), false);
  for (std::size_t oi = 0; oi < problem.observations.size(); ++oi) {
    const auto& o = problem.observations[oi];
    const Transform g = c.frames[o.frame] * c.markers[o.marker];
    bool behind = false;
    for (int k = 0; k < 4 && !behind; ++k) {
      const auto u = project_camera_point(problem.intrinsics, g * corners[k]);
      if (!u) {
        behind = true;
        break;
      }
      r.segment<2>(8 * oi + 2 * k) = *u - o.pixels[k];
    }
    if (behind) {
      r.segment<8>(8 * oi).setConstant(kBehindCameraResidual);
      if (flagged) (*flagged)[oi] = true;
    }
  }
  return r;
}

Eigen::SparseMatrix<double> jacobian(const OptimizationProblem& problem) {
  problem.validate();
  const Layout l = make_layout(problem);
  const Cached c = cache_transforms(problem);
  const auto& corners = problem.geom.corners();

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(problem.observations.size() * 8 * (12 + (l.intrinsics_col >= 0 ? 9 : 0)));
  auto put = [&trip](int row, int col, const auto& block) {
    for (int a = 0; a < block.rows(); ++a) {
      for (int b = 0; b < block.cols(); ++b) trip.emplace_back(row + a, col + b, block(a, b));
    }
  };

  for (std::size_t oi = 0; oi < problem.observations.size(); ++oi) {
    const auto& o = problem.observations[oi];
    const Transform& F = c.frames[o.frame];
    const Transform& M = c.markers[o.marker];
    const Mat3 Jr_f = right_jacobian(problem.frames[o.frame].r);
    const Mat3 Jr_m = right_jacobian(problem.markers[o.marker].r);

    // A flagged observation has constant residuals, hence zero derivatives.
    bool behind = false;
    for (int k = 0; k < 4; ++k) {
      if ((F * (M * corners[k])).z() <= 1e-9) behind = true;
    }

    for (int k = 0; k < 4; ++k) {
      const int row = static_cast<int>(8 * oi + 2 * k);
      const Vec3 Xw = M * corners[k];
      const Vec3 Xc = F * Xw;
      Mat23 du_dX = Mat23::Zero();
      Mat29 du_dk = Mat29::Zero();
      if (!behind) project_camera_point(problem.intrinsics, Xc, &du_dX, &du_dk);

      Eigen::Matrix<double, 2, 6> d_frame;
      d_frame.leftCols<3>() = du_dX * (-F.rotation() * skew(Xw) * Jr_f);
      d_frame.rightCols<3>() = du_dX;
      put(row, l.frame_col[o.frame], d_frame);

      if (l.marker_col[o.marker] >= 0) {
        Eigen::Matrix<double, 2, 6> d_marker;
        d_marker.leftCols<3>() = du_dX * F.rotation() * (-M.rotation() * skew(corners[k]) * Jr_m);
        d_marker.rightCols<3>() = du_dX * F.rotation();
        put(row, l.marker_col[o.marker], d_marker);
      }
      if (l.intrinsics_col >= 0) put(row, l.intrinsics_col, du_dk);
    }
  }
  Eigen::SparseMatrix<double> J(problem.residual_count(), l.cols);
  J.setFromTriplets(trip.begin(), trip.end());
  return J;
}

double total_cost(const OptimizationProblem& problem, double huber_delta) {
  return robust_cost(residuals(problem), huber_delta);
}

std::pair<double, double> reprojection_stats(const OptimizationProblem& problem) {
  std::vector<bool> flagged;
  const Eigen::VectorXd r = residuals(problem, &flagged);
  double sum = 0.0;
  double sum_sq = 0.0;
  int n = 0;
  for (std::size_t oi = 0; oi < flagged.size(); ++oi) {
    if (flagged[oi]) continue;
    for (int k = 0; k < 4; ++k) {
      const double e = r.segment<2>(8 * oi + 2 * k).norm();
      sum += e;
      sum_sq += e * e;
      ++n;
    }
  }
  if (n == 0) return {0.0, 0.0};
  return {sum / n, std::sqrt(sum_sq / n)};
}

OptimizationResult optimize(const OptimizationProblem& problem, const LMConfig& config, std::ostream* log) {
  problem.validate();
  const Layout layout = make_layout(problem);
  OptimizationResult result{problem, {}};
  LMReport& rep = result.report;
  OptimizationProblem& x = result.problem;

  for (const auto* group : {&x.markers, &x.frames}) {
    for (const auto& z : *group) {
      if (!z.finite()) throw Error(ErrorCode::kInvalidInitialization, "initial pose is not finite");
    }
  }
  std::vector<bool> flagged;
  Eigen::VectorXd r = residuals(x, &flagged);
  double cost = robust_cost(r, config.huber_delta);
  if (!std::isfinite(cost)) throw Error(ErrorCode::kInvalidInitialization, "initial cost is not finite");
  rep.initial_cost = cost;
  rep.final_cost = cost;

  auto emit = [&](const LMIteration& it) {
    rep.log.push_back(it);
    if (log) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "lm iter %d cost %.9g lambda %.3g step %.3g %s\n", it.iteration, it.cost,
                    it.lambda, it.step_norm, it.accepted ? "accepted" : "rejected");
      *log << buf;
    }
  };

  if (layout.cols == 0 || r.size() == 0) {
    rep.termination = "nothing to optimize";
  }

  // Residuals scaled by sqrt of the Huber weights turn each iteration into a
  // reweighted Gauss-Newton problem.
  auto weighted = [&](Eigen::VectorXd& res, Eigen::SparseMatrix<double>& J) {
    if (config.huber_delta <= 0.0) return;
    Eigen::VectorXd s(res.size());
    for (Eigen::Index i = 0; i < res.size(); i += 2) {
      s.segment<2>(i).setConstant(std::sqrt(huber_weight(res.segment<2>(i).norm(), config.huber_delta)));
    }
    res = s.cwiseProduct(res);
    J = s.asDiagonal() * J;
  };

  double lambda = 1e-3;
  bool lambda_set = false;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  bool analyzed = false;
  int n_res = static_cast<int>(r.size());

  int iteration = 0;
  while (rep.termination.empty()) {
    if (iteration >= config.max_iterations) {
      rep.termination = "max iterations";
      break;
    }
    // Residuals at the numerical floor leave nothing for LM to do.
    if (cost <= 1e-24 * std::max(n_res, 1)) {
      rep.termination = "zero residual";
      break;
    }
    Eigen::SparseMatrix<double> J = jacobian(x);
    Eigen::VectorXd rw = r;
    weighted(rw, J);
    const Eigen::SparseMatrix<double> Jt = J.transpose();
    const Eigen::SparseMatrix<double> H = Jt * J;
    const Eigen::VectorXd g = Jt * rw;

    Eigen::VectorXd diag = H.diagonal();
    if (!lambda_set) {
      if (config.damping == Damping::kIdentity) lambda = 1e-3 * std::max(diag.mean(), 1e-12);
      lambda_set = true;
    }
    Eigen::VectorXd D = config.damping == Damping::kIdentity ? Eigen::VectorXd::Ones(diag.size())
                                                             : Eigen::VectorXd(diag.cwiseMax(1e-12));
    Eigen::SparseMatrix<double> Dm(diag.size(), diag.size());
    Dm.reserve(Eigen::VectorXi::Constant(diag.size(), 1));
    for (Eigen::Index i = 0; i < diag.size(); ++i) Dm.insert(i, i) = D[i];

    bool accepted = false;
    while (!accepted) {
      if (lambda > config.lambda_max) {
        rep.termination = "lambda limit";
        break;
      }
      const Eigen::SparseMatrix<double> A = H + lambda * Dm;
      if (!analyzed) {
        solver.analyzePattern(A);
        analyzed = true;
      }
      solver.factorize(A);
      Eigen::VectorXd p;
      if (solver.info() == Eigen::Success) p = solver.solve(-g);
      if (solver.info() != Eigen::Success || !p.allFinite()) {
        lambda *= config.lambda_increase;
        if (lambda > config.lambda_max) {
          throw Error(ErrorCode::kNumericalFailure, "damped normal equations could not be factorized");
        }
        continue;
      }
      const double step_norm = p.norm();
      if (step_norm < config.step_tolerance) {
        rep.termination = "small step";
        break;
      }
      OptimizationProblem candidate = apply_step(x, layout, p);
      std::vector<bool> cand_flagged;
      Eigen::VectorXd cand_r = residuals(candidate, &cand_flagged);
      const double cand_cost = robust_cost(cand_r, config.huber_delta);
      ++iteration;
      if (std::isfinite(cand_cost) && cand_cost < cost) {
        const double rel = (cost - cand_cost) / cost;
        x = std::move(candidate);
        r = std::move(cand_r);
        flagged = std::move(cand_flagged);
        cost = cand_cost;
        lambda /= config.lambda_decrease;
        accepted = true;
        ++rep.iterations;
        emit({iteration, cost, lambda, step_norm, true});
        if (rel < config.relative_tolerance) rep.termination = "relative cost change";
      } else {
        lambda *= config.lambda_increase;
        emit({iteration, cand_cost, lambda, step_norm, false});
        if (iteration >= config.max_iterations) {
          rep.termination = "max iterations";
          break;
        }
      }
    }
  }

  rep.final_cost = cost;
  rep.flagged_observations = static_cast<int>(std::count(flagged.begin(), flagged.end(), true));
  const auto [mean, rms] = reprojection_stats(x);
  rep.mean_reprojection_px = mean;
  rep.rms_reprojection_px = rms;
  if (log) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "lm done: %s, %d accepted steps, cost %.9g -> %.9g, mean reprojection %.6g px\n",
                  rep.termination.c_str(), rep.iterations, rep.initial_cost, rep.final_cost, mean);
    *log << buf;
  }
  return result;
}

}  // namespace fidmap
