#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fidmap/error.hpp"
#include "fidmap/global_opt.hpp"
#include "fidmap/pipeline.hpp"
#include "fidmap/synth.hpp"
#include "test_util.hpp"

using namespace fidmap;
using fidmap::test::deg;
using fidmap::test::Random;
using fidmap::test::rotation_angle;

namespace {

struct Truth {
  std::vector<Transform> markers;
  std::vector<Transform> frames;
};

// Markers near the origin, cameras 1.5-3 m away looking at it. Every frame
// observes every marker, optionally with pixel noise.
OptimizationProblem random_problem(Random& rng, int n_markers, int n_frames, double sigma, Truth* truth = nullptr,
                                   double side = 0.2) {
  OptimizationProblem p;
  p.geom = MarkerGeometry(side);
  p.intrinsics = default_camera();
  Truth t;
  for (int i = 0; i < n_markers; ++i) {
    t.markers.emplace_back(rng.rotation(deg(60)), rng.vec3(-0.4, 0.4));
    p.marker_ids.push_back(100 + i);
    p.markers.push_back(zeta_from_gamma(t.markers.back()));
    p.marker_fixed.push_back(i == 0);
  }
  for (int f = 0; f < n_frames; ++f) {
    Vec3 eye = rng.unit();
    eye.z() = -std::abs(eye.z()) - 0.5;
    eye = eye.normalized() * rng.uniform(1.5, 3.0);
    t.frames.push_back(look_at(eye, rng.vec3(-0.1, 0.1)));
    p.frame_ids.push_back(f);
    p.frames.push_back(zeta_from_gamma(t.frames.back()));
  }
  for (int f = 0; f < n_frames; ++f) {
    for (int i = 0; i < n_markers; ++i) {
      MarkerObservation o;
      o.frame = f;
      o.marker = i;
      for (int c = 0; c < 4; ++c) {
        o.pixels[c] = *project(p.intrinsics, t.frames[f] * t.markers[i], p.geom.corners()[c]);
        o.pixels[c] += Vec2(rng.normal(sigma), rng.normal(sigma));
      }
      p.observations.push_back(o);
    }
  }
  if (truth) *truth = t;
  return p;
}

// Pinhole with radial-tangential distortion written out per coordinate.
Vec2 scalar_project(const CameraIntrinsics& k, const Vec3& pc) {
  const double x = pc[0] / pc[2];
  const double y = pc[1] / pc[2];
  const double r2 = x * x + y * y;
  const double r4 = r2 * r2;
  const double r6 = r4 * r2;
  const double radial = 1 + k.k1 * r2 + k.k2 * r4 + k.k3 * r6;
  const double xd = x * radial + 2 * k.p1 * x * y + k.p2 * (r2 + 2 * x * x);
  const double yd = y * radial + k.p1 * (r2 + 2 * y * y) + 2 * k.p2 * x * y;
  return {k.fx * xd + k.cx, k.fy * yd + k.cy};
}

double scalar_cost(const OptimizationProblem& p) {
  double sum = 0.0;
  const double s = p.geom.side() / 2;
  const double corners[4][2] = {{s, -s}, {s, s}, {-s, s}, {-s, -s}};
  for (const auto& o : p.observations) {
    const Mat3 Rf = rodrigues_to_matrix(p.frames[o.frame].r);
    const Mat3 Rm = rodrigues_to_matrix(p.markers[o.marker].r);
    for (int c = 0; c < 4; ++c) {
      const Vec3 world = Rm * Vec3(corners[c][0], corners[c][1], 0) + p.markers[o.marker].t;
      const Vec3 cam = Rf * world + p.frames[o.frame].t;
      const Vec2 u = scalar_project(p.intrinsics, cam);
      sum += (u - o.pixels[c]).squaredNorm();
    }
  }
  return sum;
}

// Central differences of the residual vector in the solver's own step
// parameterization (additive on axis-angle and translation, then intrinsics).
Eigen::MatrixXd numeric_jacobian(const OptimizationProblem& p, double h) {
  std::vector<double*> params;
  OptimizationProblem q = p;
  for (std::size_t i = 0; i < q.markers.size(); ++i) {
    if (q.marker_fixed[i]) continue;
    for (int a = 0; a < 3; ++a) params.push_back(&q.markers[i].r[a]);
    for (int a = 0; a < 3; ++a) params.push_back(&q.markers[i].t[a]);
  }
  for (auto& f : q.frames) {
    for (int a = 0; a < 3; ++a) params.push_back(&f.r[a]);
    for (int a = 0; a < 3; ++a) params.push_back(&f.t[a]);
  }
  const int n_pose = static_cast<int>(params.size());
  const int n = n_pose + (q.optimize_intrinsics ? CameraIntrinsics::kNumParams : 0);
  Eigen::MatrixXd J(q.residual_count(), n);
  for (int c = 0; c < n; ++c) {
    auto shift = [&](double d) {
      if (c < n_pose) {
        *params[c] += d;
      } else {
        auto v = q.intrinsics.to_vector();
        v[c - n_pose] += d;
        q.intrinsics.set_from_vector(v);
      }
    };
    shift(h);
    const Eigen::VectorXd plus = residuals(q);
    shift(-2 * h);
    const Eigen::VectorXd minus = residuals(q);
    shift(h);
    J.col(c) = (plus - minus) / (2 * h);
  }
  return J;
}

std::vector<Transform> marker_transforms(const OptimizationProblem& p) {
  std::vector<Transform> out;
  for (const auto& z : p.markers) out.push_back(gamma_from_zeta(z));
  return out;
}

}  // namespace

TEST(Residuals, ShapeAndGroundTruth) {
  Random rng(1);
  const OptimizationProblem p = random_problem(rng, 4, 5, 0.0);
  const Eigen::VectorXd r = residuals(p);
  EXPECT_EQ(r.size(), 8 * 20);
  EXPECT_EQ(p.residual_count(), 8 * 20);
  EXPECT_LT(r.norm(), 1e-8);
}

TEST(Residuals, CostMatchesScalarRecomputation) {
  Random rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    OptimizationProblem p = random_problem(rng, 3, 4, 2.0);
    p.intrinsics.k1 = rng.uniform(-0.2, 0.2);
    p.intrinsics.k2 = rng.uniform(-0.05, 0.05);
    p.intrinsics.k3 = rng.uniform(-0.01, 0.01);
    p.intrinsics.p1 = rng.uniform(-0.002, 0.002);
    p.intrinsics.p2 = rng.uniform(-0.002, 0.002);
    const double expect = scalar_cost(p);
    EXPECT_NEAR(total_cost(p), expect, 1e-9 * std::max(1.0, expect));
    EXPECT_NEAR(residuals(p).squaredNorm(), expect, 1e-9 * std::max(1.0, expect));
  }
}

TEST(Residuals, BehindCameraIsCappedAndFlagged) {
  Random rng(3);
  OptimizationProblem p = random_problem(rng, 2, 2, 0.0);
  // Move frame 1 so that it looks away from the markers.
  p.frames[1] = zeta_from_gamma(look_at(gamma_from_zeta(p.frames[1]).inverse() * Vec3::Zero(),
                                        2 * (gamma_from_zeta(p.frames[1]).inverse() * Vec3::Zero())));
  std::vector<bool> flagged;
  const Eigen::VectorXd r = residuals(p, &flagged);
  ASSERT_EQ(flagged.size(), 4u);
  for (std::size_t o = 0; o < p.observations.size(); ++o) {
    EXPECT_EQ(flagged[o], p.observations[o].frame == 1);
    if (flagged[o]) {
      EXPECT_TRUE((r.segment<8>(8 * o).array() == kBehindCameraResidual).all());
    }
  }
  EXPECT_TRUE(r.allFinite());
}

TEST(Residuals, InvalidProblemThrows) {
  Random rng(4);
  OptimizationProblem p = random_problem(rng, 2, 2, 0.0);
  p.observations.back().marker = 5;
  EXPECT_THROW(residuals(p), Error);
  OptimizationProblem q = random_problem(rng, 2, 2, 0.0);
  q.marker_fixed.pop_back();
  try {
    q.validate();
    FAIL() << "expected invalid-argument";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}

TEST(Jacobian, MatchesFiniteDifferences) {
  Random rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    OptimizationProblem p = random_problem(rng, rng.integer(2, 4), rng.integer(1, 3), 1.0);
    for (auto& m : p.markers) m.r = rng.axis_angle(3.0);
    if (trial % 2 == 1) {
      p.optimize_intrinsics = true;
      p.intrinsics.k1 = rng.uniform(-0.2, 0.2);
      p.intrinsics.k2 = rng.uniform(-0.05, 0.05);
      p.intrinsics.k3 = rng.uniform(-0.01, 0.01);
      p.intrinsics.p1 = rng.uniform(-0.002, 0.002);
      p.intrinsics.p2 = rng.uniform(-0.002, 0.002);
    }
    const Eigen::MatrixXd J = Eigen::MatrixXd(jacobian(p));
    const Eigen::MatrixXd N = numeric_jacobian(p, 1e-6);
    ASSERT_EQ(J.cols(), p.parameter_count());
    ASSERT_EQ(J.cols(), N.cols());
    for (Eigen::Index c = 0; c < J.cols(); ++c) {
      // Central differences on ~1000 px residuals carry about 1e-7 px of
      // rounding, which swamps nearly flat columns such as k3 near the centre.
      const double scale = std::max(N.col(c).norm(), 1e-2);
      worst = std::max(worst, (J.col(c) - N.col(c)).norm() / scale);
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Jacobian, SparsityAndGauge) {
  Random rng(6);
  OptimizationProblem p = random_problem(rng, 4, 3, 0.5);
  p.marker_fixed = {false, false, true, false};
  // Drop every observation of marker 1 in frame 2.
  std::erase_if(p.observations, [](const MarkerObservation& o) { return o.frame == 2 && o.marker == 1; });
  const Eigen::SparseMatrix<double, Eigen::RowMajor> J = jacobian(p);
  EXPECT_EQ(J.cols(), 6 * 3 + 6 * 3);
  for (std::size_t o = 0; o < p.observations.size(); ++o) {
    const auto& obs = p.observations[o];
    const int marker_col = obs.marker == 2 ? -1 : 6 * (obs.marker < 2 ? obs.marker : obs.marker - 1);
    const int frame_col = 18 + 6 * obs.frame;
    for (int row = 8 * static_cast<int>(o); row < 8 * static_cast<int>(o) + 8; ++row) {
      EXPECT_LE(J.row(row).nonZeros(), obs.marker == 2 ? 6 : 12);
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(J, row); it; ++it) {
        const bool in_frame = it.col() >= frame_col && it.col() < frame_col + 6;
        const bool in_marker = marker_col >= 0 && it.col() >= marker_col && it.col() < marker_col + 6;
        EXPECT_TRUE(in_frame || in_marker) << "row " << row << " col " << it.col();
      }
    }
  }
  p.optimize_intrinsics = true;
  const Eigen::SparseMatrix<double, Eigen::RowMajor> Jk = jacobian(p);
  EXPECT_EQ(Jk.cols(), 36 + 9);
  for (int row = 0; row < Jk.rows(); ++row) EXPECT_LE(Jk.row(row).nonZeros(), 12 + 9);
}

TEST(ParameterCount, Formula) {
  EXPECT_EQ(parameter_count(5, 1, 10, false), 6 * 4 + 6 * 10);
  EXPECT_EQ(parameter_count(5, 1, 10, true), 6 * 4 + 6 * 10 + 9);
  Random rng(7);
  OptimizationProblem p = random_problem(rng, 3, 2, 0.0);
  EXPECT_EQ(p.parameter_count(), 6 * 2 + 6 * 2);
}

TEST(ParameterCount, ReportedProblemSizeIsConsistent) {
  // 90 markers, one fixed, about 6998 frames against 42555 reported variables.
  const int plain = parameter_count(90, 1, 6998, false);
  const int with_k = parameter_count(90, 1, 6998, true);
  EXPECT_EQ(plain, 42522);
  EXPECT_EQ(with_k, 42531);
  EXPECT_LT(std::abs(plain - 42555) / 42555.0, 1e-3);
  EXPECT_LT(std::abs(with_k - 42555) / 42555.0, 1e-3);
}

TEST(Optimize, GroundTruthIsFixedPoint) {
  Random rng(8);
  const OptimizationProblem p = random_problem(rng, 5, 8, 0.0);
  const auto result = optimize(p);
  EXPECT_LE(result.report.iterations, 2);
  EXPECT_NEAR(result.report.final_cost, result.report.initial_cost, 1e-10);
  for (std::size_t i = 0; i < p.markers.size(); ++i) {
    EXPECT_LT((result.problem.markers[i].t - p.markers[i].t).norm(), 1e-10);
  }
}

TEST(Optimize, PerturbedStartRecoversGroundTruth) {
  Random rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    Truth truth;
    OptimizationProblem p = random_problem(rng, 6, 10, 0.0, &truth);
    for (std::size_t i = 1; i < p.markers.size(); ++i) {
      const Transform jitter(Eigen::AngleAxisd(deg(2), rng.unit()).toRotationMatrix(), 0.02 * rng.unit());
      p.markers[i] = zeta_from_gamma(jitter * truth.markers[i]);
    }
    for (auto& f : p.frames) {
      const Transform g = gamma_from_zeta(f);
      f = zeta_from_gamma(Transform(rng.rotation(deg(1)) * g.rotation(), g.translation() + rng.vec3(-0.01, 0.01)));
    }
    const auto result = optimize(p);
    for (std::size_t i = 0; i < p.markers.size(); ++i) {
      const Transform m = gamma_from_zeta(result.problem.markers[i]);
      EXPECT_LT((m.translation() - truth.markers[i].translation()).norm(), 1e-5) << result.report.termination;
      EXPECT_LT(rotation_angle(m.rotation(), truth.markers[i].rotation()), 1e-5);
    }
    for (std::size_t f = 0; f < p.frames.size(); ++f) {
      EXPECT_LT((gamma_from_zeta(result.problem.frames[f]).translation() - truth.frames[f].translation()).norm(),
                1e-5);
    }
  }
}

TEST(Optimize, AcceptedCostsNeverIncrease) {
  Random rng(10);
  for (const auto damping : {Damping::kScaledDiagonal, Damping::kIdentity}) {
    OptimizationProblem p = random_problem(rng, 5, 6, 1.0);
    for (std::size_t i = 1; i < p.markers.size(); ++i) p.markers[i].t += rng.vec3(-0.05, 0.05);
    LMConfig config;
    config.damping = damping;
    const auto result = optimize(p, config);
    double last = result.report.initial_cost;
    int accepted = 0;
    for (const auto& it : result.report.log) {
      if (!it.accepted) continue;
      ++accepted;
      EXPECT_LE(it.cost, last);
      last = it.cost;
    }
    EXPECT_EQ(accepted, result.report.iterations);
    EXPECT_LT(result.report.final_cost, result.report.initial_cost);
    EXPECT_NEAR(result.report.final_cost, total_cost(result.problem), 1e-9 * result.report.final_cost);
  }
}

TEST(Optimize, LogHasOneLinePerIteration) {
  Random rng(11);
  OptimizationProblem p = random_problem(rng, 3, 4, 0.5);
  p.markers[1].t += Vec3(0.03, 0, 0);
  std::ostringstream log;
  const auto result = optimize(p, {}, &log);
  int lines = 0;
  std::istringstream in(log.str());
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("lm iter ", 0) == 0) ++lines;
  }
  EXPECT_NE(log.str().find("lm done: "), std::string::npos);
  EXPECT_EQ(lines, static_cast<int>(result.report.log.size()));
}

TEST(Optimize, NonFiniteStartThrows) {
  Random rng(12);
  OptimizationProblem p = random_problem(rng, 2, 2, 0.0);
  p.frames[0].t.x() = std::nan("");
  try {
    optimize(p);
    FAIL() << "expected invalid-initialization";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidInitialization);
  }
}

TEST(Optimize, GaugeInvariance) {
  Random rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    OptimizationProblem a = random_problem(rng, 5, 8, 1.0);
    OptimizationProblem b = a;
    b.marker_fixed = {false, false, false, true, false};
    LMConfig config;
    config.max_iterations = 500;
    const auto ra = optimize(a, config);
    const auto rb = optimize(b, config);
    EXPECT_NEAR(ra.report.final_cost, rb.report.final_cost, 1e-8 * std::max(1.0, ra.report.final_cost));
    // Map b onto a through marker 3, whose pose differs only by the gauge.
    const auto ma = marker_transforms(ra.problem);
    const auto mb = marker_transforms(rb.problem);
    const Transform align = ma[3] * mb[3].inverse();
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const Transform mapped = align * mb[i];
      EXPECT_LT((mapped.translation() - ma[i].translation()).norm(), 1e-6);
      EXPECT_LT(rotation_angle(mapped.rotation(), ma[i].rotation()), 1e-6);
    }
  }
}

TEST(Optimize, HuberDownweightsOutliers) {
  Random rng(14);
  Truth truth;
  OptimizationProblem p = random_problem(rng, 5, 10, 0.3, &truth);
  for (int o = 0; o < 4; ++o) p.observations[7 * o + 3].pixels[1] += Vec2(40, -30);
  LMConfig plain;
  LMConfig robust;
  robust.huber_delta = 2.0;
  const auto rp = optimize(p, plain);
  const auto rr = optimize(p, robust);
  double err_plain = 0.0;
  double err_robust = 0.0;
  for (std::size_t i = 0; i < truth.markers.size(); ++i) {
    err_plain += (gamma_from_zeta(rp.problem.markers[i]).translation() - truth.markers[i].translation()).norm();
    err_robust += (gamma_from_zeta(rr.problem.markers[i]).translation() - truth.markers[i].translation()).norm();
  }
  EXPECT_LT(err_robust, err_plain);
  EXPECT_LE(total_cost(rr.problem, 2.0), total_cost(rr.problem));
}

TEST(Optimize, IntrinsicsRecoveredWhenEnabled) {
  Random rng(15);
  OptimizationProblem p = random_problem(rng, 6, 20, 0.2);
  const CameraIntrinsics truth = p.intrinsics;
  p.optimize_intrinsics = true;
  p.intrinsics.fx *= 1.02;
  p.intrinsics.fy *= 0.98;
  p.intrinsics.cx += 5;
  const auto result = optimize(p);
  EXPECT_NEAR(result.problem.intrinsics.fx, truth.fx, 5.0);
  EXPECT_NEAR(result.problem.intrinsics.fy, truth.fy, 5.0);
  EXPECT_NEAR(result.problem.intrinsics.cx, truth.cx, 5.0);
}

TEST(Optimize, MarkerRigidityByConstruction) {
  Random rng(16);
  OptimizationProblem p = random_problem(rng, 4, 6, 1.0);
  const auto result = optimize(p);
  for (const auto& z : result.problem.markers) {
    const Transform m = gamma_from_zeta(z);
    for (int c = 0; c < 4; ++c) {
      const Vec3 a = m * p.geom.corners()[c];
      const Vec3 b = m * p.geom.corners()[(c + 1) % 4];
      EXPECT_NEAR((a - b).norm(), p.geom.side(), 1e-12);
    }
  }
}

TEST(Optimize, RoomReprojectionMatchesReportedRegime) {
  const SyntheticScene scene = generate_scene(SceneLayout::kRoomWalls, 20, 0.2, 1);
  const SyntheticSequence seq = generate_sequence(scene, TrajectoryKind::kOrbit, 300, 0.5, default_camera(), 1);
  PipelineConfig config;
  config.side = 0.2;
  const PipelineResult result = build_map(seq.detections, seq.camera, config);
  ASSERT_GE(result.components.size(), 1u);
  const auto& report = result.components.front().report;
  EXPECT_EQ(result.stats.frames, 300);
  EXPECT_EQ(result.components.front().markers.size(), 20u);
  EXPECT_GT(result.stats.detections, 400);
  EXPECT_GE(report.rms_reprojection_px, 0.4);
  EXPECT_LE(report.rms_reprojection_px, 1.0);
}
