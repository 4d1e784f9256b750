#include "fidmap/cycle_opt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "fidmap/error.hpp"

namespace fidmap {

namespace {

constexpr double kClosedCycle = 1e-12;

MarkerPair canonical_key(int a, int b) { return a < b ? MarkerPair{a, b} : MarkerPair{b, a}; }

// Step m goes from nodes[m] to nodes[m+1]; its transform maps the frame of
// nodes[m+1] into nodes[m], i.e. g.edge(nodes[m+1], nodes[m]). That is the
// canonical direction exactly when nodes[m+1] < nodes[m].
struct Step {
  MarkerPair key;
  bool reversed;
};

Step cycle_step(const Cycle& c, std::size_t m) {
  const int from = c.nodes[(m + 1) % c.nodes.size()];
  const int to = c.nodes[m];
  return {canonical_key(from, to), from > to};
}

double angle_between(const Mat3& a, const Mat3& b) {
  return matrix_to_rodrigues(nearest_rotation(a.transpose() * b)).norm();
}

std::map<MarkerPair, Mat3> canonical_rotations(const PoseGraph& g) {
  std::map<MarkerPair, Mat3> out;
  for (const auto& [key, e] : g.edges()) {
    if (key.first < key.second) out[key] = e.pose.rotation();
  }
  return out;
}

}  // namespace

CycleBasis compute_cycle_basis(const PoseGraph& g, const SpanningTree& tree) {
  CycleBasis basis;
  for (const auto& [key, e] : g.edges()) {
    const auto [u, v] = key;
    if (u > v || tree.is_tree_edge(u, v)) continue;
    if (!tree.contains(u) || !tree.contains(v)) continue;
    const auto pu = tree.path_to_root(u);
    const auto pv = tree.path_to_root(v);
    const std::set<int> on_v(pv.begin(), pv.end());
    std::size_t lca_u = 0;
    while (!on_v.count(pu[lca_u])) ++lca_u;
    const int lca = pu[lca_u];

    Cycle c;
    c.generator = {u, v};
    for (std::size_t k = lca_u + 1; k-- > 0;) c.nodes.push_back(pu[k]);  // lca ... u
    for (const int n : pv) {
      if (n == lca) break;
      c.nodes.push_back(n);  // v ... child of lca
    }
    basis.cycles.push_back(std::move(c));
  }
  return basis;
}

CycleFractions cycle_fractions(const PoseGraph& g, const Cycle& cycle) {
  const std::size_t n = cycle.nodes.size();
  std::vector<double> e(n);
  for (std::size_t m = 0; m < n; ++m) {
    const auto s = cycle_step(cycle, m);
    e[m] = std::max(0.0, g.edge(s.key.first, s.key.second).weight);
  }
  CycleFractions f;
  f.alpha.resize(n);
  f.w.resize(n);
  double sum = 0.0;
  double inv_sum = 0.0;
  for (const double x : e) {
    sum += x;
    inv_sum += 1.0 / std::max(x, 1e-12);
  }
  for (std::size_t m = 0; m < n; ++m) {
    f.alpha[m] = sum > 0.0 ? e[m] / sum : 1.0 / static_cast<double>(n);
    f.w[m] = (1.0 / std::max(e[m], 1e-12)) / inv_sum;
  }
  return f;
}

Mat3 cycle_step_rotation(const std::map<MarkerPair, Mat3>& rotations, const Cycle& cycle, std::size_t m) {
  const auto s = cycle_step(cycle, m);
  const Mat3& R = rotations.at(s.key);
  return s.reversed ? Mat3(R.transpose()) : R;
}

RotationCorrection distribute_rotation_errors(const PoseGraph& g, const CycleBasis& basis,
                                              const CycleOptConfig& config) {
  RotationCorrection out;
  out.rotations = canonical_rotations(g);
  if (basis.cycles.empty()) return out;

  std::vector<CycleFractions> fractions;
  fractions.reserve(basis.cycles.size());
  for (const auto& c : basis.cycles) fractions.push_back(cycle_fractions(g, c));

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    std::map<MarkerPair, std::vector<Mat3>> estimates;
    bool all_closed = true;
    for (std::size_t ci = 0; ci < basis.cycles.size(); ++ci) {
      const Cycle& c = basis.cycles[ci];
      const std::size_t n = c.nodes.size();
      std::vector<Mat3> steps(n);
      std::vector<Mat3> prefix(n + 1);
      prefix[0] = Mat3::Identity();
      for (std::size_t m = 0; m < n; ++m) {
        steps[m] = cycle_step_rotation(out.rotations, c, m);
        prefix[m + 1] = prefix[m] * steps[m];
      }
      const Vec3 omega = matrix_to_rodrigues(nearest_rotation(prefix[n]));
      const double theta = omega.norm();
      if (theta > std::numbers::pi - 1e-6) {
        throw Error(ErrorCode::kDegenerateCycle, "cycle " + std::to_string(ci) + " (generator " +
                                                     std::to_string(c.generator.first) + "-" +
                                                     std::to_string(c.generator.second) +
                                                     ") has a half-turn residual");
      }
      if (theta > kClosedCycle) all_closed = false;
      for (std::size_t m = 0; m < n; ++m) {
        // Corrected prefix products rotate back by the running share of the
        // residual; the step between them is the residual share conjugated
        // into the step's frame.
        const Vec3 local = prefix[m].transpose() * omega;
        Mat3 corrected = rodrigues_to_matrix(-fractions[ci].alpha[m] * local) * steps[m];
        const auto s = cycle_step(c, m);
        if (s.reversed) corrected.transposeInPlace();
        estimates[s.key].push_back(corrected);
      }
    }
    out.iterations = iter;
    if (all_closed) {
      out.last_change = 0.0;
      break;
    }

    double change = 0.0;
    for (auto& [key, list] : estimates) {
      Mat3 mean;
      if (list.size() == 1) {
        mean = list.front();
      } else {
        Mat3 sum = Mat3::Zero();
        for (const auto& R : list) sum += R;
        mean = nearest_rotation(sum);
      }
      change = std::max(change, angle_between(out.rotations[key], mean));
      out.rotations[key] = mean;
    }
    out.iterations = iter + 1;
    out.last_change = change;
    if (change < config.rotation_tolerance) break;
  }
  return out;
}

EdgeVectors decouple_translations(const PoseGraph& g, const std::map<MarkerPair, Mat3>& rotations) {
  EdgeVectors out;
  for (const auto& [key, R_tilde] : rotations) {
    const GraphEdge& e = g.edge(key.first, key.second);
    const Mat3& R = e.pose.rotation();
    const Vec3& t = e.pose.translation();
    const Vec3 midpoint = -0.5 * (R.transpose() * t);
    out[key] = (R - R_tilde) * midpoint + t;
  }
  return out;
}

EdgeVectors optimize_translations(const PoseGraph& g, const CycleBasis& basis,
                                  const std::map<MarkerPair, Mat3>& rotations, const EdgeVectors& decoupled,
                                  const CycleOptConfig& config) {
  if (basis.cycles.empty()) return decoupled;

  std::map<MarkerPair, int> column;
  int n_edges = 0;
  for (const auto& [key, t] : decoupled) column[key] = n_edges++;

  const int rows = 3 * static_cast<int>(basis.cycles.size());
  const int cols = 3 * n_edges;
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t ci = 0; ci < basis.cycles.size(); ++ci) {
    const Cycle& c = basis.cycles[ci];
    Mat3 prefix = Mat3::Identity();
    for (std::size_t m = 0; m < c.nodes.size(); ++m) {
      const auto s = cycle_step(c, m);
      const Mat3& R = rotations.at(s.key);
      // Reversed steps use the inverse edge, whose translation is -R^T t.
      const Mat3 coef = s.reversed ? Mat3(-prefix * R.transpose()) : prefix;
      const int col = 3 * column.at(s.key);
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          if (coef(a, b) != 0.0) trip.emplace_back(3 * static_cast<int>(ci) + a, col + b, coef(a, b));
        }
      }
      prefix = prefix * (s.reversed ? Mat3(R.transpose()) : R);
    }
  }
  Eigen::SparseMatrix<double> A(rows, cols);
  A.setFromTriplets(trip.begin(), trip.end());

  Eigen::VectorXd t0(cols);
  for (const auto& [key, t] : decoupled) t0.segment<3>(3 * column[key]) = t;

  Eigen::VectorXd inv_w = Eigen::VectorXd::Ones(cols);
  if (config.weighted_translation) {
    double mean = 0.0;
    for (const auto& [key, t] : decoupled) mean += 1.0 / std::max(g.edge(key.first, key.second).weight, 1e-12);
    mean /= n_edges;
    for (const auto& [key, t] : decoupled) {
      const double w = (1.0 / std::max(g.edge(key.first, key.second).weight, 1e-12)) / mean;
      inv_w.segment<3>(3 * column[key]).setConstant(1.0 / w);
    }
  }

  const Eigen::VectorXd residual = A * t0;
  if (residual.lpNorm<Eigen::Infinity>() < kClosedCycle) return decoupled;

  // KKT system [W A^T; A 0] [t; l] = [W t0; 0], eliminated on the multipliers:
  // (A W^-1 A^T) l = A t0, t = t0 - W^-1 A^T l.
  const Eigen::SparseMatrix<double> AWi = A * inv_w.asDiagonal();
  const Eigen::SparseMatrix<double> S = AWi * A.transpose();
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(S);
  if (ldlt.info() != Eigen::Success) {
    throw Error(ErrorCode::kRankDeficient, "cycle constraint system could not be factorized");
  }
  const Eigen::VectorXd D = ldlt.vectorD();
  const double dmax = D.cwiseAbs().maxCoeff();
  if (D.minCoeff() <= 1e-12 * std::max(dmax, 1.0)) {
    throw Error(ErrorCode::kRankDeficient, "cycle constraints are linearly dependent");
  }
  const Eigen::VectorXd lambda = ldlt.solve(residual);
  const Eigen::VectorXd t = t0 - inv_w.asDiagonal() * (A.transpose() * lambda);

  EdgeVectors out;
  for (const auto& [key, idx] : column) out[key] = t.segment<3>(3 * idx);
  return out;
}

CorrectedGraph correct_graph(const PoseGraph& g, const SpanningTree& tree, const CycleOptConfig& config) {
  CorrectedGraph out;
  const CycleBasis basis = compute_cycle_basis(g, tree);
  out.cycle_count = basis.cycles.size();
  out.rotation = distribute_rotation_errors(g, basis, config);
  out.decoupled = decouple_translations(g, out.rotation.rotations);
  out.translations = optimize_translations(g, basis, out.rotation.rotations, out.decoupled, config);

  // Untouched edges keep both stored directions bit for bit.
  out.graph = g;
  for (const auto& [key, R] : out.rotation.rotations) {
    const GraphEdge& e = g.edge(key.first, key.second);
    if (R == e.pose.rotation() && out.translations.at(key) == e.pose.translation()) continue;
    out.graph.add_edge(key.first, key.second, Transform(R, out.translations.at(key)), e.weight);
  }
  return out;
}

double cycle_closure_error(const PoseGraph& g, const Cycle& cycle) {
  Transform acc;
  const std::size_t n = cycle.nodes.size();
  for (std::size_t m = 0; m < n; ++m) {
    acc = acc * g.edge(cycle.nodes[(m + 1) % n], cycle.nodes[m]).pose;
  }
  return (acc.matrix() - Mat4::Identity()).norm();
}

}  // namespace fidmap
