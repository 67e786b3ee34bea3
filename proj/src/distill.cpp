#include "shapdistill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "shapdistill/errors.hpp"
#include "shapdistill/policy_io.hpp"
#include "shapdistill/rng.hpp"

namespace shapdistill {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double total = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    total += diff * diff;
  }
  return total;
}

int nearest_centroid(std::span<const double> x, const std::vector<std::vector<double>>& centroids, double* dist) {
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int c = 0; c < static_cast<int>(centroids.size()); ++c) {
    const double d = squared_distance(x, centroids[c]);
    if (d < best_dist) {
      best_dist = d;
      best = c;
    }
  }
  if (dist != nullptr) *dist = best_dist;
  return best;
}

// Preserves the exception type while prefixing the failing stage.
[[noreturn]] void rethrow_with_stage(const char* stage) {
  try {
    throw;
  } catch (const DegenerateFitError& e) {
    throw DegenerateFitError(fmt::format("distill[{}]: {}", stage, e.what()));
  } catch (const NumericError& e) {
    throw NumericError(fmt::format("distill[{}]: {}", stage, e.what()));
  } catch (const ContractError& e) {
    throw ContractError(fmt::format("distill[{}]: {}", stage, e.what()));
  } catch (const Error& e) {
    throw Error(fmt::format("distill[{}]: {}", stage, e.what()));
  }
}

}  // namespace

std::vector<int> Clustering::sizes() const {
  std::vector<int> out(centroids.size(), 0);
  for (int a : assignments) ++out[a];
  return out;
}

Clustering kmeans(const std::vector<std::vector<double>>& vectors, int k, std::uint64_t seed, int max_iters,
                  double tol) {
  if (k < 1) throw ContractError("kmeans: k must be at least 1");
  if (vectors.size() < static_cast<std::size_t>(k)) {
    throw ContractError(fmt::format("kmeans: {} vectors is fewer than k = {}", vectors.size(), k));
  }
  if (max_iters < 1) throw ContractError("kmeans: max_iters must be positive");
  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != dim) throw ContractError("kmeans: vectors differ in length");
  }
  const std::size_t count = vectors.size();

  Clustering out;
  Rng rng(seed);
  out.centroids.push_back(vectors[rng.uniform_int(count)]);
  std::vector<double> min_dist(count, std::numeric_limits<double>::infinity());
  while (static_cast<int>(out.centroids.size()) < k) {
    std::size_t far = 0;
    double far_dist = -1.0;
    for (std::size_t p = 0; p < count; ++p) {
      min_dist[p] = std::min(min_dist[p], squared_distance(vectors[p], out.centroids.back()));
      if (min_dist[p] > far_dist) {
        far_dist = min_dist[p];
        far = p;
      }
    }
    out.centroids.push_back(vectors[far]);
  }

  out.assignments.assign(count, 0);
  std::vector<double> point_dist(count);
  for (int iter = 0; iter < max_iters; ++iter) {
    for (std::size_t p = 0; p < count; ++p) out.assignments[p] = nearest_centroid(vectors[p], out.centroids, &point_dist[p]);

    // Repair empty clusters with the worst-fit point of a cluster that can spare one.
    std::vector<int> sizes = out.sizes();
    for (int c = 0; c < k; ++c) {
      if (sizes[c] > 0) continue;
      std::size_t worst = count;
      double worst_dist = -1.0;
      for (std::size_t p = 0; p < count; ++p) {
        if (sizes[out.assignments[p]] > 1 && point_dist[p] > worst_dist) {
          worst_dist = point_dist[p];
          worst = p;
        }
      }
      if (worst == count) throw NumericError("kmeans: cannot repair empty cluster");
      --sizes[out.assignments[worst]];
      out.assignments[worst] = c;
      point_dist[worst] = 0.0;
      ++sizes[c];
    }

    std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
    for (std::size_t p = 0; p < count; ++p) {
      for (std::size_t d = 0; d < dim; ++d) next[out.assignments[p]][d] += vectors[p][d];
    }
    double shift = 0.0;
    for (int c = 0; c < k; ++c) {
      for (double& x : next[c]) x /= static_cast<double>(sizes[c]);
      shift = std::max(shift, std::sqrt(squared_distance(next[c], out.centroids[c])));
    }
    out.centroids = std::move(next);

    double inertia = 0.0;
    for (std::size_t p = 0; p < count; ++p) inertia += squared_distance(vectors[p], out.centroids[out.assignments[p]]);
    out.inertia = inertia;
    out.inertia_history.push_back(inertia);
    out.iterations = iter + 1;
    if (shift <= tol) break;
  }
  return out;
}

std::vector<int> align_clusters_to_actions(Clustering& clustering, std::span<const int> actions, int action_count) {
  const int k = clustering.cluster_count();
  if (actions.size() != clustering.assignments.size()) throw ContractError("align_clusters: size mismatch");
  if (k != action_count) throw ContractError("align_clusters: cluster count must equal action count");
  // agree[c][a] = members of cluster c with action a
  std::vector<std::vector<long>> agree(k, std::vector<long>(k, 0));
  for (std::size_t p = 0; p < actions.size(); ++p) {
    if (actions[p] < 0 || actions[p] >= k) throw ContractError("align_clusters: action out of range");
    ++agree[clustering.assignments[p]][actions[p]];
  }
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  long best_score = -1;
  if (k <= 8) {
    do {
      long score = 0;
      for (int c = 0; c < k; ++c) score += agree[c][perm[c]];
      if (score > best_score) {
        best_score = score;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    // Greedy: repeatedly take the largest remaining (cluster, action) count.
    std::vector<bool> used_c(k, false), used_a(k, false);
    for (int round = 0; round < k; ++round) {
      int bc = -1, ba = -1;
      long bv = -1;
      for (int c = 0; c < k; ++c) {
        for (int a = 0; a < k; ++a) {
          if (!used_c[c] && !used_a[a] && agree[c][a] > bv) {
            bv = agree[c][a];
            bc = c;
            ba = a;
          }
        }
      }
      used_c[bc] = used_a[ba] = true;
      best[bc] = ba;
    }
  }
  std::vector<std::vector<double>> centroids(k);
  for (int c = 0; c < k; ++c) centroids[best[c]] = clustering.centroids[c];
  clustering.centroids = std::move(centroids);
  for (int& a : clustering.assignments) a = best[a];
  return best;
}

double boundary_score(std::span<const double> phi, std::span<const double> mu_i, std::span<const double> mu_j) {
  if (phi.size() != mu_i.size() || phi.size() != mu_j.size()) throw ContractError("boundary_score: dimension mismatch");
  return std::abs(squared_distance(phi, mu_i) - squared_distance(phi, mu_j));
}

BoundaryPoints select_boundary_points(const RecordStore& store, const Clustering& clustering, int i, int j, int m) {
  if (m < 1) throw ContractError("select_boundary_points: m must be at least 1");
  if (clustering.assignments.size() != store.size()) throw ContractError("select_boundary_points: clustering/store mismatch");
  if (i < 0 || j < 0 || i >= clustering.cluster_count() || j >= clustering.cluster_count() || i == j) {
    throw ContractError("select_boundary_points: invalid cluster pair");
  }
  const auto sizes = clustering.sizes();
  if (sizes[i] == 0 || sizes[j] == 0) {
    throw ContractError(fmt::format("select_boundary_points: cluster {} or {} is empty", i, j));
  }

  std::vector<std::pair<double, std::size_t>> candidates;
  for (std::size_t r = 0; r < store.size(); ++r) {
    const int c = clustering.assignments[r];
    if (c != i && c != j) continue;
    candidates.emplace_back(boundary_score(store[r].shapley, clustering.centroids[i], clustering.centroids[j]), r);
  }
  std::sort(candidates.begin(), candidates.end());

  BoundaryPoints out;
  out.i = std::min(i, j);
  out.j = std::max(i, j);
  out.truncated = static_cast<std::size_t>(m) > candidates.size();
  const std::size_t take = std::min<std::size_t>(m, candidates.size());
  for (std::size_t t = 0; t < take; ++t) {
    const auto& [score, r] = candidates[t];
    out.record_indices.push_back(r);
    out.scores.push_back(score);
    out.shapley.push_back(store[r].shapley);
    out.states.push_back(inverse_lookup(store, store[r].shapley, r).state);
  }
  return out;
}

UnorientedPlane fit_hyperplane(const std::vector<State>& states) {
  if (states.empty()) throw DegenerateFitError("fit_hyperplane: no states");
  const std::size_t n = states.front().size();
  if (states.size() < n) {
    throw DegenerateFitError(fmt::format("fit_hyperplane: {} states cannot determine a hyperplane in {} dimensions",
                                         states.size(), n));
  }
  Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
  for (const State& s : states) {
    if (s.size() != n) throw ContractError("fit_hyperplane: states differ in length");
    centroid += Eigen::Map<const Eigen::VectorXd>(s.data(), n);
  }
  centroid /= static_cast<double>(states.size());
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(n, n);
  for (const State& s : states) {
    const Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(s.data(), n) - centroid;
    scatter.noalias() += d * d.transpose();
  }
  if (scatter.cwiseAbs().maxCoeff() == 0.0) throw DegenerateFitError("fit_hyperplane: all states are identical");
  if (!scatter.allFinite()) throw NumericError("fit_hyperplane: non-finite states");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(scatter);
  if (solver.info() != Eigen::Success) throw NumericError("fit_hyperplane: eigen decomposition failed");
  Eigen::VectorXd normal = solver.eigenvectors().col(0);  // eigenvalues ascending
  Eigen::Index pivot = 0;
  normal.cwiseAbs().maxCoeff(&pivot);
  if (normal(pivot) < 0.0) normal = -normal;

  UnorientedPlane plane;
  plane.w.assign(normal.data(), normal.data() + n);
  plane.b = -normal.dot(centroid);
  plane.residual = std::max(0.0, solver.eigenvalues()(0));
  return plane;
}

Hyperplane orient_hyperplane(const UnorientedPlane& plane, const RecordStore& store, const Clustering& clustering,
                             int i, int j) {
  if (clustering.assignments.size() != store.size()) throw ContractError("orient_hyperplane: clustering/store mismatch");
  Hyperplane h{std::min(i, j), std::max(i, j), plane.w, plane.b};
  const int positive_cluster = h.i;
  long positive = 0, negative = 0;
  bool any = false;
  for (std::size_t r = 0; r < store.size(); ++r) {
    if (clustering.assignments[r] != positive_cluster) continue;
    any = true;
    const double f = h.evaluate(store[r].state);
    if (f > 0.0) ++positive;
    if (f < 0.0) ++negative;
  }
  if (!any) throw ContractError(fmt::format("orient_hyperplane: cluster {} is empty", positive_cluster));
  if (negative > positive) {
    for (double& c : h.w) c = -c;
    h.b = -h.b;
  }
  return h;
}

DistillResult distill(const RecordStore& store, int action_count, const DistillConfig& config,
                      std::vector<std::string> feature_names) {
  if (store.empty()) throw ContractError("distill: empty record store");
  if (action_count < 2) throw ContractError("distill: need at least two actions");
  const int n = store.feature_count();
  const int m = config.boundary_points > 0 ? config.boundary_points : std::max(2 * n, 16);

  std::vector<std::vector<double>> vectors;
  std::vector<int> actions;
  for (const auto& r : store.records()) {
    vectors.push_back(r.shapley);
    actions.push_back(r.action);
  }

  Clustering clustering;
  std::vector<int> relabel;
  try {
    clustering = kmeans(vectors, action_count, config.seed, config.max_iters, config.tol);
    relabel = align_clusters_to_actions(clustering, actions, action_count);
  } catch (...) {
    rethrow_with_stage("kmeans");
  }

  std::vector<BoundaryPoints> boundaries;
  std::vector<Hyperplane> planes;
  for (int i = 0; i < action_count; ++i) {
    for (int j = i + 1; j < action_count; ++j) {
      try {
        boundaries.push_back(select_boundary_points(store, clustering, i, j, m));
      } catch (...) {
        rethrow_with_stage("boundary");
      }
      UnorientedPlane plane;
      try {
        plane = fit_hyperplane(boundaries.back().states);
      } catch (...) {
        rethrow_with_stage("regression");
      }
      try {
        planes.push_back(orient_hyperplane(plane, store, clustering, i, j));
      } catch (...) {
        rethrow_with_stage("orientation");
      }
    }
  }

  std::vector<ClusterSpread> spread(action_count);
  for (int c = 0; c < action_count; ++c) {
    std::vector<double> sums;
    for (std::size_t r = 0; r < store.size(); ++r) {
      if (clustering.assignments[r] != c) continue;
      sums.push_back(std::accumulate(store[r].shapley.begin(), store[r].shapley.end(), 0.0));
    }
    if (sums.empty()) continue;
    const double mean = std::accumulate(sums.begin(), sums.end(), 0.0) / sums.size();
    double var = 0.0;
    for (double s : sums) var += (s - mean) * (s - mean);
    spread[c] = {mean, std::sqrt(var / sums.size()), *std::min_element(sums.begin(), sums.end()),
                 *std::max_element(sums.begin(), sums.end())};
  }

  if (feature_names.empty()) feature_names = default_feature_names(n);
  InterpretablePolicy policy(action_count, std::move(planes), std::move(feature_names));
  return {std::move(policy), std::move(clustering), std::move(relabel), std::move(boundaries), std::move(spread), m};
}

nlohmann::ordered_json distill_report(const DistillResult& result, const RecordStore& store,
                                      const std::vector<std::string>& feature_names) {
  nlohmann::ordered_json report;
  nlohmann::ordered_json clustering;
  clustering["k"] = result.clustering.cluster_count();
  clustering["centroids"] = result.clustering.centroids;
  clustering["inertia"] = result.clustering.inertia;
  clustering["iterations"] = result.clustering.iterations;
  clustering["sizes"] = result.clustering.sizes();
  clustering["label_map"] = result.cluster_relabel;
  nlohmann::ordered_json spread = nlohmann::ordered_json::array();
  for (const auto& s : result.sum_phi_spread) {
    spread.push_back({{"mean", s.mean}, {"stddev", s.stddev}, {"min", s.min}, {"max", s.max}});
  }
  clustering["sum_phi_spread"] = std::move(spread);
  report["clustering"] = std::move(clustering);

  report["boundary_points_per_pair"] = result.boundary_points;
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const auto& bp : result.boundaries) {
    nlohmann::ordered_json pair;
    pair["i"] = bp.i;
    pair["j"] = bp.j;
    pair["truncated"] = bp.truncated;
    nlohmann::ordered_json points = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < bp.record_indices.size(); ++t) {
      points.push_back({{"record", bp.record_indices[t]},
                        {"score", bp.scores[t]},
                        {"shapley", bp.shapley[t]},
                        {"state", bp.states[t]},
                        {"action", store[bp.record_indices[t]].action}});
    }
    pair["points"] = std::move(points);
    pairs.push_back(std::move(pair));
  }
  report["boundaries"] = std::move(pairs);

  nlohmann::ordered_json planes = nlohmann::ordered_json::array();
  const int n = static_cast<int>(feature_names.size());
  for (const Hyperplane& h : result.policy.hyperplanes()) {
    nlohmann::ordered_json entry = hyperplane_to_json(h, feature_names);
    if (n > 0 && h.w[n - 1] != 0.0) entry["normalized_formula"] = h.normalized_to(n - 1).formula(feature_names);
    planes.push_back(std::move(entry));
  }
  report["hyperplanes"] = std::move(planes);
  report["decision_rule"] = result.policy.action_count() == 2
                                ? "f01 > 0 selects action 0, otherwise action 1"
                                : "one-vs-one vote: f_ij > 0 votes i, otherwise j; most votes wins, ties to lowest index";
  return report;
}

}  // namespace shapdistill
