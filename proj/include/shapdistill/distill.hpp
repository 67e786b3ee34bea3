#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapdistill/policy.hpp"
#include "shapdistill/shapley.hpp"

namespace shapdistill {

struct Clustering {
  std::vector<int> assignments;
  std::vector<std::vector<double>> centroids;
  double inertia = 0.0;
  int iterations = 0;
  std::vector<double> inertia_history;  // after each Lloyd iteration

  int cluster_count() const { return static_cast<int>(centroids.size()); }
  std::vector<int> sizes() const;
};

// Lloyd's algorithm. Seeding: the first centroid is a seeded uniform pick,
// each further centroid is the point farthest from those already chosen.
// Stops when no centroid moves more than tol or after max_iters iterations.
// An empty cluster takes the point farthest from its current centroid.
Clustering kmeans(const std::vector<std::vector<double>>& vectors, int k, std::uint64_t seed, int max_iters = 300,
                  double tol = 1e-10);

// Relabels clusters so that cluster a holds mostly states where the policy
// chose action a (maximum total agreement over label permutations).
// Returns the applied mapping old label -> new label.
std::vector<int> align_clusters_to_actions(Clustering& clustering, std::span<const int> actions, int action_count);

// | ||phi - mu_i||^2 - ||phi - mu_j||^2 |
double boundary_score(std::span<const double> phi, std::span<const double> mu_i, std::span<const double> mu_j);

struct BoundaryPoints {
  int i = 0;
  int j = 1;
  std::vector<std::size_t> record_indices;  // selected records, by increasing score
  std::vector<double> scores;
  std::vector<std::vector<double>> shapley;
  std::vector<State> states;  // recovered through inverse_lookup
  bool truncated = false;     // fewer candidates than requested
};

// Picks the m records of clusters i and j that are most nearly equidistant
// from the two centroids (ties by record index) and maps their Shapley vectors
// back to states.
BoundaryPoints select_boundary_points(const RecordStore& store, const Clustering& clustering, int i, int j, int m);

struct UnorientedPlane {
  std::vector<double> w;  // unit normal
  double b = 0.0;
  double residual = 0.0;  // sum of squared orthogonal distances
};

// Total least squares: w is the eigenvector of the point covariance with the
// smallest eigenvalue, b = -w . centroid. The sign of w is fixed so that its
// largest-magnitude component is positive.
UnorientedPlane fit_hyperplane(const std::vector<State>& states);

// Flips the plane when more cluster-i member states lie on the negative side
// than on the positive side.
Hyperplane orient_hyperplane(const UnorientedPlane& plane, const RecordStore& store, const Clustering& clustering,
                             int i, int j);

struct DistillConfig {
  int boundary_points = 0;  // m; 0 selects max(2n, 16)
  std::uint64_t seed = 0;
  int max_iters = 300;
  double tol = 1e-10;
};

struct ClusterSpread {
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct DistillResult {
  InterpretablePolicy policy;
  Clustering clustering;
  std::vector<int> cluster_relabel;
  std::vector<BoundaryPoints> boundaries;
  std::vector<ClusterSpread> sum_phi_spread;  // per cluster, of sum_i phi_i
  int boundary_points = 0;
};

DistillResult distill(const RecordStore& store, int action_count, const DistillConfig& config,
                      std::vector<std::string> feature_names = {});

// Clustering summary, boundary points and hyperplanes with readable formulas.
nlohmann::ordered_json distill_report(const DistillResult& result, const RecordStore& store,
                                      const std::vector<std::string>& feature_names);

}  // namespace shapdistill
