#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapdistill/env.hpp"
#include "shapdistill/policy.hpp"

namespace shapdistill {

// Set of "observed" feature indices, bit i <=> feature i.
struct Coalition {
  std::uint32_t members = 0;

  static Coalition empty() { return {}; }
  static Coalition full(int n) { return {n >= 32 ? ~0u : (1u << n) - 1u}; }

  bool contains(int i) const { return (members >> i) & 1u; }
  Coalition with(int i) const { return {members | (1u << i)}; }
  int size() const { return __builtin_popcount(members); }

  friend bool operator==(Coalition a, Coalition b) { return a.members == b.members; }
};

inline constexpr int kMaxCoalitionFeatures = 31;
inline constexpr int kMaxExactFeatures = 20;

struct DatasetSource {
  std::string env_name;
  std::string policy_id;
  int trajectory_count = 0;
  std::uint64_t seed = 0;
};

// On-policy visited states with per-feature normalization statistics.
// Constant features get std = 1.
class StateDataset {
 public:
  StateDataset(std::vector<State> states, DatasetSource source, std::vector<std::string> feature_names = {});

  std::size_t size() const { return size_; }
  int feature_count() const { return feature_count_; }
  std::span<const double> state(std::size_t i) const {
    return {data_.data() + i * feature_count_, static_cast<std::size_t>(feature_count_)};
  }
  std::vector<State> states() const;
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return stddev_; }
  const DatasetSource& source() const { return source_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }

 private:
  std::size_t size_;
  int feature_count_;
  std::vector<double> data_;  // row-major, one state per row
  std::vector<double> mean_;
  std::vector<double> stddev_;
  DatasetSource source_;
  std::vector<std::string> feature_names_;
};

// Concatenates the states of n_traj rollouts seeded seed, seed + 1, ...
StateDataset build_dataset(const EnvSpec& env, const Policy& policy, int n_traj, std::uint64_t seed,
                           const std::string& policy_id = "policy");

// dataset.csv (one state per row, feature names as header) + JSON sidecar.
void save_dataset(const StateDataset& ds, const std::filesystem::path& csv_path,
                  const std::filesystem::path& meta_path, const nlohmann::ordered_json& extra_meta = {});
StateDataset load_dataset(const std::filesystem::path& csv_path, const std::filesystem::path& meta_path);

using CharacteristicFn = std::function<double(Coalition)>;

struct ShapleyValues {
  std::vector<double> phi;
  double v_full = 0.0;
  double v_empty = 0.0;
};

// Exact weighted sum over all coalitions; each v(C) is evaluated once.
ShapleyValues shapley_exact(const CharacteristicFn& v, int n);

// Average marginal contribution over `permutations` uniformly sampled feature
// orderings. With exhaustive = true every one of the n! orderings is visited
// once and `permutations` is ignored.
ShapleyValues shapley_sampled(const CharacteristicFn& v, int n, int permutations, std::uint64_t seed,
                              bool exhaustive = false);

// Empirical on-manifold characteristic for one policy over a dataset:
//   v(N) = scalarize(policy, s)
//   v({}) = mean scalarized output over the dataset
//   v(C) = mean scalarized output of the knn_k dataset states nearest to s in
//          the std-normalized C-subspace (ties to the lower dataset index).
// Dataset outputs are computed once at construction.
class OnManifoldCharacteristic {
 public:
  OnManifoldCharacteristic(const StateDataset& dataset, const Policy& policy, int knn_k);

  double value(std::span<const double> state, Coalition coalition) const;
  double baseline() const { return baseline_; }
  int feature_count() const { return dataset_.feature_count(); }
  CharacteristicFn bind(std::span<const double> state) const;

 private:
  const StateDataset& dataset_;
  const Policy& policy_;
  int knn_k_;
  std::vector<double> outputs_;
  double baseline_;
};

double characteristic_value(const StateDataset& dataset, const Policy& policy, std::span<const double> state,
                            Coalition coalition, int knn_k);

struct ShapleyRecord {
  State state;
  std::vector<double> shapley;
  int action = 0;
  double v_full = 0.0;
  double v_empty = 0.0;
};

enum class ShapleyMode { kExact, kSampled };
const char* to_string(ShapleyMode mode);
ShapleyMode shapley_mode_from_string(const std::string& name);

struct ExplainSettings {
  ShapleyMode mode = ShapleyMode::kExact;
  int knn_k = 20;
  int permutations = 1000;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency
};

// Shapley records keyed for the inverse map from Shapley vectors to states.
class RecordStore {
 public:
  RecordStore() = default;
  RecordStore(std::vector<ShapleyRecord> records, nlohmann::ordered_json metadata = {});

  const std::vector<ShapleyRecord>& records() const { return records_; }
  const ShapleyRecord& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  int feature_count() const;

  // Index of the record whose Shapley vector is nearest in Euclidean distance;
  // ties go to the lowest index.
  std::size_t nearest_index(std::span<const double> phi) const;

  const nlohmann::ordered_json& metadata() const { return metadata_; }
  nlohmann::ordered_json& metadata() { return metadata_; }

 private:
  std::vector<ShapleyRecord> records_;
  nlohmann::ordered_json metadata_;
};

ShapleyRecord shapley_exact(const StateDataset& dataset, const Policy& policy, std::span<const double> state,
                            int knn_k);
ShapleyRecord shapley_sampled(const StateDataset& dataset, const Policy& policy, std::span<const double> state,
                              int knn_k, int permutations, std::uint64_t seed);

// One record per input state, in input order (no deduplication).
RecordStore explain_states(const StateDataset& dataset, const Policy& policy, const std::vector<State>& states,
                           const ExplainSettings& settings);

const ShapleyRecord& inverse_lookup(const RecordStore& store, std::span<const double> phi);
// When phi is exactly the vector of record `origin`, that record is returned
// even if a lower-index record carries the same vector. Otherwise identical
// to the unhinted lookup.
const ShapleyRecord& inverse_lookup(const RecordStore& store, std::span<const double> phi, std::size_t origin);

// CSV columns: <feature>..., phi_<feature>..., action, v_full, v_empty.
// The JSON sidecar carries the store metadata.
void save_records(const RecordStore& store, const std::vector<std::string>& feature_names,
                  const std::filesystem::path& csv_path, const std::filesystem::path& meta_path);
RecordStore load_records(const std::filesystem::path& csv_path, const std::filesystem::path& meta_path);

// Fixed-format real for CSV output; round-trips exactly.
std::string format_real(double value);

}  // namespace shapdistill
