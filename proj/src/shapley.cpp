#include "shapdistill/shapley.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <fmt/format.h>

#include "shapdistill/errors.hpp"
#include "shapdistill/policy_io.hpp"
#include "shapdistill/rng.hpp"

namespace shapdistill {

std::string format_real(double value) { return fmt::format("{}", value); }

// --- StateDataset ------------------------------------------------------------

StateDataset::StateDataset(std::vector<State> states, DatasetSource source, std::vector<std::string> feature_names)
    : size_(states.size()), source_(std::move(source)) {
  if (states.empty()) throw ContractError("StateDataset: no states");
  feature_count_ = static_cast<int>(states.front().size());
  if (feature_count_ < 1) throw ContractError("StateDataset: states have no features");
  feature_names_ = feature_names.empty() ? default_feature_names(feature_count_) : std::move(feature_names);
  if (static_cast<int>(feature_names_.size()) != feature_count_) {
    throw ContractError("StateDataset: feature name count mismatch");
  }

  data_.reserve(size_ * feature_count_);
  for (const State& s : states) {
    if (static_cast<int>(s.size()) != feature_count_) throw ContractError("StateDataset: ragged states");
    for (double v : s) {
      if (!std::isfinite(v)) throw NumericError("StateDataset: non-finite state component");
    }
    data_.insert(data_.end(), s.begin(), s.end());
  }

  mean_.assign(feature_count_, 0.0);
  stddev_.assign(feature_count_, 0.0);
  for (std::size_t r = 0; r < size_; ++r) {
    for (int d = 0; d < feature_count_; ++d) mean_[d] += data_[r * feature_count_ + d];
  }
  for (double& m : mean_) m /= static_cast<double>(size_);
  for (std::size_t r = 0; r < size_; ++r) {
    for (int d = 0; d < feature_count_; ++d) {
      const double diff = data_[r * feature_count_ + d] - mean_[d];
      stddev_[d] += diff * diff;
    }
  }
  for (double& sd : stddev_) {
    sd = std::sqrt(sd / static_cast<double>(size_));
    if (!(sd > 0.0)) sd = 1.0;
  }
}

std::vector<State> StateDataset::states() const {
  std::vector<State> out;
  out.reserve(size_);
  for (std::size_t i = 0; i < size_; ++i) {
    auto s = state(i);
    out.emplace_back(s.begin(), s.end());
  }
  return out;
}

StateDataset build_dataset(const EnvSpec& env, const Policy& policy, int n_traj, std::uint64_t seed,
                           const std::string& policy_id) {
  if (n_traj < 1) throw ContractError("build_dataset: n_traj must be at least 1");
  std::vector<State> states;
  for (int e = 0; e < n_traj; ++e) {
    Trajectory traj = rollout(env, policy, seed + static_cast<std::uint64_t>(e));
    for (Transition& t : traj.transitions) states.push_back(std::move(t.state));
  }
  if (states.empty()) throw ContractError("build_dataset: rollouts produced no states");
  return StateDataset(std::move(states), DatasetSource{env.name, policy_id, n_traj, seed}, env.feature_names);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_real(const std::string& text, const std::filesystem::path& path, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw IoError(fmt::format("{}:{}: cannot parse '{}' as a number", path.string(), line, text));
  }
  return v;
}

}  // namespace

void save_dataset(const StateDataset& ds, const std::filesystem::path& csv_path,
                  const std::filesystem::path& meta_path, const nlohmann::ordered_json& extra_meta) {
  std::string csv;
  for (int d = 0; d < ds.feature_count(); ++d) csv += (d ? "," : "") + ds.feature_names()[d];
  csv += '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto s = ds.state(i);
    for (int d = 0; d < ds.feature_count(); ++d) csv += (d ? "," : "") + format_real(s[d]);
    csv += '\n';
  }
  write_text_file(csv_path, csv);

  nlohmann::ordered_json meta;
  meta["env"] = ds.source().env_name;
  meta["policy_id"] = ds.source().policy_id;
  meta["trajectory_count"] = ds.source().trajectory_count;
  meta["seed"] = ds.source().seed;
  meta["state_count"] = ds.size();
  meta["feature_names"] = ds.feature_names();
  meta["mean"] = ds.mean();
  meta["stddev"] = ds.stddev();
  for (const auto& [key, value] : extra_meta.items()) meta[key] = value;
  write_text_file(meta_path, meta.dump(2) + "\n");
}

StateDataset load_dataset(const std::filesystem::path& csv_path, const std::filesystem::path& meta_path) {
  const nlohmann::json meta = read_json_file(meta_path);
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(csv_path.string() + ": empty file");
  const std::vector<std::string> names = split_csv_line(line);
  std::vector<State> states;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != names.size()) throw IoError(fmt::format("{}:{}: wrong column count", csv_path.string(), line_no));
    State s;
    for (const auto& c : cells) s.push_back(parse_real(c, csv_path, line_no));
    states.push_back(std::move(s));
  }
  try {
    DatasetSource source{meta.at("env").get<std::string>(), meta.at("policy_id").get<std::string>(),
                         meta.at("trajectory_count").get<int>(), meta.at("seed").get<std::uint64_t>()};
    return StateDataset(std::move(states), std::move(source), names);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(meta_path.string() + ": " + e.what());
  }
}

// --- Shapley values over a characteristic function ---------------------------

ShapleyValues shapley_exact(const CharacteristicFn& v, int n) {
  if (n < 1) throw ContractError("shapley_exact: need at least one feature");
  if (n > kMaxExactFeatures) {
    throw ContractError(fmt::format("shapley_exact: {} features exceeds the exact limit of {}; use shapley_sampled",
                                    n, kMaxExactFeatures));
  }
  const std::uint32_t count = 1u << n;
  std::vector<double> values(count);
  for (std::uint32_t mask = 0; mask < count; ++mask) values[mask] = v(Coalition{mask});

  // weight[s] = s! (n - s - 1)! / n! = 1 / (n * binom(n - 1, s))
  std::vector<double> weight(n);
  double binom = 1.0;
  for (int s = 0; s < n; ++s) {
    weight[s] = 1.0 / (static_cast<double>(n) * binom);
    binom = binom * static_cast<double>(n - 1 - s) / static_cast<double>(s + 1);
  }

  ShapleyValues out;
  out.phi.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const std::uint32_t bit = 1u << i;
    double acc = 0.0;
    for (std::uint32_t mask = 0; mask < count; ++mask) {
      if (mask & bit) continue;
      acc += weight[__builtin_popcount(mask)] * (values[mask | bit] - values[mask]);
    }
    out.phi[i] = acc;
  }
  out.v_full = values[count - 1];
  out.v_empty = values[0];
  return out;
}

ShapleyValues shapley_sampled(const CharacteristicFn& v, int n, int permutations, std::uint64_t seed,
                              bool exhaustive) {
  if (n < 1 || n > kMaxCoalitionFeatures) throw ContractError("shapley_sampled: unsupported feature count");
  if (!exhaustive && permutations < 1) throw ContractError("shapley_sampled: permutations must be at least 1");

  std::unordered_map<std::uint32_t, double> memo;
  auto value = [&](Coalition c) {
    auto it = memo.find(c.members);
    if (it != memo.end()) return it->second;
    const double x = v(c);
    memo.emplace(c.members, x);
    return x;
  };

  ShapleyValues out;
  out.phi.assign(n, 0.0);
  out.v_empty = value(Coalition::empty());
  out.v_full = value(Coalition::full(n));

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto accumulate = [&] {
    Coalition c = Coalition::empty();
    double prev = out.v_empty;
    for (int feature : order) {
      c = c.with(feature);
      const double cur = value(c);
      out.phi[feature] += cur - prev;
      prev = cur;
    }
  };

  long visited = 0;
  if (exhaustive) {
    do {
      accumulate();
      ++visited;
    } while (std::next_permutation(order.begin(), order.end()));
  } else {
    Rng rng(seed);
    for (int p = 0; p < permutations; ++p) {
      std::iota(order.begin(), order.end(), 0);
      for (int k = n - 1; k > 0; --k) std::swap(order[k], order[rng.uniform_int(k + 1)]);
      accumulate();
      ++visited;
    }
  }
  for (double& phi : out.phi) phi /= static_cast<double>(visited);
  return out;
}

// --- On-manifold characteristic ----------------------------------------------

OnManifoldCharacteristic::OnManifoldCharacteristic(const StateDataset& dataset, const Policy& policy, int knn_k)
    : dataset_(dataset), policy_(policy), knn_k_(knn_k) {
  if (knn_k < 1 || static_cast<std::size_t>(knn_k) > dataset.size()) {
    throw ContractError(fmt::format("knn_k = {} must lie in [1, {}]", knn_k, dataset.size()));
  }
  if (policy.feature_count() != dataset.feature_count()) {
    throw ContractError("OnManifoldCharacteristic: policy and dataset feature counts differ");
  }
  if (dataset.feature_count() > kMaxCoalitionFeatures) throw ContractError("too many features for coalitions");
  outputs_.resize(dataset.size());
  double total = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    outputs_[i] = policy.scalarize(dataset.state(i));
    total += outputs_[i];
  }
  baseline_ = total / static_cast<double>(dataset.size());
}

double OnManifoldCharacteristic::value(std::span<const double> state, Coalition coalition) const {
  const int n = dataset_.feature_count();
  if (static_cast<int>(state.size()) != n) throw ContractError("characteristic: state dimension mismatch");
  if (coalition == Coalition::full(n)) return policy_.scalarize(state);
  if (coalition == Coalition::empty()) return baseline_;

  std::vector<int> observed;
  std::vector<double> inv_std;
  for (int d = 0; d < n; ++d) {
    if (coalition.contains(d)) {
      observed.push_back(d);
      inv_std.push_back(1.0 / dataset_.stddev()[d]);
    }
  }
  thread_local std::vector<std::pair<double, std::size_t>> scored;
  scored.resize(dataset_.size());
  for (std::size_t r = 0; r < dataset_.size(); ++r) {
    const auto x = dataset_.state(r);
    double dist = 0.0;
    for (std::size_t k = 0; k < observed.size(); ++k) {
      const double diff = (x[observed[k]] - state[observed[k]]) * inv_std[k];
      dist += diff * diff;
    }
    scored[r] = {dist, r};
  }
  const auto kth = scored.begin() + knn_k_;
  std::nth_element(scored.begin(), kth - 1, scored.end());
  std::sort(scored.begin(), kth);
  double total = 0.0;
  for (auto it = scored.begin(); it != kth; ++it) total += outputs_[it->second];
  return total / static_cast<double>(knn_k_);
}

CharacteristicFn OnManifoldCharacteristic::bind(std::span<const double> state) const {
  State copy(state.begin(), state.end());
  return [this, copy = std::move(copy)](Coalition c) { return value(copy, c); };
}

double characteristic_value(const StateDataset& dataset, const Policy& policy, std::span<const double> state,
                            Coalition coalition, int knn_k) {
  return OnManifoldCharacteristic(dataset, policy, knn_k).value(state, coalition);
}

// --- Records -----------------------------------------------------------------

const char* to_string(ShapleyMode mode) { return mode == ShapleyMode::kExact ? "exact" : "sampled"; }

ShapleyMode shapley_mode_from_string(const std::string& name) {
  if (name == "exact") return ShapleyMode::kExact;
  if (name == "sampled") return ShapleyMode::kSampled;
  throw ConfigError("unknown Shapley mode '" + name + "' (expected exact or sampled)");
}

RecordStore::RecordStore(std::vector<ShapleyRecord> records, nlohmann::ordered_json metadata)
    : records_(std::move(records)), metadata_(std::move(metadata)) {
  for (const auto& r : records_) {
    if (r.shapley.size() != r.state.size()) throw ContractError("RecordStore: Shapley/state length mismatch");
    if (r.state.size() != records_.front().state.size()) throw ContractError("RecordStore: ragged records");
  }
}

int RecordStore::feature_count() const {
  if (records_.empty()) throw ContractError("RecordStore: empty store");
  return static_cast<int>(records_.front().state.size());
}

std::size_t RecordStore::nearest_index(std::span<const double> phi) const {
  if (records_.empty()) throw ContractError("inverse_lookup: empty record store");
  if (static_cast<int>(phi.size()) != feature_count()) throw ContractError("inverse_lookup: dimension mismatch");
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < records_.size(); ++r) {
    double dist = 0.0;
    for (std::size_t d = 0; d < phi.size(); ++d) {
      const double diff = records_[r].shapley[d] - phi[d];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = r;
    }
  }
  return best;
}

const ShapleyRecord& inverse_lookup(const RecordStore& store, std::span<const double> phi) {
  return store[store.nearest_index(phi)];
}

const ShapleyRecord& inverse_lookup(const RecordStore& store, std::span<const double> phi, std::size_t origin) {
  if (origin < store.size() && std::ranges::equal(store[origin].shapley, phi)) return store[origin];
  return inverse_lookup(store, phi);
}

namespace {

ShapleyRecord make_record(std::span<const double> state, const Policy& policy, ShapleyValues values) {
  ShapleyRecord r;
  r.state.assign(state.begin(), state.end());
  r.shapley = std::move(values.phi);
  r.action = policy.act(state);
  r.v_full = values.v_full;
  r.v_empty = values.v_empty;
  return r;
}

ShapleyRecord explain_one(const OnManifoldCharacteristic& characteristic, const Policy& policy,
                          std::span<const double> state, const ExplainSettings& settings, std::uint64_t seed) {
  const int n = characteristic.feature_count();
  CharacteristicFn v = characteristic.bind(state);
  if (settings.mode == ShapleyMode::kExact) return make_record(state, policy, shapley_exact(v, n));
  return make_record(state, policy, shapley_sampled(v, n, settings.permutations, seed));
}

}  // namespace

ShapleyRecord shapley_exact(const StateDataset& dataset, const Policy& policy, std::span<const double> state,
                            int knn_k) {
  OnManifoldCharacteristic characteristic(dataset, policy, knn_k);
  return make_record(state, policy, shapley_exact(characteristic.bind(state), dataset.feature_count()));
}

ShapleyRecord shapley_sampled(const StateDataset& dataset, const Policy& policy, std::span<const double> state,
                              int knn_k, int permutations, std::uint64_t seed) {
  OnManifoldCharacteristic characteristic(dataset, policy, knn_k);
  return make_record(state, policy,
                     shapley_sampled(characteristic.bind(state), dataset.feature_count(), permutations, seed));
}

RecordStore explain_states(const StateDataset& dataset, const Policy& policy, const std::vector<State>& states,
                           const ExplainSettings& settings) {
  if (states.empty()) throw ContractError("explain_states: no states to explain");
  if (settings.mode == ShapleyMode::kExact && dataset.feature_count() > kMaxExactFeatures) {
    throw ContractError("explain_states: too many features for exact mode; use sampled");
  }
  if (settings.mode == ShapleyMode::kSampled && settings.permutations < 1) {
    throw ContractError("explain_states: permutations must be at least 1");
  }
  const OnManifoldCharacteristic characteristic(dataset, policy, settings.knn_k);

  std::vector<ShapleyRecord> records(states.size());
  unsigned workers = settings.threads > 0 ? settings.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, states.size());

  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](unsigned w) {
    try {
      for (std::size_t i = w; i < states.size(); i += workers) {
        records[i] = explain_one(characteristic, policy, states[i], settings, Rng::mix(settings.seed, i));
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  nlohmann::ordered_json meta;
  meta["mode"] = to_string(settings.mode);
  meta["knn_k"] = settings.knn_k;
  meta["permutations"] = settings.mode == ShapleyMode::kSampled ? settings.permutations : 0;
  meta["seed"] = settings.seed;
  meta["baseline"] = characteristic.baseline();
  meta["dataset"] = {{"env", dataset.source().env_name},
                     {"policy_id", dataset.source().policy_id},
                     {"trajectory_count", dataset.source().trajectory_count},
                     {"seed", dataset.source().seed},
                     {"state_count", dataset.size()}};
  return RecordStore(std::move(records), std::move(meta));
}

void save_records(const RecordStore& store, const std::vector<std::string>& feature_names,
                  const std::filesystem::path& csv_path, const std::filesystem::path& meta_path) {
  const int n = store.feature_count();
  if (static_cast<int>(feature_names.size()) != n) throw ContractError("save_records: feature name count mismatch");
  std::string csv;
  for (const auto& name : feature_names) csv += name + ",";
  for (const auto& name : feature_names) csv += "phi_" + name + ",";
  csv += "action,v_full,v_empty\n";
  for (const auto& r : store.records()) {
    for (double v : r.state) csv += format_real(v) + ",";
    for (double v : r.shapley) csv += format_real(v) + ",";
    csv += fmt::format("{},{},{}\n", r.action, format_real(r.v_full), format_real(r.v_empty));
  }
  write_text_file(csv_path, csv);
  nlohmann::ordered_json meta = store.metadata();
  meta["feature_names"] = feature_names;
  meta["record_count"] = store.size();
  write_text_file(meta_path, meta.dump(2) + "\n");
}

RecordStore load_records(const std::filesystem::path& csv_path, const std::filesystem::path& meta_path) {
  nlohmann::ordered_json meta = read_ordered_json_file(meta_path);
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(csv_path.string() + ": empty file");
  const auto header = split_csv_line(line);
  if (header.size() < 5 || (header.size() - 3) % 2 != 0) throw IoError(csv_path.string() + ": unexpected header");
  const std::size_t n = (header.size() - 3) / 2;
  std::vector<ShapleyRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw IoError(fmt::format("{}:{}: wrong column count", csv_path.string(), line_no));
    ShapleyRecord r;
    for (std::size_t d = 0; d < n; ++d) r.state.push_back(parse_real(cells[d], csv_path, line_no));
    for (std::size_t d = 0; d < n; ++d) r.shapley.push_back(parse_real(cells[n + d], csv_path, line_no));
    r.action = static_cast<int>(parse_real(cells[2 * n], csv_path, line_no));
    r.v_full = parse_real(cells[2 * n + 1], csv_path, line_no);
    r.v_empty = parse_real(cells[2 * n + 2], csv_path, line_no);
    records.push_back(std::move(r));
  }
  return RecordStore(std::move(records), std::move(meta));
}

}  // namespace shapdistill
