#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <gtest/gtest.h>

#include "shapdistill/errors.hpp"
#include "shapdistill/rng.hpp"
#include "shapdistill/shapley.hpp"
#include "test_support.hpp"

namespace shapdistill {
namespace {

// Average marginal contribution over all n! orderings, written directly from
// the permutation definition of the Shapley value.
std::vector<double> brute_force_shapley(const CharacteristicFn& v, int n) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(n, 0.0);
  long count = 0;
  do {
    Coalition c = Coalition::empty();
    for (int i : order) {
      const double before = v(c);
      c = c.with(i);
      phi[i] += v(c) - before;
    }
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  for (double& p : phi) p /= static_cast<double>(count);
  return phi;
}

// Random table game: every coalition gets an independent value.
CharacteristicFn random_game(int n, Rng& rng) {
  auto table = std::make_shared<std::vector<double>>(1u << n);
  for (double& x : *table) x = rng.uniform(-10, 10);
  return [table](Coalition c) { return (*table)[c.members]; };
}

// Exact two-player game with v({}) = 0, v({1}) = 1, v({2}) = 2, v({1,2}) = 4.
const CharacteristicFn kSmallGame = [](Coalition c) {
  static const double values[4] = {0.0, 1.0, 2.0, 4.0};
  return values[c.members];
};

TEST(ShapleyExact, SmallTwoPlayerGame) {
  const ShapleyValues r = shapley_exact(kSmallGame, 2);
  EXPECT_NEAR(r.phi[0], 1.5, 1e-12);
  EXPECT_NEAR(r.phi[1], 2.5, 1e-12);
  EXPECT_NEAR(r.phi[0] + r.phi[1], 4.0, 1e-12);
  EXPECT_EQ(r.v_full, 4.0);
  EXPECT_EQ(r.v_empty, 0.0);
}

TEST(ShapleyExact, CardinalityGameIsSymmetric) {
  const ShapleyValues r = shapley_exact([](Coalition c) { return double(c.size()); }, 3);
  for (double p : r.phi) EXPECT_NEAR(p, 1.0, 1e-12);
}

TEST(ShapleyExact, IgnoredFeatureGetsZero) {
  const ShapleyValues r =
      shapley_exact([](Coalition c) { return (c.contains(0) ? 2.0 : 0.0) + (c.contains(2) ? 5.0 : 0.0); }, 3);
  EXPECT_NEAR(r.phi[1], 0.0, 1e-12);
  EXPECT_NEAR(r.phi[0], 2.0, 1e-12);
  EXPECT_NEAR(r.phi[2], 5.0, 1e-12);
}

TEST(ShapleyExact, TooManyFeaturesPointsToSampling) {
  try {
    shapley_exact([](Coalition) { return 0.0; }, kMaxExactFeatures + 1);
    FAIL() << "expected a contract error";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("shapley_sampled"), std::string::npos);
  }
}

TEST(ShapleyProperties, MatchesBruteForceOnRandomGames) {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(4));
    const CharacteristicFn v = random_game(n, rng);
    const ShapleyValues exact = shapley_exact(v, n);
    const auto oracle = brute_force_shapley(v, n);
    for (int i = 0; i < n; ++i) EXPECT_NEAR(exact.phi[i], oracle[i], 1e-9);
    double sum = 0.0;
    for (double p : exact.phi) sum += p;
    EXPECT_NEAR(sum, exact.v_full - exact.v_empty, 1e-9);
  }
}

TEST(ShapleyProperties, SymmetricFeaturesGetEqualValues) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(3));
    // Values depend on the coalition only through features >= 2 and on how
    // many of features 0 and 1 it holds, so swapping 0 and 1 changes nothing.
    auto table = std::make_shared<std::map<std::pair<int, std::uint32_t>, double>>();
    auto v = [table, &rng](Coalition c) {
      const int k = int(c.contains(0)) + int(c.contains(1));
      const auto key = std::make_pair(k, c.members >> 2);
      auto it = table->find(key);
      if (it == table->end()) it = table->emplace(key, rng.uniform(-5, 5)).first;
      return it->second;
    };
    const ShapleyValues r = shapley_exact(v, n);
    EXPECT_NEAR(r.phi[0], r.phi[1], 1e-9);
  }
}

TEST(ShapleyProperties, DummyFeatureGetsZeroInRandomGames) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(3));
    const int dummy = static_cast<int>(rng.uniform_int(n));
    const CharacteristicFn base = random_game(n, rng);
    auto v = [base, dummy](Coalition c) { return base({c.members & ~(1u << dummy)}); };
    EXPECT_NEAR(shapley_exact(v, n).phi[dummy], 0.0, 1e-9);
  }
}

TEST(ShapleyProperties, Linearity) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(4));
    const CharacteristicFn v1 = random_game(n, rng), v2 = random_game(n, rng);
    const double a = rng.uniform(-3, 3);
    const auto sum = shapley_exact([&](Coalition c) { return v1(c) + a * v2(c); }, n);
    const auto s1 = shapley_exact(v1, n), s2 = shapley_exact(v2, n);
    for (int i = 0; i < n; ++i) EXPECT_NEAR(sum.phi[i], s1.phi[i] + a * s2.phi[i], 1e-9);
  }
}

TEST(ShapleySampled, ExhaustiveModeEqualsExact) {
  Rng rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(5));
    const CharacteristicFn v = random_game(n, rng);
    const auto exact = shapley_exact(v, n);
    const auto all = shapley_sampled(v, n, 0, 0, true);
    for (int i = 0; i < n; ++i) EXPECT_NEAR(all.phi[i], exact.phi[i], 1e-12);
  }
}

TEST(ShapleySampled, SeededAndDeterministic) {
  Rng rng(12);
  const CharacteristicFn v = random_game(4, rng);
  EXPECT_EQ(shapley_sampled(v, 4, 100, 5).phi, shapley_sampled(v, 4, 100, 5).phi);
}

TEST(ShapleySampled, ConvergesOnTheSmallGame) {
  const auto r = shapley_sampled(kSmallGame, 2, 10000, 1);
  EXPECT_NEAR(r.phi[0], 1.5, 0.05);
  EXPECT_NEAR(r.phi[1], 2.5, 0.05);
  // Each permutation satisfies efficiency exactly, so the average does too.
  EXPECT_NEAR(r.phi[0] + r.phi[1], 4.0, 1e-12);
}

// Stochastic policy whose scalarized output is the second feature / 10.
FunctionPolicy second_feature_over_ten() {
  return FunctionPolicy::stochastic(2, 2, [](std::span<const double> s) {
    const double p = std::clamp(s[1] / 10.0, 0.0, 1.0);
    return std::vector<double>{1.0 - p, p};
  });
}

StateDataset grid_dataset() {
  return StateDataset({{0, 0}, {0, 10}, {5, 0}, {5, 10}}, DatasetSource{"grid", "test", 1, 0});
}

TEST(Characteristic, FullCoalitionBypassesTheEstimator) {
  const auto ds = grid_dataset();
  const auto policy = second_feature_over_ten();
  const State s{0.3, 7.0};
  EXPECT_EQ(characteristic_value(ds, policy, s, Coalition::full(2), 1), scalarize(policy, s));
}

TEST(Characteristic, EmptyCoalitionIsTheDatasetMean) {
  const auto ds = grid_dataset();
  const auto policy = FunctionPolicy::deterministic(2, 2, [](std::span<const double> s) { return s[1] > 5 ? 1 : 0; });
  // Dataset scalarizations are (0, 1, 0, 1).
  EXPECT_DOUBLE_EQ(characteristic_value(ds, policy, State{9, 9}, Coalition::empty(), 2), 0.5);
}

TEST(Characteristic, NearestNeighboursInTheCoalitionSubspace) {
  const auto ds = grid_dataset();
  const auto policy = second_feature_over_ten();
  const State s{0.1, 99.0};
  // Oracle: normalized distance on feature 0 only; std of {0,0,5,5} is 2.5.
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t r = 0; r < ds.size(); ++r) d.push_back({std::abs(s[0] - ds.state(r)[0]) / 2.5, r});
  std::sort(d.begin(), d.end());
  const double expected = (ds.state(d[0].second)[1] + ds.state(d[1].second)[1]) / 20.0;
  EXPECT_DOUBLE_EQ(expected, 0.5);
  EXPECT_DOUBLE_EQ(characteristic_value(ds, policy, s, Coalition::empty().with(0), 2), expected);
}

TEST(Characteristic, KnnOutOfRangeIsAContractError) {
  const auto ds = grid_dataset();
  const auto policy = second_feature_over_ten();
  EXPECT_THROW(characteristic_value(ds, policy, State{0, 0}, Coalition::empty().with(0), 0), ContractError);
  EXPECT_THROW(characteristic_value(ds, policy, State{0, 0}, Coalition::empty().with(0), 5), ContractError);
}

TEST(Dataset, ConstantFeatureGetsUnitStd) {
  const StateDataset ds({{1, 3}, {2, 3}, {3, 3}}, DatasetSource{});
  EXPECT_EQ(ds.stddev()[1], 1.0);
  EXPECT_NEAR(ds.stddev()[0], std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_EQ(ds.mean()[0], 2.0);
}

TEST(Dataset, SizeMatchesTheRollout) {
  const EnvSpec env = make_env("CartPole");
  const auto right = FunctionPolicy::deterministic(4, 2, [](std::span<const double>) { return 1; });
  const Trajectory t = rollout(env, right, 3);
  const StateDataset ds = build_dataset(env, right, 1, 3);
  EXPECT_EQ(ds.size(), t.size());
  EXPECT_LT(ds.size(), 100u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_TRUE(std::equal(t.transitions[i].state.begin(), t.transitions[i].state.end(), ds.state(i).begin()));
  }
}

TEST(Dataset, SeededBuildsAreIdenticalAndRoundTrip) {
  const EnvSpec env = make_env("MountainCar");
  const auto policy = FunctionPolicy::deterministic(2, 2, [](std::span<const double> s) { return s[1] >= 0 ? 1 : 0; });
  const StateDataset a = build_dataset(env, policy, 3, 9), b = build_dataset(env, policy, 3, 9);
  EXPECT_EQ(a.states(), b.states());
  EXPECT_THROW(build_dataset(env, policy, 0, 9), ContractError);

  testing::TempDir dir;
  save_dataset(a, dir / "d.csv", dir / "d.json");
  const StateDataset c = load_dataset(dir / "d.csv", dir / "d.json");
  EXPECT_EQ(c.states(), a.states());
  EXPECT_EQ(c.mean(), a.mean());
  EXPECT_EQ(c.stddev(), a.stddev());
  EXPECT_EQ(c.source().seed, 9u);
  EXPECT_EQ(c.feature_names(), env.feature_names);
}

// A small dataset from a random Q-network on CartPole, shared by the
// explanation tests below.
struct ExplainFixture {
  EnvSpec env = make_env("CartPole");
  Rng rng{31};
  QNetworkPolicy policy{Mlp::random({4, 16, 2}, rng)};
  StateDataset ds = build_dataset(env, policy, 5, 0);

  std::vector<State> first(std::size_t count) const {
    std::vector<State> out;
    for (std::size_t i = 0; i < count && i < ds.size(); ++i) out.emplace_back(ds.state(i).begin(), ds.state(i).end());
    return out;
  }
};

TEST(Explain, EveryExactRecordSatisfiesEfficiency) {
  ExplainFixture f;
  ExplainSettings settings;
  const RecordStore store = explain_states(f.ds, f.policy, f.first(40), settings);
  ASSERT_EQ(store.size(), 40u);
  for (const ShapleyRecord& r : store.records()) {
    const double sum = std::accumulate(r.shapley.begin(), r.shapley.end(), 0.0);
    EXPECT_LE(std::abs(sum - (r.v_full - r.v_empty)), 1e-6);
    EXPECT_EQ(r.action, f.policy.act(r.state));
    EXPECT_EQ(r.v_full, scalarize(f.policy, r.state));
  }
}

TEST(Explain, SingleStateStore) {
  ExplainFixture f;
  const RecordStore store = explain_states(f.ds, f.policy, f.first(1), ExplainSettings{});
  ASSERT_EQ(store.size(), 1u);
  const auto& r = store[0];
  EXPECT_NEAR(std::accumulate(r.shapley.begin(), r.shapley.end(), 0.0), r.v_full - r.v_empty, 1e-6);
}

TEST(Explain, DuplicatesAreKept) {
  ExplainFixture f;
  auto states = f.first(1);
  states.push_back(states[0]);
  const RecordStore store = explain_states(f.ds, f.policy, states, ExplainSettings{});
  ASSERT_EQ(store.size(), 2u);
  EXPECT_EQ(store[0].shapley, store[1].shapley);
}

TEST(Explain, ExactAgreesWithBruteForceOnThePolicyGame) {
  ExplainFixture f;
  const OnManifoldCharacteristic ch(f.ds, f.policy, 20);
  for (const State& s : f.first(5)) {
    const auto oracle = brute_force_shapley(ch.bind(s), 4);
    const ShapleyRecord r = shapley_exact(f.ds, f.policy, s, 20);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(r.shapley[i], oracle[i], 1e-9);
  }
}

TEST(Explain, ThreadCountDoesNotChangeResults) {
  ExplainFixture f;
  ExplainSettings one, four;
  one.threads = 1;
  four.threads = 4;
  for (ShapleyMode mode : {ShapleyMode::kExact, ShapleyMode::kSampled}) {
    one.mode = four.mode = mode;
    one.permutations = four.permutations = 30;
    const RecordStore a = explain_states(f.ds, f.policy, f.first(25), one);
    const RecordStore b = explain_states(f.ds, f.policy, f.first(25), four);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].shapley, b[i].shapley);
  }
}

TEST(InverseLookup, StoredVectorsMapBackToTheirRecords) {
  ExplainFixture f;
  const RecordStore store = explain_states(f.ds, f.policy, f.first(30), ExplainSettings{});
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::size_t found = store.nearest_index(store[i].shapley);
    // Duplicate vectors resolve to the first copy.
    EXPECT_EQ(store[found].shapley, store[i].shapley);
    EXPECT_LE(found, i);
    EXPECT_EQ(&inverse_lookup(store, store[i].shapley), &store[found]);
  }
}

TEST(InverseLookup, OriginHintReturnsTheRecordItself) {
  RecordStore store({ShapleyRecord{{0.0}, {1.0}, 0, 0, 0}, ShapleyRecord{{7.0}, {1.0}, 1, 0, 0},
                     ShapleyRecord{{9.0}, {2.0}, 1, 0, 0}});
  EXPECT_EQ(&inverse_lookup(store, store[1].shapley), &store[0]);
  for (std::size_t i = 0; i < store.size(); ++i) EXPECT_EQ(&inverse_lookup(store, store[i].shapley, i), &store[i]);
  // A hint that does not match falls back to the nearest vector.
  EXPECT_EQ(&inverse_lookup(store, std::vector<double>{1.9}, 0), &store[2]);
}

TEST(InverseLookup, NearestWithLowestIndexTieBreak) {
  RecordStore store({ShapleyRecord{{0.0}, {1.0}, 0, 0, 0}, ShapleyRecord{{1.0}, {3.0}, 1, 0, 0},
                     ShapleyRecord{{2.0}, {5.0}, 1, 0, 0}});
  EXPECT_EQ(store.nearest_index(std::vector<double>{3.0 + 1e-9}), 1u);
  EXPECT_EQ(store.nearest_index(std::vector<double>{2.0}), 0u);
  EXPECT_EQ(inverse_lookup(store, std::vector<double>{4.0}).state[0], 1.0);
  EXPECT_THROW(inverse_lookup(RecordStore{}, std::vector<double>{1.0}), ContractError);
}

TEST(RecordIo, RoundTripIsExactAndByteStable) {
  ExplainFixture f;
  const RecordStore store = explain_states(f.ds, f.policy, f.first(20), ExplainSettings{});
  testing::TempDir dir;
  save_records(store, f.env.feature_names, dir / "r.csv", dir / "r.json");
  const RecordStore back = load_records(dir / "r.csv", dir / "r.json");
  ASSERT_EQ(back.size(), store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    EXPECT_EQ(back[i].state, store[i].state);
    EXPECT_EQ(back[i].shapley, store[i].shapley);
    EXPECT_EQ(back[i].action, store[i].action);
    EXPECT_EQ(back[i].v_full, store[i].v_full);
    EXPECT_EQ(back[i].v_empty, store[i].v_empty);
  }
  save_records(back, f.env.feature_names, dir / "r2.csv", dir / "r2.json");
  EXPECT_EQ(testing::slurp(dir / "r.csv"), testing::slurp(dir / "r2.csv"));
  EXPECT_EQ(testing::slurp(dir / "r.json"), testing::slurp(dir / "r2.json"));
  const std::string header = testing::slurp(dir / "r.csv").substr(0, 80);
  EXPECT_EQ(header.rfind("x,x_dot,theta,theta_dot,phi_x,", 0), 0u);
}

}  // namespace
}  // namespace shapdistill
