#include <cmath>

#include <gtest/gtest.h>

#include "shapdistill/env.hpp"
#include "shapdistill/errors.hpp"
#include "shapdistill/policy.hpp"
#include "shapdistill/policy_io.hpp"
#include "shapdistill/rng.hpp"
#include "test_support.hpp"

namespace shapdistill {
namespace {

Mlp constant_output_net(int inputs, std::vector<double> outputs) {
  Mlp net({inputs, static_cast<int>(outputs.size())});
  for (std::size_t a = 0; a < outputs.size(); ++a) net.bias(0)[a] = outputs[a];
  return net;
}

FunctionPolicy fixed_probs(int n, std::vector<double> probs) {
  const int k = static_cast<int>(probs.size());
  return FunctionPolicy::stochastic(n, k, [probs](std::span<const double>) { return probs; });
}

TEST(Act, QNetworkTakesTheArgmax) {
  QNetworkPolicy q(constant_output_net(4, {0.2, 0.9}));
  EXPECT_EQ(act(q, State{0, 0, 0, 0}), 1);
}

TEST(Act, StochasticTieGoesToLowestIndex) {
  EXPECT_EQ(act(fixed_probs(2, {0.5, 0.5}), State{0, 0}), 0);
  EXPECT_EQ(argmax(std::vector<double>{1.0, 3.0, 3.0}), 1);
}

TEST(Act, DimensionMismatchIsAContractError) {
  QNetworkPolicy q(constant_output_net(4, {0.2, 0.9}));
  EXPECT_THROW(act(q, State{0, 0}), ContractError);
  EXPECT_THROW(scalarize(q, State{0, 0, 0}), ContractError);
}

TEST(ActionProbs, DeterministicIsOneHot) {
  const auto det = FunctionPolicy::deterministic(2, 2, [](std::span<const double>) { return 1; });
  EXPECT_EQ(action_probs(det, State{0, 0}), (std::vector<double>{0.0, 1.0}));
}

TEST(ActionProbs, SoftmaxOfEqualLogitsIsUniform) {
  SoftmaxPolicy sm(constant_output_net(3, {0.0, 0.0}));
  const auto p = action_probs(sm, State{1, 2, 3});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(ActionProbs, SoftmaxIsAlwaysASimplexAndConsistentWithAct) {
  Rng rng(11);
  SoftmaxPolicy sm(Mlp::random({3, 8, 4}, rng));
  for (int trial = 0; trial < 100; ++trial) {
    const State s{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    const auto p = action_probs(sm, s);
    double total = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
    EXPECT_EQ(act(sm, s), argmax(p));
    EXPECT_EQ(act(sm, s), act(sm, s));
  }
}

TEST(Scalarize, DeterministicLabel) {
  const auto det = FunctionPolicy::deterministic(2, 2, [](std::span<const double>) { return 1; });
  EXPECT_EQ(scalarize(det, State{0, 0}), 1.0);
}

TEST(Scalarize, StochasticExpectedIndex) {
  EXPECT_DOUBLE_EQ(scalarize(fixed_probs(2, {0.25, 0.75}), State{0, 0}), 0.75);
  EXPECT_DOUBLE_EQ(scalarize(fixed_probs(2, {1.0, 0.0}), State{0, 0}), 0.0);
}

TEST(Scalarize, StaysWithinActionRange) {
  Rng rng(5);
  SoftmaxPolicy sm(Mlp::random({2, 6, 3}, rng));
  QNetworkPolicy q(Mlp::random({2, 6, 3}, rng));
  for (int trial = 0; trial < 200; ++trial) {
    const State s{rng.uniform(-3, 3), rng.uniform(-3, 3)};
    for (const Policy* p : {static_cast<const Policy*>(&sm), static_cast<const Policy*>(&q)}) {
      const double v = scalarize(*p, s);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 2.0);
    }
  }
}

TEST(InterpretableAct, PositiveBoundarySelectsFirstAction) {
  InterpretablePolicy p(2, {Hyperplane{0, 1, {1.0, 0.0}, 0.0}});
  EXPECT_EQ(interpretable_act(p, State{0.3, 0.0}), 0);
  EXPECT_EQ(interpretable_act(p, State{-0.3, 0.0}), 1);
}

TEST(InterpretableAct, ZeroBoundaryFallsToSecondAction) {
  InterpretablePolicy p(2, {Hyperplane{0, 1, {1.0, 1.0}, 0.0}});
  EXPECT_EQ(interpretable_act(p, State{0.5, -0.5}), 1);
}

TEST(InterpretableAct, PublishedCartPoleBoundary) {
  // f01 = -0.5 x - 0.687 x_dot - 1.09 theta - theta_dot - 0.018
  const Hyperplane h{0, 1, {-0.5, -0.687, -1.09, -1.0}, -0.018};
  const State s{0, 0, -0.1, 0};
  EXPECT_NEAR(h.evaluate(s), 0.091, 1e-12);
  EXPECT_EQ(interpretable_act(InterpretablePolicy(2, {h}), s), 0);
}

TEST(InterpretableAct, ThreeActionVoting) {
  // f01 < 0 votes 1, f02 > 0 votes 0, f12 > 0 votes 1: tallies (1, 2, 0).
  const State s{1.0};
  InterpretablePolicy p(3, {Hyperplane{0, 1, {-1.0}, 0.0}, Hyperplane{0, 2, {1.0}, 0.0},
                            Hyperplane{1, 2, {1.0}, 0.0}});
  EXPECT_EQ(interpretable_act(p, s), 1);
}

TEST(InterpretableAct, ThreeWayTieGoesToLowestIndex) {
  // f01 > 0 votes 0, f02 < 0 votes 2, f12 > 0 votes 1: one vote each.
  InterpretablePolicy p(3, {Hyperplane{0, 1, {1.0}, 0.0}, Hyperplane{0, 2, {-1.0}, 0.0},
                            Hyperplane{1, 2, {1.0}, 0.0}});
  EXPECT_EQ(interpretable_act(p, State{1.0}), 0);
}

TEST(InterpretableAct, PositiveScalingNeverChangesTheAction) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Hyperplane> planes, scaled;
    for (int i = 0; i < 3; ++i) {
      for (int j = i + 1; j < 3; ++j) {
        Hyperplane h{i, j, {rng.uniform(-1, 1), rng.uniform(-1, 1)}, rng.uniform(-1, 1)};
        planes.push_back(h);
        const double c = std::exp(rng.uniform(-5, 5));
        for (double& w : h.w) w *= c;
        h.b *= c;
        scaled.push_back(h);
      }
    }
    InterpretablePolicy a(3, planes), b(3, scaled);
    for (int k = 0; k < 50; ++k) {
      const State s{rng.uniform(-3, 3), rng.uniform(-3, 3)};
      EXPECT_EQ(interpretable_act(a, s), interpretable_act(b, s));
    }
  }
}

TEST(InterpretablePolicy, RejectsIncompletePairSets) {
  EXPECT_THROW(InterpretablePolicy(3, {Hyperplane{0, 1, {1.0}, 0.0}, Hyperplane{0, 2, {1.0}, 0.0}}), ContractError);
  EXPECT_THROW(InterpretablePolicy(2, {Hyperplane{0, 1, {0.0, 0.0}, 1.0}}), ContractError);
  EXPECT_THROW(InterpretablePolicy(3, {Hyperplane{0, 1, {1.0}, 0.0}, Hyperplane{0, 2, {1.0, 1.0}, 0.0},
                                       Hyperplane{1, 2, {1.0}, 0.0}}),
               ContractError);
}

TEST(Hyperplane, FormulaRendering) {
  const Hyperplane h{0, 1, {-0.5, -0.687, -1.09, -1.0}, -0.018};
  EXPECT_EQ(h.formula({"x", "x_dot", "theta", "theta_dot"}),
            "f01 = -0.5 x - 0.687 x_dot - 1.09 theta - theta_dot - 0.018");
  const Hyperplane n = Hyperplane{0, 1, {1.0, -4.0}, 2.0}.normalized_to(1);
  EXPECT_DOUBLE_EQ(n.w[0], 0.25);
  EXPECT_DOUBLE_EQ(n.w[1], -1.0);
  EXPECT_DOUBLE_EQ(n.b, 0.5);
}

TEST(PolicyIo, RoundTripsEveryModel) {
  testing::TempDir dir;
  Rng rng(9);
  QNetworkPolicy q(Mlp::random({4, 5, 2}, rng), {"a", "b", "c", "d"});
  Mlp scaled = Mlp::random({2, 3, 2}, rng);
  scaled.input_scale()[1] = 10.0;
  SoftmaxPolicy sm(scaled);
  InterpretablePolicy ip(2, {Hyperplane{0, 1, {0.25, -1.0}, 0.125}}, {"x", "x_dot"});

  for (const Policy* p : {static_cast<const Policy*>(&q), static_cast<const Policy*>(&sm),
                          static_cast<const Policy*>(&ip)}) {
    const auto path = dir / "p.json";
    save_policy(*p, path);
    const auto loaded = load_policy(path);
    EXPECT_EQ(loaded->kind(), p->kind());
    EXPECT_EQ(loaded->feature_count(), p->feature_count());
    EXPECT_EQ(loaded->feature_names(), p->feature_names());
    for (int trial = 0; trial < 50; ++trial) {
      State s(p->feature_count());
      for (double& v : s) v = rng.uniform(-2, 2);
      EXPECT_EQ(loaded->act(s), p->act(s));
      EXPECT_EQ(loaded->action_probs(s), p->action_probs(s));
    }
    // Saving the loaded copy reproduces the same bytes.
    const auto again = dir / "again.json";
    save_policy(*loaded, again);
    EXPECT_EQ(testing::slurp(path), testing::slurp(again));
  }
}

TEST(PolicyIo, MissingOrBrokenFilesAreIoErrors) {
  testing::TempDir dir;
  EXPECT_THROW(load_policy(dir / "absent.json"), IoError);
  write_text_file(dir / "broken.json", "{not json");
  EXPECT_THROW(load_policy(dir / "broken.json"), IoError);
}

}  // namespace
}  // namespace shapdistill
