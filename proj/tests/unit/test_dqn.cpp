#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "shapdistill/dqn.hpp"
#include "shapdistill/errors.hpp"

namespace shapdistill {
namespace {

TEST(TdTarget, TerminalCutsTheBootstrap) { EXPECT_EQ(td_target(1.0, true, 0.99, 10.0), 1.0); }

TEST(TdTarget, NonTerminalBootstraps) {
  EXPECT_DOUBLE_EQ(td_target(1.0, false, 0.99, 10.0), 10.9);
  EXPECT_EQ(td_target(-1.0, false, 1.0, 0.0), -1.0);
}

TEST(Epsilon, LinearSchedule) {
  DqnConfig cfg;
  cfg.epsilon_start = 1.0;
  cfg.epsilon_end = 0.05;
  cfg.epsilon_decay_steps = 10000;
  EXPECT_EQ(epsilon(0, cfg), 1.0);
  EXPECT_DOUBLE_EQ(epsilon(5000, cfg), 0.525);
  EXPECT_EQ(epsilon(10000, cfg), 0.05);
  EXPECT_EQ(epsilon(999999, cfg), 0.05);
}

TEST(DqnConfig, ValidationCatchesBadValues) {
  DqnConfig cfg;
  cfg.gamma = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = DqnConfig{};
  cfg.epsilon_start = 0.1;
  cfg.epsilon_end = 0.2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = DqnConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(DqnConfig{}.validate());
}

Transition numbered(int k) { return Transition{{double(k)}, 0, double(k), {double(k)}, false, false}; }

TEST(ReplayBuffer, NeverExceedsCapacityAndEvictsOldestFirst) {
  ReplayBuffer buf(5);
  for (int k = 0; k < 13; ++k) {
    buf.push(numbered(k));
    EXPECT_LE(buf.size(), 5u);
    // Contents are always the most recent min(k + 1, 5) items, oldest first.
    const int first = std::max(0, k - 4);
    for (std::size_t i = 0; i < buf.size(); ++i) EXPECT_EQ(buf.at(i).reward, first + static_cast<int>(i));
  }
  EXPECT_THROW(buf.at(5), ContractError);
}

TEST(ReplayBuffer, SamplingIsSeededAndInRange) {
  ReplayBuffer buf(100);
  for (int k = 0; k < 37; ++k) buf.push(numbered(k));
  Rng a(4), b(4);
  const auto ia = buf.sample_indices(64, a);
  EXPECT_EQ(ia, buf.sample_indices(64, b));
  for (auto i : ia) EXPECT_LT(i, 37u);
}

// Central finite differences of the minibatch TD loss against the analytic
// backward pass, on small random networks.
TEST(TdLoss, GradientMatchesFiniteDifferences) {
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    Mlp online = Mlp::random({3, 5, 4, 2}, rng);
    Mlp target = Mlp::random({3, 5, 4, 2}, rng);
    online.input_scale()[2] = 3.0;
    std::vector<Transition> data;
    for (int k = 0; k < 8; ++k) {
      data.push_back({{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)},
                      static_cast<int>(rng.uniform_int(2)), rng.uniform(-1, 1),
                      {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}, k % 3 == 0, false});
    }
    std::vector<const Transition*> batch;
    for (const auto& t : data) batch.push_back(&t);

    MlpGradients grads = online.zero_gradients();
    td_loss(online, target, batch, 0.9, &grads);

    const double h = 1e-6;
    double max_rel = 0.0;
    auto check = [&](double& param, double analytic) {
      const double saved = param;
      param = saved + h;
      const double up = td_loss(online, target, batch, 0.9, nullptr);
      param = saved - h;
      const double down = td_loss(online, target, batch, 0.9, nullptr);
      param = saved;
      const double numeric = (up - down) / (2 * h);
      const double rel = std::abs(numeric - analytic) / std::max(1e-6, std::abs(numeric) + std::abs(analytic));
      max_rel = std::max(max_rel, rel);
    };
    for (std::size_t l = 0; l < online.layer_count(); ++l) {
      for (Eigen::Index r = 0; r < online.weight(l).rows(); ++r) {
        for (Eigen::Index c = 0; c < online.weight(l).cols(); ++c) check(online.weight(l)(r, c), grads.weights[l](r, c));
        check(online.bias(l)[r], grads.biases[l][r]);
      }
    }
    EXPECT_LT(max_rel, 1e-4) << "trial " << trial;
  }
}

DqnConfig tiny_config() {
  DqnConfig cfg;
  cfg.total_steps = 600;
  cfg.learning_starts = 100;
  cfg.batch_size = 16;
  cfg.replay_capacity = 1000;
  cfg.target_sync_interval = 50;
  cfg.hidden_layers = {8};
  cfg.epsilon_decay_steps = 300;
  cfg.seed = 3;
  return cfg;
}

TEST(DqnTrain, ZeroStepsReturnsTheSeededInitialization) {
  const EnvSpec env = make_env("CartPole");
  DqnConfig cfg = tiny_config();
  cfg.total_steps = 0;
  const TrainingResult r = dqn_train(env, cfg);
  Rng init(Rng::mix(cfg.seed, 0));
  EXPECT_TRUE(r.policy.network() == Mlp::random({4, 8, 2}, init));
  EXPECT_TRUE(r.log.empty());
}

TEST(DqnTrain, SameSeedGivesIdenticalWeights) {
  const EnvSpec env = make_env("CartPole");
  const TrainingResult a = dqn_train(env, tiny_config());
  const TrainingResult b = dqn_train(env, tiny_config());
  EXPECT_TRUE(a.policy.network() == b.policy.network());
  std::ostringstream la, lb;
  write_training_log_csv(la, a.log);
  write_training_log_csv(lb, b.log);
  EXPECT_EQ(la.str(), lb.str());

  DqnConfig other = tiny_config();
  other.seed = 4;
  EXPECT_FALSE(dqn_train(env, other).policy.network() == a.policy.network());
}

TEST(DqnTrain, TargetEqualsOnlineRightAfterEverySync) {
  const EnvSpec env = make_env("CartPole");
  const DqnConfig cfg = tiny_config();
  std::vector<long> sync_steps;
  TrainingHooks hooks;
  hooks.on_target_sync = [&](long step, const Mlp& online, const Mlp& target) {
    sync_steps.push_back(step);
    EXPECT_TRUE(online == target) << "at step " << step;
  };
  dqn_train(env, cfg, &hooks);
  ASSERT_EQ(sync_steps.size(), static_cast<std::size_t>(cfg.total_steps / cfg.target_sync_interval));
  for (std::size_t k = 0; k < sync_steps.size(); ++k) {
    EXPECT_EQ(sync_steps[k], static_cast<long>((k + 1) * cfg.target_sync_interval));
  }
}

TEST(DqnTrain, LogRowsAreConsistent) {
  const TrainingResult r = dqn_train(make_env("CartPole"), tiny_config());
  ASSERT_FALSE(r.log.empty());
  long prev = 0;
  for (const auto& row : r.log) {
    EXPECT_GT(row.step, prev);
    EXPECT_GE(row.episode_return, 1.0);
    EXPECT_LE(row.episode_return, 500.0);
    prev = row.step;
  }
}

TEST(DqnTrain, DivergenceIsANumericError) {
  DqnConfig cfg = tiny_config();
  cfg.learning_rate = 1e300;
  cfg.max_grad_norm = 0.0;
  EXPECT_THROW(dqn_train(make_env("MountainCar"), cfg), NumericError);
}

TEST(DqnTrain, InputScaleLengthIsChecked) {
  DqnConfig cfg = tiny_config();
  cfg.input_scale = {1.0, 2.0, 3.0};
  EXPECT_THROW(dqn_train(make_env("MountainCar"), cfg), ConfigError);
}

}  // namespace
}  // namespace shapdistill
