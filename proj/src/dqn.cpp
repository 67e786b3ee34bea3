#include "shapdistill/dqn.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "shapdistill/errors.hpp"
#include "shapdistill/rng.hpp"

namespace shapdistill {

void DqnConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("dqn config: " + msg); };
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0, 1]");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (replay_capacity <= 0) fail("replay_capacity must be positive");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (target_sync_interval <= 0) fail("target_sync_interval must be positive");
  if (total_steps < 0) fail("total_steps must be non-negative");
  if (epsilon_end > epsilon_start) fail("epsilon_end must not exceed epsilon_start");
  if (epsilon_start > 1.0 || epsilon_end < 0.0) fail("epsilon values must lie in [0, 1]");
  if (epsilon_decay_steps < 0) fail("epsilon_decay_steps must be non-negative");
  if (train_frequency <= 0 || gradient_steps <= 0) fail("train_frequency and gradient_steps must be positive");
  if (learning_starts < 0) fail("learning_starts must be non-negative");
  for (int h : hidden_layers) {
    if (h <= 0) fail("hidden layer sizes must be positive");
  }
  if (eval_interval < 0 || eval_episodes <= 0) fail("invalid evaluation settings");
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ContractError("ReplayBuffer: capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition transition) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(transition));
    return;
  }
  items_[head_] = std::move(transition);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw ContractError("ReplayBuffer::at: index out of range");
  return items_[(head_ + i) % items_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch_size, Rng& rng) const {
  if (items_.empty()) throw ContractError("ReplayBuffer: cannot sample from an empty buffer");
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = rng.uniform_int(items_.size());
  return idx;
}

double td_target(double reward, bool done, double gamma, double max_next_q) {
  return done ? reward : reward + gamma * max_next_q;
}

double epsilon(long step, const DqnConfig& cfg) {
  if (step < 0) throw ContractError("epsilon: step must be non-negative");
  if (cfg.epsilon_decay_steps == 0 || step >= cfg.epsilon_decay_steps) return cfg.epsilon_end;
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.epsilon_decay_steps);
  return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start);
}

double td_loss(const Mlp& online, const Mlp& target, const std::vector<const Transition*>& batch,
               double gamma, MlpGradients* grads) {
  const Eigen::Index n = online.input_size();
  const Eigen::Index count = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd states(n, count), next_states(n, count);
  for (Eigen::Index c = 0; c < count; ++c) {
    for (Eigen::Index d = 0; d < n; ++d) {
      states(d, c) = batch[c]->state[d];
      next_states(d, c) = batch[c]->next_state[d];
    }
  }
  const Eigen::MatrixXd next_q = target.forward(next_states);
  Mlp::Cache cache;
  const Eigen::MatrixXd q = online.forward(states, cache);

  Eigen::MatrixXd grad_out = Eigen::MatrixXd::Zero(q.rows(), q.cols());
  double loss = 0.0;
  for (Eigen::Index c = 0; c < count; ++c) {
    const Transition& t = *batch[c];
    const double y = td_target(t.reward, t.terminated, gamma, next_q.col(c).maxCoeff());
    const double err = q(t.action, c) - y;
    loss += err * err;
    grad_out(t.action, c) = 2.0 * err / static_cast<double>(count);
  }
  loss /= static_cast<double>(count);
  if (grads != nullptr) online.backward(cache, grad_out, *grads);
  return loss;
}

TrainingResult dqn_train(const EnvSpec& env, const DqnConfig& cfg, const TrainingHooks* hooks) {
  cfg.validate();
  const int n = env.feature_count();
  std::vector<int> sizes{n};
  sizes.insert(sizes.end(), cfg.hidden_layers.begin(), cfg.hidden_layers.end());
  sizes.push_back(env.action_count);

  Rng init_rng(Rng::mix(cfg.seed, 0));
  Rng explore_rng(Rng::mix(cfg.seed, 1));
  Rng replay_rng(Rng::mix(cfg.seed, 2));
  const std::uint64_t episode_seed_base = Rng::mix(cfg.seed, 3);
  const std::uint64_t eval_seed_base = Rng::mix(cfg.seed, 4);

  Mlp online = Mlp::random(sizes, init_rng);
  if (!cfg.input_scale.empty()) {
    if (static_cast<int>(cfg.input_scale.size()) != n) throw ConfigError("dqn config: input_scale length mismatch");
    online.input_scale() = Eigen::Map<const Eigen::VectorXd>(cfg.input_scale.data(), n);
  }
  Mlp target = online;
  Adam optimizer(online, cfg.learning_rate);
  ReplayBuffer buffer(cfg.replay_capacity);
  MlpGradients grads = online.zero_gradients();

  std::vector<TrainingLogRow> log;
  Mlp best = online;
  double best_return = -std::numeric_limits<double>::infinity();
  long best_step = -1;

  auto evaluate_snapshot = [&](long at_step) {
    QNetworkPolicy greedy(online, env.feature_names);
    double total = 0.0;
    for (int e = 0; e < cfg.eval_episodes; ++e) total += rollout(env, greedy, eval_seed_base + e).total_return;
    const double mean = total / cfg.eval_episodes;
    if (mean >= best_return) {
      best_return = mean;
      best = online;
      best_step = at_step;
    }
  };

  long episode = 0;
  State s = reset(env, episode_seed_base + episode);
  int episode_len = 0;
  double episode_return = 0.0;
  double last_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<const Transition*> batch(cfg.batch_size);

  for (long t = 0; t < cfg.total_steps; ++t) {
    const double eps = epsilon(t, cfg);
    int a;
    if (explore_rng.uniform() < eps) {
      a = static_cast<int>(explore_rng.uniform_int(env.action_count));
    } else {
      const Eigen::VectorXd q = online.forward(s);
      a = argmax(std::span<const double>(q.data(), q.size()));
    }
    StepResult r = step(env, s, a);
    ++episode_len;
    episode_return += r.reward;
    const bool truncated = !r.terminated && episode_len >= env.max_steps;
    buffer.push({s, a, r.reward, r.next_state, r.terminated, truncated});

    if (r.terminated || truncated) {
      log.push_back({t + 1, episode_return, last_loss, eps});
      ++episode;
      s = reset(env, episode_seed_base + episode);
      episode_len = 0;
      episode_return = 0.0;
    } else {
      s = std::move(r.next_state);
    }

    if (t + 1 >= cfg.learning_starts && (t + 1) % cfg.train_frequency == 0) {
      for (int g = 0; g < cfg.gradient_steps; ++g) {
        const auto idx = buffer.sample_indices(cfg.batch_size, replay_rng);
        for (int b = 0; b < cfg.batch_size; ++b) batch[b] = &buffer.at(idx[b]);
        grads.set_zero();
        last_loss = td_loss(online, target, batch, cfg.gamma, &grads);
        if (!std::isfinite(last_loss)) {
          throw NumericError(fmt::format("dqn_train: loss became non-finite at step {}", t + 1));
        }
        if (cfg.max_grad_norm > 0.0) {
          const double norm = std::sqrt(grads.squared_norm());
          if (norm > cfg.max_grad_norm) grads.scale(cfg.max_grad_norm / norm);
        }
        optimizer.step(online, grads);
      }
    }
    if ((t + 1) % cfg.target_sync_interval == 0) {
      target = online;
      if (hooks != nullptr && hooks->on_target_sync) hooks->on_target_sync(t + 1, online, target);
    }
    if (cfg.eval_interval > 0 && (t + 1) % cfg.eval_interval == 0) evaluate_snapshot(t + 1);
  }
  if (!online.all_finite()) throw NumericError("dqn_train: parameters became non-finite");

  if (cfg.eval_interval > 0) {
    if (cfg.total_steps % cfg.eval_interval != 0 || cfg.total_steps == 0) evaluate_snapshot(cfg.total_steps);
    return {QNetworkPolicy(best, env.feature_names), std::move(log), best_return, best_step};
  }
  return {QNetworkPolicy(online, env.feature_names), std::move(log), std::numeric_limits<double>::quiet_NaN(),
          cfg.total_steps};
}

void write_training_log_csv(std::ostream& out, const std::vector<TrainingLogRow>& log) {
  out << "step,episode_return,loss,epsilon\n";
  for (const auto& row : log) {
    out << fmt::format("{},{},{},{}\n", row.step, row.episode_return, row.loss, row.epsilon);
  }
}

}  // namespace shapdistill
