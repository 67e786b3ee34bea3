#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "shapdistill/env.hpp"
#include "shapdistill/policy.hpp"

namespace shapdistill {

struct DqnConfig {
  double gamma = 0.99;
  double learning_rate = 1e-3;
  int replay_capacity = 50000;
  int batch_size = 64;
  int target_sync_interval = 500;  // environment steps
  long total_steps = 50000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  long epsilon_decay_steps = 10000;
  std::vector<int> hidden_layers{64, 64};
  std::uint64_t seed = 0;

  long learning_starts = 1000;
  int train_frequency = 1;   // environment steps between training rounds
  int gradient_steps = 1;    // minibatch updates per training round
  double max_grad_norm = 10.0;  // <= 0 disables clipping
  // Fixed per-feature input multipliers baked into the network; empty = ones.
  std::vector<double> input_scale;

  // Greedy snapshot evaluation. With eval_interval > 0 the returned policy is
  // the snapshot with the best mean evaluation return (latest wins ties).
  long eval_interval = 0;
  int eval_episodes = 10;

  void validate() const;
};

// FIFO ring buffer of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition transition);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  // i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const;
  // Uniform sampling with replacement.
  std::vector<std::size_t> sample_indices(std::size_t batch_size, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // slot of the oldest item once the ring is full
  std::vector<Transition> items_;
};

// r if the transition terminated, else r + gamma * max_next_q. Truncation
// must be passed as done = false.
double td_target(double reward, bool done, double gamma, double max_next_q);

// Linear decay from epsilon_start at step 0 to epsilon_end at
// epsilon_decay_steps, constant afterwards.
double epsilon(long step, const DqnConfig& cfg);

struct TrainingLogRow {
  long step;
  double episode_return;
  double loss;
  double epsilon;
};

struct TrainingResult {
  QNetworkPolicy policy;
  std::vector<TrainingLogRow> log;
  double best_eval_return;  // NaN when periodic evaluation is disabled
  long best_eval_step;
};

// Mean TD loss over a minibatch and its gradient w.r.t. the online network.
// Exposed for gradient checking.
double td_loss(const Mlp& online, const Mlp& target, const std::vector<const Transition*>& batch,
               double gamma, MlpGradients* grads);

// Optional observation points inside the training loop.
struct TrainingHooks {
  // Called right after each target-network sync with the environment step
  // count and both networks.
  std::function<void(long step, const Mlp& online, const Mlp& target)> on_target_sync;
};

TrainingResult dqn_train(const EnvSpec& env, const DqnConfig& cfg, const TrainingHooks* hooks = nullptr);

// CSV columns: step,episode_return,loss,epsilon
void write_training_log_csv(std::ostream& out, const std::vector<TrainingLogRow>& log);

}  // namespace shapdistill
