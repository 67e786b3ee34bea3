#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace shapdistill {

// A state is a fixed-length feature vector; its length is EnvSpec::feature_count().
using State = std::vector<double>;

class Policy;

enum class EnvKind { kCartPole, kMountainCar };

struct EnvSpec {
  EnvKind kind;
  std::string name;
  std::vector<std::string> feature_names;
  int action_count;
  std::vector<std::pair<double, double>> state_bounds;
  int max_steps;

  int feature_count() const { return static_cast<int>(feature_names.size()); }
};

// Accepts "CartPole" / "MountainCar" (case-insensitive, optional "-v1"/"-v0"
// suffix). Throws ConfigError otherwise.
EnvSpec make_env(const std::string& name);

struct StepResult {
  State next_state;
  double reward;
  bool terminated;
};

struct Transition {
  State state;
  int action;
  double reward;
  State next_state;
  bool terminated;
  bool truncated;
};

struct Trajectory {
  std::vector<Transition> transitions;
  double total_return = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const { return transitions.size(); }
};

State reset(const EnvSpec& env, std::uint64_t seed);

// CartPole with the classic-control constants: g = 9.8, cart 1.0 kg, pole
// 0.1 kg, half-length 0.5 m, |force| = 10 N, explicit Euler with tau = 0.02.
// Terminates when |x| > 2.4 or |theta| > 12 degrees.
StepResult cartpole_step(std::span<const double> state, int action);

// Two-action MountainCar: action 0 pushes left, 1 pushes right.
StepResult mountaincar_step(std::span<const double> state, int action);

StepResult step(const EnvSpec& env, std::span<const double> state, int action);

// Runs reset(seed) and steps with policy.act until termination or max_steps.
// A non-positive max_steps uses env.max_steps.
Trajectory rollout(const EnvSpec& env, const Policy& policy, std::uint64_t seed,
                   int max_steps = 0);

// JSON-lines: one transition per line with
// step, state, action, reward, next_state, terminated, truncated.
void write_trajectory_jsonl(std::ostream& out, const Trajectory& trajectory);

}  // namespace shapdistill
