#include "shapdistill/env.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <ostream>

#include <nlohmann/json.hpp>

#include "shapdistill/errors.hpp"
#include "shapdistill/policy.hpp"
#include "shapdistill/rng.hpp"

namespace shapdistill {

namespace {

constexpr double kGravity = 9.8;
constexpr double kCartMass = 1.0;
constexpr double kPoleMass = 0.1;
constexpr double kTotalMass = kCartMass + kPoleMass;
constexpr double kHalfLength = 0.5;
constexpr double kPoleMassLength = kPoleMass * kHalfLength;
constexpr double kForceMag = 10.0;
constexpr double kTau = 0.02;
constexpr double kThetaLimit = 12.0 * 2.0 * M_PI / 360.0;
constexpr double kXLimit = 2.4;

constexpr double kMcMinPosition = -1.2;
constexpr double kMcMaxPosition = 0.6;
constexpr double kMcMaxSpeed = 0.07;
constexpr double kMcGoalPosition = 0.5;
constexpr double kMcForce = 0.001;
constexpr double kMcGravity = 0.0025;

void require_finite(std::span<const double> state, const char* what) {
  for (double v : state) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite state component");
  }
}

void require_action(int action, const char* what) {
  if (action != 0 && action != 1) {
    throw ContractError(std::string(what) + ": action " + std::to_string(action) + " out of range [0, 2)");
  }
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

EnvSpec make_env(const std::string& name) {
  std::string key = lower(name);
  if (auto dash = key.find("-v"); dash != std::string::npos) key = key.substr(0, dash);
  constexpr double kUnbounded = std::numeric_limits<double>::max();
  if (key == "cartpole") {
    return EnvSpec{EnvKind::kCartPole,
                   "CartPole",
                   {"x", "x_dot", "theta", "theta_dot"},
                   2,
                   {{-2 * kXLimit, 2 * kXLimit},
                    {-kUnbounded, kUnbounded},
                    {-2 * kThetaLimit, 2 * kThetaLimit},
                    {-kUnbounded, kUnbounded}},
                   500};
  }
  if (key == "mountaincar") {
    return EnvSpec{EnvKind::kMountainCar,
                   "MountainCar",
                   {"x", "x_dot"},
                   2,
                   {{kMcMinPosition, kMcMaxPosition}, {-kMcMaxSpeed, kMcMaxSpeed}},
                   200};
  }
  throw ConfigError("unknown environment '" + name + "' (expected CartPole or MountainCar)");
}

State reset(const EnvSpec& env, std::uint64_t seed) {
  Rng rng(seed);
  switch (env.kind) {
    case EnvKind::kCartPole: {
      State s(4);
      for (double& v : s) v = rng.uniform(-0.05, 0.05);
      return s;
    }
    case EnvKind::kMountainCar:
      return State{rng.uniform(-0.6, -0.4), 0.0};
  }
  throw ConfigError("reset: unsupported environment");
}

StepResult cartpole_step(std::span<const double> state, int action) {
  if (state.size() != 4) throw ContractError("cartpole_step: expected 4 features");
  require_finite(state, "cartpole_step");
  require_action(action, "cartpole_step");

  const double x = state[0], x_dot = state[1], theta = state[2], theta_dot = state[3];
  const double force = action == 1 ? kForceMag : -kForceMag;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double temp = (force + kPoleMassLength * theta_dot * theta_dot * sin_t) / kTotalMass;
  const double theta_acc = (kGravity * sin_t - cos_t * temp) /
                           (kHalfLength * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / kTotalMass));
  const double x_acc = temp - kPoleMassLength * theta_acc * cos_t / kTotalMass;

  State next{x + kTau * x_dot, x_dot + kTau * x_acc, theta + kTau * theta_dot,
             theta_dot + kTau * theta_acc};
  const bool terminated = next[0] < -kXLimit || next[0] > kXLimit || next[2] < -kThetaLimit ||
                          next[2] > kThetaLimit;
  return {std::move(next), 1.0, terminated};
}

StepResult mountaincar_step(std::span<const double> state, int action) {
  if (state.size() != 2) throw ContractError("mountaincar_step: expected 2 features");
  require_finite(state, "mountaincar_step");
  require_action(action, "mountaincar_step");

  double position = state[0];
  double velocity = state[1];
  const double direction = action == 1 ? 1.0 : -1.0;
  velocity += direction * kMcForce + std::cos(3.0 * position) * (-kMcGravity);
  velocity = std::clamp(velocity, -kMcMaxSpeed, kMcMaxSpeed);
  position += velocity;
  position = std::clamp(position, kMcMinPosition, kMcMaxPosition);
  if (position == kMcMinPosition && velocity < 0.0) velocity = 0.0;
  const bool terminated = position >= kMcGoalPosition;
  return {State{position, velocity}, -1.0, terminated};
}

StepResult step(const EnvSpec& env, std::span<const double> state, int action) {
  switch (env.kind) {
    case EnvKind::kCartPole:
      return cartpole_step(state, action);
    case EnvKind::kMountainCar:
      return mountaincar_step(state, action);
  }
  throw ConfigError("step: unsupported environment");
}

Trajectory rollout(const EnvSpec& env, const Policy& policy, std::uint64_t seed, int max_steps) {
  if (policy.feature_count() != env.feature_count() || policy.action_count() != env.action_count) {
    throw ContractError("rollout: policy dimensions do not match environment " + env.name);
  }
  const int limit = max_steps > 0 ? max_steps : env.max_steps;
  Trajectory traj;
  traj.seed = seed;
  State s = reset(env, seed);
  for (int t = 0; t < limit; ++t) {
    const int a = policy.act(s);
    StepResult r = step(env, s, a);
    const bool truncated = !r.terminated && t + 1 == limit;
    traj.total_return += r.reward;
    traj.transitions.push_back({s, a, r.reward, r.next_state, r.terminated, truncated});
    if (r.terminated) break;
    s = std::move(r.next_state);
  }
  return traj;
}

void write_trajectory_jsonl(std::ostream& out, const Trajectory& trajectory) {
  for (std::size_t i = 0; i < trajectory.transitions.size(); ++i) {
    const Transition& t = trajectory.transitions[i];
    nlohmann::ordered_json line;
    line["step"] = i;
    line["state"] = t.state;
    line["action"] = t.action;
    line["reward"] = t.reward;
    line["next_state"] = t.next_state;
    line["terminated"] = t.terminated;
    line["truncated"] = t.truncated;
    out << line.dump() << '\n';
  }
}

}  // namespace shapdistill
