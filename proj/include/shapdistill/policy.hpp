#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "shapdistill/mlp.hpp"

namespace shapdistill {

enum class PolicyKind { kDeterministic, kStochastic };

const char* to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& name);

// Black-box decision object. Deterministic policies implement act();
// stochastic policies implement action_probs(). Each side is lifted to the
// other: deterministic probs are one-hot, stochastic act is the greedy argmax
// with lowest-index tie-break. Implementations are immutable after
// construction and safe to query concurrently, unless documented otherwise.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual PolicyKind kind() const = 0;
  virtual int feature_count() const = 0;
  virtual int action_count() const = 0;
  virtual std::vector<std::string> feature_names() const;

  virtual int act(std::span<const double> state) const;
  virtual std::vector<double> action_probs(std::span<const double> state) const;

  // Real-valued policy output used as the Shapley payoff: the action label for
  // deterministic policies, the expected action index for stochastic ones.
  double scalarize(std::span<const double> state) const;

 protected:
  void check_state(std::span<const double> state) const;
};

// Index of the largest element; ties go to the lowest index.
int argmax(std::span<const double> values);

// Greedy policy over a Q-network.
class QNetworkPolicy final : public Policy {
 public:
  QNetworkPolicy(Mlp network, std::vector<std::string> feature_names = {});

  PolicyKind kind() const override { return PolicyKind::kDeterministic; }
  int feature_count() const override { return network_.input_size(); }
  int action_count() const override { return network_.output_size(); }
  std::vector<std::string> feature_names() const override;

  int act(std::span<const double> state) const override;
  std::vector<double> q_values(std::span<const double> state) const;

  const Mlp& network() const { return network_; }

 private:
  Mlp network_;
  std::vector<std::string> feature_names_;
};

// Softmax over the network's output logits.
class SoftmaxPolicy final : public Policy {
 public:
  SoftmaxPolicy(Mlp network, std::vector<std::string> feature_names = {});

  PolicyKind kind() const override { return PolicyKind::kStochastic; }
  int feature_count() const override { return network_.input_size(); }
  int action_count() const override { return network_.output_size(); }
  std::vector<std::string> feature_names() const override;

  std::vector<double> action_probs(std::span<const double> state) const override;

  const Mlp& network() const { return network_; }

 private:
  Mlp network_;
  std::vector<std::string> feature_names_;
};

// Adapts a callable. Used for synthetic policies in tests and for bindings.
class FunctionPolicy final : public Policy {
 public:
  using ActFn = std::function<int(std::span<const double>)>;
  using ProbsFn = std::function<std::vector<double>(std::span<const double>)>;

  static FunctionPolicy deterministic(int feature_count, int action_count, ActFn fn);
  static FunctionPolicy stochastic(int feature_count, int action_count, ProbsFn fn);

  PolicyKind kind() const override { return kind_; }
  int feature_count() const override { return feature_count_; }
  int action_count() const override { return action_count_; }

  int act(std::span<const double> state) const override;
  std::vector<double> action_probs(std::span<const double> state) const override;

 private:
  FunctionPolicy(PolicyKind kind, int feature_count, int action_count);

  PolicyKind kind_;
  int feature_count_;
  int action_count_;
  ActFn act_fn_;
  ProbsFn probs_fn_;
};

// Oriented linear boundary between actions i < j:
// f(s) = w . s + b, with f(s) > 0 selecting action i.
struct Hyperplane {
  int i = 0;
  int j = 1;
  std::vector<double> w;
  double b = 0.0;

  double evaluate(std::span<const double> state) const;
  // Positive rescaling so that |w[feature]| == 1; orientation is unchanged.
  Hyperplane normalized_to(int feature) const;
  // e.g. "f01 = -0.5 x - 0.687 x_dot - 1.09 theta - theta_dot - 0.018"
  std::string formula(const std::vector<std::string>& feature_names) const;
};

// Closed-form policy made of one hyperplane per unordered action pair.
// k = 2: f01(s) > 0 selects action 0, otherwise action 1.
// k > 2: one-vs-one vote, each f_ij votes i when positive and j otherwise;
// most votes wins, ties to the lowest index.
class InterpretablePolicy final : public Policy {
 public:
  InterpretablePolicy(int action_count, std::vector<Hyperplane> hyperplanes,
                      std::vector<std::string> feature_names = {});

  PolicyKind kind() const override { return PolicyKind::kDeterministic; }
  int feature_count() const override { return feature_count_; }
  int action_count() const override { return action_count_; }
  std::vector<std::string> feature_names() const override;

  int act(std::span<const double> state) const override;

  const std::vector<Hyperplane>& hyperplanes() const { return hyperplanes_; }
  const Hyperplane& hyperplane(int i, int j) const;

 private:
  int action_count_;
  int feature_count_;
  std::vector<Hyperplane> hyperplanes_;  // ordered (0,1), (0,2), ..., (k-2,k-1)
  std::vector<std::string> feature_names_;
};

int act(const Policy& policy, std::span<const double> state);
std::vector<double> action_probs(const Policy& policy, std::span<const double> state);
double scalarize(const Policy& policy, std::span<const double> state);
int interpretable_act(const InterpretablePolicy& policy, std::span<const double> state);

std::vector<std::string> default_feature_names(int feature_count);

}  // namespace shapdistill
