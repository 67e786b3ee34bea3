#include "shapdistill/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "shapdistill/errors.hpp"

namespace shapdistill {

const char* to_string(PolicyKind kind) {
  return kind == PolicyKind::kDeterministic ? "deterministic" : "stochastic";
}

PolicyKind policy_kind_from_string(const std::string& name) {
  if (name == "deterministic") return PolicyKind::kDeterministic;
  if (name == "stochastic") return PolicyKind::kStochastic;
  throw ConfigError("unknown policy kind '" + name + "'");
}

std::vector<std::string> default_feature_names(int feature_count) {
  std::vector<std::string> names;
  for (int i = 0; i < feature_count; ++i) names.push_back("s" + std::to_string(i));
  return names;
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw ContractError("argmax: empty input");
  int best = 0;
  for (int a = 1; a < static_cast<int>(values.size()); ++a) {
    if (values[a] > values[best]) best = a;
  }
  return best;
}

// --- Policy ----------------------------------------------------------------

std::vector<std::string> Policy::feature_names() const { return default_feature_names(feature_count()); }

void Policy::check_state(std::span<const double> state) const {
  if (static_cast<int>(state.size()) != feature_count()) {
    throw ContractError("policy expects " + std::to_string(feature_count()) + " features, got " +
                        std::to_string(state.size()));
  }
}

int Policy::act(std::span<const double> state) const {
  if (kind() != PolicyKind::kStochastic) throw ContractError("deterministic policy does not implement act");
  const std::vector<double> probs = action_probs(state);
  return argmax(probs);
}

std::vector<double> Policy::action_probs(std::span<const double> state) const {
  if (kind() != PolicyKind::kDeterministic) {
    throw ContractError("stochastic policy does not implement action_probs");
  }
  std::vector<double> probs(action_count(), 0.0);
  probs[act(state)] = 1.0;
  return probs;
}

double Policy::scalarize(std::span<const double> state) const {
  if (kind() == PolicyKind::kDeterministic) return static_cast<double>(act(state));
  const std::vector<double> probs = action_probs(state);
  double expected = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) expected += static_cast<double>(a) * probs[a];
  return expected;
}

int act(const Policy& policy, std::span<const double> state) { return policy.act(state); }

std::vector<double> action_probs(const Policy& policy, std::span<const double> state) {
  return policy.action_probs(state);
}

double scalarize(const Policy& policy, std::span<const double> state) { return policy.scalarize(state); }

// --- QNetworkPolicy / SoftmaxPolicy ------------------------------------------

namespace {

std::vector<std::string> names_or_default(std::vector<std::string> names, int n) {
  if (names.empty()) return default_feature_names(n);
  if (static_cast<int>(names.size()) != n) {
    throw ContractError("feature name count " + std::to_string(names.size()) + " does not match " +
                        std::to_string(n) + " features");
  }
  return names;
}

}  // namespace

QNetworkPolicy::QNetworkPolicy(Mlp network, std::vector<std::string> feature_names)
    : network_(std::move(network)),
      feature_names_(names_or_default(std::move(feature_names), network_.input_size())) {
  if (network_.output_size() < 2) throw ContractError("QNetworkPolicy: need at least two actions");
}

std::vector<std::string> QNetworkPolicy::feature_names() const { return feature_names_; }

std::vector<double> QNetworkPolicy::q_values(std::span<const double> state) const {
  check_state(state);
  const Eigen::VectorXd q = network_.forward(state);
  return {q.data(), q.data() + q.size()};
}

int QNetworkPolicy::act(std::span<const double> state) const { return argmax(q_values(state)); }

SoftmaxPolicy::SoftmaxPolicy(Mlp network, std::vector<std::string> feature_names)
    : network_(std::move(network)),
      feature_names_(names_or_default(std::move(feature_names), network_.input_size())) {
  if (network_.output_size() < 2) throw ContractError("SoftmaxPolicy: need at least two actions");
}

std::vector<std::string> SoftmaxPolicy::feature_names() const { return feature_names_; }

std::vector<double> SoftmaxPolicy::action_probs(std::span<const double> state) const {
  check_state(state);
  const Eigen::VectorXd logits = network_.forward(state);
  const double peak = logits.maxCoeff();
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (Eigen::Index a = 0; a < logits.size(); ++a) {
    probs[a] = std::exp(logits(a) - peak);
    total += probs[a];
  }
  for (double& p : probs) p /= total;
  return probs;
}

// --- FunctionPolicy ----------------------------------------------------------

FunctionPolicy::FunctionPolicy(PolicyKind kind, int feature_count, int action_count)
    : kind_(kind), feature_count_(feature_count), action_count_(action_count) {
  if (feature_count < 1 || action_count < 2) throw ContractError("FunctionPolicy: invalid dimensions");
}

FunctionPolicy FunctionPolicy::deterministic(int feature_count, int action_count, ActFn fn) {
  FunctionPolicy p(PolicyKind::kDeterministic, feature_count, action_count);
  p.act_fn_ = std::move(fn);
  return p;
}

FunctionPolicy FunctionPolicy::stochastic(int feature_count, int action_count, ProbsFn fn) {
  FunctionPolicy p(PolicyKind::kStochastic, feature_count, action_count);
  p.probs_fn_ = std::move(fn);
  return p;
}

int FunctionPolicy::act(std::span<const double> state) const {
  check_state(state);
  if (kind_ == PolicyKind::kStochastic) return Policy::act(state);
  const int a = act_fn_(state);
  if (a < 0 || a >= action_count_) throw ContractError("FunctionPolicy: action out of range");
  return a;
}

std::vector<double> FunctionPolicy::action_probs(std::span<const double> state) const {
  check_state(state);
  if (kind_ == PolicyKind::kDeterministic) return Policy::action_probs(state);
  std::vector<double> probs = probs_fn_(state);
  if (static_cast<int>(probs.size()) != action_count_) {
    throw ContractError("FunctionPolicy: probability vector has wrong length");
  }
  return probs;
}

// --- Hyperplane --------------------------------------------------------------

double Hyperplane::evaluate(std::span<const double> state) const {
  if (state.size() != w.size()) throw ContractError("Hyperplane: dimension mismatch");
  double f = b;
  for (std::size_t d = 0; d < w.size(); ++d) f += w[d] * state[d];
  return f;
}

Hyperplane Hyperplane::normalized_to(int feature) const {
  if (feature < 0 || feature >= static_cast<int>(w.size())) {
    throw ContractError("Hyperplane::normalized_to: feature index out of range");
  }
  const double scale = std::abs(w[feature]);
  if (scale == 0.0) throw NumericError("Hyperplane::normalized_to: coefficient is zero");
  Hyperplane out = *this;
  for (double& c : out.w) c /= scale;
  out.b /= scale;
  return out;
}

std::string Hyperplane::formula(const std::vector<std::string>& feature_names) const {
  std::string text = fmt::format("f{}{} =", i, j);
  bool first = true;
  auto term = [&](double coef, const std::string& name) {
    std::string magnitude = fmt::format("{:.4g}", std::abs(coef));
    if (magnitude == "0") return;
    const bool negative = coef < 0.0;
    if (first) {
      text += negative ? " -" : " ";
    } else {
      text += negative ? " - " : " + ";
    }
    first = false;
    if (name.empty()) {
      text += magnitude;
    } else if (magnitude == "1") {
      text += name;
    } else {
      text += magnitude + " " + name;
    }
  };
  for (std::size_t d = 0; d < w.size(); ++d) {
    term(w[d], d < feature_names.size() ? feature_names[d] : "s" + std::to_string(d));
  }
  term(b, "");
  if (first) text += " 0";
  return text;
}

// --- InterpretablePolicy -----------------------------------------------------

InterpretablePolicy::InterpretablePolicy(int action_count, std::vector<Hyperplane> hyperplanes,
                                         std::vector<std::string> feature_names)
    : action_count_(action_count) {
  if (action_count < 2) throw ContractError("InterpretablePolicy: need at least two actions");
  if (hyperplanes.empty()) throw ContractError("InterpretablePolicy: no hyperplanes");
  feature_count_ = static_cast<int>(hyperplanes.front().w.size());
  if (feature_count_ < 1) throw ContractError("InterpretablePolicy: empty hyperplane");

  for (int i = 0; i < action_count; ++i) {
    for (int j = i + 1; j < action_count; ++j) {
      auto it = std::find_if(hyperplanes.begin(), hyperplanes.end(),
                             [&](const Hyperplane& h) { return h.i == i && h.j == j; });
      if (it == hyperplanes.end()) {
        throw ContractError(fmt::format("InterpretablePolicy: missing hyperplane for pair ({}, {})", i, j));
      }
      if (static_cast<int>(it->w.size()) != feature_count_) {
        throw ContractError("InterpretablePolicy: hyperplanes disagree on feature dimension");
      }
      double norm = 0.0;
      for (double c : it->w) norm += c * c;
      if (!(norm > 0.0) || !std::isfinite(norm) || !std::isfinite(it->b)) {
        throw ContractError(fmt::format("InterpretablePolicy: hyperplane ({}, {}) has zero or non-finite w", i, j));
      }
      hyperplanes_.push_back(*it);
    }
  }
  if (hyperplanes_.size() != hyperplanes.size()) {
    throw ContractError("InterpretablePolicy: unexpected hyperplane pairs (need i < j < action_count)");
  }
  feature_names_ = names_or_default(std::move(feature_names), feature_count_);
}

std::vector<std::string> InterpretablePolicy::feature_names() const { return feature_names_; }

const Hyperplane& InterpretablePolicy::hyperplane(int i, int j) const {
  for (const Hyperplane& h : hyperplanes_) {
    if (h.i == i && h.j == j) return h;
  }
  throw ContractError(fmt::format("InterpretablePolicy: no hyperplane for pair ({}, {})", i, j));
}

int InterpretablePolicy::act(std::span<const double> state) const {
  check_state(state);
  if (action_count_ == 2) return hyperplanes_.front().evaluate(state) > 0.0 ? 0 : 1;
  std::vector<double> votes(action_count_, 0.0);
  for (const Hyperplane& h : hyperplanes_) votes[h.evaluate(state) > 0.0 ? h.i : h.j] += 1.0;
  return argmax(votes);
}

int interpretable_act(const InterpretablePolicy& policy, std::span<const double> state) {
  return policy.act(state);
}

}  // namespace shapdistill
