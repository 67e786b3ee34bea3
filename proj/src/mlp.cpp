#include "shapdistill/mlp.hpp"

#include <cmath>

#include "shapdistill/errors.hpp"

namespace shapdistill {

void MlpGradients::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

double MlpGradients::squared_norm() const {
  double total = 0.0;
  for (const auto& w : weights) total += w.squaredNorm();
  for (const auto& b : biases) total += b.squaredNorm();
  return total;
}

void MlpGradients::scale(double factor) {
  for (auto& w : weights) w *= factor;
  for (auto& b : biases) b *= factor;
}

Mlp::Mlp(std::vector<int> layer_sizes) : layer_sizes_(std::move(layer_sizes)) {
  if (layer_sizes_.size() < 2) throw ContractError("Mlp: need at least input and output sizes");
  for (int size : layer_sizes_) {
    if (size <= 0) throw ContractError("Mlp: layer sizes must be positive");
  }
  for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
    weights_.push_back(Eigen::MatrixXd::Zero(layer_sizes_[l + 1], layer_sizes_[l]));
    biases_.push_back(Eigen::VectorXd::Zero(layer_sizes_[l + 1]));
  }
  input_scale_ = Eigen::VectorXd::Ones(layer_sizes_.front());
}

Mlp Mlp::random(std::vector<int> layer_sizes, Rng& rng) {
  Mlp net(std::move(layer_sizes));
  for (std::size_t l = 0; l < net.weights_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.weights_[l].cols()));
    // Row-major fill order keeps the draw sequence independent of Eigen storage.
    for (Eigen::Index r = 0; r < net.weights_[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < net.weights_[l].cols(); ++c) {
        net.weights_[l](r, c) = rng.uniform(-bound, bound);
      }
    }
    for (Eigen::Index r = 0; r < net.biases_[l].size(); ++r) net.biases_[l](r) = rng.uniform(-bound, bound);
  }
  return net;
}

void Mlp::check_layout() const {
  if (weights_.empty()) throw ContractError("Mlp: network has no layers");
}

Eigen::VectorXd Mlp::forward(std::span<const double> input) const {
  if (static_cast<int>(input.size()) != input_size()) {
    throw ContractError("Mlp::forward: expected " + std::to_string(input_size()) + " inputs, got " +
                        std::to_string(input.size()));
  }
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(input.data(), input.size()).cwiseProduct(input_scale_);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::VectorXd z = weights_[l] * x + biases_[l];
    if (l + 1 < weights_.size()) z = z.cwiseMax(0.0);
    x = std::move(z);
  }
  return x;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& inputs) const {
  Cache cache;
  return forward(inputs, cache);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& inputs, Cache& cache) const {
  check_layout();
  if (inputs.rows() != input_size()) throw ContractError("Mlp::forward: input row count mismatch");
  cache.activations.resize(weights_.size() + 1);
  cache.activations[0] = input_scale_.asDiagonal() * inputs;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::MatrixXd z = (weights_[l] * cache.activations[l]).colwise() + biases_[l];
    if (l + 1 < weights_.size()) z = z.cwiseMax(0.0);
    cache.activations[l + 1] = std::move(z);
  }
  return cache.activations.back();
}

void Mlp::backward(const Cache& cache, const Eigen::MatrixXd& grad_output, MlpGradients& grads) const {
  Eigen::MatrixXd delta = grad_output;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    if (l + 1 < weights_.size()) {
      // Rectifier derivative, taken as 0 at exactly 0.
      delta = delta.cwiseProduct((cache.activations[l + 1].array() > 0.0).cast<double>().matrix());
    }
    grads.weights[l].noalias() += delta * cache.activations[l].transpose();
    grads.biases[l].noalias() += delta.rowwise().sum();
    if (l > 0) delta = weights_[l].transpose() * delta;
  }
}

MlpGradients Mlp::zero_gradients() const {
  MlpGradients g;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(weights_[l].rows(), weights_[l].cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(biases_[l].size()));
  }
  return g;
}

bool Mlp::all_finite() const {
  for (const auto& w : weights_) {
    if (!w.allFinite()) return false;
  }
  for (const auto& b : biases_) {
    if (!b.allFinite()) return false;
  }
  return input_scale_.allFinite();
}

bool operator==(const Mlp& a, const Mlp& b) {
  if (a.layer_sizes_ != b.layer_sizes_) return false;
  if (a.input_scale_ != b.input_scale_) return false;
  for (std::size_t l = 0; l < a.weights_.size(); ++l) {
    if (a.weights_[l] != b.weights_[l] || a.biases_[l] != b.biases_[l]) return false;
  }
  return true;
}

Adam::Adam(const Mlp& net, double learning_rate, double beta1, double beta2, double epsilon)
    : learning_rate_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon),
      first_moment_(net.zero_gradients()),
      second_moment_(net.zero_gradients()) {}

void Adam::step(Mlp& net, const MlpGradients& grads) {
  ++step_count_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    param.array() -= learning_rate_ * (m.array() / c1) / ((v.array() / c2).sqrt() + epsilon_);
  };
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    update(net.weight(l), grads.weights[l], first_moment_.weights[l], second_moment_.weights[l]);
    update(net.bias(l), grads.biases[l], first_moment_.biases[l], second_moment_.biases[l]);
  }
}

}  // namespace shapdistill
