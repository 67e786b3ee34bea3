#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "shapdistill/rng.hpp"

namespace shapdistill {

struct MlpGradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  void set_zero();
  double squared_norm() const;
  void scale(double factor);
};

// Fully connected network: rectifier on hidden layers, identity on the output.
// Inputs are multiplied elementwise by a fixed (non-trainable) input scale
// before the first layer. Batched calls take one sample per column.
class Mlp {
 public:
  struct Cache {
    // activations[0] is the scaled input; activations[l + 1] the output of layer l.
    std::vector<Eigen::MatrixXd> activations;
  };

  Mlp() = default;
  // Zero-initialized parameters, unit input scale.
  explicit Mlp(std::vector<int> layer_sizes);

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static Mlp random(std::vector<int> layer_sizes, Rng& rng);

  const std::vector<int>& layer_sizes() const { return layer_sizes_; }
  int input_size() const { return layer_sizes_.front(); }
  int output_size() const { return layer_sizes_.back(); }
  std::size_t layer_count() const { return weights_.size(); }

  Eigen::MatrixXd& weight(std::size_t layer) { return weights_[layer]; }
  const Eigen::MatrixXd& weight(std::size_t layer) const { return weights_[layer]; }
  Eigen::VectorXd& bias(std::size_t layer) { return biases_[layer]; }
  const Eigen::VectorXd& bias(std::size_t layer) const { return biases_[layer]; }
  Eigen::VectorXd& input_scale() { return input_scale_; }
  const Eigen::VectorXd& input_scale() const { return input_scale_; }

  Eigen::VectorXd forward(std::span<const double> input) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, Cache& cache) const;

  // Accumulates dLoss/dparams into grads given dLoss/doutput for the batch
  // that produced cache.
  void backward(const Cache& cache, const Eigen::MatrixXd& grad_output, MlpGradients& grads) const;

  MlpGradients zero_gradients() const;
  bool all_finite() const;

  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  void check_layout() const;

  std::vector<int> layer_sizes_;
  std::vector<Eigen::MatrixXd> weights_;  // weights_[l] is (out x in)
  std::vector<Eigen::VectorXd> biases_;
  Eigen::VectorXd input_scale_;
};

class Adam {
 public:
  Adam(const Mlp& net, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-8);

  void step(Mlp& net, const MlpGradients& grads);

 private:
  double learning_rate_;
  double beta1_;
  double beta2_;
  double epsilon_;
  long step_count_ = 0;
  MlpGradients first_moment_;
  MlpGradients second_moment_;
};

}  // namespace shapdistill
