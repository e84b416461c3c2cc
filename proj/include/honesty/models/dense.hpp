#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "honesty/rng.hpp"

namespace honesty::models {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { Relu, Tanh, Sigmoid };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

// Fully connected feed-forward network. Hidden layers use `activation`, the
// last layer is linear (logits); losses are applied by the caller.
class DenseNet {
public:
  DenseNet() = default;
  DenseNet(std::vector<int> layer_widths, Activation activation);

  // Uniform init in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  void init(Rng& rng);

  const std::vector<int>& layers() const { return layers_; }
  Activation activation() const { return activation_; }
  int input_width() const { return layers_.front(); }
  int output_width() const { return layers_.back(); }

  // Rows are samples.
  Matrix forward(const Matrix& input) const;

  struct Tape {
    std::vector<Matrix> pre;   // pre-activation of each layer
    std::vector<Matrix> post;  // post[0] = input, post[i] = output of layer i
  };
  Matrix forward(const Matrix& input, Tape& tape) const;

  // Given dLoss/dLogits, accumulates parameter gradients (same layout as
  // flatten()) into `grad` and returns dLoss/dInput.
  Matrix backward(const Tape& tape, const Matrix& d_logits, Vector& grad) const;
  // backward() without the returned input gradient.
  void accumulate_gradient(const Tape& tape, const Matrix& d_logits, Vector& grad) const;
  // Only dLoss/dInput; parameter gradients are skipped.
  Matrix input_gradient(const Tape& tape, const Matrix& d_logits) const;

  std::size_t parameter_count() const;
  Vector flatten() const;
  void unflatten(std::span<const double> params);

  // Adds 0.5 * l2 * ||W||^2 over weight matrices (biases excluded) and its
  // gradient.
  double l2_penalty(double l2, Vector* grad) const;

  void apply_update(const Vector& step);  // params += step

private:
  Matrix propagate(const Tape& tape, const Matrix& d_logits, Vector* grad, bool need_input) const;

  std::vector<int> layers_;
  Activation activation_ = Activation::Relu;
  std::vector<Matrix> weights_;  // out x in
  std::vector<Vector> biases_;
};

// SGD with classical momentum over a flat parameter vector.
class MomentumSgd {
public:
  MomentumSgd(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {}
  Vector step(const Vector& grad);

private:
  double lr_;
  double momentum_;
  Vector velocity_;
};

double sigmoid(double z);
// log(1 + exp(z)), overflow safe.
double softplus(double z);

}  // namespace honesty::models
