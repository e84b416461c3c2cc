#include "honesty/models/dense.hpp"

#include <cmath>

#include "honesty/error.hpp"

namespace honesty::models {

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw ValidationError("unknown activation '" + name + "'", "expected relu, tanh or sigmoid");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "relu";
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

DenseNet::DenseNet(std::vector<int> layer_widths, Activation activation)
    : layers_(std::move(layer_widths)), activation_(activation) {
  if (layers_.size() < 2) throw ValidationError("a network needs at least input and output layers");
  for (int w : layers_) {
    if (w <= 0) throw ValidationError("layer widths must be positive");
  }
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    weights_.push_back(Matrix::Zero(layers_[i + 1], layers_[i]));
    biases_.push_back(Vector::Zero(layers_[i + 1]));
  }
}

void DenseNet::init(Rng& rng) {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const double limit = std::sqrt(6.0 / (layers_[l] + layers_[l + 1]));
    auto& w = weights_[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
    }
    biases_[l].setZero();
  }
}

namespace {

void activate(Matrix& m, Activation a) {
  switch (a) {
    case Activation::Relu: m = m.cwiseMax(0.0); break;
    case Activation::Tanh: m = m.array().tanh().matrix(); break;
    case Activation::Sigmoid: m = m.unaryExpr([](double z) { return sigmoid(z); }); break;
  }
}

// Derivative of the activation expressed through its pre/post values.
Matrix activation_grad(const Matrix& pre, const Matrix& post, Activation a) {
  switch (a) {
    case Activation::Relu: return pre.unaryExpr([](double z) { return z > 0 ? 1.0 : 0.0; });
    case Activation::Tanh: return (1.0 - post.array().square()).matrix();
    case Activation::Sigmoid: return (post.array() * (1.0 - post.array())).matrix();
  }
  return Matrix();
}

}  // namespace

Matrix DenseNet::forward(const Matrix& input) const {
  Matrix h = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Matrix z = h * weights_[l].transpose();
    z.rowwise() += biases_[l].transpose();
    if (l + 1 < weights_.size()) activate(z, activation_);
    h = std::move(z);
  }
  return h;
}

Matrix DenseNet::forward(const Matrix& input, Tape& tape) const {
  tape.pre.clear();
  tape.post.clear();
  tape.post.push_back(input);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Matrix z = tape.post.back() * weights_[l].transpose();
    z.rowwise() += biases_[l].transpose();
    tape.pre.push_back(z);
    if (l + 1 < weights_.size()) activate(z, activation_);
    tape.post.push_back(std::move(z));
  }
  return tape.post.back();
}

Matrix DenseNet::backward(const Tape& tape, const Matrix& d_logits, Vector& grad) const {
  return propagate(tape, d_logits, &grad, true);
}

void DenseNet::accumulate_gradient(const Tape& tape, const Matrix& d_logits, Vector& grad) const {
  propagate(tape, d_logits, &grad, false);
}

Matrix DenseNet::input_gradient(const Tape& tape, const Matrix& d_logits) const {
  return propagate(tape, d_logits, nullptr, true);
}

Matrix DenseNet::propagate(const Tape& tape, const Matrix& d_logits, Vector* grad, bool need_input) const {
  if (grad && grad->size() != static_cast<Eigen::Index>(parameter_count())) {
    *grad = Vector::Zero(static_cast<Eigen::Index>(parameter_count()));
  }
  // Offsets of each layer's block in the flat layout.
  std::vector<Eigen::Index> offsets(weights_.size());
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    offsets[l] = off;
    off += weights_[l].size() + biases_[l].size();
  }

  Matrix delta = d_logits;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    if (l + 1 < weights_.size()) {
      delta = delta.cwiseProduct(activation_grad(tape.pre[l], tape.post[l + 1], activation_));
    }
    if (grad) {
      Eigen::Map<Matrix> gw_view(grad->data() + offsets[l], weights_[l].rows(), weights_[l].cols());
      gw_view.noalias() += delta.transpose() * tape.post[l];  // out x in
      grad->segment(offsets[l] + weights_[l].size(), biases_[l].size()) += delta.colwise().sum().transpose();
    }
    if (l > 0 || need_input) delta = delta * weights_[l];
  }
  return need_input ? delta : Matrix();
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
  }
  return n;
}

Vector DenseNet::flatten() const {
  Vector out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.segment(off, weights_[l].size()) = Eigen::Map<const Vector>(weights_[l].data(), weights_[l].size());
    off += weights_[l].size();
    out.segment(off, biases_[l].size()) = biases_[l];
    off += biases_[l].size();
  }
  return out;
}

void DenseNet::unflatten(std::span<const double> params) {
  if (params.size() != parameter_count()) {
    throw ValidationError("parameter count mismatch: expected " + std::to_string(parameter_count()) +
                          ", got " + std::to_string(params.size()));
  }
  std::size_t off = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto nw = static_cast<std::size_t>(weights_[l].size());
    std::copy_n(params.data() + off, nw, weights_[l].data());
    off += nw;
    const auto nb = static_cast<std::size_t>(biases_[l].size());
    std::copy_n(params.data() + off, nb, biases_[l].data());
    off += nb;
  }
}

double DenseNet::l2_penalty(double l2, Vector* grad) const {
  if (l2 == 0.0) return 0.0;
  double penalty = 0.0;
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    penalty += 0.5 * l2 * weights_[l].squaredNorm();
    if (grad) {
      grad->segment(off, weights_[l].size()) += l2 * Eigen::Map<const Vector>(weights_[l].data(), weights_[l].size());
    }
    off += weights_[l].size() + biases_[l].size();
  }
  return penalty;
}

void DenseNet::apply_update(const Vector& step) {
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::Map<Vector>(weights_[l].data(), weights_[l].size()) += step.segment(off, weights_[l].size());
    off += weights_[l].size();
    biases_[l] += step.segment(off, biases_[l].size());
    off += biases_[l].size();
  }
}

Vector MomentumSgd::step(const Vector& grad) {
  if (velocity_.size() != grad.size()) velocity_ = Vector::Zero(grad.size());
  velocity_ = momentum_ * velocity_ - lr_ * grad;
  return velocity_;
}

}  // namespace honesty::models
