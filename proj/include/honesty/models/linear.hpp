#pragma once

#include <span>
#include <vector>

#include "honesty/models.hpp"
#include "honesty/models/common.hpp"

namespace honesty::models {

// Mean logistic loss of sigmoid(Xw + b) against y plus 0.5 * l2 * ||w||^2.
// Gradients are written when the pointers are non-null.
double logistic_loss(const Vector& w, double b, const Matrix& X, std::span<const int> y, double l2,
                     Vector* grad_w = nullptr, double* grad_b = nullptr);

// Mean hinge loss max(0, 1 - s (Xw + b)), s = 2y - 1, plus 0.5 * l2 * ||w||^2.
// The subgradient at the hinge uses 0.
double hinge_loss(const Vector& w, double b, const Matrix& X, std::span<const int> y, double l2,
                  Vector* grad_w = nullptr, double* grad_b = nullptr);

class LogisticRegression final : public Classifier {
public:
  LogisticRegression(Vector weights, double bias) : w_(std::move(weights)), b_(bias) {}

  Family family() const override { return Family::LR; }
  std::size_t width() const override { return static_cast<std::size_t>(w_.size()); }
  double predict_proba(std::span<const double> x) const override;
  nlohmann::json structure() const override;
  std::vector<double> parameters() const override;

  const Vector& weights() const { return w_; }
  double bias() const { return b_; }

private:
  Vector w_;
  double b_;
};

// Linear SVM; probability = sigmoid(a * margin + c).
class LinearSvm final : public Classifier {
public:
  LinearSvm(Vector weights, double bias, double link_slope, double link_offset)
      : w_(std::move(weights)), b_(bias), a_(link_slope), c_(link_offset) {}

  Family family() const override { return Family::SVM; }
  std::size_t width() const override { return static_cast<std::size_t>(w_.size()); }
  double margin(std::span<const double> x) const;
  double predict_proba(std::span<const double> x) const override;
  nlohmann::json structure() const override;
  std::vector<double> parameters() const override;

private:
  Vector w_;
  double b_;
  double a_;
  double c_;
};

// Fits sigmoid(a * f + c) to labels by Newton's method on the regularized
// targets of Platt (1999). Returns {a, c}.
std::pair<double, double> fit_logistic_link(std::span<const double> margins, std::span<const int> y);

TrainOutput train_lr(const ModelSpec& spec, const Dataset& data);
TrainOutput train_svm(const ModelSpec& spec, const Dataset& data);

}  // namespace honesty::models
