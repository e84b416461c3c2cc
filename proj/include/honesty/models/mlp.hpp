#pragma once

#include <span>
#include <vector>

#include "honesty/models.hpp"
#include "honesty/models/common.hpp"

namespace honesty::models {

// Binary classifier on a DenseNet with one output logit; probability is the
// sigmoid of the logit. Serves both NN (one hidden layer) and DNN.
class MlpClassifier final : public Classifier {
public:
  MlpClassifier(Family family, DenseNet net) : family_(family), net_(std::move(net)) {}

  Family family() const override { return family_; }
  std::size_t width() const override { return static_cast<std::size_t>(net_.input_width()); }
  double predict_proba(std::span<const double> x) const override;
  nlohmann::json structure() const override;
  std::vector<double> parameters() const override;

  const DenseNet& net() const { return net_; }

private:
  Family family_;
  DenseNet net_;
};

// Mean binary cross-entropy of sigmoid(net(X)) against y plus the L2
// penalty. With `grad` set, writes the gradient in DenseNet::flatten() layout.
double mlp_loss(const DenseNet& net, const Matrix& X, std::span<const int> y, double l2, Vector* grad);

TrainOutput train_mlp(const ModelSpec& spec, const Dataset& data);

}  // namespace honesty::models
