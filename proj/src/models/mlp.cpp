#include "honesty/models/mlp.hpp"

#include "honesty/error.hpp"

namespace honesty::models {

double MlpClassifier::predict_proba(std::span<const double> x) const {
  const Matrix input = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  return sigmoid(net_.forward(input)(0, 0));
}

nlohmann::json MlpClassifier::structure() const {
  return {{"layers", net_.layers()}, {"activation", to_string(net_.activation())}};
}

std::vector<double> MlpClassifier::parameters() const {
  const Vector p = net_.flatten();
  return {p.data(), p.data() + p.size()};
}

double mlp_loss(const DenseNet& net, const Matrix& X, std::span<const int> y, double l2, Vector* grad) {
  const auto n = static_cast<double>(X.rows());
  DenseNet::Tape tape;
  const Matrix logits = net.forward(X, tape);
  double loss = 0.0;
  Matrix d_logits(X.rows(), 1);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double z = logits(i, 0);
    const int label = y[static_cast<std::size_t>(i)];
    loss += label ? softplus(-z) : softplus(z);
    d_logits(i, 0) = (sigmoid(z) - label) / n;
  }
  loss /= n;
  if (grad) {
    *grad = Vector::Zero(static_cast<Eigen::Index>(net.parameter_count()));
    net.accumulate_gradient(tape, d_logits, *grad);
  }
  loss += net.l2_penalty(l2, grad);
  return loss;
}

TrainOutput train_mlp(const ModelSpec& spec, const Dataset& data) {
  std::vector<int> layers = {static_cast<int>(data.width())};
  for (int h : hyper_int_list(spec, "hidden")) layers.push_back(h);
  layers.push_back(1);

  const double lr = hyper_double(spec, "learning_rate");
  const double momentum = hyper_double(spec, "momentum");
  const double l2 = hyper_double(spec, "l2");
  const int epochs = hyper_int(spec, "epochs");
  const auto batch = static_cast<std::size_t>(hyper_int(spec, "batch_size"));
  const std::size_t n = data.size();

  Rng rng(spec.seed);
  DenseNet net(layers, activation_from_string(hyper_string(spec, "activation")));
  net.init(rng);
  MomentumSgd optimizer(lr, momentum);

  std::vector<double> log;
  Vector grad;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto order = shuffled_indices(n, rng);
    const std::size_t step = (batch == 0 || batch >= n) ? n : batch;
    for (std::size_t start = 0; start < n; start += step) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(step, n - start));
      const Dataset part = data.subset(rows);
      mlp_loss(net, part.X, part.y, l2, &grad);
      net.apply_update(optimizer.step(grad));
    }
    const double loss = mlp_loss(net, data.X, data.y, l2, nullptr);
    guard_loss(loss, static_cast<std::size_t>(epoch), spec);
    log.push_back(loss);
  }
  return {std::make_shared<MlpClassifier>(spec.family, std::move(net)), std::move(log)};
}

}  // namespace honesty::models
