#include "honesty/models/gan.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "honesty/error.hpp"

namespace honesty::models {

namespace {

double log_sum_exp(std::initializer_list<double> values) {
  const double m = std::max(values);
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

// Softmax over one row of three logits.
std::array<double, 3> softmax3(double a, double b, double c) {
  const double m = std::max({a, b, c});
  const double ea = std::exp(a - m), eb = std::exp(b - m), ec = std::exp(c - m);
  const double s = ea + eb + ec;
  return {ea / s, eb / s, ec / s};
}

Matrix gaussian_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix z(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) z(i, j) = rng.normal();
  }
  return z;
}

// Loss and dLoss/dLogits of -log(1 - p_generated) averaged over rows, with
// the average taken over `denominator` rows.
double real_unlabeled_term(const Matrix& logits, double denominator, Matrix& d_logits) {
  double loss = 0.0;
  d_logits.resize(logits.rows(), 3);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double l0 = logits(i, 0), l1 = logits(i, 1), l2 = logits(i, 2);
    loss += log_sum_exp({l0, l1, l2}) - log_sum_exp({l0, l1});
    const auto p = softmax3(l0, l1, l2);
    const double real = p[0] + p[1];
    d_logits(i, 0) = (p[0] - p[0] / real) / denominator;
    d_logits(i, 1) = (p[1] - p[1] / real) / denominator;
    d_logits(i, 2) = p[2] / denominator;
  }
  return loss / denominator;
}

}  // namespace

double GanClassifier::proba_from_logits(std::span<const double> logits) {
  return sigmoid(logits[kViolation] - logits[kNonViolation]);
}

double GanClassifier::predict_proba(std::span<const double> x) const {
  const Matrix input = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  const Matrix logits = disc_.forward(input);
  return proba_from_logits({logits.data(), 3});
}

nlohmann::json GanClassifier::structure() const {
  return {{"layers", disc_.layers()}, {"activation", to_string(disc_.activation())}};
}

std::vector<double> GanClassifier::parameters() const {
  const Vector p = disc_.flatten();
  return {p.data(), p.data() + p.size()};
}

double gan_discriminator_loss(const DenseNet& disc, const Matrix& labeled, std::span<const int> y,
                              const Matrix& unlabeled, const Matrix& fake, double l2, Vector* grad) {
  if (grad) *grad = Vector::Zero(static_cast<Eigen::Index>(disc.parameter_count()));
  double loss = 0.0;

  if (labeled.rows() > 0) {
    DenseNet::Tape tape;
    const Matrix logits = disc.forward(labeled, tape);
    const auto n = static_cast<double>(labeled.rows());
    Matrix d(labeled.rows(), 3);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const int cls = y[static_cast<std::size_t>(i)] ? kViolation : kNonViolation;
      loss += (log_sum_exp({logits(i, 0), logits(i, 1), logits(i, 2)}) - logits(i, cls)) / n;
      const auto p = softmax3(logits(i, 0), logits(i, 1), logits(i, 2));
      for (int k = 0; k < 3; ++k) d(i, k) = (p[static_cast<std::size_t>(k)] - (k == cls ? 1.0 : 0.0)) / n;
    }
    if (grad) disc.accumulate_gradient(tape, d, *grad);
  }

  if (unlabeled.rows() > 0) {
    DenseNet::Tape tape;
    const Matrix logits = disc.forward(unlabeled, tape);
    Matrix d;
    loss += real_unlabeled_term(logits, static_cast<double>(unlabeled.rows()), d);
    if (grad) disc.accumulate_gradient(tape, d, *grad);
  }

  if (fake.rows() > 0) {
    DenseNet::Tape tape;
    const Matrix logits = disc.forward(fake, tape);
    const auto n = static_cast<double>(fake.rows());
    Matrix d(fake.rows(), 3);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      loss += (log_sum_exp({logits(i, 0), logits(i, 1), logits(i, 2)}) - logits(i, kGenerated)) / n;
      const auto p = softmax3(logits(i, 0), logits(i, 1), logits(i, 2));
      for (int k = 0; k < 3; ++k) d(i, k) = (p[static_cast<std::size_t>(k)] - (k == kGenerated ? 1.0 : 0.0)) / n;
    }
    if (grad) disc.accumulate_gradient(tape, d, *grad);
  }

  loss += disc.l2_penalty(l2, grad);
  return loss;
}

double gan_generator_loss(const DenseNet& gen, const DenseNet& disc, const Matrix& noise, Vector* grad) {
  DenseNet::Tape gen_tape;
  const Matrix fake = gen.forward(noise, gen_tape);
  DenseNet::Tape disc_tape;
  const Matrix logits = disc.forward(fake, disc_tape);
  Matrix d_logits;
  const double loss = real_unlabeled_term(logits, static_cast<double>(noise.rows()), d_logits);
  if (grad) {
    const Matrix d_fake = disc.input_gradient(disc_tape, d_logits);
    *grad = Vector::Zero(static_cast<Eigen::Index>(gen.parameter_count()));
    gen.accumulate_gradient(gen_tape, d_fake, *grad);
  }
  return loss;
}

TrainOutput train_gan(const ModelSpec& spec, const Dataset& data) {
  const int width = static_cast<int>(data.width());
  const int noise_dim = hyper_int(spec, "noise_dim");
  const auto activation = activation_from_string(hyper_string(spec, "activation"));

  std::vector<int> gen_layers = {noise_dim};
  for (int h : hyper_int_list(spec, "generator_hidden")) gen_layers.push_back(h);
  gen_layers.push_back(width);
  std::vector<int> disc_layers = {width};
  for (int h : hyper_int_list(spec, "discriminator_hidden")) disc_layers.push_back(h);
  disc_layers.push_back(3);

  const double lr = hyper_double(spec, "learning_rate");
  const double momentum = hyper_double(spec, "momentum");
  const double l2 = hyper_double(spec, "l2");
  const int epochs = hyper_int(spec, "epochs");
  const auto batch = static_cast<std::size_t>(hyper_int(spec, "batch_size"));
  const std::size_t n = data.size();
  const std::size_t step = (batch == 0 || batch >= n) ? n : batch;

  Rng rng(spec.seed);
  DenseNet gen(gen_layers, activation);
  DenseNet disc(disc_layers, activation);
  gen.init(rng);
  disc.init(rng);
  MomentumSgd disc_opt(lr, momentum);
  MomentumSgd gen_opt(lr, momentum);

  const auto n_unlabeled = static_cast<std::size_t>(data.unlabeled.rows());
  std::vector<std::size_t> unlabeled_order;
  std::size_t unlabeled_cursor = 0;

  std::vector<double> log;
  Vector grad;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto order = shuffled_indices(n, rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += step) {
      const std::size_t size = std::min(step, n - start);
      const Dataset part = data.subset(std::span<const std::size_t>(order.data() + start, size));

      Matrix unlabeled(0, width);
      if (n_unlabeled > 0) {
        unlabeled.resize(static_cast<Eigen::Index>(size), width);
        for (std::size_t k = 0; k < size; ++k) {
          if (unlabeled_cursor == 0) unlabeled_order = shuffled_indices(n_unlabeled, rng);
          unlabeled.row(static_cast<Eigen::Index>(k)) =
              data.unlabeled.row(static_cast<Eigen::Index>(unlabeled_order[unlabeled_cursor]));
          unlabeled_cursor = (unlabeled_cursor + 1) % n_unlabeled;
        }
      }

      const Matrix fake = gen.forward(gaussian_noise(static_cast<Eigen::Index>(size), noise_dim, rng));
      epoch_loss += gan_discriminator_loss(disc, part.X, part.y, unlabeled, fake, l2, &grad);
      disc.apply_update(disc_opt.step(grad));

      const Matrix noise = gaussian_noise(static_cast<Eigen::Index>(size), noise_dim, rng);
      gan_generator_loss(gen, disc, noise, &grad);
      gen.apply_update(gen_opt.step(grad));
      ++batches;
    }
    epoch_loss /= static_cast<double>(batches);
    guard_loss(epoch_loss, static_cast<std::size_t>(epoch), spec);
    log.push_back(epoch_loss);
  }
  return {std::make_shared<GanClassifier>(std::move(disc)), std::move(log)};
}

}  // namespace honesty::models
