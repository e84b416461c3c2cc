#pragma once

#include <span>
#include <vector>

#include "honesty/models.hpp"
#include "honesty/models/common.hpp"

namespace honesty::models {

// Discriminator output order.
inline constexpr int kNonViolation = 0;
inline constexpr int kViolation = 1;
inline constexpr int kGenerated = 2;

// Inference side of the semi-supervised GAN: the discriminator alone.
// P(violation) is the softmax renormalized over the two real classes,
// i.e. sigmoid(logit[violation] - logit[non_violation]).
class GanClassifier final : public Classifier {
public:
  explicit GanClassifier(DenseNet discriminator) : disc_(std::move(discriminator)) {}

  Family family() const override { return Family::GAN; }
  std::size_t width() const override { return static_cast<std::size_t>(disc_.input_width()); }
  double predict_proba(std::span<const double> x) const override;
  nlohmann::json structure() const override;
  std::vector<double> parameters() const override;

  const DenseNet& discriminator() const { return disc_; }

  // Real-class probability from raw logits {non_violation, violation, generated}.
  static double proba_from_logits(std::span<const double> logits);

private:
  DenseNet disc_;
};

// Discriminator objective:
//   mean over labeled   -log softmax(l)[y]
// + mean over unlabeled -log(1 - p_generated)
// + mean over fake      -log p_generated
// + 0.5 * l2 * ||W||^2.
// Empty `unlabeled` / `fake` matrices drop their term.
double gan_discriminator_loss(const DenseNet& disc, const Matrix& labeled, std::span<const int> y,
                              const Matrix& unlabeled, const Matrix& fake, double l2, Vector* grad);

// Generator objective (non-saturating): mean over noise rows of
// -log(1 - p_generated(disc(gen(z)))). Gradient is w.r.t. generator parameters.
double gan_generator_loss(const DenseNet& gen, const DenseNet& disc, const Matrix& noise, Vector* grad);

TrainOutput train_gan(const ModelSpec& spec, const Dataset& data);

}  // namespace honesty::models
