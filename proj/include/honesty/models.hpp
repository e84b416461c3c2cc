#pragma once

// Seven binary classifier families over embedding vectors, trained from
// scratch behind one train/predict contract.
//
//   LR             logistic loss, (mini-)batch gradient descent, L2 penalty
//   SVM            linear hinge loss + L2, subgradient descent, logistic link
//                  fitted on the training margins for probabilities
//   TREE_ENSEMBLE  bagged CART trees (Gini), majority vote; forest_size = 1
//                  is a single unbagged tree
//   GBT            stagewise boosting of regression trees on logistic-loss
//                  gradients with shrinkage
//   NN             one hidden layer MLP, sigmoid output, momentum SGD
//   DNN            >= 2 hidden layers of strictly decreasing width
//   GAN            semi-supervised GAN: discriminator with outputs
//                  {non_violation, violation, generated}

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "honesty/features.hpp"
#include "honesty/models/dense.hpp"

namespace honesty::models {

// Label 1 = honesty violation, 0 = non-violation.
struct Dataset {
  Matrix X;
  std::vector<int> y;
  std::vector<std::string> ids;
  // Extra unlabeled vectors; only the GAN family uses them.
  Matrix unlabeled;

  std::size_t size() const { return y.size(); }
  std::size_t width() const { return static_cast<std::size_t>(X.cols()); }
  std::size_t count(int label) const;

  // Checks |X| == |y| == |ids|, labels in {0,1}, finite entries.
  void validate() const;
  Dataset subset(std::span<const std::size_t> rows) const;

  static Dataset from_features(const std::vector<features::FeatureRecord>& records);
};

// Two Gaussian clusters: every coordinate has unit variance; the first
// `informative` coordinates are centered at +separation for class 1 and
// -separation for class 0, the rest at zero. Classes alternate 0,1,0,1...
Dataset gaussian_clusters(std::size_t n, std::size_t width, std::size_t informative,
                          double separation, std::uint64_t seed);

enum class Family { LR, SVM, TreeEnsemble, GBT, NN, DNN, GAN };

inline constexpr Family kAllFamilies[] = {Family::LR,  Family::SVM, Family::TreeEnsemble, Family::GBT,
                                          Family::NN,  Family::DNN, Family::GAN};

std::string to_string(Family f);       // "LR", "SVM", "TREE_ENSEMBLE", ...
std::string short_name(Family f);      // "lr", "svm", "rf", "gbt", "nn", "dnn", "gan"
Family family_from_string(std::string name);  // accepts either form

struct ModelSpec {
  Family family = Family::LR;
  nlohmann::json hyper = nlohmann::json::object();
  std::uint64_t seed = 0;

  // Canonical text form: family plus hyperparameters with sorted keys.
  std::string encoding() const;
};

nlohmann::json default_hyperparameters(Family f);

// Fills in defaults and validates every hyperparameter. `width` (the input
// width, 0 when unknown) enables the checks that depend on it.
ModelSpec resolve(const ModelSpec& spec, std::size_t width = 0);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

// Learned state of one family.
class Classifier {
public:
  virtual ~Classifier() = default;
  virtual Family family() const = 0;
  virtual std::size_t width() const = 0;
  virtual double predict_proba(std::span<const double> x) const = 0;
  // Shape information needed to rebuild the model from parameters().
  virtual nlohmann::json structure() const = 0;
  virtual std::vector<double> parameters() const = 0;
};

std::unique_ptr<Classifier> make_classifier(Family family, const nlohmann::json& structure,
                                            std::span<const double> params);

class TrainedModel {
public:
  TrainedModel() = default;
  TrainedModel(ModelSpec spec, std::shared_ptr<const Classifier> impl, std::vector<double> training_log,
               std::string provider_fingerprint, double threshold = 0.5);

  const ModelSpec& spec() const { return spec_; }
  const Classifier& classifier() const { return *impl_; }
  const std::vector<double>& training_log() const { return training_log_; }
  const std::string& provider_fingerprint() const { return provider_fingerprint_; }
  double threshold() const { return threshold_; }
  std::size_t width() const { return impl_->width(); }

  // Throws ValidationError when x has the wrong width.
  double predict_proba(std::span<const double> x) const;
  // 1 iff predict_proba(x) >= threshold.
  int predict(std::span<const double> x) const;

  // Logs a warning when vectors come from a provider other than the one the
  // model was trained with. Returns whether they match.
  bool check_provider(const std::string& fingerprint) const;

private:
  ModelSpec spec_;
  std::shared_ptr<const Classifier> impl_;
  std::vector<double> training_log_;
  std::string provider_fingerprint_;
  double threshold_ = 0.5;
};

// Deterministic in (spec.seed, dataset order, hyperparameters).
TrainedModel train(const ModelSpec& spec, const Dataset& data, std::string provider_fingerprint = {});

// Artifact layout (all integers and floats little-endian):
//   8 bytes   magic "HVMODEL\0"
//   u32       format version
//   u32       header length N
//   N bytes   JSON header: family, spec, seed, provider_fingerprint, width,
//             threshold, float ("f64le"), structure, training_log
//   u64       parameter count M
//   M x f64   parameters
inline constexpr std::uint32_t kArtifactVersion = 1;
void save_model(std::ostream& out, const TrainedModel& model);
TrainedModel load_model(std::istream& in);
void save_model(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace honesty::models
