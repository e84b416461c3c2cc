#include "honesty/models.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>

#include <spdlog/spdlog.h>

#include "honesty/error.hpp"
#include "honesty/models/common.hpp"
#include "honesty/models/gan.hpp"
#include "honesty/models/linear.hpp"
#include "honesty/models/mlp.hpp"
#include "honesty/models/tree.hpp"

namespace honesty::models {

using nlohmann::json;

// ---------------------------------------------------------------- dataset

std::size_t Dataset::count(int label) const {
  return static_cast<std::size_t>(std::count(y.begin(), y.end(), label));
}

void Dataset::validate() const {
  if (static_cast<std::size_t>(X.rows()) != y.size() || ids.size() != y.size()) {
    throw ValidationError("dataset arrays are misaligned",
                          "rows=" + std::to_string(X.rows()) + " labels=" + std::to_string(y.size()) +
                              " ids=" + std::to_string(ids.size()));
  }
  for (int label : y) {
    if (label != 0 && label != 1) throw ValidationError("labels must be 0 or 1");
  }
  if (!X.allFinite()) throw ValidationError("dataset contains non-finite values");
  if (unlabeled.rows() > 0 && unlabeled.cols() != X.cols()) {
    throw ValidationError("unlabeled vectors have a different width");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  out.y.reserve(rows.size());
  out.ids.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.X.row(static_cast<Eigen::Index>(k)) = X.row(static_cast<Eigen::Index>(rows[k]));
    out.y.push_back(y[rows[k]]);
    out.ids.push_back(ids[rows[k]]);
  }
  out.unlabeled = unlabeled;
  return out;
}

Dataset Dataset::from_features(const std::vector<features::FeatureRecord>& records) {
  Dataset d;
  const std::size_t width = records.empty() ? 0 : records.front().vector.values.size();
  Matrix unlabeled_rows(0, static_cast<Eigen::Index>(width));
  std::vector<const features::FeatureRecord*> labeled, unlabeled;
  for (const auto& r : records) (r.label ? labeled : unlabeled).push_back(&r);
  d.X.resize(static_cast<Eigen::Index>(labeled.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const auto& v = labeled[i]->vector.values;
    if (v.size() != width) throw ValidationError("feature vectors have inconsistent width");
    d.X.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(width));
    d.y.push_back(*labeled[i]->label);
    d.ids.push_back(labeled[i]->vector.source_id);
  }
  d.unlabeled.resize(static_cast<Eigen::Index>(unlabeled.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    const auto& v = unlabeled[i]->vector.values;
    if (v.size() != width) throw ValidationError("feature vectors have inconsistent width");
    d.unlabeled.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(width));
  }
  d.validate();
  return d;
}

Dataset gaussian_clusters(std::size_t n, std::size_t width, std::size_t informative, double separation,
                          std::uint64_t seed) {
  if (informative > width) throw PreconditionError("more informative dimensions than the width");
  Rng rng(seed);
  Dataset d;
  d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double center = label ? separation : -separation;
    for (std::size_t j = 0; j < width; ++j) {
      d.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal() + (j < informative ? center : 0.0);
    }
    d.y.push_back(label);
    d.ids.push_back("s" + std::to_string(i));
  }
  return d;
}

// ---------------------------------------------------------------- families

std::string to_string(Family f) {
  switch (f) {
    case Family::LR: return "LR";
    case Family::SVM: return "SVM";
    case Family::TreeEnsemble: return "TREE_ENSEMBLE";
    case Family::GBT: return "GBT";
    case Family::NN: return "NN";
    case Family::DNN: return "DNN";
    case Family::GAN: return "GAN";
  }
  return "LR";
}

std::string short_name(Family f) {
  switch (f) {
    case Family::LR: return "lr";
    case Family::SVM: return "svm";
    case Family::TreeEnsemble: return "rf";
    case Family::GBT: return "gbt";
    case Family::NN: return "nn";
    case Family::DNN: return "dnn";
    case Family::GAN: return "gan";
  }
  return "lr";
}

Family family_from_string(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "lr") return Family::LR;
  if (name == "svm") return Family::SVM;
  if (name == "rf" || name == "tree_ensemble") return Family::TreeEnsemble;
  if (name == "gbt") return Family::GBT;
  if (name == "nn") return Family::NN;
  if (name == "dnn") return Family::DNN;
  if (name == "gan") return Family::GAN;
  throw ValidationError("unknown model family '" + name + "'", "expected one of lr, svm, rf, gbt, nn, dnn, gan");
}

std::string ModelSpec::encoding() const { return to_string(family) + hyper.dump(); }

json default_hyperparameters(Family f) {
  switch (f) {
    case Family::LR:
      return {{"learning_rate", 0.1}, {"l2", 0.0}, {"epochs", 200}, {"batch_size", 0}};
    case Family::SVM:
      return {{"learning_rate", 0.01}, {"l2", 1e-3}, {"epochs", 100}, {"batch_size", 32}};
    case Family::TreeEnsemble:
      return {{"forest_size", 100}, {"max_depth", 0}, {"min_samples_split", 2}, {"max_features", 0}};
    case Family::GBT:
      return {{"stages", 100}, {"shrinkage", 0.1}, {"max_depth", 3}, {"min_samples_leaf", 1}};
    case Family::NN:
      return {{"hidden", json::array({64})}, {"activation", "relu"}, {"learning_rate", 0.05}, {"momentum", 0.9},
              {"epochs", 50}, {"batch_size", 32}, {"l2", 0.0}};
    case Family::DNN:
      return {{"hidden", json::array({128, 32, 8})}, {"activation", "relu"}, {"learning_rate", 0.02},
              {"momentum", 0.9}, {"epochs", 30}, {"batch_size", 32}, {"l2", 0.0}};
    case Family::GAN:
      return {{"noise_dim", 32},        {"generator_hidden", json::array({64})},
              {"discriminator_hidden", json::array({64})},
              {"activation", "relu"},   {"learning_rate", 0.01},
              {"momentum", 0.5},        {"epochs", 25},
              {"batch_size", 32},       {"l2", 0.0}};
  }
  return json::object();
}

namespace {

[[noreturn]] void bad_hyper(const ModelSpec& spec, const std::string& key, const std::string& why) {
  throw ValidationError("invalid hyperparameter " + to_string(spec.family) + "." + key + ": " + why,
                        spec.hyper.dump());
}

void require_number(const ModelSpec& s, const std::string& key, bool integer) {
  const auto& v = s.hyper.at(key);
  if (!v.is_number()) bad_hyper(s, key, "must be a number");
  if (integer && !v.is_number_integer()) {
    const double d = v.get<double>();
    if (d != std::floor(d)) bad_hyper(s, key, "must be an integer");
  }
}

void require_range(const ModelSpec& s, const std::string& key, double lo, double hi, bool lo_open, bool hi_open) {
  const double v = s.hyper.at(key).get<double>();
  const bool ok = (lo_open ? v > lo : v >= lo) && (hi_open ? v < hi : v <= hi);
  if (!ok || !std::isfinite(v)) {
    bad_hyper(s, key, "must be in " + std::string(lo_open ? "(" : "[") + std::to_string(lo) + ", " +
                          std::to_string(hi) + (hi_open ? ")" : "]"));
  }
}

void require_int_list(ModelSpec& s, const std::string& key) {
  auto& v = s.hyper.at(key);
  if (v.is_number_integer()) v = json::array({v});
  if (!v.is_array() || v.empty()) bad_hyper(s, key, "must be a nonempty list of widths");
  for (const auto& w : v) {
    if (!w.is_number_integer() || w.get<int>() <= 0) bad_hyper(s, key, "widths must be positive integers");
  }
}

}  // namespace

ModelSpec resolve(const ModelSpec& spec, std::size_t width) {
  ModelSpec out = spec;
  const json defaults = default_hyperparameters(spec.family);
  if (!spec.hyper.is_object() && !spec.hyper.is_null()) throw ValidationError("hyperparameters must be an object");
  out.hyper = defaults;
  if (spec.hyper.is_object()) {
    for (const auto& [key, value] : spec.hyper.items()) {
      if (!defaults.contains(key)) bad_hyper(spec, key, "unknown for this family");
      out.hyper[key] = value;
    }
  }
  constexpr double inf = std::numeric_limits<double>::infinity();

  const std::set<std::string> integer_keys = {"epochs",      "batch_size",  "forest_size",      "max_depth",
                                              "min_samples_split", "max_features", "stages", "min_samples_leaf",
                                              "noise_dim"};
  const std::set<std::string> list_keys = {"hidden", "generator_hidden", "discriminator_hidden"};
  for (auto& [key, value] : out.hyper.items()) {
    if (key == "activation") {
      if (!value.is_string()) bad_hyper(out, key, "must be a string");
      activation_from_string(value.get<std::string>());
    } else if (list_keys.contains(key)) {
      require_int_list(out, key);
    } else {
      require_number(out, key, integer_keys.contains(key));
      if (integer_keys.contains(key)) value = static_cast<std::int64_t>(value.get<double>());
    }
  }

  auto has = [&](const char* k) { return out.hyper.contains(k); };
  if (has("learning_rate")) require_range(out, "learning_rate", 0, inf, true, true);
  if (has("l2")) require_range(out, "l2", 0, inf, false, true);
  if (has("epochs")) require_range(out, "epochs", 1, inf, false, true);
  if (has("batch_size")) require_range(out, "batch_size", 0, inf, false, true);
  if (has("momentum")) require_range(out, "momentum", 0, 1, false, true);
  if (has("forest_size")) require_range(out, "forest_size", 1, inf, false, true);
  if (has("min_samples_split")) require_range(out, "min_samples_split", 2, inf, false, true);
  if (has("max_features")) require_range(out, "max_features", 0, inf, false, true);
  if (has("stages")) require_range(out, "stages", 1, inf, false, true);
  if (has("shrinkage")) require_range(out, "shrinkage", 0, 1, true, false);
  if (has("min_samples_leaf")) require_range(out, "min_samples_leaf", 1, inf, false, true);
  if (has("noise_dim")) require_range(out, "noise_dim", 1, inf, false, true);
  if (has("max_depth")) require_range(out, "max_depth", out.family == Family::GBT ? 1 : 0, inf, false, true);

  if (out.family == Family::NN && out.hyper["hidden"].size() != 1) {
    bad_hyper(out, "hidden", "NN has exactly one hidden layer");
  }
  if (out.family == Family::DNN) {
    const auto hidden = out.hyper["hidden"].get<std::vector<int>>();
    if (hidden.size() < 2) bad_hyper(out, "hidden", "DNN needs at least two hidden layers");
    for (std::size_t i = 1; i < hidden.size(); ++i) {
      if (hidden[i] >= hidden[i - 1]) bad_hyper(out, "hidden", "widths must strictly decrease");
    }
    if (width > 0 && static_cast<std::size_t>(hidden.front()) >= width) {
      bad_hyper(out, "hidden", "first hidden width must be below the input width " + std::to_string(width));
    }
  }
  return out;
}

json to_json(const ModelSpec& spec) {
  return {{"family", to_string(spec.family)}, {"hyper", spec.hyper}, {"seed", spec.seed}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.family = family_from_string(j.at("family").get<std::string>());
  s.hyper = j.value("hyper", json::object());
  s.seed = j.value("seed", std::uint64_t{0});
  return s;
}

// ---------------------------------------------------------------- common helpers

void guard_loss(double loss, std::size_t epoch, const ModelSpec& spec) {
  if (!std::isfinite(loss) || loss > kDivergenceLimit) {
    throw DivergenceError(to_string(spec.family) + " training diverged at epoch " + std::to_string(epoch) +
                              " (loss " + std::to_string(loss) + ") with hyperparameters " + spec.hyper.dump(),
                          spec.hyper.dump());
  }
}

double hyper_double(const ModelSpec& spec, const char* key) { return spec.hyper.at(key).get<double>(); }
int hyper_int(const ModelSpec& spec, const char* key) { return spec.hyper.at(key).get<int>(); }
std::vector<int> hyper_int_list(const ModelSpec& spec, const char* key) {
  const auto& v = spec.hyper.at(key);
  if (v.is_number_integer()) return {v.get<int>()};
  return v.get<std::vector<int>>();
}
std::string hyper_string(const ModelSpec& spec, const char* key) { return spec.hyper.at(key).get<std::string>(); }

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  return order;
}

// ---------------------------------------------------------------- trained model

TrainedModel::TrainedModel(ModelSpec spec, std::shared_ptr<const Classifier> impl, std::vector<double> training_log,
                           std::string provider_fingerprint, double threshold)
    : spec_(std::move(spec)),
      impl_(std::move(impl)),
      training_log_(std::move(training_log)),
      provider_fingerprint_(std::move(provider_fingerprint)),
      threshold_(threshold) {}

double TrainedModel::predict_proba(std::span<const double> x) const {
  if (x.size() != impl_->width()) {
    throw ValidationError("input width " + std::to_string(x.size()) + " does not match model width " +
                          std::to_string(impl_->width()));
  }
  const double p = impl_->predict_proba(x);
  if (!std::isfinite(p)) throw Error("internal", "model produced a non-finite probability");
  return std::clamp(p, 0.0, 1.0);
}

int TrainedModel::predict(std::span<const double> x) const { return predict_proba(x) >= threshold_ ? 1 : 0; }

bool TrainedModel::check_provider(const std::string& fingerprint) const {
  if (provider_fingerprint_.empty() || fingerprint == provider_fingerprint_) return true;
  spdlog::warn("model was trained on '{}' vectors but is given '{}' vectors", provider_fingerprint_, fingerprint);
  return false;
}

TrainedModel train(const ModelSpec& raw_spec, const Dataset& data, std::string provider_fingerprint) {
  data.validate();
  if (data.size() == 0) throw PreconditionError("cannot train on an empty dataset");
  if (data.count(0) == 0 || data.count(1) == 0) {
    throw PreconditionError("training data has a single class",
                            "positives=" + std::to_string(data.count(1)) + " negatives=" + std::to_string(data.count(0)));
  }
  const ModelSpec spec = resolve(raw_spec, data.width());
  TrainOutput out;
  switch (spec.family) {
    case Family::LR: out = train_lr(spec, data); break;
    case Family::SVM: out = train_svm(spec, data); break;
    case Family::TreeEnsemble: out = train_tree_ensemble(spec, data); break;
    case Family::GBT: out = train_gbt(spec, data); break;
    case Family::NN:
    case Family::DNN: out = train_mlp(spec, data); break;
    case Family::GAN: out = train_gan(spec, data); break;
  }
  return TrainedModel(spec, std::move(out.classifier), std::move(out.log), std::move(provider_fingerprint));
}

std::unique_ptr<Classifier> make_classifier(Family family, const json& structure, std::span<const double> params) {
  auto take_vector = [&](std::size_t width) {
    if (params.size() < width + 1) throw ValidationError("linear model parameters truncated");
    return Vector(Eigen::Map<const Vector>(params.data(), static_cast<Eigen::Index>(width)));
  };
  auto take_trees = [&](std::size_t offset) {
    std::vector<DecisionTree> trees;
    for (const auto& c : structure.at("node_counts")) {
      const auto count = c.get<std::size_t>();
      const std::size_t size = count * DecisionTree::kDoublesPerNode;
      if (offset + size > params.size()) throw ValidationError("tree parameters truncated");
      trees.push_back(DecisionTree::from_parameters(params.subspan(offset, size), count));
      offset += size;
    }
    if (offset != params.size()) throw ValidationError("unexpected trailing tree parameters");
    return trees;
  };
  auto take_net = [&] {
    DenseNet net(structure.at("layers").get<std::vector<int>>(),
                 activation_from_string(structure.at("activation").get<std::string>()));
    net.unflatten(params);
    return net;
  };

  switch (family) {
    case Family::LR: {
      const auto width = structure.at("width").get<std::size_t>();
      if (params.size() != width + 1) throw ValidationError("LR parameter count mismatch");
      return std::make_unique<LogisticRegression>(take_vector(width), params[width]);
    }
    case Family::SVM: {
      const auto width = structure.at("width").get<std::size_t>();
      if (params.size() != width + 3) throw ValidationError("SVM parameter count mismatch");
      return std::make_unique<LinearSvm>(take_vector(width), params[width], params[width + 1], params[width + 2]);
    }
    case Family::TreeEnsemble:
      return std::make_unique<TreeEnsemble>(take_trees(0), structure.at("width").get<std::size_t>());
    case Family::GBT:
      if (params.empty()) throw ValidationError("GBT parameters truncated");
      return std::make_unique<GradientBoostedTrees>(params[0], take_trees(1), structure.at("width").get<std::size_t>());
    case Family::NN:
    case Family::DNN: return std::make_unique<MlpClassifier>(family, take_net());
    case Family::GAN: return std::make_unique<GanClassifier>(take_net());
  }
  throw ValidationError("unknown family");
}

// ---------------------------------------------------------------- artifacts

namespace {

constexpr char kMagic[8] = {'H', 'V', 'M', 'O', 'D', 'E', 'L', '\0'};

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n) throw FormatError(std::string("truncated model artifact while reading ") + what, offset_ + got);
    offset_ += n;
  }
  std::uint64_t uint(int width, const char* what) {
    unsigned char buf[8] = {};
    bytes(reinterpret_cast<char*>(buf), static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = width - 1; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
  }
  std::size_t offset() const { return offset_; }

private:
  std::istream& in_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_model(std::ostream& out, const TrainedModel& model) {
  const Classifier& c = model.classifier();
  const json header = {{"family", to_string(model.spec().family)},
                       {"spec", to_json(model.spec())},
                       {"seed", model.spec().seed},
                       {"provider_fingerprint", model.provider_fingerprint()},
                       {"width", c.width()},
                       {"threshold", model.threshold()},
                       {"float", "f64le"},
                       {"structure", c.structure()},
                       {"training_log", model.training_log()}};
  const std::string text = header.dump();
  const std::vector<double> params = c.parameters();
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kArtifactVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u64(out, params.size());
  for (double p : params) put_u64(out, std::bit_cast<std::uint64_t>(p));
  if (!out) throw IoError("failed writing model artifact");
}

TrainedModel load_model(std::istream& in) {
  Reader r(in);
  char magic[8];
  r.bytes(magic, sizeof magic, "magic");
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) {
    throw FormatError("not a model artifact (bad magic)", 0);
  }
  const auto version = r.uint(4, "format version");
  if (version != kArtifactVersion) {
    throw ValidationError("unsupported model artifact version " + std::to_string(version) + " (expected " +
                          std::to_string(kArtifactVersion) + ")");
  }
  const auto header_len = static_cast<std::size_t>(r.uint(4, "header length"));
  const std::size_t header_at = r.offset();
  std::string text(header_len, '\0');
  r.bytes(text.data(), header_len, "header");
  const json header = json::parse(text, nullptr, false);
  if (header.is_discarded() || !header.is_object()) throw FormatError("model header is not valid JSON", header_at);
  if (header.value("float", "") != "f64le") throw FormatError("unsupported float encoding", header_at);

  const auto count = r.uint(8, "parameter count");
  if (count > (std::uint64_t{1} << 40)) throw FormatError("implausible parameter count", r.offset() - 8);
  std::vector<double> params;
  params.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) params.push_back(std::bit_cast<double>(r.uint(8, "parameters")));

  try {
    ModelSpec spec = spec_from_json(header.at("spec"));
    auto impl = make_classifier(spec.family, header.at("structure"), params);
    if (impl->width() != header.at("width").get<std::size_t>()) throw ValidationError("artifact width mismatch");
    return TrainedModel(std::move(spec), std::shared_ptr<const Classifier>(std::move(impl)),
                        header.value("training_log", std::vector<double>{}),
                        header.value("provider_fingerprint", std::string{}), header.value("threshold", 0.5));
  } catch (const json::exception& e) {
    throw FormatError(std::string("model header is incomplete: ") + e.what(), header_at);
  }
}

void save_model(const std::filesystem::path& path, const TrainedModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model artifact: " + path.string(), path.string());
  save_model(out, model);
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read model artifact: " + path.string(), path.string());
  return load_model(in);
}

}  // namespace honesty::models
