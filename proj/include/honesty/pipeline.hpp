#pragma once

// Glue shared by the CLI and the HTTP server: configuration, provider
// construction, and the end-to-end steps built from the library modules.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "honesty/corpus.hpp"
#include "honesty/eval.hpp"
#include "honesty/features.hpp"
#include "honesty/models.hpp"
#include "honesty/textprep.hpp"

namespace honesty::pipeline {

struct Config {
  std::string host = "127.0.0.1";
  int port = 8080;
  // Empty means the local hash provider.
  std::string embedding_url;
  std::size_t embedding_width = features::kDefaultWidth;
  std::uint64_t hash_seed = 0;
  double embedding_timeout_seconds = 30.0;
  std::size_t embedding_max_batch = 64;
  std::size_t embedding_parallelism = 1;
  std::string dictionary_path;  // empty means the bundled dictionary
  std::string stopword_path;    // empty means the bundled stop-word list
  std::filesystem::path data_dir = "honesty-data";
  std::uint64_t seed = 7;
  std::size_t folds = eval::kDefaultFolds;
  std::size_t classify_batch_cap = 256;
  // Optional labeled review file used when a job asks for the configured dataset.
  std::string labeled_dataset;
};

nlohmann::json to_json(const Config& c);
// Unknown keys are rejected.
Config config_from_json(const nlohmann::json& j);
// Reads the file if given, then applies HONESTY_PORT and
// HONESTY_EMBEDDING_URL from the environment.
Config load_config(const std::optional<std::filesystem::path>& path);
void apply_env_overrides(Config& config);

std::unique_ptr<features::EmbeddingProvider> make_provider(const Config& config);
textprep::StopWordList load_stoplist(const Config& config);
corpus::KeywordDictionary load_dictionary(const Config& config);

// Preprocess then mean-pool every review. Labels are carried over.
std::vector<features::FeatureRecord> featurize(const corpus::Corpus& corpus, const features::EmbeddingProvider& provider,
                                               const textprep::StopWordList& stoplist,
                                               features::TokenVectorCache& cache);

struct ClassifyResult {
  std::string review_id;
  double probability = 0;
  int label = 0;
  std::string model_ref;
  std::vector<std::string> categories_hint;  // reserved, always empty
};

nlohmann::json to_json(const ClassifyResult& r);

std::vector<ClassifyResult> classify(const models::TrainedModel& model, const std::string& model_ref,
                                     const corpus::Corpus& corpus, const features::EmbeddingProvider& provider,
                                     const textprep::StopWordList& stoplist, features::TokenVectorCache& cache);

// Accepts "all", a family name, or a comma separated list.
std::vector<models::Family> parse_families(const std::string& spec);

struct EvaluateOptions {
  std::vector<models::Family> families;
  std::size_t folds = eval::kDefaultFolds;
  std::uint64_t seed = 7;
  bool stratified = true;
  // Grid search per family instead of the default hyperparameters.
  bool grid = false;
  // Adds a single-tree "DT" column (forest_size 1) right after the forest.
  bool single_tree = false;
  // Per-family hyperparameter overrides (by short name), used without grid.
  nlohmann::json hyper = nlohmann::json::object();
  std::optional<eval::Baseline> baseline;
  std::function<void(double)> progress;
};

eval::EvalReport evaluate(const models::Dataset& data, const EvaluateOptions& options);

// Training set from reviews that carry a label.
models::Dataset labeled_dataset(const std::vector<features::FeatureRecord>& records);

}  // namespace honesty::pipeline
