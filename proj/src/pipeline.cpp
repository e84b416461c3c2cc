#include "honesty/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "honesty/error.hpp"

namespace honesty::pipeline {

using nlohmann::json;

json to_json(const Config& c) {
  return {{"host", c.host},
          {"port", c.port},
          {"embedding_url", c.embedding_url},
          {"embedding_width", c.embedding_width},
          {"hash_seed", c.hash_seed},
          {"embedding_timeout_seconds", c.embedding_timeout_seconds},
          {"embedding_max_batch", c.embedding_max_batch},
          {"embedding_parallelism", c.embedding_parallelism},
          {"dictionary_path", c.dictionary_path},
          {"stopword_path", c.stopword_path},
          {"data_dir", c.data_dir.string()},
          {"seed", c.seed},
          {"folds", c.folds},
          {"classify_batch_cap", c.classify_batch_cap},
          {"labeled_dataset", c.labeled_dataset}};
}

Config config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("configuration must be a JSON object");
  const json known = to_json(Config{});
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ValidationError("unknown configuration key '" + key + "'");
  }
  Config c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.embedding_url = j.value("embedding_url", c.embedding_url);
    c.embedding_width = j.value("embedding_width", c.embedding_width);
    c.hash_seed = j.value("hash_seed", c.hash_seed);
    c.embedding_timeout_seconds = j.value("embedding_timeout_seconds", c.embedding_timeout_seconds);
    c.embedding_max_batch = j.value("embedding_max_batch", c.embedding_max_batch);
    c.embedding_parallelism = j.value("embedding_parallelism", c.embedding_parallelism);
    c.dictionary_path = j.value("dictionary_path", c.dictionary_path);
    c.stopword_path = j.value("stopword_path", c.stopword_path);
    c.data_dir = j.value("data_dir", c.data_dir.string());
    c.seed = j.value("seed", c.seed);
    c.folds = j.value("folds", c.folds);
    c.classify_batch_cap = j.value("classify_batch_cap", c.classify_batch_cap);
    c.labeled_dataset = j.value("labeled_dataset", c.labeled_dataset);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad configuration value: ") + e.what());
  }
  if (c.port < 0 || c.port > 65535) throw ValidationError("port out of range");
  if (c.embedding_width == 0) throw ValidationError("embedding_width must be positive");
  if (c.classify_batch_cap == 0) throw ValidationError("classify_batch_cap must be positive");
  return c;
}

void apply_env_overrides(Config& config) {
  if (const char* port = std::getenv("HONESTY_PORT"); port && *port) {
    try {
      config.port = std::stoi(port);
    } catch (const std::exception&) {
      throw ValidationError("HONESTY_PORT is not a number", port);
    }
  }
  if (const char* url = std::getenv("HONESTY_EMBEDDING_URL"); url) config.embedding_url = url;
}

Config load_config(const std::optional<std::filesystem::path>& path) {
  Config config;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw IoError("cannot read configuration: " + path->string(), path->string());
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ValidationError("configuration is not valid JSON: " + path->string());
    config = config_from_json(j);
  }
  apply_env_overrides(config);
  return config;
}

std::unique_ptr<features::EmbeddingProvider> make_provider(const Config& config) {
  if (config.embedding_url.empty()) {
    return std::make_unique<features::HashEmbeddingProvider>(config.embedding_width, config.hash_seed);
  }
  features::RemoteConfig rc;
  rc.base_url = config.embedding_url;
  rc.width = config.embedding_width;
  rc.timeout_seconds = config.embedding_timeout_seconds;
  rc.max_batch = config.embedding_max_batch;
  rc.parallelism = config.embedding_parallelism;
  return std::make_unique<features::RemoteEmbeddingProvider>(rc);
}

textprep::StopWordList load_stoplist(const Config& config) {
  if (config.stopword_path.empty()) return textprep::StopWordList::builtin();
  return textprep::StopWordList::load(config.stopword_path);
}

corpus::KeywordDictionary load_dictionary(const Config& config) {
  if (config.dictionary_path.empty()) return corpus::KeywordDictionary::builtin();
  return corpus::KeywordDictionary::load(config.dictionary_path);
}

std::vector<features::FeatureRecord> featurize(const corpus::Corpus& corpus,
                                               const features::EmbeddingProvider& provider,
                                               const textprep::StopWordList& stoplist,
                                               features::TokenVectorCache& cache) {
  std::vector<textprep::TokenSequence> sequences;
  sequences.reserve(corpus.size());
  for (const auto& r : corpus.reviews) sequences.push_back(textprep::preprocess(r.text, stoplist, r.id));
  auto vectors = features::embed_corpus(provider, sequences, cache);
  std::vector<features::FeatureRecord> out;
  out.reserve(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    out.push_back({std::move(vectors[i]), corpus.reviews[i].label});
  }
  return out;
}

json to_json(const ClassifyResult& r) {
  return {{"review_id", r.review_id},
          {"probability", r.probability},
          {"label", r.label},
          {"model_ref", r.model_ref},
          {"categories_hint", r.categories_hint}};
}

std::vector<ClassifyResult> classify(const models::TrainedModel& model, const std::string& model_ref,
                                     const corpus::Corpus& corpus, const features::EmbeddingProvider& provider,
                                     const textprep::StopWordList& stoplist, features::TokenVectorCache& cache) {
  model.check_provider(provider.fingerprint());
  const auto records = featurize(corpus, provider, stoplist, cache);
  std::vector<ClassifyResult> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    ClassifyResult r;
    r.review_id = rec.vector.source_id;
    r.probability = model.predict_proba(rec.vector.values);
    r.label = r.probability >= model.threshold() ? 1 : 0;
    r.model_ref = model_ref;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<models::Family> parse_families(const std::string& spec) {
  if (spec == "all") return {std::begin(models::kAllFamilies), std::end(models::kAllFamilies)};
  std::vector<models::Family> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto f = models::family_from_string(item);
    if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
  }
  if (out.empty()) throw ValidationError("no model family given");
  return out;
}

eval::EvalReport evaluate(const models::Dataset& data, const EvaluateOptions& options) {
  if (options.families.empty()) throw PreconditionError("no model families to evaluate");
  const eval::FoldPlan plan = eval::make_folds(data, options.folds, options.seed, options.stratified);
  eval::EvalReport report;
  report.baseline = options.baseline;
  json families = json::array();
  auto run_column = [&](models::Family family, json hyper, json grid, const std::string& name) {
    if (options.grid) {
      auto result = eval::grid_search(family, grid, data, plan, options.seed);
      report.models.push_back(std::move(result.report));
    } else {
      models::ModelSpec spec;
      spec.family = family;
      spec.seed = options.seed;
      spec.hyper = std::move(hyper);
      report.models.push_back(eval::cross_validate(spec, data, plan));
    }
    report.models.back().name = name;
  };
  for (std::size_t i = 0; i < options.families.size(); ++i) {
    const auto family = options.families[i];
    families.push_back(models::to_string(family));
    json hyper = options.hyper.value(models::short_name(family), json::object());
    json grid = options.grid ? eval::default_grid(family) : json::object();
    if (grid.empty()) grid = json::object();
    const bool forest = family == models::Family::TreeEnsemble;
    run_column(family, hyper, grid, forest ? "RF" : models::to_string(family));
    if (forest && options.single_tree) {
      hyper["forest_size"] = 1;
      grid["forest_size"] = json::array({1});
      run_column(family, hyper, grid, "DT");
    }
    if (options.progress) options.progress(static_cast<double>(i + 1) / static_cast<double>(options.families.size()));
  }
  report.meta = {{"seed", options.seed},
                 {"folds", options.folds},
                 {"stratified", options.stratified},
                 {"grid_search", options.grid},
                 {"single_tree", options.single_tree},
                 {"n_examples", data.size()},
                 {"n_violations", data.count(1)},
                 {"width", data.width()},
                 {"families", families}};
  return report;
}

models::Dataset labeled_dataset(const std::vector<features::FeatureRecord>& records) {
  std::vector<features::FeatureRecord> labeled;
  for (const auto& r : records) {
    if (r.label) labeled.push_back(r);
  }
  if (labeled.empty()) throw PreconditionError("no labeled reviews in the input");
  return models::Dataset::from_features(labeled);
}

}  // namespace honesty::pipeline
