// Command line front end for the review pipeline.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "honesty/annotate.hpp"
#include "honesty/corpus.hpp"
#include "honesty/error.hpp"
#include "honesty/eval.hpp"
#include "honesty/features.hpp"
#include "honesty/models.hpp"
#include "honesty/pipeline.hpp"
#include "honesty/server.hpp"
#include "honesty/taxonomy.hpp"
#include "honesty/textprep.hpp"

using namespace honesty;
using nlohmann::json;

namespace {

struct Output {
  std::optional<std::ofstream> file;
  std::ostream* stream = &std::cout;

  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file.emplace(path);
    if (!*file) throw IoError("cannot write " + path, path);
    stream = &*file;
  }
  std::ostream& operator*() { return *stream; }
};

corpus::Corpus read_corpus(const std::string& path, bool quiet_rejections = false) {
  auto result = corpus::ingest_file(path);
  if (!quiet_rejections) {
    for (const auto& r : result.rejections) {
      spdlog::warn("{}:{} rejected ({}){}", path, r.line, r.reason, r.id.empty() ? "" : " id=" + r.id);
    }
  }
  return std::move(result.corpus);
}

void emit_error(const std::string& code, const std::string& message, const std::string& detail) {
  std::cerr << json{{"code", code}, {"message", message}, {"detail", detail}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("honesty"));

  CLI::App app{"Detect and triage honesty violations in app reviews"};
  app.require_subcommand(1);
  std::string config_path, log_level = "warn";
  std::optional<std::uint64_t> seed_flag;
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed_flag, "Seed for every random choice");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");

  // ingest
  std::string in_path, out_path, rejections_path;
  auto* ingest = app.add_subcommand("ingest", "Validate a review JSONL file and write the accepted records");
  ingest->add_option("--input", in_path, "Review JSONL")->required();
  ingest->add_option("--output", out_path, "Accepted reviews (JSONL)");
  ingest->add_option("--rejections", rejections_path, "Rejection report (JSONL)");

  // filter
  std::string dict_path, stop_path;
  auto* filter = app.add_subcommand("filter", "Keep reviews that mention a dictionary term");
  filter->add_option("--input", in_path, "Review JSONL")->required();
  filter->add_option("--output", out_path, "Matching reviews (JSONL)");
  filter->add_option("--dict", dict_path, "Keyword dictionary, one term per line");
  filter->add_option("--stopwords", stop_path, "Stop-word list");

  // stats
  auto* stats = app.add_subcommand("stats", "Corpus statistics");
  stats->add_option("--input", in_path, "Review JSONL")->required();
  stats->add_option("--dict", dict_path, "Keyword dictionary");
  stats->add_option("--stopwords", stop_path, "Stop-word list");

  // prep
  auto* prep = app.add_subcommand("prep", "Preprocess review text into tokens");
  prep->add_option("--input", in_path, "Review JSONL")->required();
  prep->add_option("--output", out_path, "Token JSONL {id, tokens}");
  prep->add_option("--stopwords", stop_path, "Stop-word list");

  // embed
  std::string cache_path, embedding_url;
  std::optional<std::size_t> width_flag;
  auto* embed = app.add_subcommand("embed", "Mean-pooled embedding vectors for each review");
  embed->add_option("--input", in_path, "Review JSONL")->required();
  embed->add_option("--output", out_path, "Feature JSONL {id, label, vector}")->required();
  embed->add_option("--cache", cache_path, "Token vector cache file, read and updated");
  embed->add_option("--embedding-url", embedding_url, "Embedding service base URL (default: local hash provider)");
  embed->add_option("--width", width_flag, "Embedding width");
  embed->add_option("--stopwords", stop_path, "Stop-word list");

  // synth
  std::size_t synth_n = 800, synth_width = features::kDefaultWidth, synth_informative = 10;
  double synth_separation = 1.0;
  auto* synth = app.add_subcommand("synth", "Write a synthetic two-cluster feature file");
  synth->add_option("--output", out_path, "Feature JSONL")->required();
  synth->add_option("--n", synth_n, "Number of examples");
  synth->add_option("--width", synth_width, "Vector width");
  synth->add_option("--informative", synth_informative, "Number of informative dimensions");
  synth->add_option("--separation", synth_separation, "Class mean offset on informative dimensions");

  // train
  std::string model_name = "dnn", hyper_text, corpus_path;
  auto* train = app.add_subcommand("train", "Train one classifier and write the model artifact");
  train->add_option("--input", in_path, "Feature JSONL with labels");
  train->add_option("--corpus", corpus_path, "Labeled review JSONL (embedded on the fly)");
  train->add_option("--model", model_name, "lr, svm, rf, gbt, nn, dnn, gan");
  train->add_option("--hyper", hyper_text, "Hyperparameters as a JSON object");
  train->add_option("--output", out_path, "Model artifact")->required();

  // grid-search
  std::string grid_text;
  std::optional<std::size_t> folds_flag;
  bool no_stratify = false;
  auto* grid = app.add_subcommand("grid-search", "Cross-validated grid search for one family");
  grid->add_option("--input", in_path, "Feature JSONL with labels");
  grid->add_option("--corpus", corpus_path, "Labeled review JSONL");
  grid->add_option("--model", model_name, "Model family")->required();
  grid->add_option("--grid", grid_text, "Grid as JSON object or path (default: bundled grid)");
  grid->add_option("--folds", folds_flag, "Fold count");
  grid->add_flag("--no-stratify", no_stratify, "Plain round-robin folds");
  grid->add_option("--output", out_path, "Result JSON");

  // evaluate
  std::string format_name = "json";
  std::optional<std::size_t> base_violations, base_total;
  bool use_grid = false;
  bool with_dt = false;
  auto* evaluate = app.add_subcommand("evaluate", "Cross-validate model families and write a report");
  evaluate->add_option("--input", in_path, "Feature JSONL with labels");
  evaluate->add_option("--corpus", corpus_path, "Labeled review JSONL (embedded on the fly)");
  evaluate->add_option("--model", model_name, "all, a family, or a comma separated list")->required();
  evaluate->add_option("--folds", folds_flag, "Fold count");
  evaluate->add_option("--hyper", hyper_text, "Per-family overrides, e.g. {\"rf\":{\"forest_size\":1}}");
  evaluate->add_flag("--no-stratify", no_stratify, "Plain round-robin folds");
  evaluate->add_flag("--grid", use_grid, "Grid search each family with the bundled grids");
  evaluate->add_flag("--with-dt", with_dt, "Also report a single decision tree (forest_size 1) next to RF");
  evaluate->add_option("--baseline-violations", base_violations, "Violations in the full corpus");
  evaluate->add_option("--baseline-total", base_total, "Reviews in the full corpus");
  evaluate->add_option("--format", format_name, "json, text or csv");
  evaluate->add_option("--output", out_path, "Report destination");

  // classify
  auto* classify = app.add_subcommand("classify", "Score reviews with a trained model");
  classify->add_option("--model", model_name, "Model artifact")->required();
  classify->add_option("--input", in_path, "Review JSONL")->required();
  classify->add_option("--output", out_path, "Result JSONL");
  classify->add_option("--embedding-url", embedding_url, "Embedding service base URL");
  classify->add_option("--stopwords", stop_path, "Stop-word list");

  // report
  std::string assignments_path;
  std::optional<std::size_t> denominator;
  auto* report = app.add_subcommand("report", "Render an evaluation report or a category frequency table");
  report->add_option("--input", in_path, "Report JSON");
  report->add_option("--assignments", assignments_path, "Category assignment JSONL");
  report->add_option("--denominator", denominator, "Violation reviews to divide by (default: categorized reviews)");
  report->add_option("--format", format_name, "json, text or csv");
  report->add_option("--output", out_path, "Destination");

  // annotate-export
  std::string store_path;
  auto* export_cmd = app.add_subcommand("annotate-export", "Export agreed labels from an annotation log");
  export_cmd->add_option("--store", store_path, "Annotation event log (JSONL)")->required();
  export_cmd->add_option("--output", out_path, "Labeled review JSONL");
  export_cmd->add_option("--assignments", assignments_path, "Also write category assignments here");

  // serve
  std::optional<int> port_flag;
  std::string data_dir;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--port", port_flag, "Port");
  serve->add_option("--data-dir", data_dir, "State directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    emit_error("usage", e.what(), app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name());
    return 2;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    pipeline::Config config = pipeline::load_config(config_path.empty() ? std::nullopt
                                                                        : std::optional<std::filesystem::path>(config_path));
    if (seed_flag) config.seed = *seed_flag;
    if (!stop_path.empty()) config.stopword_path = stop_path;
    if (!dict_path.empty()) config.dictionary_path = dict_path;
    if (!embedding_url.empty()) config.embedding_url = embedding_url;
    if (width_flag) config.embedding_width = *width_flag;
    if (folds_flag) config.folds = *folds_flag;

    auto parse_json_arg = [](const std::string& text, const char* what) {
      if (text.empty()) return json::object();
      std::string body = text;
      if (std::filesystem::exists(text)) {
        std::ifstream in(text);
        body.assign(std::istreambuf_iterator<char>(in), {});
      }
      json j = json::parse(body, nullptr, false);
      if (j.is_discarded() || !j.is_object()) throw ValidationError(std::string(what) + " must be a JSON object");
      return j;
    };

    // Labeled training data from --input features or an embedded --corpus.
    auto load_dataset = [&]() {
      if (!in_path.empty()) return pipeline::labeled_dataset(features::load_features(in_path));
      std::string path = corpus_path.empty() ? config.labeled_dataset : corpus_path;
      if (path.empty()) throw ValidationError("give --input (features) or --corpus (labeled reviews)");
      const auto provider = pipeline::make_provider(config);
      features::TokenVectorCache cache;
      auto data = pipeline::labeled_dataset(
          pipeline::featurize(read_corpus(path), *provider, pipeline::load_stoplist(config), cache));
      return data;
    };

    if (*ingest) {
      auto result = corpus::ingest_file(in_path);
      if (!out_path.empty()) corpus::save_jsonl(out_path, result.corpus);
      json rejected = json::array();
      for (const auto& r : result.rejections) {
        rejected.push_back({{"line", r.line}, {"id", r.id}, {"reason", r.reason}});
      }
      if (!rejections_path.empty()) {
        Output rej(rejections_path);
        for (const auto& r : rejected) *rej << r.dump() << "\n";
      }
      std::cout << json{{"accepted", result.corpus.size()}, {"rejected", result.rejections.size()}}.dump() << "\n";
    } else if (*filter) {
      const auto dict = pipeline::load_dictionary(config);
      const auto corpus = read_corpus(in_path);
      const auto matched = corpus::keyword_filter(corpus, dict, pipeline::load_stoplist(config));
      Output out(out_path);
      corpus::write_jsonl(*out, matched);
      spdlog::info("{} of {} reviews matched dictionary {} ({})", matched.size(), corpus.size(), dict.name,
                   dict.version);
    } else if (*stats) {
      const auto corpus = read_corpus(in_path);
      std::cout << corpus::to_json(corpus::stats(corpus, pipeline::load_dictionary(config),
                                                 pipeline::load_stoplist(config)))
                       .dump(2)
                << "\n";
    } else if (*prep) {
      const auto stoplist = pipeline::load_stoplist(config);
      Output out(out_path);
      for (const auto& r : read_corpus(in_path).reviews) {
        const auto seq = textprep::preprocess(r.text, stoplist, r.id);
        *out << json{{"id", seq.source_id}, {"tokens", seq.tokens}}.dump() << "\n";
      }
    } else if (*embed) {
      const auto provider = pipeline::make_provider(config);
      features::TokenVectorCache cache;
      if (!cache_path.empty() && std::filesystem::exists(cache_path)) cache.load(cache_path, *provider);
      try {
        const auto records = pipeline::featurize(read_corpus(in_path), *provider, pipeline::load_stoplist(config), cache);
        features::save_features(out_path, records);
      } catch (...) {
        if (!cache_path.empty()) cache.save(cache_path, *provider);
        throw;
      }
      if (!cache_path.empty()) cache.save(cache_path, *provider);
    } else if (*synth) {
      const auto data = models::gaussian_clusters(synth_n, synth_width, synth_informative, synth_separation, config.seed);
      std::vector<features::FeatureRecord> records;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto r = data.X.row(static_cast<Eigen::Index>(i));
        records.push_back({{data.ids[i], std::vector<double>(r.begin(), r.end())}, data.y[i]});
      }
      features::save_features(out_path, records);
    } else if (*train) {
      const auto data = load_dataset();
      models::ModelSpec spec;
      spec.family = models::family_from_string(model_name);
      spec.hyper = parse_json_arg(hyper_text, "--hyper");
      spec.seed = config.seed;
      const std::string fingerprint = in_path.empty() ? pipeline::make_provider(config)->fingerprint() : "";
      const auto model = models::train(spec, data, fingerprint);
      models::save_model(out_path, model);
      std::cout << json{{"model", out_path},
                        {"spec", models::to_json(model.spec())},
                        {"final_loss", model.training_log().empty() ? 0.0 : model.training_log().back()}}
                       .dump()
                << "\n";
    } else if (*grid) {
      const auto data = load_dataset();
      const auto family = models::family_from_string(model_name);
      const json g = grid_text.empty() ? eval::default_grid(family) : parse_json_arg(grid_text, "--grid");
      const auto plan = eval::make_folds(data, config.folds, config.seed, !no_stratify);
      const auto result = eval::grid_search(family, g, data, plan, config.seed);
      json points = json::array();
      for (const auto& p : result.points) {
        json entry = {{"spec", models::to_json(p.spec)}};
        if (p.report) entry["metrics"] = eval::to_json(p.report->metrics);
        if (!p.error.empty()) entry["error"] = p.error;
        points.push_back(entry);
      }
      eval::EvalReport rep;
      rep.models.push_back(result.report);
      rep.meta = {{"seed", config.seed}, {"folds", config.folds}, {"grid", g}};
      Output out(out_path);
      *out << json{{"best", models::to_json(result.best)}, {"points", points}, {"report", eval::to_json(rep)}}.dump(2)
           << "\n";
    } else if (*evaluate) {
      const auto data = load_dataset();
      pipeline::EvaluateOptions opt;
      opt.families = pipeline::parse_families(model_name);
      opt.folds = config.folds;
      opt.seed = config.seed;
      opt.stratified = !no_stratify;
      opt.grid = use_grid;
      opt.single_tree = with_dt;
      opt.hyper = parse_json_arg(hyper_text, "--hyper");
      if (base_violations || base_total) {
        if (!base_violations || !base_total) {
          throw ValidationError("--baseline-violations and --baseline-total go together");
        }
        opt.baseline = eval::baseline_random(*base_violations, *base_total);
      }
      const auto rep = pipeline::evaluate(data, opt);
      Output out(out_path);
      *out << eval::render_report(rep, eval::format_from_string(format_name));
    } else if (*classify) {
      const auto model = models::load_model(model_name);
      if (!width_flag) config.embedding_width = model.width();
      const auto provider = pipeline::make_provider(config);
      features::TokenVectorCache cache;
      const auto results = pipeline::classify(model, model_name, read_corpus(in_path), *provider,
                                              pipeline::load_stoplist(config), cache);
      Output out(out_path);
      for (const auto& r : results) *out << pipeline::to_json(r).dump() << "\n";
    } else if (*report) {
      Output out(out_path);
      if (!assignments_path.empty()) {
        const auto freq = taxonomy::frequency_report(taxonomy::load_assignments(assignments_path), denominator);
        if (format_name == "json") {
          *out << taxonomy::to_json(freq).dump(2) << "\n";
        } else {
          *out << taxonomy::render_frequency(freq);
        }
      } else {
        if (in_path.empty()) throw ValidationError("give --input (report JSON) or --assignments");
        std::ifstream in(in_path);
        if (!in) throw IoError("cannot read " + in_path, in_path);
        const json j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw ValidationError("report is not valid JSON: " + in_path);
        *out << eval::render_report(eval::report_from_json(j), eval::format_from_string(format_name));
      }
    } else if (*export_cmd) {
      if (!std::filesystem::exists(store_path)) throw IoError("no annotation log at " + store_path, store_path);
      annotate::AnnotationStore store(store_path);
      const auto labels = store.export_labels();
      corpus::Corpus out_corpus;
      std::vector<taxonomy::CategoryAssignment> assignments;
      for (const auto& ex : labels) {
        corpus::Review r = ex.review;
        r.extra["categories"] = ex.categories;
        out_corpus.reviews.push_back(std::move(r));
        if (ex.violation && !ex.categories.empty()) {
          assignments.push_back({ex.review.id, ex.categories, "consensus", 0, ""});
        }
      }
      Output out(out_path);
      corpus::write_jsonl(*out, out_corpus);
      if (!assignments_path.empty()) {
        Output a(assignments_path);
        taxonomy::write_assignments(*a, assignments);
      }
      spdlog::info("exported {} labeled reviews", labels.size());
    } else if (*serve) {
      if (port_flag) config.port = *port_flag;
      if (!data_dir.empty()) config.data_dir = data_dir;
      service::Server server(config);
      if (!server.listen()) throw IoError("cannot listen on " + config.host + ":" + std::to_string(config.port));
    }
    return 0;
  } catch (const Error& e) {
    emit_error(e.code(), e.what(), e.detail());
    return 1;
  } catch (const std::exception& e) {
    emit_error("internal", e.what(), "");
    return 1;
  }
}
