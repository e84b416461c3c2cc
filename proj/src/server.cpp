#include "honesty/server.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "honesty/error.hpp"
#include "honesty/taxonomy.hpp"

namespace honesty::service {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- jobs

std::string to_string(JobKind k) {
  switch (k) {
    case JobKind::Embed: return "EMBED";
    case JobKind::Train: return "TRAIN";
    case JobKind::GridSearch: return "GRID_SEARCH";
    case JobKind::Evaluate: return "EVALUATE";
    case JobKind::ClassifyBatch: return "CLASSIFY_BATCH";
  }
  return "TRAIN";
}

JobKind job_kind_from_string(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  std::replace(s.begin(), s.end(), '-', '_');
  for (JobKind k : {JobKind::Embed, JobKind::Train, JobKind::GridSearch, JobKind::Evaluate, JobKind::ClassifyBatch}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown job kind '" + s + "'", "expected embed, train, grid_search, evaluate, classify_batch");
}

std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::Pending: return "PENDING";
    case JobStatus::Running: return "RUNNING";
    case JobStatus::Done: return "DONE";
    case JobStatus::Failed: return "FAILED";
  }
  return "PENDING";
}

json to_json(const JobRecord& j) {
  json out = {{"job_id", j.job_id},
              {"kind", to_string(j.kind)},
              {"status", to_string(j.status)},
              {"progress", j.progress},
              {"artifact_refs", j.artifact_refs},
              {"params", j.params},
              {"error", nullptr}};
  if (j.error) out["error"] = *j.error;
  return out;
}

JobManager::~JobManager() { join_all(); }

void JobManager::join_all() {
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(mu_);
    threads.swap(threads_);
  }
  for (auto& t : threads) {
    if (t.joinable()) t.join();
  }
}

std::string JobManager::submit(JobKind kind, json params, Body body) {
  std::string id;
  {
    std::lock_guard lock(mu_);
    char buf[16];
    std::snprintf(buf, sizeof buf, "job-%04zu", next_id_++);
    id = buf;
    JobRecord rec;
    rec.job_id = id;
    rec.kind = kind;
    rec.params = std::move(params);
    jobs_[id] = rec;
  }
  auto set = [this, id](auto&& update) {
    {
      std::lock_guard lock(mu_);
      update(jobs_.at(id));
    }
    cv_.notify_all();
  };
  std::thread worker([set, id, body = std::move(body)] {
    set([](JobRecord& r) { r.status = JobStatus::Running; });
    const Progress progress = [&set](double p) {
      set([p](JobRecord& r) { r.progress = std::clamp(std::max(r.progress, p), 0.0, 1.0); });
    };
    try {
      auto refs = body(id, progress);
      set([&refs](JobRecord& r) {
        r.artifact_refs = std::move(refs);
        r.progress = 1.0;
        r.status = JobStatus::Done;
      });
    } catch (const Error& e) {
      set([&e](JobRecord& r) {
        r.error = json{{"code", e.code()}, {"message", e.what()}, {"detail", e.detail()}};
        r.status = JobStatus::Failed;
      });
    } catch (const std::exception& e) {
      set([&e](JobRecord& r) {
        r.error = json{{"code", "internal"}, {"message", e.what()}, {"detail", ""}};
        r.status = JobStatus::Failed;
      });
    }
  });
  std::lock_guard lock(mu_);
  threads_.push_back(std::move(worker));
  return id;
}

std::optional<JobRecord> JobManager::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::vector<JobRecord> JobManager::list() const {
  std::lock_guard lock(mu_);
  std::vector<JobRecord> out;
  for (const auto& [id, rec] : jobs_) out.push_back(rec);
  return out;
}

JobRecord JobManager::wait(const std::string& id) const {
  std::unique_lock lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw NotFoundError("no job " + id, id);
  cv_.wait(lock, [&] { return it->second.status == JobStatus::Done || it->second.status == JobStatus::Failed; });
  return it->second;
}

// ---------------------------------------------------------------- HTTP helpers

namespace {

class MalformedJson : public Error {
public:
  explicit MalformedJson(const std::string& detail) : Error("malformed_json", "request body is not valid JSON", detail) {}
};

class TooLarge : public Error {
public:
  explicit TooLarge(const std::string& message) : Error("batch_too_large", message) {}
};

json parse_body(const httplib::Request& req) {
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw MalformedJson(req.body.substr(0, 200));
  return j;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                const std::string& detail) {
  send_json(res, status, {{"code", code}, {"message", message}, {"detail", detail}});
}

int status_for(const Error& e) {
  const std::string& c = e.code();
  if (c == "not_found") return 404;
  if (c == "stage") return 409;
  if (c == "batch_too_large") return 413;
  if (c == "transport" || c == "protocol" || c == "partial_embedding") return 502;
  if (c == "validation" || c == "precondition" || c == "format" || c == "malformed_json" || c == "divergence") {
    return 400;
  }
  return 500;
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

Handler guarded(Handler fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, status_for(e), e.code(), e.what(), e.detail());
    } catch (const json::exception& e) {
      send_error(res, 400, "validation", "request body has the wrong shape", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what(), "");
    }
  };
}

std::string utc_stamp() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%S", &tm);
  return buf;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("missing file " + path.string(), path.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError("corrupt JSON file " + path.string());
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + path.string(), path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

// Resource ids end up in file names.
void check_id(const std::string& id) {
  if (id.empty() || id.size() > 128 ||
      !std::all_of(id.begin(), id.end(), [](unsigned char c) { return std::isalnum(c) || c == '-' || c == '_'; })) {
    throw ValidationError("invalid resource id '" + id + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------- server

Server::Server(pipeline::Config config)
    : config_(std::move(config)),
      http_(std::make_unique<httplib::Server>()),
      provider_(pipeline::make_provider(config_)),
      stoplist_(pipeline::load_stoplist(config_)),
      dictionary_(pipeline::load_dictionary(config_)),
      started_(std::chrono::steady_clock::now()) {
  fs::create_directories(config_.data_dir);
  store_ = std::make_unique<annotate::AnnotationStore>(config_.data_dir / "annotations.jsonl");

  const fs::path reviews = config_.data_dir / "reviews.jsonl";
  if (fs::exists(reviews)) {
    for (auto& r : corpus::ingest_file(reviews).corpus.reviews) {
      if (reviews_.contains(r.id)) continue;
      review_order_.push_back(r.id);
      reviews_.emplace(r.id, std::move(r));
    }
  }
  routes();
}

Server::~Server() {
  stop();
  jobs_.join_all();
}

bool Server::listen() {
  spdlog::info("listening on {}:{}", config_.host, config_.port);
  return http_->listen(config_.host, config_.port);
}

int Server::start_background() {
  const int port = http_->bind_to_any_port(config_.host);
  if (port <= 0) throw IoError("cannot bind a port on " + config_.host);
  background_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  return port;
}

void Server::stop() {
  if (http_) http_->stop();
  if (background_.joinable()) background_.join();
}

std::string Server::new_id(const std::string& prefix) {
  std::lock_guard lock(mu_);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", ++id_counter_);
  return prefix + "-" + utc_stamp() + "-" + buf;
}

std::string Server::latest(const std::string& subdir, const std::string& ext) const {
  const fs::path dir = config_.data_dir / subdir;
  std::string best;
  if (!fs::exists(dir)) return best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ext) continue;
    const std::string stem = entry.path().stem().string();
    if (stem > best) best = stem;
  }
  return best;
}

std::shared_ptr<const models::TrainedModel> Server::model(const std::string& ref, std::string* resolved) {
  std::string id = ref.empty() || ref == "latest" ? latest("models", ".hvm") : ref;
  if (id.empty()) throw NotFoundError("no trained model available", "train one with POST /jobs {\"kind\":\"train\"}");
  check_id(id);
  if (resolved) *resolved = id;
  std::lock_guard lock(mu_);
  if (auto it = models_.find(id); it != models_.end()) return it->second;
  const fs::path path = config_.data_dir / "models" / (id + ".hvm");
  if (!fs::exists(path)) throw NotFoundError("no model " + id, id);
  auto m = std::make_shared<const models::TrainedModel>(models::load_model(path));
  models_[id] = m;
  return m;
}

models::Dataset Server::dataset_for(const json& params) {
  if (params.contains("features")) {
    return pipeline::labeled_dataset(features::load_features(params.at("features").get<std::string>()));
  }
  corpus::Corpus labeled;
  const std::string source = params.value("source", std::string("annotations"));
  if (params.contains("corpus")) {
    labeled = corpus::ingest_file(params.at("corpus").get<std::string>()).corpus;
  } else if (source == "configured") {
    if (config_.labeled_dataset.empty()) throw PreconditionError("no labeled_dataset configured");
    labeled = corpus::ingest_file(config_.labeled_dataset).corpus;
  } else if (source == "annotations") {
    for (auto& ex : store_->export_labels()) labeled.reviews.push_back(std::move(ex.review));
  } else {
    throw ValidationError("unknown dataset source '" + source + "'", "expected annotations or configured");
  }
  return pipeline::labeled_dataset(pipeline::featurize(labeled, *provider_, stoplist_, cache_));
}

std::vector<std::string> Server::run_job(JobKind kind, const json& params, const std::string& job_id,
                                         const JobManager::Progress& progress) {
  const std::uint64_t seed = params.value("seed", config_.seed);
  switch (kind) {
    case JobKind::Embed: {
      corpus::Corpus input;
      if (params.contains("input")) {
        input = corpus::ingest_file(params.at("input").get<std::string>()).corpus;
      } else {
        std::lock_guard lock(mu_);
        for (const auto& id : review_order_) input.reviews.push_back(reviews_.at(id));
      }
      const auto records = pipeline::featurize(input, *provider_, stoplist_, cache_);
      const std::string id = "features-" + job_id;
      features::save_features(config_.data_dir / "features" / (id + ".jsonl"), records);
      return {"features/" + id};
    }
    case JobKind::Train: {
      const models::Dataset data = dataset_for(params);
      progress(0.1);
      models::ModelSpec spec;
      spec.family = models::family_from_string(params.value("family", std::string("dnn")));
      spec.hyper = params.value("hyper", json::object());
      spec.seed = seed;
      const auto trained = models::train(spec, data, provider_->fingerprint());
      const std::string id = new_id("model");
      fs::create_directories(config_.data_dir / "models");
      models::save_model(config_.data_dir / "models" / (id + ".hvm"), trained);
      return {"models/" + id};
    }
    case JobKind::GridSearch:
    case JobKind::Evaluate: {
      const models::Dataset data = dataset_for(params);
      pipeline::EvaluateOptions opt;
      if (kind == JobKind::GridSearch) {
        opt.families = {models::family_from_string(params.value("family", std::string("lr")))};
        opt.grid = true;
      } else {
        opt.families = pipeline::parse_families(params.value("models", std::string("all")));
        opt.grid = params.value("grid", false);
        opt.single_tree = params.value("with_dt", false);
      }
      opt.folds = params.value("folds", config_.folds);
      opt.seed = seed;
      opt.stratified = params.value("stratified", true);
      opt.hyper = params.value("hyper", json::object());
      if (params.contains("baseline")) {
        const auto& b = params.at("baseline");
        opt.baseline = eval::baseline_random(b.at("n_violations").get<std::size_t>(), b.at("n_total").get<std::size_t>());
      }
      opt.progress = progress;
      auto report = pipeline::evaluate(data, opt);
      report.meta["provider"] = provider_->fingerprint();
      const std::string id = new_id("report");
      write_text(config_.data_dir / "reports" / (id + ".json"), eval::to_json(report).dump(2) + "\n");
      return {"reports/" + id};
    }
    case JobKind::ClassifyBatch: {
      std::string model_id;
      const auto m = model(params.value("model", std::string("latest")), &model_id);
      const auto input = corpus::ingest_file(params.at("input").get<std::string>()).corpus;
      const auto results = pipeline::classify(*m, model_id, input, *provider_, stoplist_, cache_);
      std::ostringstream out;
      for (const auto& r : results) out << pipeline::to_json(r).dump() << "\n";
      const std::string id = "classify-" + job_id;
      write_text(config_.data_dir / "classify" / (id + ".jsonl"), out.str());
      return {"classify/" + id};
    }
  }
  return {};
}

void Server::routes() {
  auto& s = *http_;

  s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404) {
      send_error(res, 404, "not_found", "no such resource", req.method + " " + req.path);
    } else {
      send_error(res, res.status, "http_error", "request failed", std::to_string(res.status));
    }
  });

  s.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}});
  }));

  s.Post("/reviews", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    const json items = body.is_array() ? body : body.at("reviews");
    if (!items.is_array()) throw ValidationError("expected an array of reviews");
    const bool enqueue = body.is_object() ? body.value("enqueue", true) : true;
    const bool filter = body.is_object() ? body.value("filter", false) : false;

    std::ostringstream lines;
    for (const auto& item : items) lines << item.dump() << "\n";
    std::istringstream in(lines.str());
    auto result = corpus::ingest(in);

    json rejected = json::array();
    for (const auto& r : result.rejections) {
      rejected.push_back({{"index", r.line - 1}, {"id", r.id}, {"reason", r.reason}});
    }
    corpus::Corpus accepted;
    {
      std::lock_guard lock(mu_);
      for (auto& r : result.corpus.reviews) {
        if (reviews_.contains(r.id)) {
          rejected.push_back({{"index", nullptr}, {"id", r.id}, {"reason", "duplicate id"}});
          continue;
        }
        review_order_.push_back(r.id);
        reviews_.emplace(r.id, r);
        accepted.reviews.push_back(r);
      }
      std::ofstream out(config_.data_dir / "reviews.jsonl", std::ios::app);
      corpus::write_jsonl(out, accepted);
    }
    std::size_t enqueued = 0;
    if (enqueue) {
      for (const auto& r : accepted.reviews) {
        if (filter && !corpus::matches(r, dictionary_, stoplist_)) continue;
        enqueued += store_->add(r) ? 1 : 0;
      }
    }
    send_json(res, 200, {{"accepted", accepted.size()}, {"enqueued", enqueued}, {"rejected", rejected}});
  }));

  s.Post("/classify", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    const json items = body.is_array() ? body : body.at("reviews");
    if (!items.is_array()) throw ValidationError("expected an array of reviews");
    if (items.size() > config_.classify_batch_cap) {
      throw TooLarge("at most " + std::to_string(config_.classify_batch_cap) +
                     " reviews per request; use POST /jobs with kind classify_batch");
    }
    corpus::Corpus input;
    for (const auto& item : items) input.reviews.push_back(corpus::review_from_json(item));
    std::string model_id;
    const auto m = model(body.is_object() ? body.value("model", std::string("latest")) : "latest", &model_id);
    json results = json::array();
    for (const auto& r : pipeline::classify(*m, model_id, input, *provider_, stoplist_, cache_)) {
      results.push_back(pipeline::to_json(r));
    }
    send_json(res, 200, {{"results", results}});
  }));

  s.Post("/jobs", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    if (!body.is_object()) throw ValidationError("expected a job object");
    const JobKind kind = job_kind_from_string(body.at("kind").get<std::string>());
    json params = body;
    params.erase("kind");
    const std::string id =
        jobs_.submit(kind, params, [this, kind, params](const std::string& job_id, const JobManager::Progress& p) {
          return run_job(kind, params, job_id, p);
        });
    send_json(res, 202, to_json(*jobs_.get(id)));
  }));

  s.Get("/jobs", guarded([this](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& j : jobs_.list()) out.push_back(to_json(j));
    send_json(res, 200, out);
  }));

  s.Get(R"(/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto job = jobs_.get(req.matches[1]);
    if (!job) throw NotFoundError("no job " + std::string(req.matches[1]), req.matches[1]);
    send_json(res, 200, to_json(*job));
  }));

  s.Get("/reports", guarded([this](const httplib::Request&, httplib::Response& res) {
    std::vector<std::string> ids;
    const fs::path dir = config_.data_dir / "reports";
    if (fs::exists(dir)) {
      for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".json") ids.push_back(e.path().stem().string());
      }
    }
    std::sort(ids.begin(), ids.end());
    send_json(res, 200, ids);
  }));

  s.Get(R"(/reports/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    std::string id = req.matches[1];
    if (id == "latest") id = latest("reports", ".json");
    if (id.empty()) throw NotFoundError("no report yet");
    check_id(id);
    const json j = read_json_file(config_.data_dir / "reports" / (id + ".json"));
    const std::string fmt = req.has_param("format") ? req.get_param_value("format") : "json";
    const auto format = eval::format_from_string(fmt);
    if (format == eval::ReportFormat::Json) {
      json out = j;
      out["report_id"] = id;
      send_json(res, 200, out);
    } else {
      res.status = 200;
      res.set_content(eval::render_report(eval::report_from_json(j), format),
                      format == eval::ReportFormat::Csv ? "text/csv" : "text/plain");
    }
  }));

  s.Get("/annotations/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const std::string annotator = req.get_param_value("annotator");
    if (annotator.empty()) throw ValidationError("annotator is required");
    annotate::QueuePolicy policy;
    policy.strategy = annotate::strategy_from_string(
        req.has_param("strategy") ? req.get_param_value("strategy") : std::string("fifo"));
    const auto role =
        annotate::role_from_string(req.has_param("role") ? req.get_param_value("role") : std::string("labeler"));
    std::shared_ptr<const models::TrainedModel> m;
    if (policy.strategy == annotate::Strategy::Uncertainty) {
      m = model(req.has_param("model") ? req.get_param_value("model") : std::string("latest"));
    }
    auto score = [this, m](const annotate::AnnotationTask& t) {
      const auto tokens = textprep::preprocess(t.review.text, stoplist_, t.review.id);
      return m->predict_proba(features::embed_review(*provider_, tokens, cache_).values);
    };
    if (m) policy.scorer = score;
    const auto task = store_->next_task(policy, annotator, role);
    if (!task) {
      res.status = 204;
      return;
    }
    json out = annotate::to_json(*task);
    if (m) out["probability"] = score(*task);
    send_json(res, 200, out);
  }));

  s.Get("/annotations/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, annotate::to_json(store_->agreement_stats()));
  }));

  s.Get("/annotations", guarded([this](const httplib::Request& req, httplib::Response& res) {
    std::optional<annotate::Stage> stage;
    if (req.has_param("stage")) stage = annotate::stage_from_string(req.get_param_value("stage"));
    json out = json::array();
    for (const auto& t : store_->tasks()) {
      if (!stage || t.stage == *stage) out.push_back(annotate::to_json(t));
    }
    send_json(res, 200, out);
  }));

  s.Get(R"(/annotations/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto task = store_->get(req.matches[1]);
    if (!task) throw NotFoundError("no annotation task for review " + std::string(req.matches[1]), req.matches[1]);
    send_json(res, 200, annotate::to_json(*task));
  }));

  s.Post("/annotations", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    annotate::Label label;
    label.violation = body.at("violation").get<bool>();
    label.categories = body.value("categories", std::vector<std::string>{});
    label.annotator = body.at("annotator").get<std::string>();
    label.round = body.value("round", 0);
    std::optional<annotate::Stage> expected;
    if (body.contains("expected_stage")) expected = annotate::stage_from_string(body.at("expected_stage"));
    const auto task = store_->submit_label(body.at("review_id").get<std::string>(), label, expected);
    send_json(res, 200, annotate::to_json(task));
  }));

  s.Post(R"(/annotations/([^/]+)/resolve)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    const auto task = store_->resolve_conflict(req.matches[1], body.at("violation").get<bool>(),
                                               body.value("categories", std::vector<std::string>{}),
                                               body.value("note", std::string{}), body.value("resolver", std::string{}));
    send_json(res, 200, annotate::to_json(task));
  }));

  s.Get("/taxonomy", guarded([](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, taxonomy::taxonomy_json());
  }));

  s.Get("/metrics/live", guarded([this](const httplib::Request&, httplib::Response& res) {
    json jobs = {{"PENDING", 0}, {"RUNNING", 0}, {"DONE", 0}, {"FAILED", 0}};
    for (const auto& j : jobs_.list()) jobs[to_string(j.status)] = jobs[to_string(j.status)].get<int>() + 1;
    std::size_t n_reviews;
    {
      std::lock_guard lock(mu_);
      n_reviews = reviews_.size();
    }
    const std::string report = latest("reports", ".json");
    const std::string model_id = latest("models", ".hvm");
    const double uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    send_json(res, 200,
              {{"agreement", annotate::to_json(store_->agreement_stats())},
               {"jobs", jobs},
               {"n_reviews", n_reviews},
               {"n_tasks", store_->size()},
               {"latest_report", report.empty() ? json(nullptr) : json(report)},
               {"latest_model", model_id.empty() ? json(nullptr) : json(model_id)},
               {"provider", provider_->fingerprint()},
               {"uptime_seconds", uptime}});
  }));
}

}  // namespace honesty::service
