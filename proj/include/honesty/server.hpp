#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "honesty/annotate.hpp"
#include "honesty/pipeline.hpp"

namespace httplib {
class Server;
}

namespace honesty::service {

enum class JobKind { Embed, Train, GridSearch, Evaluate, ClassifyBatch };
enum class JobStatus { Pending, Running, Done, Failed };

std::string to_string(JobKind k);  // "EMBED", ...
JobKind job_kind_from_string(std::string s);
std::string to_string(JobStatus s);

struct JobRecord {
  std::string job_id;
  JobKind kind = JobKind::Train;
  JobStatus status = JobStatus::Pending;
  double progress = 0;
  std::vector<std::string> artifact_refs;
  nlohmann::json params = nlohmann::json::object();
  std::optional<nlohmann::json> error;  // {code, message, detail}
};

nlohmann::json to_json(const JobRecord& j);

// Runs each job on its own background thread. Status only moves
// PENDING -> RUNNING -> DONE | FAILED; a job body returns its artifact refs.
class JobManager {
public:
  using Progress = std::function<void(double)>;
  using Body = std::function<std::vector<std::string>(const std::string& job_id, const Progress&)>;

  JobManager() = default;
  ~JobManager();
  JobManager(const JobManager&) = delete;
  JobManager& operator=(const JobManager&) = delete;

  std::string submit(JobKind kind, nlohmann::json params, Body body);
  std::optional<JobRecord> get(const std::string& id) const;
  std::vector<JobRecord> list() const;
  // Blocks until the job leaves PENDING/RUNNING.
  JobRecord wait(const std::string& id) const;
  void join_all();

private:
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::map<std::string, JobRecord> jobs_;
  std::vector<std::thread> threads_;
  std::size_t next_id_ = 1;
};

// HTTP API over the pipeline. All state lives under config.data_dir:
//   reviews.jsonl            ingested reviews
//   annotations.jsonl        annotation event log (+ annotations.snapshot.json)
//   models/<id>.hvm          model artifacts
//   reports/<id>.json        evaluation reports
//   features/<id>.jsonl      embedding job output
//   classify/<id>.jsonl      batch classification output
class Server {
public:
  explicit Server(pipeline::Config config);
  ~Server();

  // Blocking.
  bool listen();
  // Binds to an ephemeral port and serves on a background thread.
  int start_background();
  void stop();

  httplib::Server& http() { return *http_; }
  annotate::AnnotationStore& store() { return *store_; }
  JobManager& jobs() { return jobs_; }
  const pipeline::Config& config() const { return config_; }

private:
  void routes();
  std::shared_ptr<const models::TrainedModel> model(const std::string& ref, std::string* resolved = nullptr);
  std::string latest(const std::string& subdir, const std::string& ext) const;
  std::string new_id(const std::string& prefix);
  models::Dataset dataset_for(const nlohmann::json& params);
  std::vector<std::string> run_job(JobKind kind, const nlohmann::json& params, const std::string& job_id,
                                   const JobManager::Progress& progress);

  pipeline::Config config_;
  std::unique_ptr<httplib::Server> http_;
  std::unique_ptr<annotate::AnnotationStore> store_;
  std::unique_ptr<features::EmbeddingProvider> provider_;
  textprep::StopWordList stoplist_;
  corpus::KeywordDictionary dictionary_;
  features::TokenVectorCache cache_;
  JobManager jobs_;

  std::mutex mu_;  // guards reviews_, models_, id counter
  std::map<std::string, corpus::Review> reviews_;
  std::vector<std::string> review_order_;
  std::map<std::string, std::shared_ptr<const models::TrainedModel>> models_;
  std::size_t id_counter_ = 0;
  std::thread background_;
  std::chrono::steady_clock::time_point started_;
};

}  // namespace honesty::service
