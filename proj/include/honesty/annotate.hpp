#pragma once

// Two-analyst labeling workflow. A review is labeled once, validated by a
// different annotator, and disagreements on the violation flag are settled by
// a recorded resolution:
//
//   UNLABELED -> LABELED -> VALIDATED
//                        -> CONFLICT -> RESOLVED
//
// Category disagreements on an agreed violation are flagged on the task but
// never block it.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "honesty/corpus.hpp"

namespace honesty::annotate {

enum class Stage { Unlabeled, Labeled, Validated, Conflict, Resolved };
enum class Role { Labeler, Validator, Resolver };
enum class Strategy { Fifo, Uncertainty };

std::string to_string(Stage s);  // "UNLABELED", ...
Stage stage_from_string(const std::string& s);
std::string to_string(Role r);   // "labeler", ...
Role role_from_string(const std::string& s);
std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct Label {
  bool violation = false;
  std::vector<std::string> categories;  // only meaningful for violations
  std::string annotator;
  int round = 0;
  std::string timestamp;
};

struct Resolution {
  bool violation = false;
  std::vector<std::string> categories;
  std::string note;
  std::string resolver;
  std::string timestamp;
};

struct AnnotationTask {
  corpus::Review review;
  Stage stage = Stage::Unlabeled;
  std::optional<Label> first;
  std::optional<Label> second;
  std::optional<Resolution> resolution;
  bool category_disagreement = false;
  std::size_t seq = 0;  // insertion order

  const std::string& review_id() const { return review.id; }
};

nlohmann::json to_json(const Label& l);
Label label_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Resolution& r);
Resolution resolution_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AnnotationTask& t);

// Scores a review with P(violation); required by the UNCERTAINTY strategy.
using Scorer = std::function<double(const AnnotationTask&)>;

struct QueuePolicy {
  Strategy strategy = Strategy::Fifo;
  Scorer scorer;
};

struct AgreementStats {
  std::size_t n_unlabeled = 0, n_labeled = 0, n_validated = 0, n_conflict = 0, n_resolved = 0;
  std::size_t n_category_disagreements = 0;
  // validated / (validated + conflict + resolved); nullopt when nothing has
  // been double-labeled yet.
  std::optional<double> raw_agreement_rate;
};

nlohmann::json to_json(const AgreementStats& s);

// Thread-safe task store. With a log path every accepted mutation is appended
// to a JSONL event log before it is applied, and reopening the same path
// replays the log. Events: added, labeled, validated, conflicted, resolved.
class AnnotationStore {
public:
  using Clock = std::function<std::string()>;

  AnnotationStore();
  explicit AnnotationStore(std::filesystem::path log_path, Clock clock = {});

  // Returns false when a task for this review already exists.
  bool add(const corpus::Review& review);
  std::size_t add_all(const corpus::Corpus& corpus);

  std::optional<AnnotationTask> get(const std::string& review_id) const;
  std::vector<AnnotationTask> tasks() const;  // insertion order
  std::size_t size() const;

  // Eligible tasks: labeler -> UNLABELED; validator -> LABELED by someone
  // else; resolver -> CONFLICT. FIFO picks the oldest, UNCERTAINTY the one
  // with P(violation) closest to 0.5 (ties by review id). nullopt when none.
  std::optional<AnnotationTask> next_task(const QueuePolicy& policy, const std::string& annotator,
                                          Role role = Role::Labeler) const;

  // First label on UNLABELED, second label on LABELED. Anything else, or a
  // second label from the first annotator, throws StageError. When
  // `expected` is given the call also fails if the task has moved on.
  AnnotationTask submit_label(const std::string& review_id, Label label,
                              std::optional<Stage> expected = std::nullopt);

  // CONFLICT -> RESOLVED. Empty note -> ValidationError.
  AnnotationTask resolve_conflict(const std::string& review_id, bool violation, std::vector<std::string> categories,
                                  const std::string& note, const std::string& resolver = {});

  AgreementStats agreement_stats() const;

  // VALIDATED tasks carry the first label; RESOLVED tasks the resolution.
  std::vector<corpus::LabeledExample> export_labels() const;

  void save_snapshot(const std::filesystem::path& path) const;
  const std::optional<std::filesystem::path>& log_path() const { return log_path_; }

private:
  void append_event(nlohmann::json event);
  void apply_event(const nlohmann::json& event);
  AnnotationTask& task_for(const std::string& review_id);
  std::string now() const;

  mutable std::mutex mu_;
  std::vector<AnnotationTask> tasks_;
  std::map<std::string, std::size_t> index_;
  std::optional<std::filesystem::path> log_path_;
  std::ofstream log_;
  Clock clock_;
};

// Reads a snapshot written by save_snapshot (tasks only, no replay).
std::vector<AnnotationTask> load_snapshot(const std::filesystem::path& path);

}  // namespace honesty::annotate
