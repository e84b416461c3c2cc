#include "honesty/annotate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <set>

#include "honesty/error.hpp"
#include "honesty/taxonomy.hpp"

namespace honesty::annotate {

using nlohmann::json;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Unlabeled: return "UNLABELED";
    case Stage::Labeled: return "LABELED";
    case Stage::Validated: return "VALIDATED";
    case Stage::Conflict: return "CONFLICT";
    case Stage::Resolved: return "RESOLVED";
  }
  return "UNLABELED";
}

Stage stage_from_string(const std::string& s) {
  for (Stage st : {Stage::Unlabeled, Stage::Labeled, Stage::Validated, Stage::Conflict, Stage::Resolved}) {
    if (to_string(st) == s) return st;
  }
  throw ValidationError("unknown stage '" + s + "'");
}

std::string to_string(Role r) {
  switch (r) {
    case Role::Labeler: return "labeler";
    case Role::Validator: return "validator";
    case Role::Resolver: return "resolver";
  }
  return "labeler";
}

Role role_from_string(const std::string& s) {
  for (Role r : {Role::Labeler, Role::Validator, Role::Resolver}) {
    if (to_string(r) == s) return r;
  }
  throw ValidationError("unknown role '" + s + "'", "expected labeler, validator or resolver");
}

std::string to_string(Strategy s) { return s == Strategy::Fifo ? "fifo" : "uncertainty"; }

Strategy strategy_from_string(const std::string& s) {
  if (s == "fifo" || s == "FIFO") return Strategy::Fifo;
  if (s == "uncertainty" || s == "UNCERTAINTY") return Strategy::Uncertainty;
  throw ValidationError("unknown queue strategy '" + s + "'", "expected fifo or uncertainty");
}

json to_json(const Label& l) {
  return {{"violation", l.violation},
          {"categories", l.categories},
          {"annotator", l.annotator},
          {"round", l.round},
          {"timestamp", l.timestamp}};
}

Label label_from_json(const json& j) {
  Label l;
  l.violation = j.at("violation").get<bool>();
  l.categories = j.value("categories", std::vector<std::string>{});
  l.annotator = j.at("annotator").get<std::string>();
  l.round = j.value("round", 0);
  l.timestamp = j.value("timestamp", std::string{});
  return l;
}

json to_json(const Resolution& r) {
  return {{"violation", r.violation},
          {"categories", r.categories},
          {"note", r.note},
          {"resolver", r.resolver},
          {"timestamp", r.timestamp}};
}

Resolution resolution_from_json(const json& j) {
  Resolution r;
  r.violation = j.at("violation").get<bool>();
  r.categories = j.value("categories", std::vector<std::string>{});
  r.note = j.at("note").get<std::string>();
  r.resolver = j.value("resolver", std::string{});
  r.timestamp = j.value("timestamp", std::string{});
  return r;
}

json to_json(const AnnotationTask& t) {
  json j = {{"review_id", t.review.id},
            {"stage", to_string(t.stage)},
            {"review", corpus::to_json(t.review)},
            {"category_disagreement", t.category_disagreement},
            {"seq", t.seq},
            {"first_label", nullptr},
            {"second_label", nullptr},
            {"resolution", nullptr}};
  if (t.first) j["first_label"] = to_json(*t.first);
  if (t.second) j["second_label"] = to_json(*t.second);
  if (t.resolution) j["resolution"] = to_json(*t.resolution);
  return j;
}

json to_json(const AgreementStats& s) {
  return {{"n_unlabeled", s.n_unlabeled},
          {"n_labeled", s.n_labeled},
          {"n_validated", s.n_validated},
          {"n_conflict", s.n_conflict},
          {"n_resolved", s.n_resolved},
          {"n_category_disagreements", s.n_category_disagreements},
          {"raw_agreement_rate", s.raw_agreement_rate ? json(*s.raw_agreement_rate) : json(nullptr)},
          {"rate_defined", s.raw_agreement_rate.has_value()}};
}

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> canonical_categories(std::vector<std::string> codes, bool violation) {
  if (!violation && !codes.empty()) throw ValidationError("categories can only be given for a violation");
  for (const auto& c : codes) {
    if (!taxonomy::is_known(c)) throw ValidationError("unknown category '" + c + "'");
  }
  std::sort(codes.begin(), codes.end());
  codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
  return codes;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

// The whole stage machine: applies one event to a task, or throws.
void transition(AnnotationTask& task, const json& event) {
  const std::string kind = event.at("event").get<std::string>();
  const std::string stage = to_string(task.stage);
  if (kind == "labeled") {
    if (task.stage != Stage::Unlabeled) {
      throw StageError("review " + task.review.id + " is already " + stage, stage);
    }
    task.first = label_from_json(event.at("label"));
    task.stage = Stage::Labeled;
  } else if (kind == "validated" || kind == "conflicted") {
    if (task.stage != Stage::Labeled) {
      throw StageError("review " + task.review.id + " cannot take a second label while " + stage, stage);
    }
    Label second = label_from_json(event.at("label"));
    if (second.annotator == task.first->annotator) {
      throw StageError("annotator " + second.annotator + " cannot validate their own label", stage);
    }
    const bool agree = second.violation == task.first->violation;
    if (agree != (kind == "validated")) throw FormatError("event kind contradicts the labels", 0);
    task.category_disagreement = agree && second.violation && second.categories != task.first->categories;
    task.second = std::move(second);
    task.stage = agree ? Stage::Validated : Stage::Conflict;
  } else if (kind == "resolved") {
    if (task.stage != Stage::Conflict) {
      throw StageError("review " + task.review.id + " is " + stage + ", only CONFLICT can be resolved", stage);
    }
    task.resolution = resolution_from_json(event.at("resolution"));
    task.stage = Stage::Resolved;
  } else {
    throw ValidationError("unknown annotation event '" + kind + "'");
  }
}

}  // namespace

AnnotationStore::AnnotationStore() : clock_(utc_now) {}

AnnotationStore::AnnotationStore(std::filesystem::path log_path, Clock clock)
    : log_path_(std::move(log_path)), clock_(clock ? std::move(clock) : Clock(utc_now)) {
  if (std::filesystem::exists(*log_path_)) {
    std::ifstream in(*log_path_);
    if (!in) throw IoError("cannot read annotation log: " + log_path_->string(), log_path_->string());
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
      const std::size_t at = offset;
      offset += line.size() + 1;
      if (blank(line)) continue;
      const json event = json::parse(line, nullptr, false);
      if (event.is_discarded()) throw FormatError("corrupt annotation log " + log_path_->string(), at);
      try {
        apply_event(event);
      } catch (const Error& e) {
        throw FormatError("annotation log replay failed: " + std::string(e.what()), at);
      } catch (const json::exception& e) {
        throw FormatError("annotation log replay failed: " + std::string(e.what()), at);
      }
    }
  }
  if (log_path_->has_parent_path()) std::filesystem::create_directories(log_path_->parent_path());
  log_.open(*log_path_, std::ios::app);
  if (!log_) throw IoError("cannot open annotation log for writing: " + log_path_->string(), log_path_->string());
}

std::string AnnotationStore::now() const { return clock_(); }

void AnnotationStore::append_event(json event) {
  if (!log_.is_open()) return;
  log_ << event.dump() << "\n";
  log_.flush();
  if (!log_) throw IoError("failed to append to annotation log", log_path_->string());
}

AnnotationTask& AnnotationStore::task_for(const std::string& review_id) {
  const auto it = index_.find(review_id);
  if (it == index_.end()) throw NotFoundError("no annotation task for review " + review_id, review_id);
  return tasks_[it->second];
}

void AnnotationStore::apply_event(const json& event) {
  if (event.at("event") == "added") {
    AnnotationTask task;
    task.review = corpus::review_from_json(event.at("review"));
    task.seq = tasks_.size();
    if (index_.contains(task.review.id)) throw ValidationError("duplicate task " + task.review.id);
    index_[task.review.id] = tasks_.size();
    tasks_.push_back(std::move(task));
    return;
  }
  AnnotationTask& task = task_for(event.at("review_id").get<std::string>());
  AnnotationTask updated = task;
  transition(updated, event);
  task = std::move(updated);
}

bool AnnotationStore::add(const corpus::Review& review) {
  std::lock_guard lock(mu_);
  if (index_.contains(review.id)) return false;
  const json event = {{"event", "added"}, {"review", corpus::to_json(review)}, {"timestamp", now()}};
  append_event(event);
  apply_event(event);
  return true;
}

std::size_t AnnotationStore::add_all(const corpus::Corpus& corpus) {
  std::size_t added = 0;
  for (const auto& r : corpus.reviews) added += add(r) ? 1 : 0;
  return added;
}

std::optional<AnnotationTask> AnnotationStore::get(const std::string& review_id) const {
  std::lock_guard lock(mu_);
  const auto it = index_.find(review_id);
  if (it == index_.end()) return std::nullopt;
  return tasks_[it->second];
}

std::vector<AnnotationTask> AnnotationStore::tasks() const {
  std::lock_guard lock(mu_);
  return tasks_;
}

std::size_t AnnotationStore::size() const {
  std::lock_guard lock(mu_);
  return tasks_.size();
}

std::optional<AnnotationTask> AnnotationStore::next_task(const QueuePolicy& policy, const std::string& annotator,
                                                         Role role) const {
  if (policy.strategy == Strategy::Uncertainty && !policy.scorer) {
    throw PreconditionError("uncertainty ordering needs a model to score reviews");
  }
  std::lock_guard lock(mu_);
  auto eligible = [&](const AnnotationTask& t) {
    switch (role) {
      case Role::Labeler: return t.stage == Stage::Unlabeled;
      case Role::Validator: return t.stage == Stage::Labeled && t.first->annotator != annotator;
      case Role::Resolver: return t.stage == Stage::Conflict;
    }
    return false;
  };
  const AnnotationTask* best = nullptr;
  double best_distance = 0;
  for (const auto& t : tasks_) {
    if (!eligible(t)) continue;
    if (policy.strategy == Strategy::Fifo) return t;
    const double distance = std::abs(policy.scorer(t) - 0.5);
    if (!best || distance < best_distance || (distance == best_distance && t.review.id < best->review.id)) {
      best = &t;
      best_distance = distance;
    }
  }
  if (!best) return std::nullopt;
  return *best;
}

AnnotationTask AnnotationStore::submit_label(const std::string& review_id, Label label,
                                             std::optional<Stage> expected) {
  if (blank(label.annotator)) throw ValidationError("label needs an annotator");
  label.categories = canonical_categories(std::move(label.categories), label.violation);
  std::lock_guard lock(mu_);
  AnnotationTask& task = task_for(review_id);
  if (expected && *expected != task.stage) {
    throw StageError("review " + review_id + " is " + to_string(task.stage) + ", not " + to_string(*expected),
                     to_string(task.stage));
  }
  if (label.timestamp.empty()) label.timestamp = now();

  std::string kind = "labeled";
  if (task.stage == Stage::Labeled) kind = label.violation == task.first->violation ? "validated" : "conflicted";
  const json event = {{"event", kind}, {"review_id", review_id}, {"label", to_json(label)}};

  AnnotationTask updated = task;
  transition(updated, event);
  append_event(event);
  task = std::move(updated);
  return task;
}

AnnotationTask AnnotationStore::resolve_conflict(const std::string& review_id, bool violation,
                                                 std::vector<std::string> categories, const std::string& note,
                                                 const std::string& resolver) {
  Resolution res;
  res.violation = violation;
  res.categories = canonical_categories(std::move(categories), violation);
  res.note = note;
  res.resolver = resolver;
  std::lock_guard lock(mu_);
  AnnotationTask& task = task_for(review_id);
  if (task.stage != Stage::Conflict) {
    throw StageError("review " + review_id + " is " + to_string(task.stage) + ", only CONFLICT can be resolved",
                     to_string(task.stage));
  }
  if (blank(note)) throw ValidationError("a resolution needs a note");
  res.timestamp = now();
  const json event = {{"event", "resolved"}, {"review_id", review_id}, {"resolution", to_json(res)}};
  AnnotationTask updated = task;
  transition(updated, event);
  append_event(event);
  task = std::move(updated);
  return task;
}

AgreementStats AnnotationStore::agreement_stats() const {
  std::lock_guard lock(mu_);
  AgreementStats s;
  for (const auto& t : tasks_) {
    switch (t.stage) {
      case Stage::Unlabeled: ++s.n_unlabeled; break;
      case Stage::Labeled: ++s.n_labeled; break;
      case Stage::Validated: ++s.n_validated; break;
      case Stage::Conflict: ++s.n_conflict; break;
      case Stage::Resolved: ++s.n_resolved; break;
    }
    if (t.category_disagreement) ++s.n_category_disagreements;
  }
  const std::size_t doubled = s.n_validated + s.n_conflict + s.n_resolved;
  if (doubled > 0) s.raw_agreement_rate = static_cast<double>(s.n_validated) / static_cast<double>(doubled);
  return s;
}

std::vector<corpus::LabeledExample> AnnotationStore::export_labels() const {
  std::lock_guard lock(mu_);
  std::vector<corpus::LabeledExample> out;
  for (const auto& t : tasks_) {
    corpus::LabeledExample ex;
    ex.review = t.review;
    if (t.stage == Stage::Validated) {
      ex.violation = t.first->violation;
      ex.categories = t.first->categories;
    } else if (t.stage == Stage::Resolved) {
      ex.violation = t.resolution->violation;
      ex.categories = t.resolution->categories;
    } else {
      continue;
    }
    ex.review.label = ex.violation ? 1 : 0;
    out.push_back(std::move(ex));
  }
  return out;
}

void AnnotationStore::save_snapshot(const std::filesystem::path& path) const {
  json tasks = json::array();
  for (const auto& t : this->tasks()) tasks.push_back(to_json(t));
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write snapshot: " + path.string(), path.string());
    out << json{{"format", "honesty-annotation-snapshot"}, {"version", 1}, {"tasks", tasks}}.dump() << "\n";
  }
  std::filesystem::rename(tmp, path);
}

std::vector<AnnotationTask> load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read snapshot: " + path.string(), path.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || j.value("format", "") != "honesty-annotation-snapshot") {
    throw ValidationError("not an annotation snapshot: " + path.string());
  }
  std::vector<AnnotationTask> out;
  for (const auto& t : j.at("tasks")) {
    AnnotationTask task;
    task.review = corpus::review_from_json(t.at("review"));
    task.stage = stage_from_string(t.at("stage").get<std::string>());
    task.seq = t.value("seq", out.size());
    task.category_disagreement = t.value("category_disagreement", false);
    if (!t.at("first_label").is_null()) task.first = label_from_json(t.at("first_label"));
    if (!t.at("second_label").is_null()) task.second = label_from_json(t.at("second_label"));
    if (!t.at("resolution").is_null()) task.resolution = resolution_from_json(t.at("resolution"));
    out.push_back(std::move(task));
  }
  return out;
}

}  // namespace honesty::annotate
