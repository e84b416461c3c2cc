#include "honesty/corpus.hpp"

#include <fstream>
#include <istream>
#include <sstream>
#include <unordered_set>

#include "builtin_data.hpp"
#include "honesty/error.hpp"
#include "honesty/rng.hpp"

namespace honesty::corpus {

using nlohmann::json;

namespace {

const std::set<std::string> kKnownKeys = {"id",   "app_id", "app_category", "rating",
                                          "text", "date",   "label"};

std::string required_string(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw ValidationError(std::string("missing or non-string '") + key + "'");
  }
  return j.at(key).get<std::string>();
}

std::string optional_string(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  if (!j.at(key).is_string()) throw ValidationError(std::string("non-string '") + key + "'");
  return j.at(key).get<std::string>();
}

}  // namespace

Review review_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("record is not a JSON object");
  Review r;
  r.id = required_string(j, "id");
  if (r.id.empty()) throw ValidationError("empty id");
  r.text = required_string(j, "text");
  if (textprep::tokenize(r.text).empty()) throw ValidationError("empty text");
  r.app_id = optional_string(j, "app_id");
  r.app_category = optional_string(j, "app_category");
  if (j.contains("rating") && !j.at("rating").is_null()) {
    const auto& v = j.at("rating");
    if (!v.is_number_integer()) throw ValidationError("rating is not an integer");
    const int rating = v.get<int>();
    if (rating < 1 || rating > 5) throw ValidationError("rating out of range 1..5");
    r.rating = rating;
  }
  if (j.contains("date") && !j.at("date").is_null()) r.date = optional_string(j, "date");
  if (j.contains("label") && !j.at("label").is_null()) {
    const auto& v = j.at("label");
    if (v.is_boolean()) {
      r.label = v.get<bool>() ? 1 : 0;
    } else if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) {
      r.label = v.get<int>();
    } else {
      throw ValidationError("label must be 0, 1, true or false");
    }
  }
  for (const auto& [key, value] : j.items()) {
    if (!kKnownKeys.contains(key)) r.extra[key] = value;
  }
  return r;
}

json to_json(const Review& r) {
  json j = r.extra.is_object() ? r.extra : json::object();
  j["id"] = r.id;
  j["app_id"] = r.app_id;
  j["app_category"] = r.app_category;
  j["rating"] = r.rating ? json(*r.rating) : json(nullptr);
  j["text"] = r.text;
  j["date"] = r.date ? json(*r.date) : json(nullptr);
  if (r.label) j["label"] = *r.label;
  return j;
}

IngestResult ingest(std::istream& in) {
  IngestResult result;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      result.rejections.push_back({lineno, {}, "malformed json"});
      continue;
    }
    std::string id;
    if (j.is_object() && j.contains("id") && j["id"].is_string()) id = j["id"].get<std::string>();
    try {
      Review r = review_from_json(j);
      if (!seen.insert(r.id).second) {
        result.rejections.push_back({lineno, r.id, "duplicate id"});
        continue;
      }
      result.corpus.reviews.push_back(std::move(r));
    } catch (const ValidationError& e) {
      result.rejections.push_back({lineno, id, e.what()});
    }
  }
  if (in.bad()) throw IoError("error while reading review stream");
  return result;
}

IngestResult ingest_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read review file: " + path.string(), path.string());
  return ingest(in);
}

void write_jsonl(std::ostream& out, const Corpus& corpus) {
  for (const auto& r : corpus.reviews) out << to_json(r).dump() << '\n';
}

void save_jsonl(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write review file: " + path.string(), path.string());
  write_jsonl(out, corpus);
}

namespace {

KeywordDictionary parse_dictionary(std::istream& in, std::string name) {
  KeywordDictionary dict;
  dict.name = std::move(name);
  dict.version = "1";
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto parts = textprep::tokenize(line);
    if (parts.empty()) continue;
    if (parts.size() > 1) {
      throw ValidationError("dictionary term contains whitespace", "line " + std::to_string(lineno));
    }
    dict.terms.insert(textprep::normalize_case(parts.front()));
  }
  return dict;
}

}  // namespace

KeywordDictionary KeywordDictionary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dictionary file: " + path.string(), path.string());
  auto dict = parse_dictionary(in, path.filename().string());
  dict.version = std::to_string(fnv1a64(textprep::join({dict.terms.begin(), dict.terms.end()}, '\n')));
  return dict;
}

KeywordDictionary KeywordDictionary::builtin() {
  std::istringstream in{std::string(builtin::kHonestyKeywords)};
  auto dict = parse_dictionary(in, "builtin-honesty");
  dict.version = std::to_string(fnv1a64(textprep::join({dict.terms.begin(), dict.terms.end()}, '\n')));
  return dict;
}

bool matches(const Review& review, const KeywordDictionary& dict,
             const textprep::StopWordList& stoplist) {
  const auto seq = textprep::preprocess(review.text, stoplist, review.id);
  for (const auto& t : seq.tokens) {
    if (dict.terms.contains(t)) return true;
  }
  return false;
}

Corpus keyword_filter(const Corpus& corpus, const KeywordDictionary& dict,
                      const textprep::StopWordList& stoplist) {
  if (dict.terms.empty()) throw PreconditionError("keyword dictionary is empty");
  Corpus out;
  for (const auto& r : corpus.reviews) {
    if (matches(r, dict, stoplist)) out.reviews.push_back(r);
  }
  return out;
}

CorpusStats stats(const Corpus& corpus) {
  CorpusStats s;
  s.n_reviews = corpus.size();
  std::set<std::string> apps, categories;
  std::size_t violations = 0;
  bool labeled = false;
  for (const auto& r : corpus.reviews) {
    // Missing app metadata is not a distinct app or category.
    if (!r.app_id.empty()) apps.insert(r.app_id);
    if (!r.app_category.empty()) categories.insert(r.app_category);
    if (r.label) {
      labeled = true;
      violations += (*r.label == 1);
    }
  }
  s.n_apps = apps.size();
  s.n_categories = categories.size();
  if (labeled) s.n_violations = violations;
  return s;
}

CorpusStats stats(const Corpus& corpus, const KeywordDictionary& dict,
                  const textprep::StopWordList& stoplist) {
  CorpusStats s = stats(corpus);
  for (const auto& r : corpus.reviews) s.n_keyword_matched += matches(r, dict, stoplist);
  return s;
}

json to_json(const CorpusStats& s) {
  json j = {{"n_reviews", s.n_reviews},
            {"n_apps", s.n_apps},
            {"n_categories", s.n_categories},
            {"n_keyword_matched", s.n_keyword_matched}};
  j["n_violations"] = s.n_violations ? json(*s.n_violations) : json(nullptr);
  return j;
}

std::vector<LabeledExample> build_balanced_dataset(const std::vector<LabeledExample>& violations,
                                                   const std::vector<LabeledExample>& pool,
                                                   std::uint64_t seed) {
  if (pool.size() < violations.size()) {
    throw PreconditionError("non-violation pool too small: need at least " +
                            std::to_string(violations.size()) + " examples, have " +
                            std::to_string(pool.size()));
  }
  std::vector<LabeledExample> out = violations;
  for (auto& e : out) {
    e.violation = true;
    e.review.label = 1;
  }

  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first n slots end up a uniform sample.
  for (std::size_t i = 0; i < violations.size(); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
    std::swap(order[i], order[j]);
    LabeledExample e = pool[order[i]];
    e.violation = false;
    e.review.label = 0;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace honesty::corpus
