#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "honesty/textprep.hpp"

namespace honesty::corpus {

// One app review, stored verbatim. Keys outside the known schema are kept in
// `extra` and written back on save.
struct Review {
  std::string id;
  std::string app_id;
  std::string app_category;
  std::optional<int> rating;
  std::string text;
  std::optional<std::string> date;
  // 1 = honesty violation, 0 = non-violation; absent for unlabeled corpora.
  std::optional<int> label;
  nlohmann::json extra = nlohmann::json::object();
};

struct Corpus {
  std::vector<Review> reviews;

  std::size_t size() const { return reviews.size(); }
  bool empty() const { return reviews.empty(); }
};

struct Rejection {
  std::size_t line = 0;  // 1-based
  std::string id;        // empty when the record had no usable id
  std::string reason;
};

struct IngestResult {
  Corpus corpus;
  std::vector<Rejection> rejections;
};

// Reads the review JSONL format. Bad records go to the rejection report;
// only an unreadable source throws.
IngestResult ingest(std::istream& in);
IngestResult ingest_file(const std::filesystem::path& path);

nlohmann::json to_json(const Review& review);
Review review_from_json(const nlohmann::json& j);  // throws ValidationError
void write_jsonl(std::ostream& out, const Corpus& corpus);
void save_jsonl(const std::filesystem::path& path, const Corpus& corpus);

struct KeywordDictionary {
  std::string name;
  std::string version;
  std::set<std::string> terms;

  // Plain text, one term per line, `#` comments. Terms are case folded;
  // a term containing whitespace is rejected.
  static KeywordDictionary load(const std::filesystem::path& path);
  static KeywordDictionary builtin();
};

bool matches(const Review& review, const KeywordDictionary& dict,
             const textprep::StopWordList& stoplist);

// Reviews whose preprocessed tokens contain at least one dictionary term,
// in original order.
Corpus keyword_filter(const Corpus& corpus, const KeywordDictionary& dict,
                      const textprep::StopWordList& stoplist);

struct CorpusStats {
  std::size_t n_reviews = 0;
  std::size_t n_apps = 0;
  std::size_t n_categories = 0;
  std::size_t n_keyword_matched = 0;
  std::optional<std::size_t> n_violations;  // set when any review carries a label
};

CorpusStats stats(const Corpus& corpus);
CorpusStats stats(const Corpus& corpus, const KeywordDictionary& dict,
                  const textprep::StopWordList& stoplist);
nlohmann::json to_json(const CorpusStats& s);

struct LabeledExample {
  Review review;
  bool violation = false;
  std::vector<std::string> categories;
};

// All violations followed by a seeded uniform sample (without replacement)
// of the same size drawn from the non-violation pool.
std::vector<LabeledExample> build_balanced_dataset(const std::vector<LabeledExample>& violations,
                                                   const std::vector<LabeledExample>& pool,
                                                   std::uint64_t seed);

}  // namespace honesty::corpus
