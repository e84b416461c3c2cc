#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "../common/oracles.hpp"
#include "honesty/corpus.hpp"
#include "honesty/error.hpp"

using namespace honesty;
using namespace honesty::corpus;

namespace {

const textprep::StopWordList& stop() { return textprep::StopWordList::builtin(); }

KeywordDictionary dict(std::set<std::string> terms) {
  KeywordDictionary d;
  d.name = "test";
  d.version = "1";
  d.terms = std::move(terms);
  return d;
}

Corpus texts(std::vector<std::string> t) {
  Corpus c;
  for (std::size_t i = 0; i < t.size(); ++i) {
    Review r;
    r.id = "r" + std::to_string(i);
    r.app_id = "a" + std::to_string(i % 2);
    r.text = t[i];
    c.reviews.push_back(r);
  }
  return c;
}

std::vector<std::string> ids(const Corpus& c) {
  std::vector<std::string> out;
  for (const auto& r : c.reviews) out.push_back(r.id);
  return out;
}

}  // namespace

TEST_CASE("ingest accepts well-formed lines") {
  std::istringstream in(
      R"({"id":"r1","app_id":"a","app_category":"Games","rating":5,"text":"fine","date":"2020-01-01"})"
      "\n"
      R"({"id":"r2","app_id":"a","app_category":"Games","rating":null,"text":"ok","date":null})"
      "\n\n"
      R"({"id":"r3","app_id":"b","app_category":"Tools","text":"good","extra_key":[1,2]})"
      "\n");
  const auto res = ingest(in);
  CHECK(res.corpus.size() == 3);
  CHECK(res.rejections.empty());
  CHECK(res.corpus.reviews[0].rating == 5);
  CHECK_FALSE(res.corpus.reviews[1].rating);
  // Unknown keys survive a round trip.
  CHECK(to_json(res.corpus.reviews[2])["extra_key"] == nlohmann::json::array({1, 2}));
}

TEST_CASE("ingest rejections") {
  std::istringstream in(
      R"({"id":"r1","text":"   "})"
      "\n"
      R"({"id":"r2","text":"a"})"
      "\n"
      R"({"id":"r2","text":"b"})"
      "\n"
      "{not json\n"
      R"({"id":"r4","text":"x","rating":9})"
      "\n"
      R"({"text":"no id"})"
      "\n");
  const auto res = ingest(in);
  CHECK(ids(res.corpus) == std::vector<std::string>{"r2"});
  CHECK(res.corpus.reviews[0].text == "a");
  REQUIRE(res.rejections.size() == 5);
  CHECK(res.rejections[0].line == 1);
  CHECK(res.rejections[0].reason == "empty text");
  CHECK(res.rejections[1].line == 3);
  CHECK(res.rejections[1].reason == "duplicate id");
  CHECK(res.rejections[1].id == "r2");
  CHECK(res.rejections[2].reason == "malformed json");
  CHECK(res.rejections[3].id == "r4");
  CHECK(res.rejections[4].id.empty());
}

TEST_CASE("ingest_file on a missing path is an io error") {
  CHECK_THROWS_AS(ingest_file("/nonexistent/reviews.jsonl"), IoError);
}

TEST_CASE("keyword_filter examples") {
  CHECK(keyword_filter(texts({"This app is a SCAM!!"}), dict({"scam"}), stop()).size() == 1);
  CHECK(keyword_filter(texts({"Great app, love it"}), dict({"scam", "dishonest"}), stop()).size() == 0);
  CHECK(keyword_filter(texts({"scammer"}), dict({"scam"}), stop()).size() == 0);
  CHECK_THROWS_AS(keyword_filter(texts({"x"}), dict({}), stop()), PreconditionError);
}

TEST_CASE("keyword_filter matches the brute-force oracle and is idempotent") {
  const auto d = KeywordDictionary::builtin();
  const std::vector<std::string> terms(d.terms.begin(), d.terms.end());
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto c = oracle::random_reviews(200, seed);
    const auto filtered = keyword_filter(c, d, stop());
    CHECK(ids(filtered) == oracle::keyword_filter_ids(c, terms, stop()));
    CHECK(ids(keyword_filter(filtered, d, stop())) == ids(filtered));
    CHECK(stats(filtered).n_reviews <= stats(c).n_reviews);
  }
}

TEST_CASE("dictionary loading") {
  const auto path = std::filesystem::temp_directory_path() / "hv_dict_test.txt";
  {
    std::ofstream out(path);
    out << "# comment\nScam\n\nfraud\nscam\n";
  }
  const auto d = KeywordDictionary::load(path);
  CHECK(d.terms == std::set<std::string>{"scam", "fraud"});
  {
    std::ofstream out(path);
    out << "two words\n";
  }
  CHECK_THROWS_AS(KeywordDictionary::load(path), ValidationError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(KeywordDictionary::load(path), IoError);

  const auto builtin = KeywordDictionary::builtin();
  CHECK(builtin.terms.size() == 48);
  for (const auto& t : builtin.terms) {
    CHECK(textprep::normalize_case(t) == t);
    CHECK(textprep::tokenize(t).size() == 1);
  }
}

TEST_CASE("stats") {
  const auto empty = stats(Corpus{});
  CHECK(empty.n_reviews == 0);
  CHECK(empty.n_apps == 0);
  CHECK(empty.n_keyword_matched == 0);
  CHECK_FALSE(empty.n_violations);

  auto c = texts({"scam app", "fine", "fraud!!", "good", "nice"});
  c.reviews[0].app_category = "Games";
  c.reviews[1].app_category = "Tools";
  const auto s = stats(c, dict({"scam", "fraud"}), stop());
  CHECK(s.n_reviews == 5);
  CHECK(s.n_apps == 2);
  CHECK(s.n_categories == 2);
  CHECK(s.n_keyword_matched == 2);

  c.reviews[0].label = 1;
  c.reviews[1].label = 0;
  CHECK(stats(c).n_violations == 1);
}

TEST_CASE("build_balanced_dataset") {
  auto make = [](std::size_t n, bool v, const std::string& prefix) {
    std::vector<LabeledExample> out;
    for (std::size_t i = 0; i < n; ++i) {
      LabeledExample e;
      e.review.id = prefix + std::to_string(i);
      e.review.text = "t";
      e.violation = v;
      out.push_back(e);
    }
    return out;
  };
  const auto viol = make(401, true, "v");
  const auto pool = make(4484, false, "n");
  const auto a = build_balanced_dataset(viol, pool, 3);
  const auto b = build_balanced_dataset(viol, pool, 3);
  REQUIRE(a.size() == 802);
  std::size_t nv = 0;
  std::set<std::string> seen;
  for (const auto& e : a) {
    nv += e.violation;
    seen.insert(e.review.id);
  }
  CHECK(nv == 401);
  CHECK(seen.size() == 802);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].review.id == b[i].review.id);
  CHECK(build_balanced_dataset(make(1, true, "v"), make(1, false, "n"), 0).size() == 2);
  CHECK_THROWS_AS(build_balanced_dataset(make(3, true, "v"), make(2, false, "n"), 0), PreconditionError);
}

TEST_CASE("jsonl round trip") {
  auto c = texts({"one", "two"});
  c.reviews[0].rating = 4;
  c.reviews[0].date = "2021-05-01";
  c.reviews[1].extra["source"] = "play";
  std::stringstream ss;
  write_jsonl(ss, c);
  const auto back = ingest(ss);
  REQUIRE(back.corpus.size() == 2);
  CHECK(to_json(back.corpus.reviews[0]) == to_json(c.reviews[0]));
  CHECK(to_json(back.corpus.reviews[1]) == to_json(c.reviews[1]));
}
