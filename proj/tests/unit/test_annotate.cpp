#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "../common/stage_fuzz.hpp"
#include "honesty/annotate.hpp"
#include "honesty/error.hpp"

using namespace honesty;
using namespace honesty::annotate;

namespace {

corpus::Review review(const std::string& id) {
  corpus::Review r;
  r.id = id;
  r.text = "text of " + id;
  return r;
}

Label label(bool v, const std::string& who, std::vector<std::string> cats = {}) {
  Label l;
  l.violation = v;
  l.annotator = who;
  l.categories = std::move(cats);
  return l;
}

std::filesystem::path temp_path(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove(p);
  return p;
}

}  // namespace

TEST_CASE("stage transitions: examples") {
  AnnotationStore s;
  for (auto id : {"a", "b", "c"}) s.add(review(id));
  CHECK_FALSE(s.add(review("a")));

  CHECK(s.submit_label("a", label(true, "x", {"UNFAIR_FEES"})).stage == Stage::Labeled);
  CHECK(s.submit_label("a", label(true, "y", {"UNFAIR_FEES"})).stage == Stage::Validated);

  s.submit_label("b", label(true, "x", {"NO_SERVICE"}));
  CHECK(s.submit_label("b", label(false, "y")).stage == Stage::Conflict);
  CHECK_THROWS_AS(s.resolve_conflict("b", true, {"NO_SERVICE"}, "  "), ValidationError);
  const auto resolved = s.resolve_conflict("b", true, {"NO_SERVICE"}, "discussed", "lead");
  CHECK(resolved.stage == Stage::Resolved);
  CHECK(resolved.first->violation);
  CHECK_FALSE(resolved.second->violation);
  CHECK_THROWS_AS(s.resolve_conflict("b", true, {"NO_SERVICE"}, "again"), StageError);

  try {
    s.submit_label("a", label(true, "z"));
    FAIL("third label accepted");
  } catch (const StageError& e) {
    CHECK(e.stage() == "VALIDATED");
  }
  s.submit_label("c", label(false, "x"));
  CHECK_THROWS_AS(s.submit_label("c", label(false, "x")), StageError);
  CHECK_THROWS_AS(s.submit_label("c", label(false, "y"), Stage::Unlabeled), StageError);
  CHECK_THROWS_AS(s.submit_label("missing", label(false, "y")), NotFoundError);
  CHECK_THROWS_AS(s.resolve_conflict("c", true, {}, "note"), StageError);
}

TEST_CASE("label validation") {
  AnnotationStore s;
  s.add(review("a"));
  CHECK_THROWS_AS(s.submit_label("a", label(false, "x", {"UNFAIR_FEES"})), ValidationError);
  CHECK_THROWS_AS(s.submit_label("a", label(true, "x", {"SPAM"})), ValidationError);
  CHECK_THROWS_AS(s.submit_label("a", label(true, "")), ValidationError);
  CHECK(s.get("a")->stage == Stage::Unlabeled);
  // Codes are canonicalized.
  const auto t = s.submit_label("a", label(true, "x", {"NO_SERVICE", "UNFAIR_FEES", "NO_SERVICE"}));
  CHECK(t.first->categories == std::vector<std::string>{"NO_SERVICE", "UNFAIR_FEES"});
}

TEST_CASE("category disagreement is flagged without a conflict") {
  AnnotationStore s;
  s.add(review("a"));
  s.submit_label("a", label(true, "x", {"UNFAIR_FEES"}));
  const auto t = s.submit_label("a", label(true, "y", {"NO_SERVICE"}));
  CHECK(t.stage == Stage::Validated);
  CHECK(t.category_disagreement);
  CHECK(s.agreement_stats().n_category_disagreements == 1);
}

TEST_CASE("queue policies") {
  AnnotationStore s;
  for (auto id : {"r1", "r2", "r3"}) s.add(review(id));
  CHECK(s.next_task({}, "x")->review.id == "r1");

  const std::map<std::string, double> probas = {{"r1", 0.9}, {"r2", 0.52}, {"r3", 0.1}};
  QueuePolicy unc{Strategy::Uncertainty, [&](const AnnotationTask& t) { return probas.at(t.review.id); }};
  CHECK(s.next_task(unc, "x")->review.id == "r2");
  CHECK_THROWS_AS(s.next_task(QueuePolicy{Strategy::Uncertainty, {}}, "x"), PreconditionError);

  s.submit_label("r2", label(true, "x"));
  CHECK_FALSE(s.next_task({}, "x", Role::Validator));
  CHECK(s.next_task({}, "y", Role::Validator)->review.id == "r2");
  CHECK_FALSE(s.next_task({}, "y", Role::Resolver));
}

TEST_CASE("uncertainty order agrees with a brute-force scan") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    AnnotationStore s;
    std::map<std::string, double> p;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) {
      const std::string id = "r" + std::to_string(rng() % 100);
      if (s.add(review(id))) p[id] = static_cast<double>(rng() % 11) / 10.0;
    }
    QueuePolicy unc{Strategy::Uncertainty, [&](const AnnotationTask& t) { return p.at(t.review.id); }};
    const auto got = s.next_task(unc, "x");
    REQUIRE(got);
    std::string best;
    double best_gap = 2;
    for (const auto& [id, prob] : p) {  // map order is id order, so the first minimum wins ties
      if (std::abs(prob - 0.5) < best_gap) {
        best_gap = std::abs(prob - 0.5);
        best = id;
      }
    }
    CHECK(got->review.id == best);
  }
}

TEST_CASE("agreement statistics") {
  AnnotationStore s;
  CHECK_FALSE(s.agreement_stats().raw_agreement_rate);
  for (int i = 0; i < 10; ++i) {
    const auto id = "r" + std::to_string(i);
    s.add(review(id));
    s.submit_label(id, label(true, "x"));
    s.submit_label(id, label(i < 8, "y"));
  }
  const auto st = s.agreement_stats();
  CHECK(st.n_validated == 8);
  CHECK(st.n_conflict == 2);
  CHECK(*st.raw_agreement_rate == doctest::Approx(0.8));
  s.resolve_conflict("r8", true, {}, "ok");
  CHECK(*s.agreement_stats().raw_agreement_rate == doctest::Approx(0.8));

  AnnotationStore all;
  all.add(review("a"));
  all.submit_label("a", label(false, "x"));
  all.submit_label("a", label(false, "y"));
  CHECK(*all.agreement_stats().raw_agreement_rate == 1.0);
}

TEST_CASE("export rules") {
  AnnotationStore s;
  CHECK(s.export_labels().empty());
  for (auto id : {"v", "c", "r", "u"}) s.add(review(id));
  s.submit_label("v", label(true, "x", {"UNFAIR_FEES"}));
  s.submit_label("v", label(true, "y", {"NO_SERVICE"}));
  s.submit_label("c", label(true, "x"));
  s.submit_label("c", label(false, "y"));
  s.submit_label("r", label(true, "x", {"UNFAIR_FEES"}));
  s.submit_label("r", label(false, "y"));
  s.resolve_conflict("r", false, {}, "not a violation after all");
  const auto out = s.export_labels();
  REQUIRE(out.size() == 2);
  CHECK(out[0].review.id == "v");
  CHECK(out[0].violation);
  CHECK(out[0].categories == std::vector<std::string>{"UNFAIR_FEES"});
  CHECK(out[0].review.label == 1);
  CHECK(out[1].review.id == "r");
  CHECK_FALSE(out[1].violation);
  CHECK(out[1].review.label == 0);
}

TEST_CASE("10,000 random action sequences respect the stage machine") {
  const auto r = stage_fuzz::run(10000, 77);
  CHECK_MESSAGE(r.failure.empty(), r.failure);
  CHECK(r.sequences == 10000);
  // Every allowed transition was exercised.
  CHECK(r.seen.size() == 4);
  CHECK(r.accepted > 0);
  CHECK(r.rejected > 0);
  CHECK(r.exported > 0);
}

TEST_CASE("event log replay and snapshots") {
  const auto log = temp_path("hv_annotations_test.jsonl");
  int tick = 0;
  auto clock = [&] { return "2021-01-01T00:00:" + std::to_string(10 + tick++) + "Z"; };
  {
    AnnotationStore s(log, clock);
    s.add(review("a"));
    s.add(review("b"));
    s.submit_label("a", label(true, "x", {"UNFAIR_FEES"}));
    s.submit_label("a", label(false, "y"));
    s.resolve_conflict("a", true, {"UNFAIR_FEES"}, "met", "lead");
    s.submit_label("b", label(false, "x"));
  }
  AnnotationStore replayed(log);
  REQUIRE(replayed.size() == 2);
  const auto a = replayed.get("a");
  CHECK(a->stage == Stage::Resolved);
  CHECK(a->resolution->note == "met");
  CHECK(a->first->timestamp == "2021-01-01T00:00:12Z");
  CHECK(replayed.get("b")->stage == Stage::Labeled);
  replayed.submit_label("b", label(false, "y"));
  CHECK(AnnotationStore(log).get("b")->stage == Stage::Validated);

  const auto snap = temp_path("hv_snapshot_test.json");
  replayed.save_snapshot(snap);
  const auto tasks = load_snapshot(snap);
  REQUIRE(tasks.size() == 2);
  CHECK(tasks[0].stage == Stage::Resolved);
  CHECK(to_json(tasks[1]) == to_json(*replayed.get("b")));

  {
    std::ofstream out(log, std::ios::app);
    out << "{\"event\":\"labeled\",\"review_id\":\"zzz\"}\n";
  }
  CHECK_THROWS_AS(AnnotationStore{log}, FormatError);
  std::filesystem::remove(log);
  std::filesystem::remove(snap);
}
