#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

// Eigen must come before httplib, which pulls in resolv.h and its _res macro.
#include "honesty/server.hpp"

#include <httplib.h>
#include <json.hpp>

using namespace honesty;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

struct Running {
  std::unique_ptr<service::Server> server;
  std::unique_ptr<httplib::Client> client;

  explicit Running(const fs::path& dir) {
    pipeline::Config c;
    c.data_dir = dir;
    c.embedding_width = 32;
    c.classify_batch_cap = 3;
    server = std::make_unique<service::Server>(c);
    const int port = server->start_background();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(60, 0);
  }

  httplib::Result post(const std::string& path, const json& body) {
    return client->Post(path, body.dump(), "application/json");
  }
};

json body_of(const httplib::Result& r) { return json::parse(r->body); }

void check_envelope(const httplib::Result& r, int status, const std::string& code) {
  REQUIRE(r);
  CHECK(r->status == status);
  const auto j = body_of(r);
  CHECK(j.at("code") == code);
  CHECK(j.contains("message"));
  CHECK(j.contains("detail"));
}

json review(const std::string& id, const std::string& text) { return {{"id", id}, {"text", text}}; }

// Polls until the job finishes.
json wait_job(Running& run, const std::string& id) {
  for (int i = 0; i < 600; ++i) {
    const auto r = run.client->Get("/jobs/" + id);
    REQUIRE(r);
    const auto j = body_of(r);
    if (j.at("status") == "DONE" || j.at("status") == "FAILED") return j;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  FAIL("job did not finish");
  return {};
}

fs::path labeled_file(const fs::path& dir) {
  const fs::path p = dir / "labeled.jsonl";
  std::ofstream out(p);
  const char* bad[] = {"this app is a scam and stole my money", "total fraud they cheat you",
                       "dishonest developers lie about fees", "misleading ads and a rip off subscription"};
  const char* good[] = {"great app works well", "love the new design", "fast and simple to use",
                        "nice colors and smooth scrolling"};
  for (int i = 0; i < 20; ++i) {
    out << json{{"id", "b" + std::to_string(i)}, {"text", bad[i % 4]}, {"label", 1}}.dump() << "\n";
    out << json{{"id", "g" + std::to_string(i)}, {"text", good[i % 4]}, {"label", 0}}.dump() << "\n";
  }
  return p;
}

}  // namespace

TEST_CASE("error envelopes") {
  Running run(fresh_dir("hv_service_errors"));
  auto r = run.client->Get("/health");
  REQUIRE(r);
  CHECK(r->status == 200);

  check_envelope(run.client->Post("/annotations", "{not json", "application/json"), 400, "malformed_json");
  check_envelope(run.client->Get("/no/such/thing"), 404, "not_found");
  check_envelope(run.client->Get("/jobs/job-404"), 404, "not_found");
  check_envelope(run.client->Get("/annotations/nope"), 404, "not_found");
  check_envelope(run.client->Get("/reports/latest"), 404, "not_found");
  check_envelope(run.post("/annotations", {{"review_id", "x"}}), 400, "validation");
  check_envelope(run.post("/jobs", {{"kind", "dance"}}), 400, "validation");
  // No model trained yet.
  check_envelope(run.post("/classify", {{"reviews", {review("a", "scam")}}}), 404, "not_found");
  check_envelope(run.client->Get("/annotations/next?annotator=x&strategy=uncertainty"), 404, "not_found");
  check_envelope(run.client->Get("/reports/bad.id"), 400, "validation");
}

TEST_CASE("empty queue gives 204") {
  Running run(fresh_dir("hv_service_empty"));
  const auto r = run.client->Get("/annotations/next?annotator=ann");
  REQUIRE(r);
  CHECK(r->status == 204);
  CHECK(r->body.empty());
  check_envelope(run.client->Get("/annotations/next"), 400, "validation");
}

TEST_CASE("label, conflict, resolve over HTTP") {
  const auto dir = fresh_dir("hv_service_flow");
  {
    Running run(dir);
    auto r = run.post("/reviews", {{"reviews", {review("r1", "they stole my money"), review("r2", "nice app"),
                                                json{{"id", "bad"}}}}});
    REQUIRE(r);
    CHECK(r->status == 200);
    auto j = body_of(r);
    CHECK(j.at("accepted") == 2);
    CHECK(j.at("enqueued") == 2);
    CHECK(j.at("rejected").size() == 1);
    CHECK(body_of(run.post("/reviews", json::array({review("r1", "dup")}))).at("rejected").at(0).at("reason") == "duplicate id");

    r = run.client->Get("/annotations/next?annotator=ann");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(body_of(r).at("review").at("id") == "r1");

    r = run.post("/annotations", {{"review_id", "r1"}, {"violation", true}, {"categories", {"UNFAIR_FEES"}},
                                  {"annotator", "ann"}, {"expected_stage", "UNLABELED"}});
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(body_of(r).at("stage") == "LABELED");

    // Stale expected stage is a 409 naming the current stage.
    r = run.post("/annotations",
                 {{"review_id", "r1"}, {"violation", true}, {"annotator", "bo"}, {"expected_stage", "UNLABELED"}});
    check_envelope(r, 409, "stage");
    CHECK(body_of(r).at("detail").get<std::string>().find("LABELED") != std::string::npos);

    r = run.post("/annotations", {{"review_id", "r1"}, {"violation", false}, {"annotator", "bo"}});
    CHECK(body_of(r).at("stage") == "CONFLICT");

    check_envelope(run.post("/annotations/r1/resolve", {{"violation", true}, {"note", " "}}), 400, "validation");
    r = run.post("/annotations/r1/resolve",
                 {{"violation", true}, {"categories", {"UNFAIR_FEES"}}, {"note", "agreed"}, {"resolver", "lead"}});
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(body_of(r).at("stage") == "RESOLVED");
    check_envelope(run.post("/annotations/r1/resolve", {{"violation", true}, {"note", "again"}}), 409, "stage");

    // Unlabeled tasks cannot skip ahead.
    check_envelope(run.post("/annotations/r2/resolve", {{"violation", true}, {"note", "n"}}), 409, "stage");

    const auto listed = body_of(run.client->Get("/annotations?stage=RESOLVED"));
    REQUIRE(listed.size() == 1);
    CHECK(listed.at(0).at("review").at("id") == "r1");
    CHECK(body_of(run.client->Get("/taxonomy")).at("categories").size() == 10);
  }
  // State survives a restart.
  Running again(dir);
  CHECK(body_of(again.client->Get("/annotations/r1")).at("stage") == "RESOLVED");
  CHECK(body_of(again.client->Get("/annotations/r2")).at("stage") == "UNLABELED");
  CHECK(body_of(again.client->Get("/metrics/live")).at("n_reviews") == 2);
}

TEST_CASE("agreement stats from 8 validated and 2 conflicted") {
  Running run(fresh_dir("hv_service_stats"));
  json items = json::array();
  for (int i = 0; i < 10; ++i) items.push_back(review("r" + std::to_string(i), "review number " + std::to_string(i)));
  REQUIRE(run.post("/reviews", items)->status == 200);
  for (int i = 0; i < 10; ++i) {
    const std::string id = "r" + std::to_string(i);
    run.post("/annotations", {{"review_id", id}, {"violation", false}, {"annotator", "a"}});
    run.post("/annotations", {{"review_id", id}, {"violation", i >= 8}, {"annotator", "b"}});
  }
  const auto s = body_of(run.client->Get("/annotations/stats"));
  CHECK(s.at("n_validated") == 8);
  CHECK(s.at("n_conflict") == 2);
  CHECK(s.at("raw_agreement_rate").get<double>() == doctest::Approx(0.8));
  CHECK(body_of(run.client->Get("/metrics/live")).at("agreement") == s);
}

TEST_CASE("train job, classify, batch cap and reports") {
  const auto dir = fresh_dir("hv_service_jobs");
  Running run(dir);
  auto r = run.post("/jobs", {{"kind", "train"}, {"family", "lr"}, {"corpus", labeled_file(dir).string()}});
  REQUIRE(r);
  CHECK(r->status == 202);
  auto job = wait_job(run, body_of(r).at("job_id"));
  REQUIRE(job.at("status") == "DONE");
  REQUIRE(job.at("artifact_refs").size() == 1);

  r = run.post("/classify", {{"reviews", {review("x1", "what a scam, they stole my money"),
                                          review("x2", "love the smooth design")}}});
  REQUIRE(r);
  REQUIRE(r->status == 200);
  const auto results = body_of(r).at("results");
  REQUIRE(results.size() == 2);
  CHECK(results[0].at("review_id") == "x1");
  CHECK(results[1].at("review_id") == "x2");
  for (const auto& res : results) {
    const double p = res.at("probability");
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(res.at("label") == (p >= 0.5 ? 1 : 0));
  }
  CHECK(results[0].at("probability").get<double>() > results[1].at("probability").get<double>());

  json four = json::array();
  for (int i = 0; i < 4; ++i) four.push_back(review("y" + std::to_string(i), "text"));
  check_envelope(run.post("/classify", four), 413, "batch_too_large");

  // Uncertainty queue works once a model exists.
  run.post("/reviews", {review("q1", "scam scam scam"), review("q2", "fine app")});
  r = run.client->Get("/annotations/next?annotator=ann&strategy=uncertainty");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(body_of(r).contains("probability"));

  r = run.post("/jobs", {{"kind", "evaluate"},
                         {"models", "lr,svm"},
                         {"folds", 4},
                         {"corpus", labeled_file(dir).string()},
                         {"baseline", {{"n_violations", 401}, {"n_total", 236660}}}});
  job = wait_job(run, body_of(r).at("job_id"));
  REQUIRE(job.at("status") == "DONE");
  CHECK(job.at("progress") == 1.0);
  const auto report = body_of(run.client->Get("/reports/latest"));
  CHECK(report.at("models").size() == 2);
  const auto text = run.client->Get("/reports/latest?format=text");
  REQUIRE(text);
  CHECK(text->status == 200);
  CHECK(text->body.find("MCC") != std::string::npos);
  CHECK(body_of(run.client->Get("/reports")).size() == 1);

  // A failing job records the error and never moves back.
  r = run.post("/jobs", {{"kind", "train"}, {"corpus", (dir / "missing.jsonl").string()}});
  job = wait_job(run, body_of(r).at("job_id"));
  CHECK(job.at("status") == "FAILED");
  CHECK(job.at("error").at("code") == "io_error");
  CHECK(body_of(run.client->Get("/jobs")).size() == 3);
}
