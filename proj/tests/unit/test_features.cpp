#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "honesty/error.hpp"
#include "honesty/features.hpp"

using namespace honesty;
using namespace honesty::features;
using nlohmann::json;

namespace {

textprep::TokenSequence seq(std::vector<std::string> tokens, std::string id = "r") {
  return {std::move(id), std::move(tokens)};
}

// Width-4 provider with fixed vectors; counts how often each token is requested.
class FakeProvider final : public EmbeddingProvider {
public:
  std::string name() const override { return "fake"; }
  std::string version() const override { return "fake-1"; }
  std::size_t width() const override { return 4; }
  ProviderMode mode() const override { return ProviderMode::LocalDeterministic; }
  std::size_t max_batch() const override { return 2; }
  std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& items) const override {
    ++batches;
    std::vector<std::vector<double>> out;
    for (const auto& t : items) {
      ++requests[t];
      if (t == "u") {
        out.push_back({1, 2, 3, 4});
      } else if (t == "v") {
        out.push_back({3, 0, -1, 8});
      } else {
        const double h = static_cast<double>(std::hash<std::string>{}(t) % 1000) / 1000.0;
        out.push_back({h, -h, 2 * h, 0.5});
      }
    }
    return out;
  }
  mutable std::map<std::string, int> requests;
  mutable int batches = 0;
};

// In-process embedding service on an ephemeral port.
struct FakeService {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> calls{0};
  std::atomic<int> fail_after{-1};  // 503 once this many calls have succeeded

  explicit FakeService(std::size_t reply_width) {
    server.Post("/embed", [this, reply_width](const httplib::Request& req, httplib::Response& res) {
      const int n = calls++;
      if (fail_after >= 0 && n >= fail_after) {
        res.status = 503;
        return;
      }
      const auto body = json::parse(req.body);
      json vectors = json::array();
      for (const auto& t : body.at("texts")) {
        std::vector<double> v(reply_width, 0.0);
        v[t.get<std::string>().size() % reply_width] = 1.0;
        vectors.push_back(v);
      }
      res.set_content(json{{"width", reply_width}, {"vectors", vectors}}.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeService() {
    server.stop();
    thread.join();
  }
  RemoteConfig config(std::size_t width) const {
    RemoteConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port);
    c.width = width;
    c.max_batch = 2;
    c.backoff_seconds = 0.01;
    c.timeout_seconds = 5;
    return c;
  }
};

double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("hash provider: determinism and unit norm") {
  HashEmbeddingProvider p(768, 11);
  const auto a = p.embed_token("scam");
  const auto b = p.embed_token("scam");
  CHECK(a == b);
  CHECK(a.size() == 768);
  for (const auto* t : {"scam", "a", "refund", "\xC3\xA9t\xC3\xA9"}) {
    CHECK(std::abs(norm(p.embed_token(t)) - 1.0) < 1e-9);
  }
  CHECK(p.embed_token("scam") != p.embed_token("fraud"));
  CHECK(HashEmbeddingProvider(768, 12).embed_token("scam") != a);
  CHECK(p.fingerprint() == "hash:768");
  CHECK_THROWS_AS(p.embed_token(""), PreconditionError);
  CHECK_THROWS_AS(HashEmbeddingProvider(0), PreconditionError);
}

TEST_CASE("embed_review is the arithmetic mean") {
  FakeProvider p;
  CHECK(embed_review(p, seq({"u"})).values == std::vector<double>{1, 2, 3, 4});
  CHECK(embed_review(p, seq({"u", "v"})).values == std::vector<double>{2, 1, 1, 6});
  CHECK(embed_review(p, seq({})).values == std::vector<double>(4, 0.0));
  CHECK(embed_review(p, seq({"u", "v"}, "x")).source_id == "x");
}

TEST_CASE("mean pooling invariances") {
  HashEmbeddingProvider p(64, 3);
  const std::vector<std::string> toks = {"app", "charged", "me", "twice", "scam", "app"};
  const auto base = embed_review(p, seq(toks)).values;
  auto rev = toks;
  std::reverse(rev.begin(), rev.end());
  CHECK(embed_review(p, seq(rev)).values == base);
  std::vector<std::string> tripled;
  for (int k = 0; k < 3; ++k) tripled.insert(tripled.end(), toks.begin(), toks.end());
  const auto rep = embed_review(p, seq(tripled)).values;
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(rep[i] == doctest::Approx(base[i]).epsilon(1e-12));
}

TEST_CASE("embed_corpus batching, caching and equivalence") {
  FakeProvider p;
  TokenVectorCache cache;
  const std::vector<textprep::TokenSequence> reviews = {seq({"u", "w", "v"}, "a"), seq({"v", "u"}, "b"),
                                                        seq({"w", "z", "u"}, "c")};
  const auto out = embed_corpus(p, reviews, cache);
  REQUIRE(out.size() == 3);
  for (const auto& [tok, n] : p.requests) CHECK_MESSAGE(n == 1, tok);
  CHECK(p.requests.size() == 4);
  CHECK(p.batches == 2);  // 4 distinct tokens, batch size 2
  for (std::size_t i = 0; i < reviews.size(); ++i) {
    CHECK(out[i].source_id == reviews[i].source_id);
    CHECK(out[i].values == embed_review(p, reviews[i]).values);
  }
  // A second pass is served from the cache.
  p.requests.clear();
  embed_corpus(p, reviews, cache);
  CHECK(p.requests.empty());
  CHECK(embed_corpus(p, {}, cache).empty());
}

TEST_CASE("token cache file round trip") {
  HashEmbeddingProvider p(8, 1);
  TokenVectorCache cache;
  embed_corpus(p, {seq({"a", "b"})}, cache);
  const auto path = std::filesystem::temp_directory_path() / "hv_cache_test.jsonl";
  cache.save(path, p);
  TokenVectorCache back;
  back.load(path, p);
  CHECK(back.size() == 2);
  CHECK(*back.get(p.version(), "a") == p.embed_token("a"));
  CHECK_THROWS_AS(back.load(path, HashEmbeddingProvider(16, 1)), ValidationError);
  std::filesystem::remove(path);
}

TEST_CASE("feature file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "hv_features_test.jsonl";
  std::vector<FeatureRecord> recs = {{{"a", {0.1, -2.5e-17, 3}}, 1}, {{"b", {1, 2, 3}}, std::nullopt}};
  save_features(path, recs);
  const auto back = load_features(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].vector.values == recs[0].vector.values);
  CHECK(back[0].label == 1);
  CHECK_FALSE(back[1].label);
  std::filesystem::remove(path);
}

TEST_CASE("remote provider against a fake service") {
  FakeService svc(8);
  RemoteEmbeddingProvider p(svc.config(8));
  const auto v = p.embed_batch({"abc", "de", "f"});
  REQUIRE(v.size() == 3);
  CHECK(v[0][3] == 1.0);
  CHECK(v[1][2] == 1.0);
  CHECK(p.mode() == ProviderMode::RemoteService);

  TokenVectorCache cache;
  const int before = svc.calls;
  embed_corpus(p, {seq({"abc", "de"}), seq({"de", "abc", "f"})}, cache);
  CHECK(svc.calls - before == 2);  // 3 distinct tokens, batch size 2
}

TEST_CASE("remote width mismatch is a protocol error") {
  FakeService svc(512);
  RemoteEmbeddingProvider p(svc.config(768));
  CHECK_THROWS_AS(p.embed_batch({"scam"}), ProtocolError);
}

TEST_CASE("unreachable service is a transport error with retry metadata") {
  RemoteConfig c;
  c.base_url = "http://127.0.0.1:1";
  c.max_attempts = 2;
  c.backoff_seconds = 0.01;
  c.timeout_seconds = 1;
  RemoteEmbeddingProvider p(c);
  try {
    p.embed_batch({"scam"});
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK(e.attempts() == 2);
    CHECK(e.code() == "transport");
  }
}

TEST_CASE("partial failure reports progress and resumes from the cache") {
  FakeService svc(4);
  svc.fail_after = 1;
  auto cfg = svc.config(4);
  cfg.max_attempts = 1;
  RemoteEmbeddingProvider p(cfg);
  TokenVectorCache cache;
  const std::vector<textprep::TokenSequence> reviews = {seq({"aa", "b"}, "r1"), seq({"ccc", "dddd"}, "r2")};
  try {
    embed_corpus(p, reviews, cache);
    FAIL("expected PartialEmbeddingError");
  } catch (const PartialEmbeddingError& e) {
    CHECK(e.completed() == 1);
    CHECK(e.code() == "partial_embedding");
  }
  CHECK(cache.size() == 2);
  svc.fail_after = -1;
  const int before = svc.calls;
  const auto out = embed_corpus(p, reviews, cache);
  CHECK(out.size() == 2);
  CHECK(svc.calls - before == 1);
}
