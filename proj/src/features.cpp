#include "honesty/features.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>
#include <set>
#include <thread>
#include <unordered_set>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "honesty/rng.hpp"

namespace honesty::features {

using nlohmann::json;

std::vector<double> EmbeddingProvider::embed_token(const std::string& token) const {
  if (token.empty()) throw PreconditionError("cannot embed an empty token");
  auto vectors = embed_batch({token});
  return std::move(vectors.front());
}

HashEmbeddingProvider::HashEmbeddingProvider(std::size_t width, std::uint64_t seed)
    : width_(width), seed_(seed) {
  if (width == 0) throw PreconditionError("embedding width must be positive");
}

std::string HashEmbeddingProvider::version() const {
  return "hash-v1/seed=" + std::to_string(seed_) + "/width=" + std::to_string(width_);
}

std::vector<std::vector<double>> HashEmbeddingProvider::embed_batch(
    const std::vector<std::string>& items) const {
  std::vector<std::vector<double>> out;
  out.reserve(items.size());
  for (const auto& token : items) {
    if (token.empty()) throw PreconditionError("cannot embed an empty token");
    const std::uint64_t base = fnv1a64(token) ^ splitmix64(seed_);
    std::vector<double> v(width_);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < width_; ++i) {
      const std::uint64_t bits = splitmix64(base + 0x632be59bd9b4e019ULL * (i + 1));
      v[i] = static_cast<double>(bits >> 11) * 0x1.0p-52 - 1.0;
      norm2 += v[i] * v[i];
    }
    const double norm = std::sqrt(norm2);
    for (auto& x : v) x /= norm;
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------

RemoteEmbeddingProvider::RemoteEmbeddingProvider(RemoteConfig config) : config_(std::move(config)) {
  if (config_.width == 0) throw PreconditionError("embedding width must be positive");
  if (config_.max_batch == 0) config_.max_batch = 1;
  if (config_.parallelism == 0) config_.parallelism = 1;
  if (config_.max_attempts < 1) config_.max_attempts = 1;
}

namespace {

std::vector<std::vector<double>> parse_embed_response(const std::string& body, std::size_t expected_count,
                                                      std::size_t width) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProtocolError("embedding service returned malformed JSON", e.what());
  }
  if (!j.is_object() || !j.contains("width") || !j["width"].is_number_integer() ||
      !j.contains("vectors") || !j["vectors"].is_array()) {
    throw ProtocolError("embedding response lacks 'width' or 'vectors'");
  }
  const auto got_width = j["width"].get<std::int64_t>();
  if (got_width != static_cast<std::int64_t>(width)) {
    throw ProtocolError("embedding width mismatch: expected " + std::to_string(width) + ", got " +
                        std::to_string(got_width));
  }
  const auto& vectors = j["vectors"];
  if (vectors.size() != expected_count) {
    throw ProtocolError("embedding response has " + std::to_string(vectors.size()) +
                        " vectors for " + std::to_string(expected_count) + " inputs");
  }
  std::vector<std::vector<double>> out;
  out.reserve(expected_count);
  for (const auto& v : vectors) {
    if (!v.is_array() || v.size() != width) {
      throw ProtocolError("embedding vector width mismatch: expected " + std::to_string(width));
    }
    std::vector<double> row;
    row.reserve(width);
    for (const auto& x : v) {
      if (!x.is_number()) throw ProtocolError("non-numeric embedding component");
      const double d = x.get<double>();
      if (!std::isfinite(d)) throw ProtocolError("non-finite embedding component");
      row.push_back(d);
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

std::vector<std::vector<double>> RemoteEmbeddingProvider::embed_batch(
    const std::vector<std::string>& items) const {
  if (items.empty()) return {};
  httplib::Client client(config_.base_url);
  const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  const std::string body = json{{"texts", items}}.dump();
  double backoff = config_.backoff_seconds;
  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    auto res = client.Post("/embed", body, "application/json");
    if (res && res->status == 200) return parse_embed_response(res->body, items.size(), config_.width);
    if (res && res->status >= 400 && res->status < 500) {
      throw ProtocolError("embedding service rejected request with HTTP " + std::to_string(res->status),
                          res->body);
    }
    last_error = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
    if (attempt < config_.max_attempts) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
  }
  throw TransportError("embedding service unreachable at " + config_.base_url + ": " + last_error,
                       config_.max_attempts, backoff);
}

EmbeddingVector RemoteEmbeddingProvider::embed_text(const std::string& source_id,
                                                    const std::string& text) const {
  auto vectors = embed_batch({text});
  return EmbeddingVector{source_id, std::move(vectors.front())};
}

// ---------------------------------------------------------------------------

std::optional<std::vector<double>> TokenVectorCache::get(const std::string& provider_version,
                                                         const std::string& token) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find({provider_version, token});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void TokenVectorCache::put(const std::string& provider_version, const std::string& token,
                           std::vector<double> vec) {
  std::lock_guard lock(mutex_);
  entries_[{provider_version, token}] = std::move(vec);
}

bool TokenVectorCache::contains(const std::string& provider_version, const std::string& token) const {
  std::lock_guard lock(mutex_);
  return entries_.contains({provider_version, token});
}

std::size_t TokenVectorCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

namespace {
constexpr const char* kCacheFormat = "honesty-token-cache";
constexpr int kCacheVersion = 1;
}  // namespace

void TokenVectorCache::save(const std::filesystem::path& path, const EmbeddingProvider& provider) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write cache file: " + path.string(), path.string());
  out << json{{"format", kCacheFormat},
              {"version", kCacheVersion},
              {"provider", provider.name()},
              {"provider_version", provider.version()},
              {"width", provider.width()}}
             .dump()
      << '\n';
  std::lock_guard lock(mutex_);
  for (const auto& [key, vec] : entries_) {
    if (key.first != provider.version()) continue;
    out << json{{"token", key.second}, {"vector", vec}}.dump() << '\n';
  }
}

void TokenVectorCache::load(const std::filesystem::path& path, const EmbeddingProvider& provider) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read cache file: " + path.string(), path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("cache file is empty", path.string());
  const json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != kCacheFormat ||
      header.value("version", 0) != kCacheVersion) {
    throw ValidationError("not a token cache file (bad header)", path.string());
  }
  if (header.value("provider", "") != provider.name() ||
      header.value("provider_version", "") != provider.version() ||
      header.value("width", std::size_t{0}) != provider.width()) {
    throw ValidationError("token cache was written by a different provider", header.dump());
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("token") || !j.contains("vector")) {
      throw ValidationError("malformed cache entry", "line " + std::to_string(lineno));
    }
    auto vec = j["vector"].get<std::vector<double>>();
    if (vec.size() != provider.width()) {
      throw ValidationError("cache entry has wrong width", "line " + std::to_string(lineno));
    }
    put(provider.version(), j["token"].get<std::string>(), std::move(vec));
  }
}

// ---------------------------------------------------------------------------

namespace {

// Mean over the token vectors, summed in sorted-token order so the result is
// bit-identical under any permutation of the input.
EmbeddingVector mean_pool(const EmbeddingProvider& provider, const textprep::TokenSequence& seq,
                          const TokenVectorCache& cache) {
  EmbeddingVector out{seq.source_id, std::vector<double>(provider.width(), 0.0)};
  if (seq.tokens.empty()) {
    spdlog::warn("review '{}' has no tokens after preprocessing; using the zero vector", seq.source_id);
    return out;
  }
  std::vector<const std::string*> order;
  order.reserve(seq.tokens.size());
  for (const auto& t : seq.tokens) order.push_back(&t);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return *a < *b; });

  const std::string version = provider.version();
  for (const auto* token : order) {
    const auto vec = cache.get(version, *token);
    if (!vec) throw Error("internal", "token vector missing from cache: " + *token);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += (*vec)[i];
  }
  const double n = static_cast<double>(seq.tokens.size());
  for (auto& x : out.values) x /= n;
  return out;
}

void check_width(const EmbeddingProvider& provider, const std::vector<std::vector<double>>& vecs) {
  for (const auto& v : vecs) {
    if (v.size() != provider.width()) {
      throw ProtocolError("provider returned width " + std::to_string(v.size()) + ", expected " +
                          std::to_string(provider.width()));
    }
  }
}

}  // namespace

EmbeddingVector embed_review(const EmbeddingProvider& provider, const textprep::TokenSequence& tokens,
                             TokenVectorCache& cache) {
  const std::string version = provider.version();
  std::vector<std::string> missing;
  std::unordered_set<std::string> queued;
  for (const auto& t : tokens.tokens) {
    if (!cache.contains(version, t) && queued.insert(t).second) missing.push_back(t);
  }
  if (!missing.empty()) {
    auto vecs = provider.embed_batch(missing);
    check_width(provider, vecs);
    for (std::size_t i = 0; i < missing.size(); ++i) cache.put(version, missing[i], std::move(vecs[i]));
  }
  return mean_pool(provider, tokens, cache);
}

EmbeddingVector embed_review(const EmbeddingProvider& provider, const textprep::TokenSequence& tokens) {
  TokenVectorCache cache;
  return embed_review(provider, tokens, cache);
}

std::vector<EmbeddingVector> embed_corpus(const EmbeddingProvider& provider,
                                          const std::vector<textprep::TokenSequence>& reviews,
                                          TokenVectorCache& cache) {
  const std::string version = provider.version();
  std::vector<std::string> missing;
  std::unordered_set<std::string> queued;
  for (const auto& seq : reviews) {
    for (const auto& t : seq.tokens) {
      if (!cache.contains(version, t) && queued.insert(t).second) missing.push_back(t);
    }
  }

  const std::size_t batch = std::max<std::size_t>(1, provider.max_batch());
  const std::size_t parallel = std::max<std::size_t>(1, provider.parallelism());
  std::vector<std::vector<std::string>> batches;
  for (std::size_t i = 0; i < missing.size(); i += batch) {
    batches.emplace_back(missing.begin() + static_cast<std::ptrdiff_t>(i),
                         missing.begin() + static_cast<std::ptrdiff_t>(std::min(missing.size(), i + batch)));
  }

  auto completed_reviews = [&] {
    std::size_t done = 0;
    for (const auto& seq : reviews) {
      const bool all = std::all_of(seq.tokens.begin(), seq.tokens.end(),
                                   [&](const std::string& t) { return cache.contains(version, t); });
      if (!all) break;
      ++done;
    }
    return done;
  };

  // Waves of up to `parallel` concurrent requests; results are stored as
  // each wave completes.
  for (std::size_t start = 0; start < batches.size(); start += parallel) {
    const std::size_t end = std::min(batches.size(), start + parallel);
    std::vector<std::future<std::vector<std::vector<double>>>> pending;
    for (std::size_t b = start; b < end; ++b) {
      if (parallel == 1) {
        std::promise<std::vector<std::vector<double>>> p;
        try {
          p.set_value(provider.embed_batch(batches[b]));
        } catch (...) {
          p.set_exception(std::current_exception());
        }
        pending.push_back(p.get_future());
      } else {
        pending.push_back(std::async(std::launch::async,
                                     [&provider, &items = batches[b]] { return provider.embed_batch(items); }));
      }
    }
    std::string failure;
    for (std::size_t k = 0; k < pending.size(); ++k) {
      try {
        auto vecs = pending[k].get();
        check_width(provider, vecs);
        const auto& items = batches[start + k];
        for (std::size_t i = 0; i < items.size(); ++i) cache.put(version, items[i], std::move(vecs[i]));
      } catch (const std::exception& e) {
        if (failure.empty()) failure = e.what();
      }
    }
    if (!failure.empty()) throw PartialEmbeddingError(failure, completed_reviews(), reviews.size());
  }

  std::vector<EmbeddingVector> out;
  out.reserve(reviews.size());
  for (const auto& seq : reviews) out.push_back(mean_pool(provider, seq, cache));
  return out;
}

// ---------------------------------------------------------------------------

void save_features(const std::filesystem::path& path, const std::vector<FeatureRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write feature file: " + path.string(), path.string());
  for (const auto& r : records) {
    json j = {{"id", r.vector.source_id}, {"vector", r.vector.values}};
    if (r.label) j["label"] = *r.label;
    out << j.dump() << '\n';
  }
}

std::vector<FeatureRecord> load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read feature file: " + path.string(), path.string());
  std::vector<FeatureRecord> records;
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::size_t> width;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("vector") || !j["vector"].is_array()) {
      throw ValidationError("malformed feature record", path.string() + ":" + std::to_string(lineno));
    }
    FeatureRecord r;
    r.vector.source_id = j.value("id", std::to_string(lineno));
    r.vector.values = j["vector"].get<std::vector<double>>();
    if (!width) width = r.vector.values.size();
    if (r.vector.values.size() != *width || *width == 0) {
      throw ValidationError("feature vectors have inconsistent width",
                            path.string() + ":" + std::to_string(lineno));
    }
    if (j.contains("label") && !j["label"].is_null()) {
      const auto& l = j["label"];
      r.label = l.is_boolean() ? (l.get<bool>() ? 1 : 0) : l.get<int>();
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace honesty::features
