#pragma once

// Review embeddings by mean pooling over per-token vectors supplied by a
// pluggable provider.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "honesty/error.hpp"
#include "honesty/textprep.hpp"

namespace honesty::features {

inline constexpr std::size_t kDefaultWidth = 768;

struct EmbeddingVector {
  std::string source_id;
  std::vector<double> values;
};

enum class ProviderMode { LocalDeterministic, RemoteService };

class EmbeddingProvider {
public:
  virtual ~EmbeddingProvider() = default;

  virtual std::string name() const = 0;
  // Changes whenever the token -> vector mapping changes; part of cache keys.
  virtual std::string version() const = 0;
  virtual std::size_t width() const = 0;
  virtual ProviderMode mode() const = 0;
  virtual std::size_t max_batch() const { return 256; }
  virtual std::size_t parallelism() const { return 1; }

  // One vector of width() per input, in input order. Must be safe to call
  // from several threads at once.
  virtual std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& items) const = 0;

  std::vector<double> embed_token(const std::string& token) const;

  // "name:width", recorded in model artifacts.
  std::string fingerprint() const { return name() + ":" + std::to_string(width()); }
};

// Offline provider: each token's vector is a seeded hash expanded to
// `width` uniform values in [-1, 1] and scaled to unit length.
class HashEmbeddingProvider final : public EmbeddingProvider {
public:
  explicit HashEmbeddingProvider(std::size_t width = kDefaultWidth, std::uint64_t seed = 0);

  std::string name() const override { return "hash"; }
  std::string version() const override;
  std::size_t width() const override { return width_; }
  ProviderMode mode() const override { return ProviderMode::LocalDeterministic; }
  std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& items) const override;

private:
  std::size_t width_;
  std::uint64_t seed_;
};

struct RemoteConfig {
  std::string base_url = "http://127.0.0.1:8081";
  std::string name = "remote";
  std::size_t width = kDefaultWidth;
  double timeout_seconds = 30.0;
  std::size_t max_batch = 64;
  std::size_t parallelism = 1;
  int max_attempts = 3;
  double backoff_seconds = 0.25;
};

// Client for an embedding service speaking
//   POST /embed {"texts": [...]} -> {"width": D, "vectors": [[...], ...]}
// Connection failures and 5xx answers are retried with exponential backoff,
// then surface as TransportError. Shape violations are ProtocolError.
class RemoteEmbeddingProvider final : public EmbeddingProvider {
public:
  explicit RemoteEmbeddingProvider(RemoteConfig config);

  std::string name() const override { return config_.name; }
  std::string version() const override { return config_.name + "@" + config_.base_url; }
  std::size_t width() const override { return config_.width; }
  ProviderMode mode() const override { return ProviderMode::RemoteService; }
  std::size_t max_batch() const override { return config_.max_batch; }
  std::size_t parallelism() const override { return config_.parallelism; }
  std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& items) const override;

  // Whole review text in, one vector out; pooling and sub-word segmentation
  // happen on the service side.
  EmbeddingVector embed_text(const std::string& source_id, const std::string& text) const;

  const RemoteConfig& config() const { return config_; }

private:
  RemoteConfig config_;
};

// Per-run token vector cache keyed by (provider version, token).
class TokenVectorCache {
public:
  std::optional<std::vector<double>> get(const std::string& provider_version,
                                         const std::string& token) const;
  void put(const std::string& provider_version, const std::string& token, std::vector<double> vec);
  bool contains(const std::string& provider_version, const std::string& token) const;
  std::size_t size() const;

  // JSONL: a header line {"format","version","provider","provider_version","width"}
  // followed by {"token","vector"} lines for the given provider.
  void save(const std::filesystem::path& path, const EmbeddingProvider& provider) const;
  // Merges entries; the header must match the provider's name, version and width.
  void load(const std::filesystem::path& path, const EmbeddingProvider& provider);

private:
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::string>, std::vector<double>> entries_;
};

// Raised when a batch fails midway through a corpus. Vectors already fetched
// stay in the cache, so rerunning with the same cache resumes the work.
class PartialEmbeddingError : public Error {
public:
  PartialEmbeddingError(const std::string& cause, std::size_t completed, std::size_t total)
      : Error("partial_embedding",
              "embedding stopped after " + std::to_string(completed) + " of " +
                  std::to_string(total) + " reviews: " + cause,
              "completed=" + std::to_string(completed)),
        completed_(completed) {}
  std::size_t completed() const noexcept { return completed_; }

private:
  std::size_t completed_;
};

// Arithmetic mean of the token vectors. An empty sequence yields the zero
// vector (with a warning).
EmbeddingVector embed_review(const EmbeddingProvider& provider, const textprep::TokenSequence& tokens);
EmbeddingVector embed_review(const EmbeddingProvider& provider, const textprep::TokenSequence& tokens,
                             TokenVectorCache& cache);

// Order-aligned with `reviews`. Each distinct uncached token is requested
// from the provider once, in batches of provider.max_batch().
std::vector<EmbeddingVector> embed_corpus(const EmbeddingProvider& provider,
                                          const std::vector<textprep::TokenSequence>& reviews,
                                          TokenVectorCache& cache);

// Feature file: JSONL of {"id", "label" (optional), "vector"}.
struct FeatureRecord {
  EmbeddingVector vector;
  std::optional<int> label;
};
void save_features(const std::filesystem::path& path, const std::vector<FeatureRecord>& records);
std::vector<FeatureRecord> load_features(const std::filesystem::path& path);

}  // namespace honesty::features
