#pragma once

// Review text normalization: case folding, emoji removal, whitespace
// tokenization, stop-word removal, edge punctuation stripping. Every step
// is a pure function over UTF-8 strings; `preprocess` composes them in that
// fixed order.

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace honesty::textprep {

struct TokenSequence {
  std::string source_id;
  std::vector<std::string> tokens;
};

class StopWordList {
public:
  StopWordList() = default;
  StopWordList(std::unordered_set<std::string> words, std::string origin);

  // One word per line; blank lines and `#` comments are skipped. Words are
  // case folded on load.
  static StopWordList load(const std::filesystem::path& path);

  // English list compiled into the binary (same content as
  // data/stopwords_en.txt).
  static const StopWordList& builtin();

  bool contains(std::string_view word) const;
  const std::unordered_set<std::string>& words() const { return words_; }
  const std::string& origin() const { return origin_; }
  std::size_t size() const { return words_.size(); }

private:
  std::unordered_set<std::string> words_;
  std::string origin_;
};

std::string normalize_case(std::string_view text);
std::string strip_emoji(std::string_view text);
std::vector<std::string> tokenize(std::string_view text);

// A token counts as a stop word when its core (the token with edge
// punctuation stripped) is in the list, so "the," goes the same way as "the".
std::vector<std::string> remove_stopwords(std::vector<std::string> tokens,
                                          const StopWordList& stoplist);
std::vector<std::string> remove_punct(std::vector<std::string> tokens);

// Leading/trailing Unicode punctuation (general category P*) removed.
std::string strip_edge_punct(std::string_view token);

TokenSequence preprocess(std::string_view text, const StopWordList& stoplist,
                         std::string source_id = {});

std::string join(const std::vector<std::string>& tokens, char sep = ' ');

// Codepoint predicates, exposed for tests.
bool is_emoji_codepoint(char32_t cp);
bool is_whitespace_codepoint(char32_t cp);
bool is_punct_codepoint(char32_t cp);

}  // namespace honesty::textprep
