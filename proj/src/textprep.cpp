#include "honesty/textprep.hpp"

#include <fstream>
#include <sstream>

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include "builtin_data.hpp"
#include "honesty/error.hpp"

namespace honesty::textprep {

namespace {

// Decodes UTF-8 into codepoints. Ill-formed bytes become U+FFFD.
std::u32string decode(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  const auto* s = reinterpret_cast<const std::uint8_t*>(text.data());
  const auto length = static_cast<std::int32_t>(text.size());
  std::int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(s, i, length, c);
    out.push_back(c < 0 ? char32_t{0xFFFD} : static_cast<char32_t>(c));
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  std::uint8_t buf[U8_MAX_LENGTH];
  std::int32_t n = 0;
  UBool error = false;
  U8_APPEND(buf, n, U8_MAX_LENGTH, static_cast<UChar32>(cp), error);
  if (error) return;
  out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
}

std::string encode(std::u32string_view cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t cp : cps) append_utf8(out, cp);
  return out;
}

constexpr char32_t kZeroWidthJoiner = 0x200D;

bool is_variation_selector(char32_t cp) { return cp >= 0xFE00 && cp <= 0xFE0F; }

}  // namespace

bool is_emoji_codepoint(char32_t cp) {
  const auto c = static_cast<UChar32>(cp);
  if (is_variation_selector(cp)) return true;
  if (cp == 0x20E3) return true;                     // combining enclosing keycap
  if (cp >= 0xE0020 && cp <= 0xE007F) return true;  // tag sequences (subdivision flags)
  return u_hasBinaryProperty(c, UCHAR_EXTENDED_PICTOGRAPHIC) ||
         u_hasBinaryProperty(c, UCHAR_EMOJI_PRESENTATION) ||
         u_hasBinaryProperty(c, UCHAR_EMOJI_MODIFIER) ||
         u_hasBinaryProperty(c, UCHAR_REGIONAL_INDICATOR);
}

bool is_whitespace_codepoint(char32_t cp) {
  return u_isUWhiteSpace(static_cast<UChar32>(cp));
}

bool is_punct_codepoint(char32_t cp) { return u_ispunct(static_cast<UChar32>(cp)); }

StopWordList::StopWordList(std::unordered_set<std::string> words, std::string origin)
    : origin_(std::move(origin)) {
  for (const auto& w : words) {
    if (!w.empty()) words_.insert(normalize_case(w));
  }
}

namespace {

StopWordList parse_stopwords(std::istream& in, std::string origin) {
  std::unordered_set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    auto tokens = tokenize(line);
    if (tokens.empty() || tokens.front().starts_with('#')) continue;
    words.insert(tokens.front());
  }
  return StopWordList(std::move(words), std::move(origin));
}

}  // namespace

StopWordList StopWordList::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read stop-word file: " + path.string(), path.string());
  return parse_stopwords(in, "file:" + path.string());
}

const StopWordList& StopWordList::builtin() {
  static const StopWordList list = [] {
    std::istringstream in{std::string(builtin::kStopwordsEn)};
    return parse_stopwords(in, "builtin: NLTK English stop-word list");
  }();
  return list;
}

bool StopWordList::contains(std::string_view word) const {
  return words_.contains(std::string(word));
}

std::string normalize_case(std::string_view text) {
  std::u32string cps = decode(text);
  for (auto& cp : cps) {
    cp = static_cast<char32_t>(u_foldCase(static_cast<UChar32>(cp), U_FOLD_CASE_DEFAULT));
  }
  return encode(cps);
}

std::string strip_emoji(std::string_view text) {
  const std::u32string cps = decode(text);
  std::u32string out;
  out.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t cp = cps[i];
    if (is_emoji_codepoint(cp)) continue;
    if (cp == kZeroWidthJoiner) {
      // Only joiners that glue an emoji sequence together; a ZWJ between
      // letters (e.g. in Indic scripts) is ordinary text.
      const bool prev = i > 0 && is_emoji_codepoint(cps[i - 1]);
      const bool next = i + 1 < cps.size() && is_emoji_codepoint(cps[i + 1]);
      if (prev || next) continue;
    }
    out.push_back(cp);
  }
  return encode(out);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::u32string current;
  for (char32_t cp : decode(text)) {
    if (is_whitespace_codepoint(cp)) {
      if (!current.empty()) {
        tokens.push_back(encode(current));
        current.clear();
      }
    } else {
      current.push_back(cp);
    }
  }
  if (!current.empty()) tokens.push_back(encode(current));
  return tokens;
}

std::string strip_edge_punct(std::string_view token) {
  const std::u32string cps = decode(token);
  std::size_t begin = 0;
  std::size_t end = cps.size();
  while (begin < end && is_punct_codepoint(cps[begin])) ++begin;
  while (end > begin && is_punct_codepoint(cps[end - 1])) --end;
  return encode(std::u32string_view(cps).substr(begin, end - begin));
}

std::vector<std::string> remove_stopwords(std::vector<std::string> tokens,
                                          const StopWordList& stoplist) {
  std::erase_if(tokens, [&](const std::string& t) {
    return stoplist.contains(t) || stoplist.contains(strip_edge_punct(t));
  });
  return tokens;
}

std::vector<std::string> remove_punct(std::vector<std::string> tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (auto& t : tokens) {
    auto stripped = strip_edge_punct(t);
    if (!stripped.empty()) out.push_back(std::move(stripped));
  }
  return out;
}

TokenSequence preprocess(std::string_view text, const StopWordList& stoplist,
                         std::string source_id) {
  auto tokens = remove_punct(remove_stopwords(tokenize(strip_emoji(normalize_case(text))), stoplist));
  return TokenSequence{std::move(source_id), std::move(tokens)};
}

std::string join(const std::vector<std::string>& tokens, char sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(sep);
    out += tokens[i];
  }
  return out;
}

}  // namespace honesty::textprep
