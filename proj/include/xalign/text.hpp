#pragma once

// Text normalization shared by entity matching, vocabulary lookup and EPS:
// Unicode NFC followed by full lower-casing (ICU).

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "xalign/errors.hpp"

namespace xalign {

inline std::string normalize_text(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  icu::UnicodeString n = nfc->normalize(u, status);
  if (U_FAILURE(status)) throw DataError("could not normalize text: " + std::string(s));
  n.toLower();
  std::string out;
  n.toUTF8String(out);
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

// Normalized word tokens: ASCII punctuation other than '-' and '_' acts as a
// separator, and hyphens/underscores are trimmed from token edges.
inline std::vector<std::string> word_tokens(std::string_view s) {
  std::string cleaned = normalize_text(s);
  for (char& c : cleaned) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u) && c != '-' && c != '_') c = ' ';
  }
  std::vector<std::string> out;
  for (auto& tok : split_whitespace(cleaned)) {
    const auto first = tok.find_first_not_of("-_");
    if (first == std::string::npos) continue;
    const auto last = tok.find_last_not_of("-_");
    out.push_back(tok.substr(first, last - first + 1));
  }
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace xalign
