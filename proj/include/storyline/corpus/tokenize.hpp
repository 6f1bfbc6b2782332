#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace storyline::corpus {

using Tokens = std::vector<std::string>;

namespace detail {

inline bool word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

inline bool letter(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline char lower(char c) { return (c >= 'A' && c <= 'Z') ? char(c - 'A' + 'a') : c; }

}  // namespace detail

// Lowercases ASCII and splits on whitespace and punctuation. Runs of
// letters/digits (and any non-ASCII byte) form words; an apostrophe
// followed by letters starts a clitic token ("'s"); every other
// punctuation character is its own token.
inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto at = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  while (i < n) {
    const unsigned char c = at(i);
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      ++i;
    } else if (detail::word_byte(c)) {
      std::string w;
      while (i < n && detail::word_byte(at(i))) w += detail::lower(text[i++]);
      out.push_back(std::move(w));
    } else if (c == '\'' && i + 1 < n && detail::letter(at(i + 1))) {
      std::string w = "'";
      ++i;
      while (i < n && detail::word_byte(at(i))) w += detail::lower(text[i++]);
      out.push_back(std::move(w));
    } else {
      out.emplace_back(1, text[i++]);
    }
  }
  return out;
}

inline std::string join(const Tokens& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

}  // namespace storyline::corpus
