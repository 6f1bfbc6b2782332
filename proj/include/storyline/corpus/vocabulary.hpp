#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "storyline/corpus/session.hpp"
#include "storyline/corpus/tokenize.hpp"

namespace storyline::corpus {

class Vocabulary {
 public:
  static constexpr std::int32_t pad_id = 0;
  static constexpr std::int32_t unk_id = 1;
  static constexpr const char* pad_token = "<pad>";
  static constexpr const char* unk_token = "<unk>";

  Vocabulary() : tokens_{pad_token, unk_token} {
    index_[pad_token] = pad_id;
    index_[unk_token] = unk_id;
  }

  // Tokens seen at least min_count times, by descending count then
  // ascending byte order.
  static Vocabulary build(const std::map<std::string, std::size_t>& counts,
                          std::size_t min_count = 1) {
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [t, c] : counts)
      if (c >= min_count && t != pad_token && t != unk_token) kept.emplace_back(t, c);
    std::stable_sort(kept.begin(), kept.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (const auto& [t, c] : kept) v.add(t);
    return v;
  }

  static Vocabulary from_sessions(const std::vector<Session>& sessions,
                                  std::size_t min_count = 1) {
    std::map<std::string, std::size_t> counts;
    for (const auto& s : sessions) {
      for (const auto& t : tokenize(s.narrative)) ++counts[t];
      for (const auto& l : s.lines)
        for (const auto& t : tokenize(l)) ++counts[t];
    }
    return build(counts, min_count);
  }

  std::size_t size() const { return tokens_.size(); }

  std::int32_t id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? unk_id : it->second;
  }

  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  std::vector<std::int32_t> encode(const Tokens& tokens) const {
    std::vector<std::int32_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }

  // One token per line; the line index is the id.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CorpusError("cannot open '" + path + "' for writing");
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open vocabulary '" + path + "'");
    Vocabulary v;
    std::string t;
    std::size_t line = 0;
    while (std::getline(in, t)) {
      if (line == 0 && t != pad_token) throw CorpusError(path + ": first entry must be <pad>");
      if (line == 1 && t != unk_token) throw CorpusError(path + ": second entry must be <unk>");
      if (line >= 2) {
        if (v.contains(t)) throw CorpusError(path + ": duplicate token '" + t + "'");
        v.add(t);
      }
      ++line;
    }
    return v;
  }

 private:
  void add(const std::string& t) {
    index_[t] = static_cast<std::int32_t>(tokens_.size());
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

}  // namespace storyline::corpus
