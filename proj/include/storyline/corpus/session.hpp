#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace storyline::corpus {

struct Session {
  std::string id;
  std::string narrative;
  std::vector<std::string> lines;
};

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LoadResult {
  std::vector<Session> sessions;
  std::size_t dropped = 0;  // records with fewer than two lines
};

// One JSON object per line: {"id"?, "narrative": str, "lines": [str]}.
// Blank lines are skipped. Sessions without an id get "s<line number>".
inline LoadResult parse_corpus(std::istream& in, const std::string& source = "<stream>") {
  LoadResult r;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw CorpusError(where() + "malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("narrative") || !j["narrative"].is_string() ||
        !j.contains("lines") || !j["lines"].is_array())
      throw CorpusError(where() + "expected {\"narrative\": string, \"lines\": [string]}");
    Session s;
    s.narrative = j["narrative"].get<std::string>();
    for (const auto& l : j["lines"]) {
      if (!l.is_string()) throw CorpusError(where() + "\"lines\" must contain strings");
      s.lines.push_back(l.get<std::string>());
    }
    if (j.contains("id")) {
      s.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    } else {
      s.id = "s" + std::to_string(line_no);
    }
    if (s.lines.size() < 2) {
      ++r.dropped;
      continue;
    }
    r.sessions.push_back(std::move(s));
  }
  return r;
}

inline LoadResult load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus '" + path + "'");
  return parse_corpus(in, path);
}

inline std::string session_json(const Session& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["narrative"] = s.narrative;
  j["lines"] = s.lines;
  return j.dump();
}

inline void save_corpus(const std::string& path, const std::vector<Session>& sessions) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot open '" + path + "' for writing");
  for (const auto& s : sessions) out << session_json(s) << '\n';
  if (!out) throw CorpusError("failed writing '" + path + "'");
}

}  // namespace storyline::corpus
