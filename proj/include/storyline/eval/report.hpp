#pragma once
// CSV and JSON metric reports.

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "storyline/corpus/overlap.hpp"
#include "storyline/eval/metrics.hpp"
#include "storyline/eval/session.hpp"
#include "storyline/model/network.hpp"

namespace storyline::eval {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

inline std::string csv_field(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string q = "\"";
  for (char c : v) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw EvalError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw EvalError("failed writing '" + path + "'");
}

inline std::string turn_csv(const TurnMetrics& m) {
  std::string s = "metric,value,n_pools\n";
  s += "R2@1," + fmt(m.r2_1) + "," + std::to_string(m.pools) + "\n";
  s += "R10@1," + fmt(m.r10_1) + "," + std::to_string(m.pools10) + "\n";
  s += "R10@5," + fmt(m.r10_5) + "," + std::to_string(m.pools10) + "\n";
  s += "MRR," + fmt(m.mrr) + "," + std::to_string(m.pools) + "\n";
  return s;
}

inline nlohmann::ordered_json turn_json(const TurnMetrics& m) {
  nlohmann::ordered_json j;
  j["R2@1"] = m.r2_1;
  j["R10@1"] = m.r10_1 ? nlohmann::ordered_json(*m.r10_1) : nlohmann::ordered_json();
  j["R10@5"] = m.r10_5 ? nlohmann::ordered_json(*m.r10_5) : nlohmann::ordered_json();
  j["MRR"] = m.mrr;
  j["n_pools"] = m.pools;
  j["n_pools_10"] = m.pools10;
  return j;
}

inline std::string session_csv(const SessionMetrics& m) {
  std::string s = "metric,value,n_sessions\n";
  s += "P_strict," + fmt(m.p_strict) + "," + std::to_string(m.sessions) + "\n";
  s += "P_weak," + fmt(m.p_weak) + "," + std::to_string(m.sessions) + "\n";
  return s;
}

inline nlohmann::ordered_json session_json(const SessionMetrics& m) {
  nlohmann::ordered_json j;
  j["P_strict"] = m.p_strict;
  j["P_weak"] = m.p_weak;
  j["n_sessions"] = m.sessions;
  return j;
}

inline std::string bucket_csv(const OverlapReport& r) {
  std::string s = "bucket,sessions,P_strict,P_weak\n";
  for (std::size_t b = 0; b < corpus::kBuckets; ++b) {
    const auto& row = r.buckets[b];
    s += std::string("\"") + corpus::bucket_labels()[b] + "\"," + std::to_string(row.sessions) +
         "," + (row.sessions ? fmt(row.metrics.p_strict) : "") + "," +
         (row.sessions ? fmt(row.metrics.p_weak) : "") + "\n";
  }
  return s;
}

inline nlohmann::ordered_json bucket_json(const OverlapReport& r) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < corpus::kBuckets; ++b) {
    nlohmann::ordered_json row;
    row["bucket"] = corpus::bucket_labels()[b];
    row["sessions"] = r.buckets[b].sessions;
    row["P_strict"] = r.buckets[b].sessions ? nlohmann::ordered_json(r.buckets[b].metrics.p_strict)
                                            : nlohmann::ordered_json();
    row["P_weak"] = r.buckets[b].sessions ? nlohmann::ordered_json(r.buckets[b].metrics.p_weak)
                                          : nlohmann::ordered_json();
    j.push_back(row);
  }
  return j;
}

// line,level,word_position,token,decay,retention
template <class T>
std::string decay_trace_csv(const model::DecayTrace<T>& trace, const Tokens& narrative_tokens) {
  std::string s = "line,level,word_position,token,decay,retention\n";
  for (std::size_t i = 0; i < trace.retention.size(); ++i)
    for (std::size_t l = 0; l < trace.retention[i].size(); ++l)
      for (std::size_t k = 0; k < trace.narrative_positions.size(); ++k) {
        const std::size_t pos = trace.narrative_positions[k];
        const std::string tok = pos < narrative_tokens.size() ? narrative_tokens[pos] : "";
        s += std::to_string(i + 1) + "," + std::to_string(l) + "," + std::to_string(pos) + "," +
             csv_field(tok) + "," + fmt(trace.decay[i][l][k]) + "," + fmt(trace.retention[i][l][k]) + "\n";
      }
  return s;
}

}  // namespace storyline::eval
