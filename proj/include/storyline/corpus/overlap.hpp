#pragma once
// Lexical overlap between a narrative and its session's lines.

#include <array>
#include <set>
#include <string>
#include <vector>

#include "storyline/corpus/tokenize.hpp"

namespace storyline::corpus {

inline constexpr std::size_t kBuckets = 6;

inline const std::array<const char*, kBuckets>& bucket_labels() {
  static const std::array<const char*, kBuckets> l{"0",         "(0,0.2)",   "[0.2,0.4)",
                                                   "[0.4,0.6)", "[0.6,0.8)", "[0.8,1.0]"};
  return l;
}

inline std::size_t bucket_of(double ratio) {
  if (ratio <= 0) return 0;
  if (ratio < 0.2) return 1;
  if (ratio < 0.4) return 2;
  if (ratio < 0.6) return 3;
  if (ratio < 0.8) return 4;
  return 5;
}

struct Overlap {
  double ratio = 0;
  std::size_t bucket = 0;
  bool empty_narrative = false;
};

// |unique narrative tokens shared with the lines| / |unique narrative tokens|.
inline Overlap overlap_bucket(const Tokens& narrative, const std::vector<Tokens>& lines) {
  Overlap o;
  const std::set<std::string> nar(narrative.begin(), narrative.end());
  if (nar.empty()) {
    o.empty_narrative = true;
    return o;
  }
  std::set<std::string> ses;
  for (const auto& l : lines) ses.insert(l.begin(), l.end());
  std::size_t shared = 0;
  for (const auto& t : nar) shared += ses.count(t);
  o.ratio = double(shared) / double(nar.size());
  o.bucket = bucket_of(o.ratio);
  return o;
}

}  // namespace storyline::corpus
