#pragma once
// Turn-level ranking: pools, ranks, recall@k and MRR.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "storyline/corpus/micro_session.hpp"
#include "storyline/corpus/tokenize.hpp"

namespace storyline::eval {

using corpus::Tokens;

// Scores every candidate given the context lines and the narrative.
using Scorer = std::function<std::vector<double>(
    const std::vector<Tokens>& context, const Tokens& narrative,
    const std::vector<Tokens>& candidates)>;

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a over the candidate's tokens, mixed with the seed. Depends only on
// content so rankings do not depend on candidate input order.
inline std::uint64_t tie_key(std::uint64_t seed, const Tokens& candidate) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (const auto& t : candidate) {
    for (char c : t) feed(static_cast<unsigned char>(c));
    feed(0x1f);
  }
  return corpus::mix_seed(h ^ corpus::mix_seed(seed));
}

struct RankedPool {
  std::vector<double> scores;
  std::vector<std::uint64_t> tie;
  std::vector<std::size_t> order;  // candidate indices, best first
  std::size_t truth = 0;

  std::size_t size() const { return scores.size(); }
  std::size_t top() const { return order.front(); }

  // Whether candidate a ranks above b.
  bool before(std::size_t a, std::size_t b) const {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (tie[a] != tie[b]) return tie[a] < tie[b];
    return a < b;
  }

  // 1-based rank of the ground truth among the first n candidates.
  std::size_t rank_among(std::size_t n) const {
    n = std::min(n, size());
    std::size_t r = 1;
    for (std::size_t i = 0; i < n; ++i)
      if (i != truth && before(i, truth)) ++r;
    return r;
  }

  std::size_t rank() const { return rank_among(size()); }
};

inline RankedPool rank_scores(std::vector<double> scores, const std::vector<Tokens>& candidates,
                              std::size_t truth, std::uint64_t seed) {
  if (scores.size() != candidates.size())
    throw EvalError("rank_pool: scorer returned " + std::to_string(scores.size()) +
                    " scores for " + std::to_string(candidates.size()) + " candidates");
  if (candidates.size() < 2) throw EvalError("rank_pool: need at least two candidates");
  if (truth >= candidates.size()) throw EvalError("rank_pool: ground truth index out of range");
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!std::isfinite(scores[i]))
      throw EvalError("rank_pool: non-finite score for candidate " + std::to_string(i) + " '" +
                      corpus::join(candidates[i]) + "'");
  RankedPool p;
  p.scores = std::move(scores);
  p.truth = truth;
  for (const auto& c : candidates) p.tie.push_back(tie_key(seed, c));
  p.order.resize(candidates.size());
  std::iota(p.order.begin(), p.order.end(), 0);
  std::sort(p.order.begin(), p.order.end(),
            [&](std::size_t a, std::size_t b) { return p.before(a, b); });
  return p;
}

inline RankedPool rank_pool(const std::vector<Tokens>& context, const Tokens& narrative,
                            const std::vector<Tokens>& candidates, std::size_t truth,
                            const Scorer& scorer, std::uint64_t seed) {
  return rank_scores(scorer(context, narrative, candidates), candidates, truth, seed);
}

struct TurnMetrics {
  double r2_1 = 0;
  std::optional<double> r10_1, r10_5;  // only when pools have >= 10 candidates
  double mrr = 0;
  std::size_t pools = 0;
  std::size_t pools10 = 0;
};

// R_2@1 compares the truth with the first other candidate; R_10@k uses the
// first ten candidates of pools that have at least ten; MRR uses the full
// pool.
inline TurnMetrics turn_metrics(const std::vector<RankedPool>& pools) {
  if (pools.empty()) throw EvalError("turn_metrics: no pools");
  TurnMetrics m;
  double r2 = 0, r10_1 = 0, r10_5 = 0, mrr = 0;
  for (const auto& p : pools) {
    const std::size_t other = p.truth == 0 ? 1 : 0;
    r2 += p.before(p.truth, other) ? 1.0 : 0.0;
    if (p.size() >= 10) {
      const std::size_t r = p.rank_among(10);
      r10_1 += r <= 1;
      r10_5 += r <= 5;
      ++m.pools10;
    }
    mrr += 1.0 / double(p.rank());
  }
  m.pools = pools.size();
  m.r2_1 = r2 / double(m.pools);
  m.mrr = mrr / double(m.pools);
  if (m.pools10) {
    m.r10_1 = r10_1 / double(m.pools10);
    m.r10_5 = r10_5 / double(m.pools10);
  }
  return m;
}

// Ranks every micro-session's pool (positive first, then its negatives).
inline std::vector<RankedPool> rank_micro_sessions(const std::vector<corpus::MicroSession>& ms,
                                                   const Scorer& scorer, std::uint64_t seed) {
  std::vector<RankedPool> out;
  out.reserve(ms.size());
  for (const auto& m : ms) out.push_back(rank_pool(m.context, m.narrative, m.candidates(), 0, scorer, seed));
  return out;
}

}  // namespace storyline::eval
