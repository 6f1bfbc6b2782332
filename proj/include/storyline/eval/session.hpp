#pragma once
// Session-level greedy rollout and overlap-bucket analysis.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "storyline/corpus/micro_session.hpp"
#include "storyline/corpus/overlap.hpp"
#include "storyline/eval/metrics.hpp"

namespace storyline::eval {

enum class PoolMode { resampled, fixed };

inline PoolMode parse_pool_mode(const std::string& s) {
  if (s == "resampled") return PoolMode::resampled;
  if (s == "fixed") return PoolMode::fixed;
  throw std::invalid_argument("unknown rollout pool mode '" + s + "'");
}

struct RolloutOptions {
  std::size_t k_neg = 9;
  std::uint64_t seed = 0;
  PoolMode mode = PoolMode::resampled;
};

// Starts from line 1; at step t the pool is the true line t plus k_neg
// negatives, and the top-scored candidate (right or wrong) joins the
// context. In resampled mode the negatives of each step come from a seed
// derived from (seed, session_index, t); in fixed mode `fixed_negatives[t-1]`
// is used (e.g. the pools of the split's micro-sessions).
inline std::vector<Tokens> session_rollout(const corpus::TokenizedSession& s, const Scorer& scorer,
                                           const corpus::NegativeSampler& sampler,
                                           const RolloutOptions& opt,
                                           std::uint64_t session_index = 0,
                                           const std::vector<std::vector<Tokens>>* fixed_negatives =
                                               nullptr) {
  if (s.lines.size() < 2) throw EvalError("session_rollout: session needs at least two lines");
  if (opt.mode == PoolMode::fixed &&
      (!fixed_negatives || fixed_negatives->size() != s.lines.size() - 1))
    throw EvalError("session_rollout: fixed mode needs one negative list per step");
  std::vector<Tokens> context{s.lines[0]};
  std::vector<Tokens> selections;
  for (std::size_t t = 1; t < s.lines.size(); ++t) {
    std::vector<Tokens> pool{s.lines[t]};
    auto negs = opt.mode == PoolMode::fixed
                    ? (*fixed_negatives)[t - 1]
                    : sampler.sample(s.lines[t], opt.k_neg,
                                     corpus::derive_seed(opt.seed, session_index, t));
    pool.insert(pool.end(), negs.begin(), negs.end());
    const RankedPool ranked = rank_pool(context, s.narrative, pool, 0, scorer, opt.seed);
    selections.push_back(pool[ranked.top()]);
    context.push_back(selections.back());
  }
  return selections;
}

struct SessionMetrics {
  double p_strict = 0;
  double p_weak = 0;
  std::size_t sessions = 0;
};

// Per session: strict counts the right line at the right step, weak counts
// any of the session's lines 2..m.
inline SessionMetrics session_metrics(const std::vector<Tokens>& selections,
                                      const corpus::TokenizedSession& s) {
  if (s.lines.size() < 2 || selections.size() != s.lines.size() - 1)
    throw EvalError("session_metrics: expected " + std::to_string(s.lines.size() - 1) +
                    " selections, got " + std::to_string(selections.size()));
  std::size_t strict = 0, weak = 0;
  for (std::size_t t = 0; t < selections.size(); ++t) {
    strict += selections[t] == s.lines[t + 1];
    weak += std::find(s.lines.begin() + 1, s.lines.end(), selections[t]) != s.lines.end();
  }
  const double n = double(selections.size());
  return {double(strict) / n, double(weak) / n, 1};
}

// Mean over sessions.
inline SessionMetrics average(const std::vector<SessionMetrics>& per_session) {
  SessionMetrics m;
  for (const auto& s : per_session) {
    m.p_strict += s.p_strict;
    m.p_weak += s.p_weak;
  }
  m.sessions = per_session.size();
  if (m.sessions) {
    m.p_strict /= double(m.sessions);
    m.p_weak /= double(m.sessions);
  }
  return m;
}

struct SessionEvaluation {
  SessionMetrics overall;
  std::vector<SessionMetrics> per_session;
  std::vector<std::vector<Tokens>> selections;
};

inline SessionEvaluation evaluate_sessions(const std::vector<corpus::TokenizedSession>& sessions,
                                           const Scorer& scorer,
                                           const corpus::NegativeSampler& sampler,
                                           const RolloutOptions& opt,
                                           const std::vector<corpus::MicroSession>* micro = nullptr) {
  SessionEvaluation ev;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    std::vector<std::vector<Tokens>> fixed;
    if (opt.mode == PoolMode::fixed) {
      if (!micro) throw EvalError("fixed rollout pools need the split's micro-sessions");
      for (std::size_t t = 1; t < sessions[i].lines.size(); ++t) {
        if (offset >= micro->size() || (*micro)[offset].session_id != sessions[i].id)
          throw EvalError("micro-sessions are not aligned with sessions");
        fixed.push_back((*micro)[offset++].negatives);
      }
    }
    auto sel = session_rollout(sessions[i], scorer, sampler, opt, i,
                               opt.mode == PoolMode::fixed ? &fixed : nullptr);
    ev.per_session.push_back(session_metrics(sel, sessions[i]));
    ev.selections.push_back(std::move(sel));
  }
  ev.overall = average(ev.per_session);
  return ev;
}

struct BucketRow {
  std::size_t sessions = 0;
  SessionMetrics metrics;
};

struct OverlapReport {
  std::array<BucketRow, corpus::kBuckets> buckets;
  std::size_t total = 0;
  std::size_t empty_narratives = 0;
};

inline OverlapReport overlap_report(const std::vector<corpus::TokenizedSession>& sessions,
                                    const std::vector<SessionMetrics>& per_session) {
  if (sessions.size() != per_session.size())
    throw EvalError("overlap_report: one metric row per session required");
  OverlapReport r;
  std::array<std::vector<SessionMetrics>, corpus::kBuckets> rows;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto o = corpus::overlap_bucket(sessions[i].narrative, sessions[i].lines);
    r.empty_narratives += o.empty_narrative;
    rows[o.bucket].push_back(per_session[i]);
  }
  for (std::size_t b = 0; b < corpus::kBuckets; ++b) {
    r.buckets[b].sessions = rows[b].size();
    r.buckets[b].metrics = average(rows[b]);
  }
  r.total = sessions.size();
  return r;
}

}  // namespace storyline::eval
