#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "storyline/corpus/session.hpp"
#include "storyline/corpus/tokenize.hpp"
#include "storyline/corpus/vocabulary.hpp"
#include "storyline/model/network.hpp"

namespace storyline::corpus {

enum class Split { train, valid, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(base) ^ a) ^ b);
}

struct TokenizedSession {
  std::string id;
  Tokens narrative;
  std::vector<Tokens> lines;
};

inline TokenizedSession tokenize_session(const Session& s) {
  TokenizedSession t;
  t.id = s.id;
  t.narrative = tokenize(s.narrative);
  for (const auto& l : s.lines) t.lines.push_back(tokenize(l));
  return t;
}

inline std::vector<TokenizedSession> tokenize_all(const std::vector<Session>& sessions) {
  std::vector<TokenizedSession> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) out.push_back(tokenize_session(s));
  return out;
}

struct SplitSessions {
  std::vector<Session> train, valid, test;

  const std::vector<Session>& get(Split s) const {
    return s == Split::train ? train : s == Split::valid ? valid : test;
  }
};

// Seeded shuffle, then train/valid/test in proportion 18:1:1 by default.
// Every split gets at least one session when there are three or more.
inline SplitSessions split_sessions(std::vector<Session> sessions, std::uint64_t seed,
                                    double valid_fraction = 0.05, double test_fraction = 0.05) {
  std::mt19937_64 rng(seed);
  std::shuffle(sessions.begin(), sessions.end(), rng);
  const std::size_t n = sessions.size();
  std::size_t n_valid = static_cast<std::size_t>(std::llround(double(n) * valid_fraction));
  std::size_t n_test = static_cast<std::size_t>(std::llround(double(n) * test_fraction));
  if (n >= 3) {
    n_valid = std::max<std::size_t>(n_valid, 1);
    n_test = std::max<std::size_t>(n_test, 1);
  }
  if (n_valid + n_test > n) n_valid = n_test = 0;
  SplitSessions out;
  const std::size_t n_train = n - n_valid - n_test;
  out.train.assign(sessions.begin(), sessions.begin() + n_train);
  out.valid.assign(sessions.begin() + n_train, sessions.begin() + n_train + n_valid);
  out.test.assign(sessions.begin() + n_train + n_valid, sessions.end());
  return out;
}

enum class SamplerMode { uniform, hard };

inline SamplerMode parse_sampler_mode(const std::string& s) {
  if (s == "uniform") return SamplerMode::uniform;
  if (s == "hard") return SamplerMode::hard;
  throw std::invalid_argument("unknown sampler mode '" + s + "'");
}

inline const char* to_string(SamplerMode m) { return m == SamplerMode::uniform ? "uniform" : "hard"; }

// Draws negatives from the distinct lines of a corpus. Uniform mode picks
// lines with equal probability; hard mode weights each line by
// 1 + (number of unique tokens shared with the positive).
class NegativeSampler {
 public:
  NegativeSampler(const std::vector<TokenizedSession>& sessions,
                  SamplerMode mode = SamplerMode::uniform)
      : mode_(mode) {
    std::set<Tokens> seen;
    for (const auto& s : sessions)
      for (const auto& l : s.lines)
        if (seen.insert(l).second) lines_.push_back(l);
  }

  std::size_t size() const { return lines_.size(); }
  const std::vector<Tokens>& lines() const { return lines_; }

  std::vector<Tokens> sample(const Tokens& positive, std::size_t k, std::uint64_t seed) const {
    std::vector<std::size_t> allowed;
    allowed.reserve(lines_.size());
    for (std::size_t i = 0; i < lines_.size(); ++i)
      if (lines_[i] != positive) allowed.push_back(i);
    if (allowed.size() < k)
      throw std::invalid_argument("negative sampling: corpus has " + std::to_string(allowed.size()) +
                                  " distinct lines besides the positive, need " +
                                  std::to_string(k));
    std::mt19937_64 rng(seed);
    std::vector<Tokens> out;
    if (mode_ == SamplerMode::uniform) {
      for (std::size_t j = 0; j < k; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, allowed.size() - 1);
        std::swap(allowed[j], allowed[pick(rng)]);
        out.push_back(lines_[allowed[j]]);
      }
      return out;
    }
    const std::set<std::string> pos(positive.begin(), positive.end());
    std::vector<double> w;
    w.reserve(allowed.size());
    for (auto i : allowed) {
      std::set<std::string> uniq(lines_[i].begin(), lines_[i].end());
      double shared = 0;
      for (const auto& t : uniq) shared += pos.count(t);
      w.push_back(1.0 + shared);
    }
    for (std::size_t j = 0; j < k; ++j) {
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      const std::size_t at = pick(rng);
      out.push_back(lines_[allowed[at]]);
      w[at] = 0;
    }
    return out;
  }

 private:
  SamplerMode mode_;
  std::vector<Tokens> lines_;
};

struct MicroSession {
  std::string session_id;
  Tokens narrative;
  std::vector<Tokens> context;  // lines 1..i
  Tokens positive;              // line i+1
  std::vector<Tokens> negatives;
  Split split = Split::train;

  std::vector<Tokens> candidates() const {
    std::vector<Tokens> c{positive};
    c.insert(c.end(), negatives.begin(), negatives.end());
    return c;
  }
};

// m lines give m-1 micro-sessions with contexts of length 1..m-1. The
// negatives of step i are drawn with a seed derived from (seed, index, i).
inline std::vector<MicroSession> expand_micro_sessions(const TokenizedSession& s,
                                                       std::size_t k_neg,
                                                       const NegativeSampler& sampler,
                                                       std::uint64_t seed, Split split,
                                                       std::uint64_t session_index = 0) {
  std::vector<MicroSession> out;
  for (std::size_t i = 1; i < s.lines.size(); ++i) {
    MicroSession m;
    m.session_id = s.id;
    m.narrative = s.narrative;
    m.context.assign(s.lines.begin(), s.lines.begin() + static_cast<std::ptrdiff_t>(i));
    m.positive = s.lines[i];
    m.negatives = sampler.sample(m.positive, k_neg, derive_seed(seed, session_index, i));
    m.split = split;
    out.push_back(std::move(m));
  }
  return out;
}

// Negatives per micro-session: one for training, nine for evaluation.
inline std::size_t default_negatives(Split s) { return s == Split::train ? 1 : 9; }

inline std::vector<MicroSession> expand_split(const std::vector<TokenizedSession>& sessions,
                                              Split split, std::uint64_t seed,
                                              SamplerMode mode = SamplerMode::uniform,
                                              std::size_t k_neg = 0) {
  if (k_neg == 0) k_neg = default_negatives(split);
  NegativeSampler sampler(sessions, mode);
  std::vector<MicroSession> out;
  const std::uint64_t split_seed = derive_seed(seed, static_cast<std::uint64_t>(split) + 1);
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    auto ms = expand_micro_sessions(sessions[i], k_neg, sampler, split_seed, split, i);
    out.insert(out.end(), std::make_move_iterator(ms.begin()), std::make_move_iterator(ms.end()));
  }
  return out;
}

// Ids for the model: latest max_lines lines kept, every sequence
// truncated to its limit and padded with PAD.
inline model::ModelInput encode_input(const Vocabulary& vocab, const model::ModelConfig& cfg,
                                      const std::vector<Tokens>& context,
                                      const Tokens& narrative,
                                      const std::vector<Tokens>& candidates) {
  std::vector<std::vector<std::int32_t>> ctx, cands;
  for (const auto& l : context) ctx.push_back(vocab.encode(l));
  for (const auto& c : candidates) cands.push_back(vocab.encode(c));
  return model::build_input(cfg, ctx, vocab.encode(narrative), cands);
}

// Candidates are [positive, negatives...] with labels [1, 0, ...].
inline std::vector<model::LabeledInput> pad_batch(const std::vector<MicroSession>& batch,
                                                  const Vocabulary& vocab,
                                                  const model::ModelConfig& cfg) {
  std::vector<model::LabeledInput> out;
  out.reserve(batch.size());
  for (const auto& m : batch) {
    model::LabeledInput li{encode_input(vocab, cfg, m.context, m.narrative, m.candidates()), {}};
    li.labels.assign(1 + m.negatives.size(), 0.0);
    li.labels[0] = 1.0;
    out.push_back(std::move(li));
  }
  return out;
}

struct SplitStats {
  std::size_t sessions = 0;
  std::size_t micro_sessions = 0;
  double avg_turns = 0;             // lines per session
  double avg_narrative_words = 0;   // tokens per narrative
};

inline SplitStats split_stats(const std::vector<TokenizedSession>& sessions) {
  SplitStats s;
  s.sessions = sessions.size();
  double turns = 0, words = 0;
  for (const auto& t : sessions) {
    s.micro_sessions += t.lines.size() - 1;
    turns += double(t.lines.size());
    words += double(t.narrative.size());
  }
  if (s.sessions) {
    s.avg_turns = turns / double(s.sessions);
    s.avg_narrative_words = words / double(s.sessions);
  }
  return s;
}

}  // namespace storyline::corpus
