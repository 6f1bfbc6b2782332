#pragma once
// Synthetic script sessions with controllable narrative overlap.
//
// A session is a chain of events (three content words each). The
// narrative lists the events joined by a narrative-only connector; line i
// realizes event i with line-only filler. Content words that are not
// "shared" are replaced in the lines by chatter words that never occur in
// any narrative, so the number of shared words fixes the overlap ratio
// exactly and the bucket is known by construction.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "storyline/corpus/overlap.hpp"
#include "storyline/corpus/session.hpp"
#include "storyline/corpus/tokenize.hpp"

namespace storyline::corpus {

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t n_sessions = 1000;
  std::size_t min_lines = 3;
  std::size_t max_lines = 6;
  std::size_t content_words = 400;  // narrative vocabulary
  std::size_t chatter_words = 400;  // line-only substitutes
  std::array<double, kBuckets> bucket_weights{1.0 / 6, 1.0 / 6, 1.0 / 6,
                                              1.0 / 6, 1.0 / 6, 1.0 / 6};

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("synth spec: " + m); };
    if (min_lines < 2 || max_lines < min_lines) fail("need 2 <= min_lines <= max_lines");
    if (content_words < 3 * max_lines) fail("content_words must be >= 3 * max_lines");
    if (chatter_words < 1) fail("chatter_words must be >= 1");
    double s = 0;
    for (double w : bucket_weights) {
      if (w < 0) fail("bucket weights must be non-negative");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9) fail("bucket weights must sum to 1");
  }
};

struct SynthMeta {
  std::string id;
  std::size_t bucket = 0;
  double ratio = 0;
};

struct SynthCorpus {
  std::vector<Session> sessions;
  std::vector<SynthMeta> meta;
};

namespace detail {

inline const std::vector<std::string>& connectors() {
  static const std::vector<std::string> c{"then", "later", "next", "afterwards"};
  return c;
}

inline const std::vector<std::string>& openers() {
  static const std::vector<std::string> o{"now", "so", "well", "oh", "look"};
  return o;
}

// Distinct pronounceable words, none equal to a reserved word.
inline std::vector<std::string> pseudo_words(std::mt19937_64& rng, std::size_t n,
                                             std::set<std::string>& used) {
  static const std::string cons = "bdfgklmnprstvz", vow = "aeiou";
  std::uniform_int_distribution<std::size_t> syl(2, 3), ci(0, cons.size() - 1),
      vi(0, vow.size() - 1), coin(0, 1);
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    const std::size_t k = syl(rng);
    for (std::size_t s = 0; s < k; ++s) {
      w += cons[ci(rng)];
      w += vow[vi(rng)];
    }
    if (coin(rng)) w += cons[ci(rng)];
    if (used.insert(w).second) out.push_back(w);
  }
  return out;
}

// Exact per-bucket counts by largest remainder, then shuffled.
inline std::vector<std::size_t> bucket_plan(const std::array<double, kBuckets>& w, std::size_t n,
                                            std::mt19937_64& rng) {
  std::array<std::size_t, kBuckets> count{};
  std::array<double, kBuckets> rem{};
  std::size_t total = 0;
  for (std::size_t b = 0; b < kBuckets; ++b) {
    const double x = w[b] * double(n);
    count[b] = static_cast<std::size_t>(std::floor(x));
    rem[b] = x - double(count[b]);
    total += count[b];
  }
  std::array<std::size_t, kBuckets> order;
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; total < n; ++i, ++total) ++count[order[i % kBuckets]];
  std::vector<std::size_t> plan;
  for (std::size_t b = 0; b < kBuckets; ++b) plan.insert(plan.end(), count[b], b);
  std::shuffle(plan.begin(), plan.end(), rng);
  return plan;
}

}  // namespace detail

inline SynthCorpus generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::set<std::string> used{"the"};
  for (const auto& w : detail::connectors()) used.insert(w);
  for (const auto& w : detail::openers()) used.insert(w);
  const auto content = detail::pseudo_words(rng, spec.content_words, used);
  const auto chatter = detail::pseudo_words(rng, spec.chatter_words, used);
  const auto plan = detail::bucket_plan(spec.bucket_weights, spec.n_sessions, rng);

  std::uniform_int_distribution<std::size_t> n_lines(spec.min_lines, spec.max_lines);
  std::uniform_int_distribution<std::size_t> pick_chatter(0, chatter.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_conn(0, detail::connectors().size() - 1);
  std::uniform_int_distribution<std::size_t> pick_open(0, detail::openers().size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SynthCorpus out;
  for (std::size_t si = 0; si < spec.n_sessions; ++si) {
    const std::size_t n = n_lines(rng);
    const std::size_t slots = 3 * n;
    std::vector<std::string> words;
    std::sample(content.begin(), content.end(), std::back_inserter(words), slots, rng);
    std::shuffle(words.begin(), words.end(), rng);

    // Unique narrative tokens: the content words plus one connector.
    const std::size_t unique = slots + 1;
    const std::size_t target = plan[si];
    std::vector<std::size_t> ks;
    for (std::size_t k = 0; k <= slots; ++k)
      if (bucket_of(double(k) / double(unique)) == target) ks.push_back(k);
    if (ks.empty()) throw std::logic_error("synth: bucket unreachable for session length");
    const std::size_t k = ks[std::uniform_int_distribution<std::size_t>(0, ks.size() - 1)(rng)];

    std::vector<char> shared(slots, 0);
    std::fill(shared.begin(), shared.begin() + static_cast<std::ptrdiff_t>(k), 1);
    std::shuffle(shared.begin(), shared.end(), rng);

    const std::string& conn = detail::connectors()[pick_conn(rng)];
    Session s;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%05zu", si);
    s.id = id;
    for (std::size_t e = 0; e < n; ++e) {
      if (e) s.narrative += " " + conn + " ";
      s.narrative += words[3 * e] + " " + words[3 * e + 1] + " " + words[3 * e + 2];
    }
    for (std::size_t e = 0; e < n; ++e) {
      auto slot = [&](std::size_t j) {
        return shared[3 * e + j] ? words[3 * e + j] : chatter[pick_chatter(rng)];
      };
      std::string line;
      if (unit(rng) < 0.4) line += detail::openers()[pick_open(rng)] + " ";
      const std::string a = slot(0), b = slot(1), c = slot(2);
      line += "the " + a + " " + b + " the " + c;
      if (unit(rng) < 0.5) line += ".";
      s.lines.push_back(std::move(line));
    }

    std::vector<Tokens> lt;
    for (const auto& l : s.lines) lt.push_back(tokenize(l));
    const Overlap o = overlap_bucket(tokenize(s.narrative), lt);
    out.meta.push_back({s.id, o.bucket, o.ratio});
    out.sessions.push_back(std::move(s));
  }
  return out;
}

inline std::string meta_path(const std::string& corpus_path) { return corpus_path + ".meta.csv"; }

inline void save_synthetic(const std::string& path, const SynthCorpus& c) {
  save_corpus(path, c.sessions);
  std::ofstream out(meta_path(path), std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot open '" + meta_path(path) + "' for writing");
  out << "id,bucket,ratio\n";
  char buf[64];
  for (const auto& m : c.meta) {
    std::snprintf(buf, sizeof buf, "%.6f", m.ratio);
    out << m.id << ",\"" << bucket_labels()[m.bucket] << "\"," << buf << '\n';
  }
}

}  // namespace storyline::corpus
