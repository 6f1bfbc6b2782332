#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "storyline/corpus/synthetic.hpp"
#include "storyline/eval/metrics.hpp"
#include "storyline/eval/model_scorer.hpp"
#include "storyline/eval/report.hpp"
#include "storyline/eval/session.hpp"

using namespace storyline;
using namespace storyline::eval;
using corpus::Tokens;

namespace {

std::vector<Tokens> numbered(std::size_t n) {
  std::vector<Tokens> c;
  for (std::size_t i = 0; i < n; ++i) c.push_back({"c" + std::to_string(i)});
  return c;
}

// Scores the line whose text equals the session's true next line highest.
Scorer oracle_for(const std::vector<corpus::TokenizedSession>& sessions, bool anti = false) {
  return [&sessions, anti](const std::vector<Tokens>& ctx, const Tokens& narrative,
                           const std::vector<Tokens>& cands) {
    const corpus::TokenizedSession* s = nullptr;
    for (const auto& x : sessions)
      if (x.narrative == narrative) s = &x;
    const Tokens& truth = s->lines.at(ctx.size());
    std::vector<double> out;
    for (const auto& c : cands) out.push_back((c == truth) != anti ? 1.0 : 0.0);
    return out;
  };
}

std::vector<corpus::TokenizedSession> synth(std::size_t n, std::uint64_t seed) {
  corpus::SynthSpec spec;
  spec.n_sessions = n;
  spec.seed = seed;
  return corpus::tokenize_all(corpus::generate_synthetic(spec).sessions);
}

}  // namespace

TEST(RankPool, StrictMaxIsRankOne) {
  const auto p = rank_scores({0.1, 0.9, 0.3}, numbered(3), 1, 0);
  EXPECT_EQ(p.rank(), 1u);
  EXPECT_EQ(p.top(), 1u);
}

TEST(RankPool, Errors) {
  EXPECT_THROW(rank_scores({0.1}, numbered(1), 0, 0), EvalError);
  try {
    rank_scores({0.1, std::nan("")}, numbered(2), 0, 0);
    FAIL();
  } catch (const EvalError& e) {
    EXPECT_NE(std::string(e.what()).find("c1"), std::string::npos);
  }
  EXPECT_THROW(rank_scores({0.1, 0.2}, numbered(2), 2, 0), EvalError);
  EXPECT_THROW(rank_scores({0.1, 0.2, 0.3}, numbered(2), 0, 0), EvalError);
}

TEST(RankPool, TiesAreSeededAndUniform) {
  std::vector<std::size_t> hist(10, 0);
  for (std::uint64_t seed = 0; seed < 5000; ++seed)
    ++hist[rank_scores(std::vector<double>(10, 0.5), numbered(10), 3, seed).rank() - 1];
  for (auto h : hist) EXPECT_NEAR(h / 5000.0, 0.1, 0.025);
  const auto a = rank_scores(std::vector<double>(10, 0.5), numbered(10), 3, 42);
  const auto b = rank_scores(std::vector<double>(10, 0.5), numbered(10), 3, 42);
  EXPECT_EQ(a.order, b.order);
}

TEST(RankPool, OrderInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> level(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    auto cands = numbered(10);
    std::vector<double> scores(10);
    for (auto& s : scores) s = level(rng);
    const std::size_t truth = std::size_t(trial % 10);
    const auto ref = rank_scores(scores, cands, truth, 9);
    std::vector<std::size_t> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> ps;
    std::vector<Tokens> pc;
    std::size_t pt = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      ps.push_back(scores[perm[i]]);
      pc.push_back(cands[perm[i]]);
      if (perm[i] == truth) pt = i;
    }
    const auto got = rank_scores(ps, pc, pt, 9);
    EXPECT_EQ(got.rank(), ref.rank());
    EXPECT_EQ(pc[got.top()], cands[ref.top()]);
  }
}

TEST(TurnMetrics, HandExampleRankFour) {
  std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0};
  const auto m = turn_metrics({rank_scores(s, numbered(10), 3, 0)});
  EXPECT_DOUBLE_EQ(m.mrr, 0.25);
  EXPECT_DOUBLE_EQ(*m.r10_1, 0.0);
  EXPECT_DOUBLE_EQ(*m.r10_5, 1.0);
  EXPECT_DOUBLE_EQ(m.r2_1, 0.0);  // first other candidate is c0 at 0.9
  EXPECT_EQ(m.pools, 1u);
}

TEST(TurnMetrics, AllRankOne) {
  std::vector<RankedPool> pools;
  for (int i = 0; i < 5; ++i) pools.push_back(rank_scores({1, 0, 0, 0, 0, 0, 0, 0, 0, 0}, numbered(10), 0, 0));
  const auto m = turn_metrics(pools);
  EXPECT_EQ(m.r2_1, 1.0);
  EXPECT_EQ(*m.r10_1, 1.0);
  EXPECT_EQ(*m.r10_5, 1.0);
  EXPECT_EQ(m.mrr, 1.0);
}

TEST(TurnMetrics, TwoCandidatePoolsHaveNoR10) {
  const auto m = turn_metrics({rank_scores({1, 0}, numbered(2), 0, 0)});
  EXPECT_FALSE(m.r10_1.has_value());
  EXPECT_EQ(m.pools10, 0u);
  EXPECT_THROW(turn_metrics({}), EvalError);
}

TEST(TurnMetrics, MatchesSortOracle) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> level(0, 4);
  std::vector<RankedPool> pools;
  double r2 = 0, r1 = 0, r5 = 0, mrr = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> scores(10);
    for (auto& s : scores) s = level(rng);
    const std::size_t truth = std::size_t(i % 10);
    auto p = rank_scores(scores, numbered(10), truth, 3);
    // Oracle: sort a full key list and scan for the truth.
    std::vector<std::tuple<double, std::uint64_t, std::size_t>> keys;
    for (std::size_t c = 0; c < 10; ++c) keys.emplace_back(-scores[c], p.tie[c], c);
    std::sort(keys.begin(), keys.end());
    std::size_t rank = 0;
    while (std::get<2>(keys[rank]) != truth) ++rank;
    ++rank;
    EXPECT_EQ(p.rank(), rank);
    r1 += rank == 1;
    r5 += rank <= 5;
    mrr += 1.0 / double(rank);
    const std::size_t other = truth == 0 ? 1 : 0;
    const bool win = std::make_pair(-scores[truth], p.tie[truth]) < std::make_pair(-scores[other], p.tie[other]);
    r2 += win;
    pools.push_back(std::move(p));
  }
  const auto m = turn_metrics(pools);
  EXPECT_DOUBLE_EQ(m.r2_1, r2 / 100);
  EXPECT_DOUBLE_EQ(*m.r10_1, r1 / 100);
  EXPECT_DOUBLE_EQ(*m.r10_5, r5 / 100);
  EXPECT_NEAR(m.mrr, mrr / 100, 1e-12);
}

TEST(TurnMetrics, RandomScorerCalibration) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<RankedPool> pools;
  for (int i = 0; i < 20000; ++i) {
    std::vector<double> s(10);
    for (auto& x : s) x = u(rng);
    pools.push_back(rank_scores(s, numbered(10), 0, std::uint64_t(i)));
  }
  const auto m = turn_metrics(pools);
  double h10 = 0;
  for (int k = 1; k <= 10; ++k) h10 += 1.0 / k;
  EXPECT_NEAR(*m.r10_1, 0.1, 0.01);
  EXPECT_NEAR(m.mrr, h10 / 10, 0.01);
  EXPECT_NEAR(m.r2_1, 0.5, 0.015);
}

TEST(TurnMetrics, OracleAndAntiOracle) {
  const auto sessions = synth(30, 2);
  const auto ms = corpus::expand_split(sessions, corpus::Split::test, 4);
  const auto good = turn_metrics(rank_micro_sessions(ms, oracle_for(sessions), 1));
  EXPECT_EQ(good.r2_1, 1.0);
  EXPECT_EQ(*good.r10_1, 1.0);
  EXPECT_EQ(good.mrr, 1.0);
  const auto bad = turn_metrics(rank_micro_sessions(ms, oracle_for(sessions, true), 1));
  EXPECT_EQ(*bad.r10_1, 0.0);
  EXPECT_NEAR(bad.mrr, 0.1, 1e-12);
  EXPECT_EQ(bad.r2_1, 0.0);
}

TEST(Rollout, OracleIsPerfectAndOneStepForTwoLines) {
  const auto sessions = synth(40, 3);
  corpus::NegativeSampler sampler(sessions);
  const auto ev = evaluate_sessions(sessions, oracle_for(sessions), sampler, {9, 5});
  EXPECT_EQ(ev.overall.p_strict, 1.0);
  EXPECT_EQ(ev.overall.p_weak, 1.0);
  EXPECT_EQ(ev.overall.sessions, 40u);
  corpus::TokenizedSession two{"t", {"q"}, {{"a"}, {"b"}}};
  auto const_scorer = [](const std::vector<Tokens>&, const Tokens&, const std::vector<Tokens>& c) {
    return std::vector<double>(c.size(), 0.0);
  };
  EXPECT_EQ(session_rollout(two, const_scorer, sampler, {9, 5}).size(), 1u);
}

TEST(Rollout, SelectedLineJoinsContext) {
  corpus::TokenizedSession s{"t", {"n"}, {{"a"}, {"b"}, {"c"}}};
  std::vector<corpus::TokenizedSession> pool{s, {"u", {"m"}, {{"x"}, {"y"}, {"z"}}}};
  corpus::NegativeSampler sampler(pool);
  std::vector<std::vector<Tokens>> seen;
  Scorer pick_z = [&](const std::vector<Tokens>& ctx, const Tokens&, const std::vector<Tokens>& c) {
    seen.push_back(ctx);
    std::vector<double> out;
    for (const auto& x : c) out.push_back(x == Tokens{"z"} ? 1.0 : 0.0);
    return out;
  };
  std::vector<std::vector<Tokens>> fixed{{{"z"}}, {{"z"}}};
  const auto sel = session_rollout(s, pick_z, sampler, {1, 0, PoolMode::fixed}, 0, &fixed);
  ASSERT_EQ(sel.size(), 2u);
  EXPECT_EQ(sel[0], Tokens{"z"});
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_EQ(seen[1].back(), Tokens{"z"});
  const auto m = session_metrics(sel, s);
  EXPECT_EQ(m.p_strict, 0.0);
  EXPECT_EQ(m.p_weak, 0.0);
}

TEST(SessionMetrics, WrongPositionCountsForWeakOnly) {
  corpus::TokenizedSession s{"t", {}, {{"l1"}, {"l2"}, {"l3"}}};
  const auto m = session_metrics({{"l3"}, {"l3"}}, s);
  EXPECT_DOUBLE_EQ(m.p_strict, 0.5);
  EXPECT_DOUBLE_EQ(m.p_weak, 1.0);
  const auto first = session_metrics({{"l1"}, {"l3"}}, s);
  EXPECT_DOUBLE_EQ(first.p_weak, 0.5);  // line 1 is not a response
  EXPECT_THROW(session_metrics({{"l2"}}, s), EvalError);
}

TEST(SessionMetrics, StrictNeverExceedsWeak) {
  const auto sessions = synth(60, 8);
  corpus::NegativeSampler sampler(sessions);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const auto seed = rng();
    Scorer random_scorer = [seed](const std::vector<Tokens>& ctx, const Tokens&,
                                  const std::vector<Tokens>& c) {
      std::vector<double> out;
      for (const auto& x : c) out.push_back(double(tie_key(seed + ctx.size(), x) % 1000));
      return out;
    };
    const auto ev = evaluate_sessions(sessions, random_scorer, sampler, {9, seed});
    for (const auto& m : ev.per_session) EXPECT_LE(m.p_strict, m.p_weak);
    EXPECT_LE(ev.overall.p_strict, ev.overall.p_weak);
    const auto again = evaluate_sessions(sessions, random_scorer, sampler, {9, seed});
    EXPECT_EQ(again.selections, ev.selections);
  }
}

TEST(Rollout, FixedModeUsesMicroSessionPools) {
  const auto sessions = synth(20, 6);
  const auto ms = corpus::expand_split(sessions, corpus::Split::test, 3);
  corpus::NegativeSampler sampler(sessions);
  const auto ev = evaluate_sessions(sessions, oracle_for(sessions), sampler,
                                    {9, 0, PoolMode::fixed}, &ms);
  EXPECT_EQ(ev.overall.p_strict, 1.0);
  EXPECT_THROW(evaluate_sessions(sessions, oracle_for(sessions), sampler, {9, 0, PoolMode::fixed}),
               EvalError);
}

TEST(OverlapReport, CountsSumToTotal) {
  const auto sessions = synth(120, 4);
  std::vector<SessionMetrics> rows(sessions.size(), SessionMetrics{0.5, 0.75, 1});
  const auto r = overlap_report(sessions, rows);
  std::size_t total = 0;
  for (const auto& b : r.buckets) {
    total += b.sessions;
    if (b.sessions) {
      EXPECT_DOUBLE_EQ(b.metrics.p_strict, 0.5);
    }
  }
  EXPECT_EQ(total, r.total);
  EXPECT_EQ(r.total, 120u);
  const auto csv = bucket_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Report, TurnCsvAndJson) {
  TurnMetrics m;
  m.r2_1 = 0.5;
  m.mrr = 0.25;
  m.pools = 4;
  const auto csv = turn_csv(m);
  EXPECT_NE(csv.find("metric,value,n_pools"), std::string::npos);
  EXPECT_NE(csv.find("R2@1,0.500000,4"), std::string::npos) << csv;
  const auto j = turn_json(m);
  EXPECT_TRUE(j.contains("MRR"));
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_field("plain"), "plain");
}

TEST(ModelScorer, ScoresInUnitInterval) {
  const auto sessions = synth(20, 1);
  corpus::SynthSpec spec;
  spec.n_sessions = 20;
  spec.seed = 1;
  const auto vocab = corpus::Vocabulary::from_sessions(corpus::generate_synthetic(spec).sessions);
  model::ModelConfig cfg;
  cfg.stacks = 1;
  cfg.embed_dim = 8;
  cfg.max_lines = 4;
  cfg.max_tokens = 10;
  cfg.max_narrative_tokens = 20;
  cfg.vocab_size = vocab.size();
  const auto params = model::init_params<float>(cfg, 3);
  const auto scorer = model_scorer(params, vocab);
  const auto ms = corpus::expand_split(sessions, corpus::Split::test, 2);
  const auto s = scorer(ms[0].context, ms[0].narrative, ms[0].candidates());
  ASSERT_EQ(s.size(), 10u);
  for (double x : s) {
    EXPECT_GT(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}
