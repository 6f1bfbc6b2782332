#pragma once
// Subcommands of the storyline tool and the argv dispatcher.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "storyline/cli/run_config.hpp"
#include "storyline/corpus/embeddings.hpp"
#include "storyline/corpus/micro_session.hpp"
#include "storyline/corpus/overlap.hpp"
#include "storyline/corpus/session.hpp"
#include "storyline/corpus/synthetic.hpp"
#include "storyline/eval/metrics.hpp"
#include "storyline/eval/model_scorer.hpp"
#include "storyline/eval/report.hpp"
#include "storyline/eval/session.hpp"
#include "storyline/model/checkpoint.hpp"
#include "storyline/model/gradient_check.hpp"
#include "storyline/train/trainer.hpp"

namespace storyline::cli {

namespace fs = std::filesystem;

struct Context {
  RunConfig cfg;
  std::ostream& out;
  std::ofstream log;

  void say(const std::string& line) {
    out << line << '\n';
    if (log) log << line << '\n';
  }
};

inline std::string out_file(const Context& ctx, const std::string& name) {
  return (fs::path(ctx.cfg.out) / name).string();
}

struct Prepared {
  corpus::SplitSessions raw;
  std::vector<corpus::TokenizedSession> train, valid, test;
  std::size_t dropped = 0;

  const std::vector<corpus::TokenizedSession>& get(corpus::Split s) const {
    return s == corpus::Split::train ? train : s == corpus::Split::valid ? valid : test;
  }
};

inline Prepared prepare(const RunConfig& cfg) {
  if (cfg.corpus.empty()) throw ConfigError("no corpus given (--corpus or corpus.path)");
  auto loaded = corpus::load_corpus(cfg.corpus);
  Prepared p;
  p.dropped = loaded.dropped;
  p.raw = corpus::split_sessions(std::move(loaded.sessions), cfg.seed, cfg.valid_fraction,
                                 cfg.test_fraction);
  p.train = corpus::tokenize_all(p.raw.train);
  p.valid = corpus::tokenize_all(p.raw.valid);
  p.test = corpus::tokenize_all(p.raw.test);
  return p;
}

// Sessions selected by eval.split.
inline std::vector<corpus::TokenizedSession> eval_sessions(const RunConfig& cfg, const Prepared& p) {
  if (cfg.split == "train") return p.train;
  if (cfg.split == "valid") return p.valid;
  if (cfg.split == "test") return p.test;
  std::vector<corpus::TokenizedSession> all = p.train;
  all.insert(all.end(), p.valid.begin(), p.valid.end());
  all.insert(all.end(), p.test.begin(), p.test.end());
  return all;
}

inline corpus::Split eval_split_kind(const RunConfig& cfg) {
  if (cfg.split == "train") return corpus::Split::train;
  if (cfg.split == "valid") return corpus::Split::valid;
  return corpus::Split::test;
}

template <class F>
decltype(auto) with_precision(ad::Precision p, F&& f) {
  if (p == ad::Precision::standard) return f.template operator()<float>();
  return f.template operator()<double>();
}

// ---------------------------------------------------------------------------

template <class T>
train::TrainResult<T> train_model(Context& ctx, const RunConfig& cfg, const Prepared& p,
                                  const corpus::Vocabulary& vocab) {
  auto mc = cfg.model;
  mc.vocab_size = vocab.size();
  auto params = model::init_params<T>(mc, cfg.seed);
  if (!cfg.embeddings.empty()) {
    std::vector<T> table;
    const auto st = corpus::load_embeddings(cfg.embeddings, vocab, mc.embed_dim, table, cfg.seed);
    std::copy(table.begin(), table.end(), params.embedding.mutable_data().begin());
    ctx.say("embeddings: " + std::to_string(st.found) + " found, " + std::to_string(st.missing) +
            " random");
  }
  const auto tr = corpus::expand_split(p.train, corpus::Split::train, cfg.seed, cfg.sampler);
  const auto va = corpus::expand_split(p.valid, corpus::Split::valid, cfg.seed, cfg.sampler);
  ctx.say("train: " + std::to_string(tr.size()) + " micro-sessions, valid: " +
          std::to_string(va.size()));
  return train::train<T>(std::move(params), tr, va, vocab, cfg.train,
                         [&](const train::EpochRecord& r, const model::ModelParams<T>&) {
                           ctx.say("epoch " + std::to_string(r.epoch) + " loss " +
                                   eval::fmt(r.loss) + " gamma " + eval::fmt(r.gamma) +
                                   " val_r2_1 " + eval::fmt(r.val_r2_1) + " val_mrr " +
                                   eval::fmt(r.val_mrr));
                           return false;
                         });
}

struct EvalOutcome {
  eval::TurnMetrics turn;
  eval::SessionEvaluation session;
  eval::OverlapReport buckets;
};

template <class T>
EvalOutcome evaluate(const RunConfig& cfg, const model::ModelParams<T>& params,
                     const corpus::Vocabulary& vocab,
                     const std::vector<corpus::TokenizedSession>& sessions, bool with_session) {
  if (sessions.empty()) throw eval::EvalError("evaluation split is empty");
  const auto scorer = eval::model_scorer(params, vocab);
  const auto ms = corpus::expand_split(sessions, eval_split_kind(cfg), cfg.seed, cfg.sampler, cfg.k_neg);
  EvalOutcome o;
  o.turn = eval::turn_metrics(eval::rank_micro_sessions(ms, scorer, cfg.seed));
  if (with_session) {
    corpus::NegativeSampler sampler(sessions, cfg.sampler);
    o.session = eval::evaluate_sessions(sessions, scorer, sampler,
                                        {cfg.k_neg, cfg.seed, cfg.pool_mode}, &ms);
    o.buckets = eval::overlap_report(sessions, o.session.per_session);
  }
  return o;
}

template <class T>
model::ModelParams<T> load_model(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("no checkpoint given (--checkpoint or eval.checkpoint)");
  return model::load_checkpoint<T>(cfg.checkpoint).params;
}

inline corpus::Vocabulary load_vocab(const RunConfig& cfg, std::size_t expected) {
  auto v = corpus::Vocabulary::load(cfg.vocab_path());
  if (v.size() != expected)
    throw model::CheckpointError("vocabulary '" + cfg.vocab_path() + "' has " +
                                 std::to_string(v.size()) + " tokens, checkpoint expects " +
                                 std::to_string(expected));
  return v;
}

// ---------------------------------------------------------------------------

inline int cmd_synth(Context& ctx) {
  const auto c = corpus::generate_synthetic(ctx.cfg.synth);
  const auto path = out_file(ctx, "corpus.jsonl");
  corpus::save_synthetic(path, c);
  std::array<std::size_t, corpus::kBuckets> counts{};
  for (const auto& m : c.meta) ++counts[m.bucket];
  ctx.say("wrote " + std::to_string(c.sessions.size()) + " sessions to " + path);
  for (std::size_t b = 0; b < corpus::kBuckets; ++b)
    ctx.say(std::string("bucket ") + corpus::bucket_labels()[b] + ": " + std::to_string(counts[b]));
  return 0;
}

inline int cmd_prep(Context& ctx) {
  const auto p = prepare(ctx.cfg);
  const auto vocab = corpus::Vocabulary::from_sessions(p.raw.train, ctx.cfg.min_count);
  vocab.save(out_file(ctx, "vocab.txt"));
  std::string csv = "split,sessions,micro_sessions,avg_turns,avg_narrative_words\n";
  for (auto s : {corpus::Split::train, corpus::Split::valid, corpus::Split::test}) {
    const auto st = corpus::split_stats(p.get(s));
    csv += std::string(corpus::to_string(s)) + "," + std::to_string(st.sessions) + "," +
           std::to_string(st.micro_sessions) + "," + eval::fmt(st.avg_turns) + "," +
           eval::fmt(st.avg_narrative_words) + "\n";
  }
  eval::write_text(out_file(ctx, "stats.csv"), csv);
  ctx.out << csv;
  ctx.say("vocabulary: " + std::to_string(vocab.size()) + " tokens; dropped sessions: " +
          std::to_string(p.dropped));
  return 0;
}

inline int cmd_train(Context& ctx) {
  const auto p = prepare(ctx.cfg);
  const auto vocab = corpus::Vocabulary::from_sessions(p.raw.train, ctx.cfg.min_count);
  vocab.save(out_file(ctx, "vocab.txt"));
  return with_precision(ctx.cfg.precision, [&]<class T>() {
    const auto r = train_model<T>(ctx, ctx.cfg, p, vocab);
    train::write_run(ctx.cfg.out, r, {{"run.seed", std::to_string(ctx.cfg.seed)}});
    ctx.say("best epoch " + std::to_string(r.report.best_epoch) + "; wrote " +
            out_file(ctx, "best.ckpt"));
    return 0;
  });
}

inline int cmd_eval(Context& ctx, bool session) {
  const auto p = prepare(ctx.cfg);
  const auto sessions = eval_sessions(ctx.cfg, p);
  return with_precision(ctx.cfg.precision, [&]<class T>() {
    const auto params = load_model<T>(ctx.cfg);
    const auto vocab = load_vocab(ctx.cfg, params.config.vocab_size);
    const auto o = evaluate(ctx.cfg, params, vocab, sessions, session);
    if (!session) {
      eval::write_text(out_file(ctx, "turn.csv"), eval::turn_csv(o.turn));
      eval::write_text(out_file(ctx, "turn.json"), eval::turn_json(o.turn).dump(2) + "\n");
      ctx.out << eval::turn_csv(o.turn);
    } else {
      eval::write_text(out_file(ctx, "session.csv"), eval::session_csv(o.session.overall));
      eval::write_text(out_file(ctx, "session.json"),
                       eval::session_json(o.session.overall).dump(2) + "\n");
      eval::write_text(out_file(ctx, "buckets.csv"), eval::bucket_csv(o.buckets));
      eval::write_text(out_file(ctx, "buckets.json"), eval::bucket_json(o.buckets).dump(2) + "\n");
      ctx.out << eval::session_csv(o.session.overall) << eval::bucket_csv(o.buckets);
      if (o.buckets.empty_narratives)
        ctx.say("warning: " + std::to_string(o.buckets.empty_narratives) +
                " sessions with empty narratives placed in bucket 0");
    }
    return 0;
  });
}

inline const std::vector<std::string>& ablation_metrics() {
  static const std::vector<std::string> m{"R2@1", "R10@1", "R10@5", "MRR", "P_strict", "P_weak"};
  return m;
}

inline std::vector<double> ablation_row(const EvalOutcome& o) {
  return {o.turn.r2_1, o.turn.r10_1.value_or(std::nan("")), o.turn.r10_5.value_or(std::nan("")),
          o.turn.mrr, o.session.overall.p_strict, o.session.overall.p_weak};
}

inline int cmd_ablate(Context& ctx) {
  const auto p = prepare(ctx.cfg);
  const auto vocab = corpus::Vocabulary::from_sessions(p.raw.train, ctx.cfg.min_count);
  vocab.save(out_file(ctx, "vocab.txt"));
  return with_precision(ctx.cfg.precision, [&]<class T>() {
    std::string runs = "variant,seed";
    for (const auto& m : ablation_metrics()) runs += "," + m;
    runs += "\n";
    std::map<model::Variant, std::vector<std::vector<double>>> rows;
    for (std::size_t k = 0; k < ctx.cfg.ablate_seeds; ++k) {
      for (auto v : model::all_variants()) {
        RunConfig rc = ctx.cfg;
        rc.model.variant = v;
        rc.seed = ctx.cfg.seed + k;
        rc.train.seed = rc.seed;
        const std::string name = model::to_string(v);
        ctx.say("variant " + name + " seed " + std::to_string(rc.seed));
        const auto r = train_model<T>(ctx, rc, p, vocab);
        const std::string dir = out_file(ctx, name + "-seed" + std::to_string(rc.seed));
        fs::create_directories(dir);
        train::write_run(dir, r, {{"run.seed", std::to_string(rc.seed)}});
        const auto row = ablation_row(evaluate(rc, r.best, vocab, p.test, true));
        runs += name + "," + std::to_string(rc.seed);
        for (double x : row) runs += "," + (std::isnan(x) ? std::string() : eval::fmt(x));
        runs += "\n";
        rows[v].push_back(row);
      }
    }
    // Mean over seeds, one row per variant.
    std::string table = "variant";
    for (const auto& m : ablation_metrics()) table += "," + m;
    table += "\n";
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (auto v : model::all_variants()) {
      const auto& rs = rows[v];
      table += model::to_string(v);
      auto& jr = j[model::to_string(v)];
      for (std::size_t m = 0; m < ablation_metrics().size(); ++m) {
        double s = 0;
        for (const auto& r : rs) s += r[m];
        const double mean = s / double(rs.size());
        table += "," + (std::isnan(mean) ? std::string() : eval::fmt(mean));
        jr[ablation_metrics()[m]] = std::isnan(mean) ? nlohmann::ordered_json() : nlohmann::ordered_json(mean);
      }
      table += "\n";
    }
    eval::write_text(out_file(ctx, "ablation_runs.csv"), runs);
    eval::write_text(out_file(ctx, "ablation.csv"), table);
    eval::write_text(out_file(ctx, "ablation.json"), j.dump(2) + "\n");
    ctx.out << table;
    return 0;
  });
}

inline int cmd_inspect(Context& ctx) {
  const auto p = prepare(ctx.cfg);
  // A named session is looked up in the whole corpus.
  RunConfig where = ctx.cfg;
  if (!where.inspect_session.empty()) where.split = "all";
  const auto sessions = eval_sessions(where, p);
  const corpus::TokenizedSession* s = nullptr;
  for (const auto& x : sessions)
    if (where.inspect_session.empty() || x.id == where.inspect_session) {
      s = &x;
      break;
    }
  if (!s) throw corpus::CorpusError("session '" + ctx.cfg.inspect_session + "' not found");
  return with_precision(ctx.cfg.precision, [&]<class T>() {
    const auto params = load_model<T>(ctx.cfg);
    const auto vocab = load_vocab(ctx.cfg, params.config.vocab_size);
    const std::vector<corpus::Tokens> context(s->lines.begin(), s->lines.end() - 1);
    const auto in = corpus::encode_input(vocab, params.config, context, s->narrative, {s->lines.back()});
    ad::NoGradGuard no_grad;
    const auto b = model::forward_score(in, params);
    const auto csv = eval::decay_trace_csv(b.trace, s->narrative);
    eval::write_text(out_file(ctx, "decay_trace.csv"), csv);
    ctx.say("session " + s->id + " score " + eval::fmt(double(b.g.item())) + " gamma " +
            eval::fmt(double(params.gamma.item())) + "; wrote " + out_file(ctx, "decay_trace.csv"));
    return 0;
  });
}

// L=1, d_e=8, 2 lines x 6 tokens, narrative 8 tokens.
inline model::ModelConfig gradcheck_config() {
  model::ModelConfig c;
  c.stacks = 1;
  c.embed_dim = 8;
  c.max_lines = 2;
  c.max_tokens = 6;
  c.max_narrative_tokens = 8;
  c.vocab_size = 30;
  c.conv3d = {{3, 2}, {3, 3, 3}, {2, 2, 2}};
  c.conv2d = {{3, 2}, {3, 3}, {2, 2}};
  return c;
}

inline int cmd_gradcheck(Context& ctx, bool use_run_model) {
  auto mc = use_run_model ? ctx.cfg.model : gradcheck_config();
  mc.variant = ctx.cfg.model.variant;
  model::ModelCheckOptions opt;
  opt.grad.seed = ctx.cfg.seed;
  opt.grad.samples = 400;
  const auto r = model::check_model_gradients(mc, ctx.cfg.seed, opt);
  std::string csv = "param,index,analytic,numeric,rel_error\n";
  char buf[160];
  std::set<std::string> groups;
  for (const auto& e : r.entries) {
    std::snprintf(buf, sizeof buf, ",%zu,%.12e,%.12e,%.3e\n", e.index, e.analytic, e.numeric, e.rel_error);
    csv += e.param + buf;
    groups.insert(e.param);
  }
  eval::write_text(out_file(ctx, "gradcheck.csv"), csv);
  std::snprintf(buf, sizeof buf, "%.3e", r.max_rel_error);
  ctx.say(std::string(r.passed ? "gradcheck passed" : "gradcheck FAILED") + ": max rel error " + buf +
          " over " + std::to_string(r.entries.size()) + " coordinates in " +
          std::to_string(groups.size()) + " tensors");
  if (!r.passed) throw ad::NumericError(std::string("gradient check failed, max rel error ") + buf);
  return 0;
}

// ---------------------------------------------------------------------------

// Runs one subcommand. Returns 0 on success, 2 on usage errors and 1 on
// any other failure, after printing `error: <kind>: <message>` to `err`.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Narrative-guided script line selection", "storyline"};
  app.require_subcommand(1);
  std::string config_path, corpus_path, out_dir, variant, precision, checkpoint, session_id;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> sessions;
  std::vector<std::string> sets;
  bool use_run_model = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key = value config file");
    sub->add_option("--seed", seed, "run seed");
    sub->add_option("--corpus", corpus_path, "JSONL corpus");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--variant", variant, "full, static, no_pr, no_cp or no_cr");
    sub->add_option("--precision", precision, "standard or verification");
    sub->add_option("--set", sets, "override: key=value (repeatable)");
  };
  std::map<std::string, CLI::App*> subs;
  for (auto [name, help] : std::vector<std::pair<const char*, const char*>>{
           {"synth", "generate a synthetic corpus"},
           {"prep", "vocabulary, splits and corpus statistics"},
           {"train", "train a model"},
           {"eval-turn", "turn-level ranking metrics"},
           {"eval-session", "session rollout metrics and overlap buckets"},
           {"ablate", "train and evaluate all variants"},
           {"inspect", "narrative decay trace for one session"},
           {"gradcheck", "finite-difference gradient check"}}) {
    auto* s = app.add_subcommand(name, help);
    common(s);
    subs[name] = s;
  }
  subs["synth"]->add_option("--sessions", sessions, "number of sessions");
  for (const char* n : {"eval-turn", "eval-session", "inspect"})
    subs[n]->add_option("--checkpoint", checkpoint, "checkpoint file");
  subs["inspect"]->add_option("--session", session_id, "session id");
  subs["gradcheck"]->add_flag("--run-model", use_run_model, "check the configured model instead of the tiny one");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n" << app.help();
    return 2;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  auto fail = [&](const std::string& kind, const std::string& msg) {
    std::string m = msg;
    std::replace(m.begin(), m.end(), '\n', ' ');
    err << "error: " << kind << ": " << m << "\n";
    return 1;
  };
  try {
    RunConfig cfg;
    if (!config_path.empty()) load_file(cfg, config_path);
    if (seed) cfg.seed = *seed;
    if (!corpus_path.empty()) cfg.corpus = corpus_path;
    if (!out_dir.empty()) cfg.out = out_dir;
    if (!variant.empty()) apply(cfg, "model.variant", variant);
    if (!precision.empty()) apply(cfg, "run.precision", precision);
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    if (!session_id.empty()) cfg.inspect_session = session_id;
    if (sessions) cfg.synth.n_sessions = *sessions;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      apply(cfg, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
    }
    resolve(cfg);
    fs::create_directories(cfg.out);
    Context ctx{cfg, out, {}};
    eval::write_text(out_file(ctx, "config.txt"), to_text(cfg));
    ctx.log.open(out_file(ctx, "log.txt"), std::ios::app);

    if (cmd == "synth") return cmd_synth(ctx);
    if (cmd == "prep") return cmd_prep(ctx);
    if (cmd == "train") return cmd_train(ctx);
    if (cmd == "eval-turn") return cmd_eval(ctx, false);
    if (cmd == "eval-session") return cmd_eval(ctx, true);
    if (cmd == "ablate") return cmd_ablate(ctx);
    if (cmd == "inspect") return cmd_inspect(ctx);
    return cmd_gradcheck(ctx, use_run_model);
  } catch (const ConfigError& e) {
    return fail("config", e.what());
  } catch (const corpus::CorpusError& e) {
    return fail("corpus", e.what());
  } catch (const model::CheckpointError& e) {
    return fail("checkpoint", e.what());
  } catch (const train::TrainError& e) {
    return fail("train", e.what());
  } catch (const eval::EvalError& e) {
    return fail("eval", e.what());
  } catch (const ad::NumericError& e) {
    return fail("numeric", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail("io", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
}

}  // namespace storyline::cli
