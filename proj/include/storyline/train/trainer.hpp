#pragma once
// Training loop: seeded shuffling, Adam with per-epoch learning-rate decay,
// gamma projection, and model selection on the validation split.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "storyline/autodiff/adam.hpp"
#include "storyline/corpus/micro_session.hpp"
#include "storyline/eval/metrics.hpp"
#include "storyline/eval/model_scorer.hpp"
#include "storyline/model/checkpoint.hpp"
#include "storyline/model/network.hpp"

namespace storyline::train {

enum class SelectMetric { r2_1, mrr };

inline SelectMetric parse_select_metric(const std::string& s) {
  if (s == "r2_1") return SelectMetric::r2_1;
  if (s == "mrr") return SelectMetric::mrr;
  throw std::invalid_argument("unknown selection metric '" + s + "'");
}

inline const char* to_string(SelectMetric m) { return m == SelectMetric::r2_1 ? "r2_1" : "mrr"; }

struct TrainConfig {
  double lr0 = 1e-3;
  double lr_decay = 0.95;
  std::size_t batch_size = 64;  // samples (candidates), not micro-sessions
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  SelectMetric select = SelectMetric::r2_1;
  double clip_norm = 0;  // 0 disables clipping
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
    if (!(lr0 > 0)) fail("lr0 must be > 0");
    if (!(lr_decay > 0 && lr_decay <= 1)) fail("lr_decay must be in (0, 1]");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (max_epochs < 1) fail("max_epochs must be >= 1");
    if (clip_norm < 0) fail("clip_norm must be >= 0");
  }

  double lr_at(std::size_t epoch) const { return lr0 * std::pow(lr_decay, double(epoch)); }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0;
  double lr = 0;
  double gamma = 0;
  double val_r2_1 = 0;
  double val_mrr = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  std::string csv() const {
    std::string s = "epoch,loss,lr,gamma,val_r2_1,val_mrr\n";
    char buf[160];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof buf, "%zu,%.6f,%.8g,%.6f,%.6f,%.6f\n", e.epoch, e.loss, e.lr,
                    e.gamma, e.val_r2_1, e.val_mrr);
      s += buf;
    }
    return s;
  }
};

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class T>
struct TrainResult {
  model::ModelParams<T> best;
  TrainReport report;
};

// Called after every epoch with the current parameters; returning true
// stops training.
template <class T>
using EpochHook = std::function<bool(const EpochRecord&, const model::ModelParams<T>&)>;

// Micro-sessions grouped so each batch holds at most batch_size samples
// (and at least one micro-session).
inline std::vector<std::vector<std::size_t>> make_batches(
    const std::vector<corpus::MicroSession>& data, std::size_t batch_size, std::uint64_t seed) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  std::size_t samples = 0;
  for (auto i : order) {
    const std::size_t n = 1 + data[i].negatives.size();
    if (!cur.empty() && samples + n > batch_size) {
      batches.push_back(std::move(cur));
      cur.clear();
      samples = 0;
    }
    cur.push_back(i);
    samples += n;
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  return batches;
}

template <class T>
eval::TurnMetrics validate_turns(const model::ModelParams<T>& params,
                                 const corpus::Vocabulary& vocab,
                                 const std::vector<corpus::MicroSession>& data,
                                 std::uint64_t seed) {
  const auto scorer = eval::model_scorer(params, vocab);
  return eval::turn_metrics(eval::rank_micro_sessions(data, scorer, seed));
}

// One optimizer step over a batch. Each micro-session's graph is built and
// released separately; its loss is weighted by its share of the batch's
// samples so the accumulated gradient is that of the batch mean.
template <class T>
double train_step(model::ModelParams<T>& params, const std::vector<model::LabeledInput>& batch,
                  ad::AdamState<T>& state, const ad::AdamConfig& adam, double clip_norm) {
  std::size_t total = 0;
  for (const auto& b : batch) total += b.labels.size();
  params.zero_grad();
  double loss = 0;
  for (const auto& item : batch) {
    const T w = T(double(item.labels.size()) / double(total));
    const auto l = ad::scale(model::batch_loss(std::vector<model::LabeledInput>{item}, params), w);
    loss += double(l.item());
    ad::backward(l);
  }
  auto tensors = params.tensors();
  if (clip_norm > 0) {
    double sq = 0;
    for (auto& t : tensors)
      for (T g : t.mutable_grad()) sq += double(g) * double(g);
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) {
      const T s = T(clip_norm / norm);
      for (auto& t : tensors)
        for (T& g : t.mutable_grad()) g *= s;
    }
  }
  ad::adam_step<T>(tensors, state, adam);
  params.clamp_gamma();
  return loss;
}

template <class T>
TrainResult<T> train(model::ModelParams<T> params, const std::vector<corpus::MicroSession>& train_set,
                     const std::vector<corpus::MicroSession>& valid_set,
                     const corpus::Vocabulary& vocab, const TrainConfig& cfg,
                     const EpochHook<T>& hook = {}) {
  cfg.validate();
  if (train_set.empty()) throw TrainError("training split is empty");
  if (valid_set.empty()) throw TrainError("validation split is empty");
  if (params.config.vocab_size != vocab.size())
    throw TrainError("model vocab_size " + std::to_string(params.config.vocab_size) +
                     " does not match vocabulary size " + std::to_string(vocab.size()));

  ad::AdamState<T> state;
  TrainResult<T> result{params.clone(), {}};
  double best_score = -1;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    ad::AdamConfig adam{cfg.lr_at(epoch), cfg.beta1, cfg.beta2, cfg.adam_eps};
    const auto batches = make_batches(train_set, cfg.batch_size, corpus::derive_seed(cfg.seed, epoch, 1));
    double loss_sum = 0;
    std::size_t samples = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<corpus::MicroSession> ms;
      for (auto i : batches[b]) ms.push_back(train_set[i]);
      const auto inputs = corpus::pad_batch(ms, vocab, params.config);
      std::size_t n = 0;
      for (const auto& x : inputs) n += x.labels.size();
      double loss;
      try {
        loss = train_step(params, inputs, state, adam, cfg.clip_norm);
      } catch (const ad::NumericError& e) {
        throw TrainError("diverged at epoch " + std::to_string(epoch) + " batch " +
                         std::to_string(b) + ": " + e.what());
      }
      if (!std::isfinite(loss))
        throw TrainError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                         std::to_string(b));
      loss_sum += loss * double(n);
      samples += n;
    }

    const auto val = validate_turns(params, vocab, valid_set, cfg.seed);
    EpochRecord rec{epoch, loss_sum / double(samples), adam.lr, double(params.gamma.item()),
                    val.r2_1, val.mrr};
    result.report.epochs.push_back(rec);
    const double score = cfg.select == SelectMetric::r2_1 ? val.r2_1 : val.mrr;
    if (score > best_score) {
      best_score = score;
      result.best = params.clone();
      result.report.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (hook && hook(rec, params)) break;
    if (cfg.patience && since_best >= cfg.patience) {
      result.report.stopped_early = true;
      break;
    }
  }
  return result;
}

template <class T>
TrainResult<T> train(const model::ModelConfig& model_cfg,
                     const std::vector<corpus::MicroSession>& train_set,
                     const std::vector<corpus::MicroSession>& valid_set,
                     const corpus::Vocabulary& vocab, const TrainConfig& cfg,
                     const EpochHook<T>& hook = {}) {
  return train<T>(model::init_params<T>(model_cfg, cfg.seed), train_set, valid_set, vocab, cfg,
                  hook);
}

// Writes report.csv and best.ckpt into `dir` (which must exist).
template <class T>
void write_run(const std::string& dir, const TrainResult<T>& r,
               std::map<std::string, std::string> meta = {}) {
  const std::string report = dir + "/report.csv";
  std::ofstream out(report, std::ios::binary | std::ios::trunc);
  if (!out) throw TrainError("cannot open '" + report + "' for writing");
  out << r.report.csv();
  meta["train.best_epoch"] = std::to_string(r.report.best_epoch);
  model::save_checkpoint(dir + "/best.ckpt", r.best, meta);
}

inline std::map<std::string, std::string> to_kv(const TrainConfig& c) {
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return {{"train.lr0", num(c.lr0)},
          {"train.lr_decay", num(c.lr_decay)},
          {"train.batch_size", std::to_string(c.batch_size)},
          {"train.max_epochs", std::to_string(c.max_epochs)},
          {"train.patience", std::to_string(c.patience)},
          {"train.seed", std::to_string(c.seed)},
          {"train.select", to_string(c.select)},
          {"train.clip_norm", num(c.clip_norm)}};
}

inline bool apply_kv(TrainConfig& c, const std::string& key, const std::string& value) {
  auto num = [&] {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("bad number '" + value + "'");
    return v;
  };
  auto count = [&] {
    std::size_t pos = 0;
    const auto v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("bad integer '" + value + "'");
    return static_cast<std::size_t>(v);
  };
  if (key == "train.lr0") c.lr0 = num();
  else if (key == "train.lr_decay") c.lr_decay = num();
  else if (key == "train.batch_size") c.batch_size = count();
  else if (key == "train.max_epochs") c.max_epochs = count();
  else if (key == "train.patience") c.patience = count();
  else if (key == "train.seed") c.seed = count();
  else if (key == "train.select") c.select = parse_select_metric(value);
  else if (key == "train.clip_norm") c.clip_norm = num();
  else return false;
  return true;
}

}  // namespace storyline::train
