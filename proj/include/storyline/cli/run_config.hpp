#pragma once
// Flat `key = value` run configuration: model.*, train.*, corpus.*,
// synth.*, eval.* and run.* keys. Unknown keys are rejected.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "storyline/autodiff/tensor.hpp"
#include "storyline/corpus/micro_session.hpp"
#include "storyline/corpus/synthetic.hpp"
#include "storyline/eval/session.hpp"
#include "storyline/model/config.hpp"
#include "storyline/train/trainer.hpp"

namespace storyline::cli {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ad::Precision precision = ad::Precision::standard;
  std::string out = "run";

  model::ModelConfig model;
  train::TrainConfig train;

  std::string corpus;
  std::string embeddings;  // optional pre-trained vectors
  std::size_t min_count = 1;
  double valid_fraction = 0.05;
  double test_fraction = 0.05;
  corpus::SamplerMode sampler = corpus::SamplerMode::uniform;

  corpus::SynthSpec synth;

  std::string checkpoint;
  std::string vocab;  // defaults to vocab.txt next to the checkpoint
  std::string split = "test";  // train | valid | test | all
  std::size_t k_neg = 9;
  eval::PoolMode pool_mode = eval::PoolMode::resampled;
  std::size_t ablate_seeds = 1;
  std::string inspect_session;

  std::string vocab_path() const {
    if (!vocab.empty()) return vocab;
    const auto slash = checkpoint.find_last_of('/');
    return (slash == std::string::npos ? std::string(".") : checkpoint.substr(0, slash)) +
           "/vocab.txt";
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::size_t to_size(const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v[0] == '-') throw ConfigError("bad integer '" + v + "'");
  return static_cast<std::size_t>(x);
}

inline double to_double(const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError("bad number '" + v + "'");
  return x;
}

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Comma list, rescaled to sum 1 unless it already does.
inline std::array<double, corpus::kBuckets> to_weights(const std::string& v) {
  std::array<double, corpus::kBuckets> w{};
  std::stringstream ss(v);
  std::string item;
  std::size_t n = 0;
  double sum = 0;
  while (std::getline(ss, item, ',')) {
    if (n == corpus::kBuckets) throw ConfigError("synth.bucket_weights needs 6 values");
    w[n] = to_double(trim(item));
    if (w[n] < 0) throw ConfigError("synth.bucket_weights must be non-negative");
    sum += w[n++];
  }
  if (n != corpus::kBuckets) throw ConfigError("synth.bucket_weights needs 6 values");
  if (!(sum > 0)) throw ConfigError("synth.bucket_weights must not all be zero");
  if (std::abs(sum - 1.0) > 1e-9)
    for (auto& x : w) x /= sum;
  return w;
}

}  // namespace detail

inline void apply(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  try {
    if (key.rfind("model.", 0) == 0) {
      if (!model::apply_kv(c.model, key, value)) throw ConfigError("unknown key '" + key + "'");
      return;
    }
    if (key == "train.seed") throw ConfigError("use run.seed (train.seed follows it)");
    if (key.rfind("train.", 0) == 0) {
      if (!train::apply_kv(c.train, key, value)) throw ConfigError("unknown key '" + key + "'");
      return;
    }
    if (key == "run.seed") c.seed = to_size(value);
    else if (key == "run.precision") c.precision = ad::parse_precision(value);
    else if (key == "run.out") c.out = value;
    else if (key == "corpus.path") c.corpus = value;
    else if (key == "corpus.embeddings") c.embeddings = value;
    else if (key == "corpus.min_count") c.min_count = to_size(value);
    else if (key == "corpus.valid_fraction") c.valid_fraction = to_double(value);
    else if (key == "corpus.test_fraction") c.test_fraction = to_double(value);
    else if (key == "corpus.sampler") c.sampler = corpus::parse_sampler_mode(value);
    else if (key == "synth.sessions") c.synth.n_sessions = to_size(value);
    else if (key == "synth.min_lines") c.synth.min_lines = to_size(value);
    else if (key == "synth.max_lines") c.synth.max_lines = to_size(value);
    else if (key == "synth.content_words") c.synth.content_words = to_size(value);
    else if (key == "synth.chatter_words") c.synth.chatter_words = to_size(value);
    else if (key == "synth.bucket_weights") c.synth.bucket_weights = to_weights(value);
    else if (key == "eval.checkpoint") c.checkpoint = value;
    else if (key == "eval.vocab") c.vocab = value;
    else if (key == "eval.split") {
      if (value != "train" && value != "valid" && value != "test" && value != "all")
        throw ConfigError("eval.split must be train, valid, test or all");
      c.split = value;
    } else if (key == "eval.k_neg") c.k_neg = to_size(value);
    else if (key == "eval.pool_mode") c.pool_mode = eval::parse_pool_mode(value);
    else if (key == "ablate.seeds") c.ablate_seeds = to_size(value);
    else if (key == "inspect.session") c.inspect_session = value;
    else throw ConfigError("unknown key '" + key + "'");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

// `key = value` per line; blank lines and lines starting with '#' skipped.
inline void apply_text(RunConfig& c, std::istream& in, const std::string& source) {
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(no) + ": expected 'key = value'");
    try {
      apply(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(no) + ": " + e.what());
    }
  }
}

inline void load_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  apply_text(c, in, path);
}

inline std::map<std::string, std::string> to_kv(const RunConfig& c) {
  using detail::num;
  auto kv = model::to_kv(c.model);
  for (const auto& [k, v] : train::to_kv(c.train))
    if (k != "train.seed") kv[k] = v;
  std::string weights;
  for (std::size_t b = 0; b < corpus::kBuckets; ++b)
    weights += (b ? "," : "") + num(c.synth.bucket_weights[b]);
  kv.insert({{"run.seed", std::to_string(c.seed)},
             {"run.precision", ad::to_string(c.precision)},
             {"run.out", c.out},
             {"corpus.path", c.corpus},
             {"corpus.embeddings", c.embeddings},
             {"corpus.min_count", std::to_string(c.min_count)},
             {"corpus.valid_fraction", num(c.valid_fraction)},
             {"corpus.test_fraction", num(c.test_fraction)},
             {"corpus.sampler", corpus::to_string(c.sampler)},
             {"synth.sessions", std::to_string(c.synth.n_sessions)},
             {"synth.min_lines", std::to_string(c.synth.min_lines)},
             {"synth.max_lines", std::to_string(c.synth.max_lines)},
             {"synth.content_words", std::to_string(c.synth.content_words)},
             {"synth.chatter_words", std::to_string(c.synth.chatter_words)},
             {"synth.bucket_weights", weights},
             {"eval.checkpoint", c.checkpoint},
             {"eval.vocab", c.vocab},
             {"eval.split", c.split},
             {"eval.k_neg", std::to_string(c.k_neg)},
             {"eval.pool_mode", c.pool_mode == eval::PoolMode::fixed ? "fixed" : "resampled"},
             {"ablate.seeds", std::to_string(c.ablate_seeds)},
             {"inspect.session", c.inspect_session}});
  return kv;
}

inline std::string to_text(const RunConfig& c) {
  std::string s;
  for (const auto& [k, v] : to_kv(c)) s += k + " = " + v + "\n";
  return s;
}

// Seeds that follow run.seed, and range checks that span sections.
inline void resolve(RunConfig& c) {
  c.train.seed = c.seed;
  c.synth.seed = c.seed;
  try {
    c.model.validate();
    c.train.validate();
    c.synth.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.valid_fraction < 0 || c.test_fraction < 0 || c.valid_fraction + c.test_fraction >= 1)
    throw ConfigError("corpus split fractions must be >= 0 and sum to < 1");
  if (c.k_neg < 1) throw ConfigError("eval.k_neg must be >= 1");
  if (c.ablate_seeds < 1) throw ConfigError("ablate.seeds must be >= 1");
}

}  // namespace storyline::cli
