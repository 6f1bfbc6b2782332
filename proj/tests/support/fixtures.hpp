#pragma once
// Small model configs and random inputs shared by the model tests and the
// acceptance runner.

#include <cstdint>
#include <random>
#include <vector>

#include "storyline/model/network.hpp"

namespace fixture {

using storyline::model::ModelConfig;
using storyline::model::ModelInput;

// L=1, d_e=8, 2 lines x 6 tokens, narrative 8 tokens, pools [2,2,2]/[2,2].
inline ModelConfig tiny_config(std::size_t vocab = 30) {
  ModelConfig c;
  c.stacks = 1;
  c.embed_dim = 8;
  c.max_lines = 2;
  c.max_tokens = 6;
  c.max_narrative_tokens = 8;
  c.vocab_size = vocab;
  c.conv3d = {{3, 2}, {3, 3, 3}, {2, 2, 2}};
  c.conv2d = {{3, 2}, {3, 3}, {2, 2}};
  return c;
}

inline std::vector<std::int32_t> random_ids(std::mt19937_64& rng, std::size_t min_len,
                                            std::size_t max_len, std::size_t vocab) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<std::int32_t> id(2, static_cast<std::int32_t>(vocab) - 1);
  std::vector<std::int32_t> v(len(rng));
  for (auto& x : v) x = id(rng);
  return v;
}

// Random context/narrative/candidates; sequences may be shorter than the
// limits so padding is exercised.
inline ModelInput random_input(std::mt19937_64& rng, const ModelConfig& c,
                               std::size_t candidates = 1) {
  std::uniform_int_distribution<std::size_t> nl(1, c.max_lines);
  std::vector<std::vector<std::int32_t>> ctx(nl(rng));
  for (auto& l : ctx) l = random_ids(rng, 1, c.max_tokens, c.vocab_size);
  const auto narr = random_ids(rng, 1, c.max_narrative_tokens, c.vocab_size);
  std::vector<std::vector<std::int32_t>> cands(candidates);
  for (auto& r : cands) r = random_ids(rng, 1, c.max_tokens, c.vocab_size);
  return storyline::model::build_input(c, ctx, narr, cands);
}

}  // namespace fixture
