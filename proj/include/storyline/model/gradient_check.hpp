#pragma once
// Finite-difference check of the full batch loss on a small random batch.
//
// Parameters are evaluated at a generic point: the seeded init rescaled by
// `param_scale` and every bias drawn at random. At the raw init the
// activations are of the order of the step h and biases are exactly zero,
// so ReLU and max-pool kinks sit inside the difference stencil.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "storyline/autodiff/gradcheck.hpp"
#include "storyline/model/network.hpp"

namespace storyline::model {

struct ModelCheckOptions {
  ad::GradCheckOptions grad;
  double param_scale = 10.0;
  std::size_t pools = 2;
  std::size_t candidates = 2;
};

namespace detail {

inline std::vector<std::int32_t> random_tokens(std::mt19937_64& rng, std::size_t max_len,
                                               std::size_t vocab) {
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::uniform_int_distribution<std::int32_t> id(2, static_cast<std::int32_t>(vocab) - 1);
  std::vector<std::int32_t> v(len(rng));
  for (auto& x : v) x = id(rng);
  return v;
}

inline bool is_bias(const std::string& name) {
  return name.ends_with("bias") || name.ends_with("_b1") || name.ends_with("_b2") ||
         name == "score.b";
}

}  // namespace detail

inline ad::GradCheckReport check_model_gradients(ModelConfig cfg, std::uint64_t seed,
                                                 const ModelCheckOptions& opt = {}) {
  if (cfg.vocab_size < 3) cfg.vocab_size = 3;
  std::mt19937_64 rng(seed);
  ModelParams<double> params = init_params<double>(cfg, seed);
  std::uniform_real_distribution<double> jitter(-0.05 * opt.param_scale, 0.05 * opt.param_scale);
  params.for_each([&](const std::string& name, Tensor<double>& t) {
    if (name == "gamma" || name.ends_with("gain")) return;
    for (auto& x : t.mutable_data()) x = detail::is_bias(name) ? jitter(rng) : x * opt.param_scale;
  });
  for (std::size_t j = 0; j < cfg.embed_dim; ++j) params.embedding.mutable_data()[j] = 0.0;

  std::vector<LabeledInput> batch;
  for (std::size_t b = 0; b < opt.pools; ++b) {
    std::vector<std::vector<std::int32_t>> ctx(cfg.max_lines);
    for (auto& l : ctx) l = detail::random_tokens(rng, cfg.max_tokens, cfg.vocab_size);
    const auto narr = detail::random_tokens(rng, cfg.max_narrative_tokens, cfg.vocab_size);
    std::vector<std::vector<std::int32_t>> cands(opt.candidates);
    std::vector<double> labels(opt.candidates, 0.0);
    labels[0] = 1.0;
    for (auto& r : cands) r = detail::random_tokens(rng, cfg.max_tokens, cfg.vocab_size);
    batch.push_back({build_input(cfg, ctx, narr, cands), labels});
  }

  std::vector<ad::NamedParam> named;
  for (auto& [n, t] : params.named()) named.push_back({n, t});
  return ad::grad_check([&] { return batch_loss(batch, params); }, named, opt.grad);
}

}  // namespace storyline::model
