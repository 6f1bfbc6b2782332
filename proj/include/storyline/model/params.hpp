#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "storyline/autodiff/tensor.hpp"
#include "storyline/model/config.hpp"

namespace storyline::model {

using ad::Tensor;

// Cross-attention pairings: the first sequence is the query, the second
// supplies keys and values.
enum class Pairing : std::size_t { p_s, s_p, p_r, r_p, s_r, r_s };
inline constexpr std::size_t kPairings = 6;

inline const char* to_string(Pairing p) {
  static const char* names[] = {"p_s", "s_p", "p_r", "r_p", "s_r", "r_s"};
  return names[static_cast<std::size_t>(p)];
}

template <class T>
struct BlockWeights {
  Tensor<T> wq, wk, wv;
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> ln2_gain, ln2_bias;

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".wq", wq);
    f(prefix + ".wk", wk);
    f(prefix + ".wv", wv);
    f(prefix + ".ln1_gain", ln1_gain);
    f(prefix + ".ln1_bias", ln1_bias);
    f(prefix + ".ffn_w1", w1);
    f(prefix + ".ffn_b1", b1);
    f(prefix + ".ffn_w2", w2);
    f(prefix + ".ffn_b2", b2);
    f(prefix + ".ln2_gain", ln2_gain);
    f(prefix + ".ln2_bias", ln2_bias);
  }
};

template <class T>
struct ConvLayer {
  Tensor<T> filters;
  Tensor<T> bias;
};

template <class T>
struct ConvBank {
  std::vector<ConvLayer<T>> layers;

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      f(prefix + ".conv" + std::to_string(i + 1) + ".filters", layers[i].filters);
      f(prefix + ".conv" + std::to_string(i + 1) + ".bias", layers[i].bias);
    }
  }
};

template <class T>
struct ModelParams {
  ModelConfig config;
  Tensor<T> embedding;                    // [vocab, d_e], row 0 (PAD) is zero
  std::vector<BlockWeights<T>> self_blocks;  // one per level
  std::array<std::vector<BlockWeights<T>>, kPairings> cross_blocks;
  Tensor<T> gamma;                        // [1], kept in [0, 1]
  ConvBank<T> cp3d, cr3d, pr2d;
  Tensor<T> score_w;                      // [F, 1]
  Tensor<T> score_b;                      // [1]

  // Visits every tensor in a fixed order with its checkpoint name.
  template <class F>
  void for_each(F&& f) {
    f(std::string("embedding"), embedding);
    for (std::size_t l = 0; l < self_blocks.size(); ++l)
      self_blocks[l].for_each("self." + std::to_string(l + 1), f);
    for (std::size_t p = 0; p < kPairings; ++p)
      for (std::size_t l = 0; l < cross_blocks[p].size(); ++l)
        cross_blocks[p][l].for_each(std::string("cross.") + to_string(Pairing(p)) + "." +
                                        std::to_string(l + 1),
                                    f);
    f(std::string("gamma"), gamma);
    cp3d.for_each("cp3d", f);
    cr3d.for_each("cr3d", f);
    pr2d.for_each("pr2d", f);
    f(std::string("score.w"), score_w);
    f(std::string("score.b"), score_b);
  }

  template <class F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each(
        [&](const std::string& n, Tensor<T>& t) { f(n, static_cast<const Tensor<T>&>(t)); });
  }

  std::vector<std::pair<std::string, Tensor<T>>> named() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for_each([&](const std::string& n, const Tensor<T>& t) { out.emplace_back(n, t); });
    return out;
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for_each([&](const std::string&, const Tensor<T>& t) { out.push_back(t); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }

  void zero_grad() {
    for_each([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }

  void clamp_gamma() {
    auto g = gamma.mutable_data();
    g[0] = std::clamp(g[0], T(0), T(1));
  }

  // Same structure with fresh, independent storage.
  ModelParams clone() const { return cast<T>(); }

  template <class U>
  ModelParams<U> cast() const;
};

namespace detail {

struct Initializer {
  std::mt19937_64 rng;
  std::uniform_real_distribution<double> dist{-0.05, 0.05};

  explicit Initializer(std::uint64_t seed) : rng(seed) {}

  template <class T>
  Tensor<T> uniform(ad::Shape shape) {
    std::vector<T> v(ad::shape_size(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>::from(std::move(shape), std::move(v), true);
  }

  template <class T>
  Tensor<T> constant(ad::Shape shape, T value) {
    std::vector<T> v(ad::shape_size(shape), value);
    return Tensor<T>::from(std::move(shape), std::move(v), true);
  }
};

template <class T>
BlockWeights<T> init_block(Initializer& init, std::size_t d, std::size_t hidden) {
  BlockWeights<T> b;
  b.wq = init.uniform<T>({d, d});
  b.wk = init.uniform<T>({d, d});
  b.wv = init.uniform<T>({d, d});
  b.ln1_gain = init.constant<T>({d}, T(1));
  b.ln1_bias = init.constant<T>({d}, T(0));
  b.w1 = init.uniform<T>({d, hidden});
  b.b1 = init.constant<T>({hidden}, T(0));
  b.w2 = init.uniform<T>({hidden, d});
  b.b2 = init.constant<T>({d}, T(0));
  b.ln2_gain = init.constant<T>({d}, T(1));
  b.ln2_bias = init.constant<T>({d}, T(0));
  return b;
}

template <class T>
ConvBank<T> init_bank(Initializer& init, const ConvBankConfig& cfg, std::size_t in_channels) {
  ConvBank<T> bank;
  std::size_t cin = in_channels;
  for (std::size_t f : cfg.filters) {
    ad::Shape shape(cfg.kernel.begin(), cfg.kernel.end());
    shape.push_back(cin);
    shape.push_back(f);
    bank.layers.push_back({init.uniform<T>(shape), init.constant<T>({f}, T(0))});
    cin = f;
  }
  return bank;
}

}  // namespace detail

// Projections, filters and scorer weights ~ U(-0.05, 0.05); layer-norm
// gains 1 and biases 0; gamma starts at 0.5.
template <class T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  detail::Initializer init(seed);
  ModelParams<T> p;
  p.config = config;
  const std::size_t d = config.embed_dim;
  p.embedding = init.uniform<T>({config.vocab_size, d});
  for (std::size_t j = 0; j < d; ++j) p.embedding.mutable_data()[j] = T(0);
  for (std::size_t l = 0; l < config.stacks; ++l)
    p.self_blocks.push_back(detail::init_block<T>(init, d, config.hidden()));
  for (std::size_t pr = 0; pr < kPairings; ++pr)
    for (std::size_t l = 0; l < config.stacks; ++l)
      p.cross_blocks[pr].push_back(detail::init_block<T>(init, d, config.hidden()));
  p.gamma = init.constant<T>({1}, T(0.5));
  p.cp3d = detail::init_bank<T>(init, config.conv3d, config.channels());
  p.cr3d = detail::init_bank<T>(init, config.conv3d, config.channels());
  p.pr2d = detail::init_bank<T>(init, config.conv2d, config.channels());
  p.score_w = init.uniform<T>({feature_sizes(config).total(), 1});
  p.score_b = init.constant<T>({1}, T(0));
  return p;
}

template <class T>
template <class U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.config = config;
  auto conv = [](const Tensor<T>& t) {
    std::vector<U> v(t.data().begin(), t.data().end());
    return Tensor<U>::from(t.shape(), std::move(v), true);
  };
  out.embedding = conv(embedding);
  for (const auto& b : self_blocks) {
    BlockWeights<U> nb;
    auto src = b;
    std::vector<Tensor<U>> tmp;
    src.for_each("", [&](const std::string&, Tensor<T>& t) { tmp.push_back(conv(t)); });
    std::size_t i = 0;
    nb.for_each("", [&](const std::string&, Tensor<U>& t) { t = tmp[i++]; });
    out.self_blocks.push_back(std::move(nb));
  }
  for (std::size_t p = 0; p < kPairings; ++p) {
    for (const auto& b : cross_blocks[p]) {
      BlockWeights<U> nb;
      auto src = b;
      std::vector<Tensor<U>> tmp;
      src.for_each("", [&](const std::string&, Tensor<T>& t) { tmp.push_back(conv(t)); });
      std::size_t i = 0;
      nb.for_each("", [&](const std::string&, Tensor<U>& t) { t = tmp[i++]; });
      out.cross_blocks[p].push_back(std::move(nb));
    }
  }
  out.gamma = conv(gamma);
  auto conv_bank = [&](const ConvBank<T>& b) {
    ConvBank<U> nb;
    for (const auto& l : b.layers) nb.layers.push_back({conv(l.filters), conv(l.bias)});
    return nb;
  };
  out.cp3d = conv_bank(cp3d);
  out.cr3d = conv_bank(cr3d);
  out.pr2d = conv_bank(pr2d);
  out.score_w = conv(score_w);
  out.score_b = conv(score_b);
  return out;
}

}  // namespace storyline::model
