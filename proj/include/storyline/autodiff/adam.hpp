#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "storyline/autodiff/tensor.hpp"

namespace storyline::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  long step = 0;
};

// One bias-corrected Adam update. `grads[i]` must match `params[i]`
// element for element; state slots are created on the first call.
template <class T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::span<const T>> grads,
               AdamState<T>& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) +
                                " parameters but " + std::to_string(grads.size()) +
                                " gradients");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), T(0));
      state.v.emplace_back(p.size(), T(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state tracks " +
                                std::to_string(state.m.size()) + " parameters, got " +
                                std::to_string(params.size()));
  }
  ++state.step;
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  const T c1 = T(1) - static_cast<T>(std::pow(cfg.beta1, double(state.step)));
  const T c2 = T(1) - static_cast<T>(std::pow(cfg.beta2, double(state.step)));
  const T lr = T(cfg.lr), eps = T(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    const auto g = grads[i];
    if (g.size() != w.size() || state.m[i].size() != w.size()) {
      throw std::invalid_argument("adam_step: gradient " + std::to_string(i) +
                                  " does not match its parameter");
    }
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T mhat = m[j] / c1;
      const T vhat = v[j] / c2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// Convenience overload using the gradients stored on the parameters.
template <class T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state,
               const AdamConfig& cfg) {
  std::vector<std::span<const T>> grads;
  grads.reserve(params.size());
  for (auto& p : params) grads.emplace_back(p.mutable_grad());
  adam_step<T>(params, grads, state, cfg);
}

}  // namespace storyline::ad
