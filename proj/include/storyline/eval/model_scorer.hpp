#pragma once

#include <vector>

#include "storyline/corpus/micro_session.hpp"
#include "storyline/corpus/vocabulary.hpp"
#include "storyline/eval/metrics.hpp"
#include "storyline/model/network.hpp"

namespace storyline::eval {

// Scorer backed by a model; `params` and `vocab` must outlive it.
template <class T>
Scorer model_scorer(const model::ModelParams<T>& params, const corpus::Vocabulary& vocab) {
  return [&params, &vocab](const std::vector<Tokens>& context, const Tokens& narrative,
                           const std::vector<Tokens>& candidates) {
    ad::NoGradGuard no_grad;
    const auto in = corpus::encode_input(vocab, params.config, context, narrative, candidates);
    const auto pool = model::score_pool(in, params);
    std::vector<double> s;
    s.reserve(pool.candidates.size());
    for (const auto& c : pool.candidates) s.push_back(double(c.g.item()));
    return s;
  };
}

}  // namespace storyline::eval
