#pragma once
// Narrative-guided matching network.
//
// Representation: every sequence gets a self-attention stack of L+1 levels
// (level 0 is the embedding). Cross-attention stacks pair the narrative,
// each context line and the response. The narrative is decayed line by
// line by the cosine coverage of each line, the three kinds of matching
// maps are built from dot products, and convolution banks reduce them to
// the features scored by a logistic layer.
//
// Internally each sequence keeps only its unmasked rows ("compact" form);
// matching maps are scattered back onto the padded grid, so masked rows
// contribute exact zeros.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "storyline/autodiff/ops.hpp"
#include "storyline/model/config.hpp"
#include "storyline/model/params.hpp"

namespace storyline::model {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;

// A padded token sequence; mask[i] == 0 marks position i as padding and
// its id is then ignored.
struct TokenSeq {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;

  std::size_t size() const { return ids.size(); }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto m : mask) n += m != 0;
    return n;
  }
};

// Pads/truncates `ids` to `len`; the mask marks non-PAD ids.
inline TokenSeq make_seq(const std::vector<std::int32_t>& ids, std::size_t len) {
  TokenSeq s;
  s.ids.assign(len, kPadId);
  s.mask.assign(len, 0);
  for (std::size_t i = 0; i < std::min(len, ids.size()); ++i) {
    s.ids[i] = ids[i];
    s.mask[i] = ids[i] != kPadId;
  }
  return s;
}

// One scoring request: padded context lines, narrative and candidates.
struct ModelInput {
  std::vector<TokenSeq> context;  // exactly max_lines entries
  TokenSeq narrative;
  std::vector<TokenSeq> candidates;
};

// Keeps the latest max_lines lines, truncates every sequence to its limit
// and pads with PAD lines/tokens. An empty context becomes one PAD line.
inline ModelInput build_input(const ModelConfig& cfg,
                              const std::vector<std::vector<std::int32_t>>& context,
                              const std::vector<std::int32_t>& narrative,
                              const std::vector<std::vector<std::int32_t>>& candidates) {
  ModelInput in;
  const std::size_t keep = std::min(cfg.max_lines, context.size());
  for (std::size_t i = context.size() - keep; i < context.size(); ++i)
    in.context.push_back(make_seq(context[i], cfg.max_tokens));
  while (in.context.size() < cfg.max_lines) in.context.push_back(make_seq({}, cfg.max_tokens));
  in.narrative = make_seq(narrative, cfg.max_narrative_tokens);
  for (const auto& c : candidates) in.candidates.push_back(make_seq(c, cfg.max_tokens));
  return in;
}

template <class T>
struct RepresentationStack {
  std::size_t padded_len = 0;
  std::vector<std::size_t> positions;   // unmasked positions, ascending
  std::vector<Tensor<T>> levels;        // L+1 tensors of [positions.size(), d_e]

  bool empty() const { return positions.empty(); }
};

// Per-level decay factors d^l over the narrative's unmasked positions.
template <class T>
struct DecayVector {
  std::vector<Tensor<T>> levels;
};

template <class T>
struct DecayTrace {
  std::vector<std::size_t> narrative_positions;
  // retention[i][l][k]: cumulative retention of narrative word k at level
  // l after context line i has been applied.
  std::vector<std::vector<std::vector<double>>> retention;
  std::vector<std::vector<std::vector<double>>> decay;
};

template <class T>
struct ScoreBundle {
  Tensor<T> g;  // [1]
  std::vector<double> f_cp, f_cr, f_pr;
  DecayTrace<T> trace;  // filled by forward_score
};

template <class T>
struct PoolOutput {
  std::vector<ScoreBundle<T>> candidates;
  DecayTrace<T> trace;
};

// ---------------------------------------------------------------------------

// Padded [n, d_e] view of a sequence's embeddings (constant, for inspection).
template <class T>
Tensor<T> embed(const TokenSeq& seq, const ModelParams<T>& params) {
  const std::size_t d = params.config.embed_dim;
  const std::size_t vocab = params.embedding.dim(0);
  std::vector<T> out(seq.size() * d, T(0));
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!seq.mask[i]) continue;
    const auto id = seq.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    std::copy_n(params.embedding.data().data() + id * d, d, out.data() + i * d);
  }
  return Tensor<T>::from({seq.size(), d}, std::move(out));
}

struct BlockTrace {
  std::vector<double> attention;  // [n_q, n_k]
  std::size_t rows = 0, cols = 0;
};

// Single-head scaled dot-product attention over (projected) keys with a
// residual + layer norm, then a ReLU feed-forward with residual + layer norm.
template <class T>
Tensor<T> attentive_block(const Tensor<T>& query, const Tensor<T>& key,
                          const Tensor<T>& value, std::span<const std::uint8_t> key_mask,
                          const BlockWeights<T>& w, T ln_eps, BlockTrace* trace = nullptr) {
  using namespace ad;
  if (key.dim(0) != value.dim(0))
    throw DimensionError("attentive_block: key/value token counts differ");
  const std::size_t d = query.dim(1);
  if (key.dim(1) != d || value.dim(1) != d)
    throw DimensionError("attentive_block: query/key/value widths differ");
  const Tensor<T> q = matmul(query, w.wq);
  const Tensor<T> k = matmul(key, w.wk);
  const Tensor<T> v = matmul(value, w.wv);
  const Tensor<T> logits = scale(matmul(q, k, true), T(1) / std::sqrt(T(d)));
  const Tensor<T> attn = softmax_last(logits, key_mask);
  if (trace) {
    trace->rows = attn.dim(0);
    trace->cols = attn.dim(1);
    trace->attention.assign(attn.data().begin(), attn.data().end());
  }
  const Tensor<T> h = layer_norm(add(query, matmul(attn, v)), w.ln1_gain, w.ln1_bias, ln_eps);
  const Tensor<T> ff = add_bias(matmul(relu(add_bias(matmul(h, w.w1), w.b1)), w.w2), w.b2);
  return layer_norm(add(h, ff), w.ln2_gain, w.ln2_bias, ln_eps);
}

template <class T>
RepresentationStack<T> encode_self(const TokenSeq& seq, const ModelParams<T>& params) {
  RepresentationStack<T> st;
  st.padded_len = seq.size();
  std::vector<std::int32_t> ids;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.mask[i]) {
      st.positions.push_back(i);
      ids.push_back(seq.ids[i]);
    }
  }
  if (st.empty()) return st;
  const T eps = T(params.config.ln_eps);
  st.levels.push_back(ad::gather_rows(params.embedding, std::span<const std::int32_t>(ids)));
  for (std::size_t l = 0; l < params.self_blocks.size(); ++l) {
    const auto& prev = st.levels.back();
    st.levels.push_back(attentive_block(prev, prev, prev, {}, params.self_blocks[l], eps));
  }
  return st;
}

// Stack of `a` attending to `b`: level 0 is a's embedding level and level l
// attends from a's self level l-1 to b's self level l-1. When b has no
// unmasked token the attended levels are zero.
template <class T>
RepresentationStack<T> encode_cross(const RepresentationStack<T>& a,
                                    const RepresentationStack<T>& b,
                                    const std::vector<BlockWeights<T>>& blocks, T ln_eps) {
  if (!a.empty() && !b.empty() && a.levels.size() != b.levels.size())
    throw ad::DimensionError("encode_cross: stacks have different level counts");
  RepresentationStack<T> out;
  out.padded_len = a.padded_len;
  out.positions = a.positions;
  if (a.empty()) return out;
  if (blocks.size() + 1 != a.levels.size())
    throw ad::DimensionError("encode_cross: block count does not match stack depth");
  out.levels.push_back(a.levels[0]);
  for (std::size_t l = 1; l < a.levels.size(); ++l) {
    if (b.empty()) {
      out.levels.push_back(Tensor<T>::zeros(a.levels[l - 1].shape()));
    } else {
      out.levels.push_back(attentive_block(a.levels[l - 1], b.levels[l - 1], b.levels[l - 1],
                                           {}, blocks[l - 1], ln_eps));
    }
  }
  return out;
}

// One step of narrative coverage tracking. For every level:
//   T[j][k] = cos(line[j], narrative[k])
//   d[k]    = clamp(gamma * sum_j T[j][k], 0, 1)
//   narrative row k <- (1 - d[k]) * narrative row k
// Returns the decay vectors; `narrative_levels` is updated in place.
template <class T>
DecayVector<T> update_narrative(std::vector<Tensor<T>>& narrative_levels,
                                const RepresentationStack<T>& line, const Tensor<T>& gamma) {
  using namespace ad;
  DecayVector<T> dv;
  for (std::size_t l = 0; l < narrative_levels.size(); ++l) {
    const std::size_t np = narrative_levels[l].dim(0);
    if (line.empty()) {
      dv.levels.push_back(Tensor<T>::zeros({np}));
      continue;
    }
    const Tensor<T> cos = cosine_matrix(line.levels[l], narrative_levels[l]);
    const Tensor<T> d = clamp(mul(gamma, sum_rows(cos)), T(0), T(1));
    narrative_levels[l] = scale_rows(narrative_levels[l], sub(Tensor<T>::scalar(T(1)), d));
    dv.levels.push_back(d);
  }
  return dv;
}

// 2(L+1)-channel map: channel l is a_self[l] . b_self[l]^T, channel L+1+l
// is a_cross[l] . b_cross[l]^T, placed on the padded [n_a, n_b] grid.
template <class T>
Tensor<T> match_pair(const std::vector<Tensor<T>>& a_self, const std::vector<Tensor<T>>& b_self,
                     const std::vector<Tensor<T>>& a_cross,
                     const std::vector<Tensor<T>>& b_cross,
                     std::span<const std::size_t> a_pos, std::span<const std::size_t> b_pos,
                     std::size_t a_len, std::size_t b_len, std::size_t levels) {
  using namespace ad;
  if (a_pos.empty() || b_pos.empty()) return Tensor<T>::zeros({a_len, b_len, 2 * levels});
  if (a_self.size() != levels || b_self.size() != levels || a_cross.size() != levels ||
      b_cross.size() != levels)
    throw DimensionError("match_pair: level mismatch");
  std::vector<Tensor<T>> channels;
  channels.reserve(2 * levels);
  auto place = [&](const Tensor<T>& a, const Tensor<T>& b) {
    return reshape(scatter_grid(matmul(a, b, true), a_pos, b_pos, a_len, b_len),
                   {a_len, b_len, 1});
  };
  for (std::size_t l = 0; l < levels; ++l) channels.push_back(place(a_self[l], b_self[l]));
  for (std::size_t l = 0; l < levels; ++l) channels.push_back(place(a_cross[l], b_cross[l]));
  return concat_channels(channels);
}

// conv -> bias -> ReLU -> max-pool for every layer, then flatten.
template <class T>
Tensor<T> apply_conv_bank(Tensor<T> x, const ConvBank<T>& bank, const ConvBankConfig& cfg,
                          int rank) {
  using namespace ad;
  for (const auto& layer : bank.layers) {
    x = maxpool_nd(relu(add_bias(conv_nd(x, layer.filters, rank), layer.bias)), cfg.pool, rank);
  }
  return reshape(x, {x.size()});
}

namespace detail {

template <class T>
std::vector<Tensor<T>> scaled_rows(const std::vector<Tensor<T>>& levels,
                                   const std::vector<Tensor<T>>& retention) {
  std::vector<Tensor<T>> out;
  for (std::size_t l = 0; l < levels.size(); ++l)
    out.push_back(retention.empty() ? levels[l] : ad::scale_rows(levels[l], retention[l]));
  return out;
}

template <class T>
std::vector<double> values_of(const Tensor<T>& t) {
  if (!t.defined()) return {};
  return {t.data().begin(), t.data().end()};
}

}  // namespace detail

// Scores every candidate of `in` against the shared context and narrative.
// Candidate scores do not depend on each other: the shared parts are
// computed once and each candidate's path is independent.
template <class T>
PoolOutput<T> score_pool(const ModelInput& in, const ModelParams<T>& params) {
  using namespace ad;
  const ModelConfig& cfg = params.config;
  if (in.context.size() != cfg.max_lines)
    throw DimensionError("score_pool: expected " + std::to_string(cfg.max_lines) +
                         " padded context lines, got " + std::to_string(in.context.size()));
  if (in.narrative.size() != cfg.max_narrative_tokens)
    throw DimensionError("score_pool: narrative is not padded to max_narrative_tokens");
  for (const auto& s : in.context)
    if (s.size() != cfg.max_tokens) throw DimensionError("score_pool: line length mismatch");
  for (const auto& s : in.candidates)
    if (s.size() != cfg.max_tokens) throw DimensionError("score_pool: response length mismatch");

  const T eps = T(cfg.ln_eps);
  const std::size_t levels = cfg.stacks + 1;
  const std::size_t n_lines = cfg.max_lines;
  const auto& cross = params.cross_blocks;
  auto blocks = [&](Pairing p) -> const std::vector<BlockWeights<T>>& {
    return cross[static_cast<std::size_t>(p)];
  };

  const RepresentationStack<T> narr = encode_self(in.narrative, params);
  std::vector<RepresentationStack<T>> lines;
  for (const auto& s : in.context) lines.push_back(encode_self(s, params));

  // Narrative updates. current[l] is P_i^l; retention[i][l] is the
  // cumulative (1 - d) product before line i (empty = all ones).
  const Tensor<T> gamma = cfg.variant == Variant::static_narrative
                              ? Tensor<T>::scalar(T(0))
                              : params.gamma;
  PoolOutput<T> out;
  out.trace.narrative_positions = narr.positions;
  std::vector<std::vector<Tensor<T>>> narrative_before(n_lines + 1);
  std::vector<std::vector<Tensor<T>>> retention_before(n_lines + 1);
  if (!narr.empty()) {
    std::vector<Tensor<T>> current = narr.levels;
    std::vector<Tensor<T>> retention;
    for (std::size_t i = 0; i < n_lines; ++i) {
      narrative_before[i] = current;
      retention_before[i] = retention;
      DecayVector<T> dv = update_narrative(current, lines[i], gamma);
      if (!lines[i].empty()) {
        std::vector<Tensor<T>> next;
        for (std::size_t l = 0; l < levels; ++l) {
          const Tensor<T> keep = sub(Tensor<T>::scalar(T(1)), dv.levels[l]);
          next.push_back(retention.empty() ? keep : mul(retention[l], keep));
        }
        retention = std::move(next);
      }
      std::vector<std::vector<double>> ret_i, dec_i;
      for (std::size_t l = 0; l < levels; ++l) {
        dec_i.push_back(detail::values_of(dv.levels[l]));
        ret_i.push_back(retention.empty()
                            ? std::vector<double>(narr.positions.size(), 1.0)
                            : detail::values_of(retention[l]));
      }
      out.trace.decay.push_back(std::move(dec_i));
      out.trace.retention.push_back(std::move(ret_i));
    }
    narrative_before[n_lines] = current;
    retention_before[n_lines] = retention;
  }

  // Context-narrative cube; independent of the candidate.
  Tensor<T> f_cp;
  if (cfg.uses_cp()) {
    std::vector<Tensor<T>> maps;
    for (std::size_t i = 0; i < n_lines; ++i) {
      const auto& s = lines[i];
      if (s.empty() || narr.empty()) {
        maps.push_back(Tensor<T>::zeros({cfg.max_tokens, cfg.max_narrative_tokens, 2 * levels}));
        continue;
      }
      const auto s_cross = encode_cross(s, narr, blocks(Pairing::s_p), eps);
      const auto p_cross = encode_cross(narr, s, blocks(Pairing::p_s), eps);
      maps.push_back(match_pair(s.levels, narrative_before[i], s_cross.levels,
                                detail::scaled_rows(p_cross.levels, retention_before[i]),
                                std::span<const std::size_t>(s.positions),
                                std::span<const std::size_t>(narr.positions), cfg.max_tokens,
                                cfg.max_narrative_tokens, levels));
    }
    f_cp = apply_conv_bank(stack(maps), params.cp3d, cfg.conv3d, 3);
  }

  for (const auto& cand : in.candidates) {
    const RepresentationStack<T> resp = encode_self(cand, params);
    ScoreBundle<T> bundle;
    std::vector<Tensor<T>> features;
    if (f_cp.defined()) features.push_back(f_cp);

    Tensor<T> f_cr;
    if (cfg.uses_cr()) {
      std::vector<Tensor<T>> maps;
      for (std::size_t i = 0; i < n_lines; ++i) {
        const auto& s = lines[i];
        if (s.empty() || resp.empty()) {
          maps.push_back(Tensor<T>::zeros({cfg.max_tokens, cfg.max_tokens, 2 * levels}));
          continue;
        }
        const auto s_cross = encode_cross(s, resp, blocks(Pairing::s_r), eps);
        const auto r_cross = encode_cross(resp, s, blocks(Pairing::r_s), eps);
        maps.push_back(match_pair(s.levels, resp.levels, s_cross.levels, r_cross.levels,
                                  std::span<const std::size_t>(s.positions),
                                  std::span<const std::size_t>(resp.positions), cfg.max_tokens,
                                  cfg.max_tokens, levels));
      }
      f_cr = apply_conv_bank(stack(maps), params.cr3d, cfg.conv3d, 3);
      features.push_back(f_cr);
    }

    Tensor<T> f_pr;
    if (cfg.uses_pr()) {
      Tensor<T> m;
      if (narr.empty() || resp.empty()) {
        m = Tensor<T>::zeros({cfg.max_narrative_tokens, cfg.max_tokens, 2 * levels});
      } else {
        const auto p_cross = encode_cross(narr, resp, blocks(Pairing::p_r), eps);
        const auto r_cross = encode_cross(resp, narr, blocks(Pairing::r_p), eps);
        m = match_pair(narrative_before[n_lines], resp.levels,
                       detail::scaled_rows(p_cross.levels, retention_before[n_lines]),
                       r_cross.levels, std::span<const std::size_t>(narr.positions),
                       std::span<const std::size_t>(resp.positions), cfg.max_narrative_tokens,
                       cfg.max_tokens, levels);
      }
      f_pr = apply_conv_bank(m, params.pr2d, cfg.conv2d, 2);
      features.push_back(f_pr);
    }

    const Tensor<T> f = concat_channels(features);
    if (f.size() != params.score_w.dim(0))
      throw DimensionError("score_pool: feature length " + std::to_string(f.size()) +
                           " does not match scorer input " +
                           std::to_string(params.score_w.dim(0)));
    const Tensor<T> logit = add(matmul(reshape(f, {1, f.size()}), params.score_w), params.score_b);
    bundle.g = reshape(sigmoid(logit), {1});
    bundle.f_cp = detail::values_of(f_cp);
    bundle.f_cr = detail::values_of(f_cr);
    bundle.f_pr = detail::values_of(f_pr);
    out.candidates.push_back(std::move(bundle));
  }
  return out;
}

// g(c, p, r) for a single candidate.
template <class T>
ScoreBundle<T> forward_score(const ModelInput& in, const ModelParams<T>& params) {
  if (in.candidates.size() != 1)
    throw std::invalid_argument("forward_score: expected exactly one candidate");
  auto pool = score_pool(in, params);
  ScoreBundle<T> b = std::move(pool.candidates.front());
  b.trace = std::move(pool.trace);
  return b;
}

// A pool with binary labels, one per candidate.
struct LabeledInput {
  ModelInput input;
  std::vector<double> labels;
};

// Mean binary cross-entropy over every (candidate, label) pair of the batch.
template <class T>
Tensor<T> batch_loss(const std::vector<LabeledInput>& batch, const ModelParams<T>& params) {
  std::vector<Tensor<T>> scores;
  std::vector<T> labels;
  for (const auto& item : batch) {
    if (item.labels.size() != item.input.candidates.size())
      throw std::invalid_argument("batch_loss: one label per candidate required");
    auto pool = score_pool(item.input, params);
    for (std::size_t c = 0; c < pool.candidates.size(); ++c) {
      scores.push_back(pool.candidates[c].g);
      labels.push_back(T(item.labels[c]));
    }
  }
  const auto n = labels.size();
  return ad::binary_cross_entropy(ad::concat_channels(scores),
                                  Tensor<T>::from({n}, std::move(labels)));
}

}  // namespace storyline::model
