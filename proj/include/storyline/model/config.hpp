#pragma once

#include <cstddef>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace storyline::model {

enum class Variant { full, static_narrative, no_pr, no_cp, no_cr };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::static_narrative: return "static";
    case Variant::no_pr: return "no_pr";
    case Variant::no_cp: return "no_cp";
    case Variant::no_cr: return "no_cr";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "static") return Variant::static_narrative;
  if (s == "no_pr") return Variant::no_pr;
  if (s == "no_cp") return Variant::no_cp;
  if (s == "no_cr") return Variant::no_cr;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

inline const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::full, Variant::static_narrative,
                                      Variant::no_pr, Variant::no_cp,
                                      Variant::no_cr};
  return v;
}

struct ConvBankConfig {
  std::vector<std::size_t> filters;
  std::vector<std::size_t> kernel;
  std::vector<std::size_t> pool;

  bool operator==(const ConvBankConfig&) const = default;
};

struct ModelConfig {
  std::size_t stacks = 3;          // L
  std::size_t embed_dim = 200;     // d_e
  std::size_t max_lines = 10;
  std::size_t max_tokens = 50;     // lines and responses
  std::size_t max_narrative_tokens = 50;
  std::size_t vocab_size = 2;
  std::size_t ffn_hidden = 0;      // 0 means embed_dim
  ConvBankConfig conv3d{{32, 16}, {3, 3, 3}, {3, 3, 3}};
  ConvBankConfig conv2d{{32, 16}, {3, 3}, {3, 3}};
  Variant variant = Variant::full;
  double ln_eps = 1e-6;

  std::size_t hidden() const { return ffn_hidden ? ffn_hidden : embed_dim; }
  std::size_t channels() const { return 2 * (stacks + 1); }

  bool uses_cp() const { return variant != Variant::no_cp; }
  bool uses_cr() const { return variant != Variant::no_cr; }
  bool uses_pr() const { return variant != Variant::no_pr; }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
    if (embed_dim < 1 || max_lines < 1 || max_tokens < 1 || max_narrative_tokens < 1)
      fail("all extents must be >= 1");
    if (vocab_size < 2) fail("vocabulary must hold at least PAD and UNK");
    auto check_bank = [&](const ConvBankConfig& b, std::size_t rank, const char* name) {
      if (b.filters.empty()) fail(std::string(name) + " needs at least one layer");
      if (b.kernel.size() != rank || b.pool.size() != rank)
        fail(std::string(name) + " kernel/pool rank must be " + std::to_string(rank));
      for (auto v : b.filters) if (v < 1) fail(std::string(name) + " filter count must be >= 1");
      for (auto v : b.kernel) if (v < 1) fail(std::string(name) + " kernel extent must be >= 1");
      for (auto v : b.pool) if (v < 1) fail(std::string(name) + " pool extent must be >= 1");
    };
    check_bank(conv3d, 3, "conv3d");
    check_bank(conv2d, 2, "conv2d");
  }

  bool operator==(const ModelConfig&) const = default;
};

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(item, &pos);
    if (pos != item.size()) throw std::invalid_argument("bad integer list '" + s + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline std::size_t parse_size(const std::string& s) {
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("bad integer '" + s + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

// Flat key/value form, used by checkpoints and run configs.
inline std::map<std::string, std::string> to_kv(const ModelConfig& c) {
  using detail::join_sizes;
  return {
      {"model.stacks", std::to_string(c.stacks)},
      {"model.embed_dim", std::to_string(c.embed_dim)},
      {"model.max_lines", std::to_string(c.max_lines)},
      {"model.max_tokens", std::to_string(c.max_tokens)},
      {"model.max_narrative_tokens", std::to_string(c.max_narrative_tokens)},
      {"model.vocab_size", std::to_string(c.vocab_size)},
      {"model.ffn_hidden", std::to_string(c.ffn_hidden)},
      {"model.conv3d_filters", join_sizes(c.conv3d.filters)},
      {"model.conv3d_kernel", join_sizes(c.conv3d.kernel)},
      {"model.conv3d_pool", join_sizes(c.conv3d.pool)},
      {"model.conv2d_filters", join_sizes(c.conv2d.filters)},
      {"model.conv2d_kernel", join_sizes(c.conv2d.kernel)},
      {"model.conv2d_pool", join_sizes(c.conv2d.pool)},
      {"model.variant", to_string(c.variant)},
  };
}

// Applies one key; returns false when the key is not a model key.
inline bool apply_kv(ModelConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_size;
  using detail::split_sizes;
  if (key == "model.stacks") c.stacks = parse_size(value);
  else if (key == "model.embed_dim") c.embed_dim = parse_size(value);
  else if (key == "model.max_lines") c.max_lines = parse_size(value);
  else if (key == "model.max_tokens") c.max_tokens = parse_size(value);
  else if (key == "model.max_narrative_tokens") c.max_narrative_tokens = parse_size(value);
  else if (key == "model.vocab_size") c.vocab_size = parse_size(value);
  else if (key == "model.ffn_hidden") c.ffn_hidden = parse_size(value);
  else if (key == "model.conv3d_filters") c.conv3d.filters = split_sizes(value);
  else if (key == "model.conv3d_kernel") c.conv3d.kernel = split_sizes(value);
  else if (key == "model.conv3d_pool") c.conv3d.pool = split_sizes(value);
  else if (key == "model.conv2d_filters") c.conv2d.filters = split_sizes(value);
  else if (key == "model.conv2d_kernel") c.conv2d.kernel = split_sizes(value);
  else if (key == "model.conv2d_pool") c.conv2d.pool = split_sizes(value);
  else if (key == "model.variant") c.variant = parse_variant(value);
  else return false;
  return true;
}

inline ModelConfig from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv) {
    if (!apply_kv(c, k, v)) throw std::invalid_argument("unknown model key '" + k + "'");
  }
  c.validate();
  return c;
}

// Feature length produced by a conv bank: "same" convolutions keep each
// extent, each pooling layer maps n to ceil(n / window).
inline std::size_t bank_output_size(const ConvBankConfig& bank,
                                    std::vector<std::size_t> extents) {
  for (std::size_t layer = 0; layer < bank.filters.size(); ++layer)
    for (std::size_t i = 0; i < extents.size(); ++i)
      extents[i] = (extents[i] + bank.pool[i] - 1) / bank.pool[i];
  std::size_t n = bank.filters.back();
  for (auto e : extents) n *= e;
  return n;
}

struct FeatureSizes {
  std::size_t cp = 0, cr = 0, pr = 0;
  std::size_t total() const { return cp + cr + pr; }
};

inline FeatureSizes feature_sizes(const ModelConfig& c) {
  FeatureSizes f;
  if (c.uses_cp())
    f.cp = bank_output_size(c.conv3d, {c.max_lines, c.max_tokens, c.max_narrative_tokens});
  if (c.uses_cr())
    f.cr = bank_output_size(c.conv3d, {c.max_lines, c.max_tokens, c.max_tokens});
  if (c.uses_pr())
    f.pr = bank_output_size(c.conv2d, {c.max_narrative_tokens, c.max_tokens});
  return f;
}

}  // namespace storyline::model
