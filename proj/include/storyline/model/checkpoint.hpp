#pragma once
// Named-tensor checkpoint container.
//
// Layout (all integers little-endian):
//   "SLCK"  u32 version
//   u32 n_meta, then n_meta x (str key, str value)
//   u32 n_tensors, then n_tensors x (str name, u32 rank, rank x u64 extent,
//                                    prod(extent) x f32 value)
// where str is u32 byte length followed by the bytes. Metadata carries the
// model config as "model.*" keys; other keys are passed through.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "storyline/model/config.hpp"
#include "storyline/model/params.hpp"

namespace storyline::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n)
      throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct CheckpointEntry {
  std::string name;
  ad::Shape shape;
  std::vector<float> values;
};

struct CheckpointFile {
  std::map<std::string, std::string> meta;
  std::vector<CheckpointEntry> tensors;
};

inline std::string encode_checkpoint(const CheckpointFile& file) {
  detail::ByteWriter w;
  w.raw("SLCK", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(file.meta.size()));
  for (const auto& [k, v] : file.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) w.u64(e);
    for (float f : t.values) w.f32(f);
  }
  return w.bytes();
}

inline CheckpointFile decode_checkpoint(std::string bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.raw(4) != "SLCK") throw CheckpointError("not a checkpoint file (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  CheckpointFile f;
  const auto n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.str();
    f.meta[k] = r.str();
  }
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    CheckpointEntry e;
    e.name = r.str();
    const auto rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(static_cast<std::size_t>(r.u64()));
    const std::size_t count = ad::shape_size(e.shape);
    e.values.reserve(count);
    for (std::size_t j = 0; j < count; ++j) e.values.push_back(r.f32());
    f.tensors.push_back(std::move(e));
  }
  if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint tensors");
  return f;
}

template <class T>
void save_checkpoint(const std::string& path, const ModelParams<T>& params,
                     const std::map<std::string, std::string>& extra_meta = {}) {
  CheckpointFile f;
  f.meta = extra_meta;
  for (const auto& [k, v] : to_kv(params.config)) f.meta[k] = v;
  params.for_each([&](const std::string& name, const Tensor<T>& t) {
    f.tensors.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  });
  const std::string bytes = encode_checkpoint(f);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing '" + path + "'");
}

template <class T>
struct LoadedCheckpoint {
  ModelParams<T> params;
  std::map<std::string, std::string> meta;  // non-model keys
};

// Reads a checkpoint; when `expected` is given the stored model config must
// equal it. Either the whole file is accepted or an error is thrown.
template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path,
                                    const ModelConfig* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  CheckpointFile f = decode_checkpoint(ss.str());

  std::map<std::string, std::string> model_kv, rest;
  for (const auto& [k, v] : f.meta) (k.rfind("model.", 0) == 0 ? model_kv : rest)[k] = v;
  ModelConfig cfg;
  try {
    cfg = from_kv(model_kv);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint model config invalid: ") + e.what());
  }
  if (expected) {
    ModelConfig want = *expected;
    want.ln_eps = cfg.ln_eps;
    if (!(want == cfg)) {
      std::string diff;
      const auto a = to_kv(cfg), b = to_kv(*expected);
      for (const auto& [k, v] : a)
        if (b.at(k) != v) diff += " " + k + "=" + v + " (expected " + b.at(k) + ")";
      throw CheckpointError("checkpoint config does not match:" + diff);
    }
  }

  ModelParams<T> params = init_params<T>(cfg, 0);
  std::size_t idx = 0;
  std::string error;
  params.for_each([&](const std::string& name, Tensor<T>& t) {
    if (!error.empty()) return;
    if (idx >= f.tensors.size()) {
      error = "checkpoint is missing tensor '" + name + "'";
      return;
    }
    const auto& e = f.tensors[idx++];
    if (e.name != name) {
      error = "checkpoint tensor '" + e.name + "' where '" + name + "' was expected";
    } else if (e.shape != t.shape()) {
      error = "checkpoint tensor '" + name + "' has shape " + ad::shape_str(e.shape) +
              ", expected " + ad::shape_str(t.shape());
    }
  });
  if (error.empty() && idx != f.tensors.size()) error = "checkpoint has unexpected extra tensors";
  if (!error.empty()) throw CheckpointError(error);

  idx = 0;
  params.for_each([&](const std::string&, Tensor<T>& t) {
    const auto& e = f.tensors[idx++];
    auto w = t.mutable_data();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = static_cast<T>(e.values[j]);
  });
  return {std::move(params), std::move(rest)};
}

}  // namespace storyline::model
