#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "xview/error.hpp"
#include "xview/retrieval.hpp"
#include "xview/tape.hpp"
#include "xview/tensor.hpp"

namespace xview {

namespace detail {

// Little-endian byte writer / bounds-checked reader.
class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void raw(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void str(const std::string& s) {
    if (s.size() > 0xffffffffULL) throw DataError("string too long for container");
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  const std::string& bytes() const noexcept { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str(const char* what) { return raw(u32(), what); }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t position() const noexcept { return pos_; }
  const std::string& path() const noexcept { return path_; }

  void need(std::size_t n, const char* what) const {
    if (n > remaining()) {
      throw DataError("'" + path_ + "' is truncated reading " + what + ": expected " + std::to_string(pos_ + n) +
                      " bytes, file has " + std::to_string(data_.size()));
    }
  }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Embedding container: "XVEM", u32 N, u32 E, N length-prefixed ids, then
// N*E float32 values, all little-endian.

inline std::string encode_embeddings(const EmbeddingMatrix& m) {
  detail::ByteWriter w;
  w.raw("XVEM");
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.dim()));
  for (const auto& id : m.ids()) w.str(id);
  for (double v : m.values()) w.f32(v);
  return w.bytes();
}

inline EmbeddingMatrix decode_embeddings(std::string bytes, const std::string& path = "<memory>") {
  detail::ByteReader r(std::move(bytes), path);
  if (r.size() < 4 || r.raw(4, "magic") != "XVEM") throw DataError("'" + path + "' is not an XVEM embedding file (bad magic)");
  const std::uint64_t n = r.u32();
  const std::uint64_t e = r.u32();
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, r.remaining() / 4 + 1)));
  for (std::uint64_t i = 0; i < n; ++i) ids.push_back(r.str("row id"));
  // N*E*4 must fit in what is left; checked in 128-bit to rule out overflow.
  const unsigned __int128 payload = static_cast<unsigned __int128>(n) * e * 4;
  if (payload > r.remaining()) {
    if (payload > static_cast<unsigned __int128>(1) << 62) {
      throw DataError("'" + path + "': header declares " + std::to_string(n) + " x " + std::to_string(e) +
                      " values, more than the file can hold");
    }
    throw DataError("'" + path + "' is truncated: expected " + std::to_string(r.position() + static_cast<std::uint64_t>(payload)) +
                    " bytes, file has " + std::to_string(r.size()));
  }
  std::vector<double> values(static_cast<std::size_t>(n * e));
  for (double& v : values) v = r.f32();
  if (r.remaining() != 0) throw DataError("'" + path + "' has " + std::to_string(r.remaining()) + " trailing bytes");
  return EmbeddingMatrix(std::move(ids), static_cast<std::size_t>(e), std::move(values));
}

inline void save_embeddings(const std::string& path, const EmbeddingMatrix& m) { detail::spit(path, encode_embeddings(m)); }
inline EmbeddingMatrix load_embeddings(const std::string& path) { return decode_embeddings(detail::slurp(path), path); }

// ---------------------------------------------------------------------------
// Checkpoint container: "XVMC", u32 version, stage tag, u64 seed, u64 config
// digest, config text, u32 count, then per tensor (sorted by name): name,
// u32 rank, u32 dims..., float32 payload.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string stage;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
  std::string config_text;  // resolved stage configuration, key = value lines
  std::map<std::string, Tensor> tensors;

  // Copies every parameter of `store` under `prefix`.
  void add_store(const std::string& prefix, const ParamStore& store) {
    for (const auto& [name, p] : store) tensors[prefix + name] = p.value;
  }

  // Parameters whose names start with `prefix`, prefix stripped.
  ParamStore extract(const std::string& prefix) const {
    ParamStore out;
    for (const auto& [name, t] : tensors)
      if (name.rfind(prefix, 0) == 0) out.add(name.substr(prefix.size()), t);
    if (out.size() == 0) throw CheckpointError("checkpoint has no parameters under '" + prefix + "'");
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.size();
    return n;
  }
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw("XVMC");
  w.u32(kCheckpointVersion);
  w.str(ck.stage);
  w.u64(ck.seed);
  w.u64(ck.config_digest);
  w.str(ck.config_text);
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f32(v);
  }
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string bytes, const std::string& path = "<memory>") {
  detail::ByteReader r(std::move(bytes), path);
  if (r.size() < 4 || r.raw(4, "magic") != "XVMC") throw CheckpointError("'" + path + "' is not an XVMC checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("'" + path + "': unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.stage = r.str("stage tag");
  ck.seed = r.u64();
  ck.config_digest = r.u64();
  ck.config_text = r.str("config text");
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str("tensor name");
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw CheckpointError("'" + path + "': tensor '" + name + "' has invalid rank");
    Shape shape;
    unsigned __int128 numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(r.u32());
      numel *= shape.back();
    }
    if (numel * 4 > r.remaining()) {
      throw DataError("'" + path + "' is truncated in tensor '" + name + "': expected at least " +
                      std::to_string(r.position() + static_cast<std::uint64_t>(numel * 4)) + " bytes, file has " +
                      std::to_string(r.size()));
    }
    std::vector<double> values(static_cast<std::size_t>(numel));
    for (double& v : values) v = r.f32();
    try {
      ck.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
    } catch (const DimensionError& e) {
      throw CheckpointError("'" + path + "': " + e.what());
    }
  }
  if (r.remaining() != 0) throw CheckpointError("'" + path + "' has trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { detail::spit(path, encode_checkpoint(ck)); }
inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(detail::slurp(path), path); }

}  // namespace xview
