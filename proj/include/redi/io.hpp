// Copyright 2026 The redi-toy Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "redi/config.hpp"
#include "redi/denoiser.hpp"
#include "redi/errors.hpp"
#include "redi/optim.hpp"
#include "redi/semantic.hpp"
#include "redi/tensor.hpp"

namespace redi {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kDumpVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'R', 'E', 'D', 'I', 'C', 'K', 'P', 'T'};
inline constexpr char kDumpMagic[8] = {'R', 'E', 'D', 'I', 'S', 'M', 'P', 'L'};

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Little-endian byte sink.
class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(char((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(char((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { buf_.append(s); }
  void str(std::string_view s) {
    u64(s.size());
    raw(s);
  }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.values()) f64(v);
  }
  const std::string& bytes() const noexcept { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes, std::string what) : buf_(bytes), what_(std::move(what)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf_[pos_ + std::size_t(i)])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(buf_[pos_ + std::size_t(i)])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(raw(std::size_t(u64()))); }
  Tensor tensor() {
    const std::size_t rank = std::size_t(u64());
    if (rank > 8) throw IoError(what_ + ": corrupt tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = std::size_t(u64());
    const std::size_t n = shape_size(shape);
    if (n > (buf_.size() - pos_) / 8) throw IoError(what_ + ": truncated tensor data");
    std::vector<double> data(n);
    for (auto& v : data) v = f64();
    return Tensor(std::move(shape), std::move(data));
  }
  std::size_t position() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw IoError(what_ + ": unexpected end of file");
  }
  std::string_view buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a temporary sibling and renames it over `path`.
inline void atomic_write(const std::string& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  std::error_code ec;
  if (target.has_parent_path()) fs::create_directories(target.parent_path(), ec);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path + ": " + ec.message());
}

// ---- checkpoint ---------------------------------------------------------

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  RunConfig config;
  ParamStore params;
  PcaProjector projector;
  std::uint64_t step = 0;
  std::uint64_t content_hash = 0;  // set by encode/decode

  std::string hash_hex() const { return hex64(content_hash); }
};

inline void write_projector(ByteWriter& w, const PcaProjector& p) {
  w.u64(p.rank());
  w.tensor(p.mean);
  w.tensor(p.basis);
  w.tensor(p.scales);
}

inline PcaProjector read_projector(ByteReader& r) {
  const std::size_t rank = std::size_t(r.u64());
  PcaProjector p;
  p.mean = r.tensor();
  p.basis = r.tensor();
  p.scales = r.tensor();
  if (p.scales.size() != rank || p.basis.rank() != 2 || p.basis.dim(1) != rank || p.basis.dim(0) != p.mean.size())
    throw IoError("projector section has inconsistent shapes");
  return p;
}

// Layout: magic, version, reserved, config text, step, parameters (name,
// value, first moment, second moment), optimizer step, projector, then the
// FNV-1a hash of every preceding byte.
inline std::string encode_checkpoint(Checkpoint& ck) {
  ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 8));
  w.u32(ck.version);
  w.u32(0);
  w.str(serialize_config(ck.config));
  w.u64(ck.step);
  w.u64(ck.params.slots().size());
  for (const auto& [name, slot] : ck.params.slots()) {
    w.str(name);
    w.tensor(slot.value);
    w.tensor(slot.m);
    w.tensor(slot.v);
  }
  w.u64(ck.params.step());
  write_projector(w, ck.projector);
  ck.content_hash = fnv1a(w.bytes());
  w.u64(ck.content_hash);
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
  ByteReader r(bytes, what);
  if (r.raw(8) != std::string_view(kCheckpointMagic, 8)) throw IoError(what + ": not a checkpoint file");
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != kCheckpointVersion)
    throw VersionMismatch(what + ": checkpoint version " + std::to_string(ck.version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  (void)r.u32();
  ck.config = parse_config(r.str(), RunConfig{}, what + " (embedded config)");
  ck.step = r.u64();
  const std::size_t count = std::size_t(r.u64());
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Tensor value = r.tensor(), m = r.tensor(), v = r.tensor();
    if (m.shape() != value.shape() || v.shape() != value.shape())
      throw IoError(what + ": moment shape mismatch for " + name);
    ck.params.add(name, std::move(value));
    ck.params.slot(name).m = std::move(m);
    ck.params.slot(name).v = std::move(v);
  }
  ck.params.set_step(r.u64());
  ck.projector = read_projector(r);
  const std::size_t body = r.position();
  const std::uint64_t stored = r.u64();
  if (!r.done()) throw IoError(what + ": trailing bytes");
  if (fnv1a(bytes.substr(0, body)) != stored) throw IoError(what + ": content hash mismatch");
  ck.content_hash = stored;
  return ck;
}

inline void save_checkpoint(const std::string& path, Checkpoint& ck) { atomic_write(path, encode_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path), path); }

// Standalone projector file, same section layout as inside a checkpoint.
inline std::string encode_projector_file(const PcaProjector& p) {
  ByteWriter w;
  w.raw("REDIPCA1");
  write_projector(w, p);
  return w.bytes();
}

inline PcaProjector decode_projector_file(std::string_view bytes, const std::string& what = "projector") {
  ByteReader r(bytes, what);
  if (r.raw(8) != "REDIPCA1") throw IoError(what + ": not a projector file");
  PcaProjector p = read_projector(r);
  if (!r.done()) throw IoError(what + ": trailing bytes");
  return p;
}

// ---- sample dump --------------------------------------------------------

// 16-byte header (magic, version, reserved), then x and z as
// (rank, extents..., float64 data), all little-endian.
inline std::string encode_dump(const Tensor& x, const Tensor& z) {
  ByteWriter w;
  w.raw(std::string_view(kDumpMagic, 8));
  w.u32(kDumpVersion);
  w.u32(0);
  w.tensor(x);
  w.tensor(z);
  return w.bytes();
}

struct SampleDump {
  Tensor x;
  Tensor z;
};

inline SampleDump decode_dump(std::string_view bytes, const std::string& what = "dump") {
  ByteReader r(bytes, what);
  if (r.raw(8) != std::string_view(kDumpMagic, 8)) throw IoError(what + ": not a sample dump");
  const std::uint32_t version = r.u32();
  if (version != kDumpVersion)
    throw VersionMismatch(what + ": dump version " + std::to_string(version) + ", expected " + std::to_string(kDumpVersion));
  (void)r.u32();
  SampleDump d;
  d.x = r.tensor();
  d.z = r.tensor();
  if (!r.done()) throw IoError(what + ": trailing bytes");
  return d;
}

}  // namespace redi
