#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fuselab/tensor.hpp"

namespace fuselab {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'F', 'U', 'S', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

/// On-disk state: model tensors, optimizer tensors, RNG words (as exact
/// doubles) and the config echo text.
struct Checkpoint {
  std::vector<NamedTensor> tensors;
  std::vector<NamedTensor> optimizer;
  std::vector<NamedTensor> rng;
  std::string config_text;

  const NamedTensor* find(const std::vector<NamedTensor>& block, const std::string& name) const {
    for (const auto& t : block)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint16_t u16() {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

inline void write_block(ByteWriter& w, const std::vector<NamedTensor>& block, const char* what) {
  std::set<std::string> names;
  w.u32(static_cast<std::uint32_t>(block.size()));
  for (const auto& t : block) {
    if (!names.insert(t.name).second) throw CheckpointError(std::string(what) + " entry name collision: " + t.name);
    if (t.name.size() > 0xFFFF) throw CheckpointError("entry name too long: " + t.name.substr(0, 32));
    if (t.shape.size() > 0xFF) throw CheckpointError("entry rank too large: " + t.name);
    if (numel(t.shape) != t.data.size()) throw CheckpointError("entry data does not match its shape: " + t.name);
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(t.name);
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data) w.f64(v);
  }
}

inline std::vector<NamedTensor> read_block(ByteReader& r, const char* what) {
  std::vector<NamedTensor> block(r.u32());
  std::set<std::string> names;
  for (auto& t : block) {
    t.name = r.raw(r.u16());
    if (!names.insert(t.name).second) throw CheckpointError(std::string(what) + " entry name collision: " + t.name);
    t.shape.resize(r.u8());
    for (auto& d : t.shape) d = r.u32();
    t.data.resize(numel(t.shape));
    for (auto& v : t.data) v = r.f64();
  }
  return block;
}

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw(std::string(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  detail::write_block(w, ck.tensors, "tensor");
  detail::write_block(w, ck.optimizer, "optimizer");
  detail::write_block(w, ck.rng, "rng");
  w.u32(static_cast<std::uint32_t>(ck.config_text.size()));
  w.raw(ck.config_text);
  return w.bytes();
}

inline Checkpoint deserialize_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.raw(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError("bad magic: not a fuselab checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.tensors = detail::read_block(r, "tensor");
  ck.optimizer = detail::read_block(r, "optimizer");
  ck.rng = detail::read_block(r, "rng");
  ck.config_text = r.raw(r.u32());
  if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write checkpoint " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError("failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot read checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(std::move(bytes));
}

/// u64 words as exact doubles: each word becomes (high 32 bits, low 32 bits).
inline std::vector<double> words_to_doubles(const std::vector<std::uint64_t>& words) {
  std::vector<double> out;
  for (auto w : words) {
    out.push_back(static_cast<double>(w >> 32));
    out.push_back(static_cast<double>(w & 0xFFFFFFFFull));
  }
  return out;
}

inline std::vector<std::uint64_t> doubles_to_words(const std::vector<double>& values) {
  if (values.size() % 2) throw CheckpointError("rng entry has an odd number of halves");
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < values.size(); i += 2)
    out.push_back((static_cast<std::uint64_t>(values[i]) << 32) | static_cast<std::uint64_t>(values[i + 1]));
  return out;
}

}  // namespace fuselab
