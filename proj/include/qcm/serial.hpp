#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qcm/error.hpp"

namespace qcm {

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int k = 15; k >= 0; --k) {
    out[static_cast<std::size_t>(k)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

/// Little-endian binary writer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }

  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }

  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }

  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

  void tag(std::string_view s) {
    for (char c : s) buf_.push_back(static_cast<std::uint8_t>(c));
  }

  /// Appends the FNV-1a checksum of everything written so far.
  void seal() { u64(fnv1a64(buf_)); }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader; every short read throws CheckpointError.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  /// Verifies and strips a trailing checksum written by ByteWriter::seal.
  void verify_seal() {
    if (data_.size() < 8) throw CheckpointError("truncated stream: no checksum");
    const auto body = data_.first(data_.size() - 8);
    ByteReader tail(data_.last(8));
    if (tail.u64() != fnv1a64(body)) throw CheckpointError("checksum mismatch (corrupt stream)");
    data_ = body;
  }

  std::uint8_t u8() { return take(1)[0]; }

  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= std::uint32_t{b[static_cast<std::size_t>(k)]} << (8 * k);
    return v;
  }

  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= std::uint64_t{b[static_cast<std::size_t>(k)]} << (8 * k);
    return v;
  }

  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::span<const std::uint8_t> bytes(std::size_t n) { return take(n); }

  void expect_tag(std::string_view s) {
    auto b = take(s.size());
    if (std::memcmp(b.data(), s.data(), s.size()) != 0)
      throw CheckpointError("bad magic: not a " + std::string(s) + " stream");
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> take(std::size_t n) {
    if (remaining() < n) throw CheckpointError("truncated stream");
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace qcm
