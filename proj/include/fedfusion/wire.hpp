#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedfusion {

enum class CodecErrorKind { BadMagic, UnsupportedVersion, UnknownTag, Truncated, LengthOverflow, Malformed, TrailingBytes };
std::string_view codec_error_name(CodecErrorKind kind);

class CodecError : public std::runtime_error {
 public:
  CodecError(CodecErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(codec_error_name(kind)) + ": " + detail), kind_(kind) {}
  CodecErrorKind kind() const { return kind_; }

 private:
  CodecErrorKind kind_;
};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

// Little-endian appender.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t>& buffer() { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked little-endian reader; over-reads throw CodecError(Truncated).
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

  // Guards element counts before allocating: count items of at least min_size bytes each.
  void need_items(std::uint64_t count, std::size_t min_size) const {
    if (min_size && count > remaining() / min_size) {
      throw CodecError(CodecErrorKind::Truncated, "declared " + std::to_string(count) + " items but only " +
                                                      std::to_string(remaining()) + " bytes remain");
    }
  }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) {
      throw CodecError(CodecErrorKind::Truncated, "need " + std::to_string(n) + " bytes at offset " +
                                                      std::to_string(pos_) + ", have " + std::to_string(remaining()));
    }
  }

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v = static_cast<T>(v | (static_cast<T>(data_[pos_ + i]) << (8 * i)));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace fedfusion
