#ifndef CDRAW_BINIO_H_
#define CDRAW_BINIO_H_

#include <bit>
#include <cstdint>
#include <string>

#include "cdraw/error.h"

namespace cdraw {

// Little-endian integer serialization into a byte string.
inline void put_u8(std::string& out, uint8_t v) {
  out.push_back(static_cast<char>(v));
}
inline void put_u16(std::string& out, uint16_t v) {
  put_u8(out, static_cast<uint8_t>(v & 0xff));
  put_u8(out, static_cast<uint8_t>(v >> 8));
}
inline void put_u32(std::string& out, uint32_t v) {
  put_u16(out, static_cast<uint16_t>(v & 0xffff));
  put_u16(out, static_cast<uint16_t>(v >> 16));
}
inline void put_u64(std::string& out, uint64_t v) {
  put_u32(out, static_cast<uint32_t>(v & 0xffffffffu));
  put_u32(out, static_cast<uint32_t>(v >> 32));
}
inline void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<uint32_t>(v));
}

// Bounds-checked reader over a byte string; E is the exception thrown on
// underrun (IoError for files, CorruptStream for bitstreams).
template <typename E>
class ByteReaderT {
 public:
  ByteReaderT(const std::string& data, std::string what)
      : data_(data), what_(std::move(what)) {}

  size_t offset() const { return off_; }
  size_t remaining() const { return data_.size() - off_; }

  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(data_[off_++]);
  }
  uint16_t u16() {
    uint16_t lo = u8();
    return static_cast<uint16_t>(lo | (static_cast<uint16_t>(u8()) << 8));
  }
  uint32_t u32() {
    uint32_t lo = u16();
    return lo | (static_cast<uint32_t>(u16()) << 16);
  }
  uint64_t u64() {
    uint64_t lo = u32();
    return lo | (static_cast<uint64_t>(u32()) << 32);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(size_t n) {
    need(n);
    std::string out = data_.substr(off_, n);
    off_ += n;
    return out;
  }
  void need(size_t n) const {
    if (data_.size() - off_ < n)
      throw E(what_ + ": need " + std::to_string(n) + " bytes at offset " +
              std::to_string(off_) + ", have " +
              std::to_string(data_.size() - off_));
  }

 private:
  const std::string& data_;
  std::string what_;
  size_t off_ = 0;
};

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::string& data);

}  // namespace cdraw

#endif  // CDRAW_BINIO_H_
