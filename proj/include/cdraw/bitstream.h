#ifndef CDRAW_BITSTREAM_H_
#define CDRAW_BITSTREAM_H_

#include <cstdint>
#include <string>

namespace cdraw {

// Fixed 29-byte container header. Integers little-endian; the payload that
// follows is arithmetic-coded bytes, most-significant bit first, zero-padded
// to a whole byte.
struct BitstreamHeader {
  static constexpr char kMagic[6] = "CDRW1";
  static constexpr uint8_t kVersion = 1;

  uint64_t model_hash = 0;
  uint16_t h = 0;
  uint16_t w = 0;
  uint8_t c = 0;
  uint8_t t_total = 0;
  uint8_t t_stored = 0;
  float lambda = 0.0f;
};

struct Bitstream {
  BitstreamHeader header;
  std::string payload;
};

std::string serialize_bitstream(const Bitstream& bs);

// Throws CorruptStream on bad magic, unknown version, or a payload shorter
// or longer than the header's length field.
Bitstream parse_bitstream(const std::string& bytes);

}  // namespace cdraw

#endif  // CDRAW_BITSTREAM_H_
