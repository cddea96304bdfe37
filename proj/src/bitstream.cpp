#include "cdraw/bitstream.h"

#include <cstring>

#include "cdraw/binio.h"
#include "cdraw/error.h"

namespace cdraw {

std::string serialize_bitstream(const Bitstream& bs) {
  std::string out;
  out.append(BitstreamHeader::kMagic, 5);
  put_u8(out, BitstreamHeader::kVersion);
  put_u64(out, bs.header.model_hash);
  put_u16(out, bs.header.h);
  put_u16(out, bs.header.w);
  put_u8(out, bs.header.c);
  put_u8(out, bs.header.t_total);
  put_u8(out, bs.header.t_stored);
  put_f32(out, bs.header.lambda);
  put_u32(out, static_cast<uint32_t>(bs.payload.size()));
  out += bs.payload;
  return out;
}

Bitstream parse_bitstream(const std::string& bytes) {
  ByteReaderT<CorruptStream> r(bytes, "bitstream");
  const std::string magic = r.bytes(5);
  if (std::memcmp(magic.data(), BitstreamHeader::kMagic, 5) != 0) {
    throw CorruptStream("bitstream: bad magic");
  }
  const uint8_t version = r.u8();
  if (version != BitstreamHeader::kVersion) {
    throw CorruptStream("bitstream: unsupported version " +
                        std::to_string(version));
  }
  Bitstream bs;
  bs.header.model_hash = r.u64();
  bs.header.h = r.u16();
  bs.header.w = r.u16();
  bs.header.c = r.u8();
  bs.header.t_total = r.u8();
  bs.header.t_stored = r.u8();
  bs.header.lambda = r.f32();
  const uint32_t payload_len = r.u32();
  if (r.remaining() != payload_len) {
    throw CorruptStream("bitstream: header claims " +
                        std::to_string(payload_len) + " payload bytes, " +
                        std::to_string(r.remaining()) + " present");
  }
  bs.payload = r.bytes(payload_len);
  if (bs.header.t_stored > bs.header.t_total) {
    throw CorruptStream("bitstream: stored steps exceed total steps");
  }
  return bs;
}

}  // namespace cdraw
