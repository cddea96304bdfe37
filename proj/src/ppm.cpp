#include "cdraw/ppm.h"

#include <cctype>

#include "cdraw/binio.h"
#include "cdraw/error.h"

namespace cdraw {
namespace {

// Skips whitespace and '#' comments; returns the next unsigned decimal token.
long header_int(const std::string& s, size_t& pos, const std::string& what) {
  for (;;) {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos])))
      ++pos;
    if (pos < s.size() && s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos])))
    throw IoError(what + ": malformed PPM header");
  long v = 0;
  while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
    v = v * 10 + (s[pos] - '0');
    if (v > 1 << 20) throw IoError(what + ": PPM header value out of range");
    ++pos;
  }
  return v;
}

}  // namespace

std::string encode_ppm(const PpmImage& img) {
  if (img.w <= 0 || img.h <= 0)
    throw ContractError("encode_ppm: empty image");
  const size_t want = static_cast<size_t>(img.w) * img.h * 3;
  if (img.rgb.size() != want)
    throw ContractError("encode_ppm: pixel buffer has " +
                        std::to_string(img.rgb.size()) + " bytes, expected " +
                        std::to_string(want));
  std::string out = "P6\n" + std::to_string(img.w) + " " +
                    std::to_string(img.h) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  return out;
}

PpmImage parse_ppm(const std::string& bytes, const std::string& what) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    throw IoError(what + ": not a P6 PPM");
  size_t pos = 2;
  const long w = header_int(bytes, pos, what);
  const long h = header_int(bytes, pos, what);
  const long maxval = header_int(bytes, pos, what);
  if (maxval != 255)
    throw IoError(what + ": unsupported maxval " + std::to_string(maxval));
  if (pos >= bytes.size() ||
      !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw IoError(what + ": malformed PPM header");
  ++pos;  // single whitespace byte separates header from pixels
  const size_t want = static_cast<size_t>(w) * h * 3;
  if (bytes.size() - pos < want)
    throw IoError(what + ": PPM pixel data truncated (" +
                  std::to_string(bytes.size() - pos) + " of " +
                  std::to_string(want) + " bytes)");
  if (bytes.size() - pos > want)
    throw IoError(what + ": trailing bytes after PPM pixel data");
  PpmImage img;
  img.w = static_cast<int>(w);
  img.h = static_cast<int>(h);
  img.rgb.assign(bytes.begin() + pos, bytes.end());
  return img;
}

void write_ppm_file(const std::string& path, const PpmImage& img) {
  write_file_bytes(path, encode_ppm(img));
}

PpmImage read_ppm_file(const std::string& path) {
  return parse_ppm(read_file_bytes(path), path);
}

}  // namespace cdraw
