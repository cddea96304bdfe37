#ifndef CDRAW_PPM_H_
#define CDRAW_PPM_H_

#include <cstdint>
#include <string>
#include <vector>

namespace cdraw {

struct PpmImage {
  int w = 0;
  int h = 0;
  std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

// Binary P6, maxval 255: "P6\n<w> <h>\n255\n" followed by raw pixel bytes.
std::string encode_ppm(const PpmImage& img);

// Strict parser for the P6 subset this project writes: maxval must be 255,
// comments allowed in the header, no bytes past the pixel data.
PpmImage parse_ppm(const std::string& bytes, const std::string& what);

void write_ppm_file(const std::string& path, const PpmImage& img);
PpmImage read_ppm_file(const std::string& path);

}  // namespace cdraw

#endif  // CDRAW_PPM_H_
