#include "cdraw/binio.h"

#include <fstream>
#include <sstream>

namespace cdraw {

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (!in.good() && !in.eof()) throw IoError("read failed for " + path);
  return buf.str();
}

void write_file_bytes(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out.good()) throw IoError("write failed for " + path);
}

}  // namespace cdraw
