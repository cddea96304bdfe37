#ifndef CDRAW_CHECKPOINT_H_
#define CDRAW_CHECKPOINT_H_

#include <cstdint>
#include <optional>
#include <string>

#include "cdraw/binio.h"
#include "cdraw/config.h"
#include "cdraw/params.h"
#include "cdraw/tensor.h"

namespace cdraw {

// Checkpoint layout, all integers little-endian:
//   magic "CDRWPARM", version u16
//   flags u8: bit 0 = Adam moments + step included, bit 1 = config text
//   [config: length u32, canonical key-value text]
//   record count u32
//   records: name length u16, name utf-8, rank u8, dims u32 each, f32 values
// Values are stored as 32-bit floats regardless of the in-memory precision.
inline constexpr char kCheckpointMagic[] = "CDRWPARM";
inline constexpr uint16_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_tensor_record(std::string& out, const std::string& name,
                       const Tensor4<T>& t) {
  if (name.size() > 0xffff)
    throw ContractError("checkpoint: name too long: " + name);
  put_u16(out, static_cast<uint16_t>(name.size()));
  out += name;
  put_u8(out, 4);
  put_u32(out, static_cast<uint32_t>(t.n));
  put_u32(out, static_cast<uint32_t>(t.c));
  put_u32(out, static_cast<uint32_t>(t.h));
  put_u32(out, static_cast<uint32_t>(t.w));
  for (const T& v : t.data) put_f32(out, static_cast<float>(v));
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const ParamStore<T>& params,
                                 const ModelConfig* cfg, bool with_adam) {
  std::string out;
  out += kCheckpointMagic;
  put_u16(out, kCheckpointVersion);
  uint8_t flags = 0;
  if (with_adam) flags |= 1;
  if (cfg) flags |= 2;
  put_u8(out, flags);
  if (cfg) {
    std::string text = cfg->canonical_text();
    put_u32(out, static_cast<uint32_t>(text.size()));
    out += text;
  }
  uint32_t count = static_cast<uint32_t>(params.entries.size()) *
                   (with_adam ? 3u : 1u);
  if (with_adam) count += 1;  // adam.step
  put_u32(out, count);
  for (const auto& e : params.entries)
    detail::put_tensor_record(out, e.name, e.value);
  if (with_adam) {
    for (const auto& e : params.entries) {
      detail::put_tensor_record(out, "adam.m." + e.name, e.m);
      detail::put_tensor_record(out, "adam.v." + e.name, e.v);
    }
    Tensor4<T> step(1, 1, 1, 1);
    step.data[0] = static_cast<T>(params.step);
    detail::put_tensor_record(out, "adam.step", step);
  }
  return out;
}

template <typename T>
struct LoadedCheckpoint {
  ParamStore<T> params;
  std::optional<ModelConfig> config;
  std::string config_text;  // verbatim canonical text when present
  bool has_adam = false;
};

template <typename T>
LoadedCheckpoint<T> parse_checkpoint(const std::string& bytes,
                                     const std::string& what) {
  ByteReaderT<IoError> r(bytes, what);
  if (r.bytes(8) != kCheckpointMagic)
    throw IoError(what + ": not a checkpoint (bad magic)");
  uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    throw IoError(what + ": unsupported checkpoint version " +
                  std::to_string(version));
  uint8_t flags = r.u8();
  LoadedCheckpoint<T> out;
  out.has_adam = (flags & 1) != 0;
  if (flags & 2) {
    uint32_t len = r.u32();
    out.config_text = r.bytes(len);
    KeyValueConfig kv = KeyValueConfig::parse(out.config_text);
    out.config = ModelConfig::from_kv(kv);
  }
  uint32_t count = r.u32();

  // First pass: raw records.
  struct Raw {
    std::string name;
    Tensor4<T> t;
  };
  std::vector<Raw> raws;
  raws.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = r.u16();
    std::string name = r.bytes(name_len);
    uint8_t rank = r.u8();
    if (rank != 4)
      throw IoError(what + ": record " + name + " has rank " +
                    std::to_string(rank) + ", expected 4");
    uint32_t dims[4];
    for (auto& d : dims) d = r.u32();
    size_t elems = 1;
    for (auto d : dims) {
      if (d == 0) throw IoError(what + ": record " + name + " has a zero dim");
      elems *= d;
    }
    r.need(elems * 4);
    Tensor4<T> t(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                 static_cast<int>(dims[2]), static_cast<int>(dims[3]));
    for (size_t j = 0; j < elems; ++j) t.data[j] = static_cast<T>(r.f32());
    raws.push_back({std::move(name), std::move(t)});
  }
  if (r.remaining() != 0)
    throw IoError(what + ": " + std::to_string(r.remaining()) +
                  " trailing bytes after last record");

  // Second pass: fold adam.* records into the store.
  for (auto& raw : raws) {
    if (raw.name.rfind("adam.", 0) == 0) continue;
    Tensor4<T>& v = out.params.create(raw.name, raw.t.n, raw.t.c, raw.t.h,
                                      raw.t.w);
    v = std::move(raw.t);
  }
  if (out.has_adam) {
    for (auto& raw : raws) {
      if (raw.name == "adam.step") {
        out.params.step = static_cast<int64_t>(raw.t.data[0]);
        continue;
      }
      bool is_m = raw.name.rfind("adam.m.", 0) == 0;
      bool is_v = raw.name.rfind("adam.v.", 0) == 0;
      if (!is_m && !is_v) continue;
      std::string base = raw.name.substr(7);
      if (!out.params.has(base))
        throw IoError(what + ": moment record " + raw.name +
                      " has no matching parameter");
      auto& entry = out.params.entry(base);
      require_same_shape(entry.value, raw.t, what + ": " + raw.name);
      (is_m ? entry.m : entry.v) = std::move(raw.t);
    }
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params,
                     const ModelConfig* cfg, bool with_adam) {
  write_file_bytes(path, serialize_checkpoint(params, cfg, with_adam));
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  return parse_checkpoint<T>(read_file_bytes(path), path);
}

}  // namespace cdraw

#endif  // CDRAW_CHECKPOINT_H_
