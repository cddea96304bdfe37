#ifndef CDRAW_DATASET_H_
#define CDRAW_DATASET_H_

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "cdraw/binio.h"
#include "cdraw/error.h"
#include "cdraw/rng.h"
#include "cdraw/tensor.h"

namespace cdraw {

// Images stay in their on-disk u8 form; batches convert on assembly so
// per-epoch transforms (binarization, dequantization) see the raw values.
struct Dataset {
  int count = 0, c = 0, h = 0, w = 0;
  std::vector<uint8_t> bytes;  // count * c * h * w, image-major

  size_t image_bytes() const {
    return static_cast<size_t>(c) * h * w;
  }
  const uint8_t* image(int i) const { return bytes.data() + i * image_bytes(); }
};

inline Dataset load_dataset_file(const std::string& path, int c, int h,
                                 int w) {
  if (c < 1 || h < 1 || w < 1)
    throw ContractError("load_dataset_file: non-positive dims");
  Dataset ds;
  ds.c = c;
  ds.h = h;
  ds.w = w;
  const std::string raw = read_file_bytes(path);
  ds.bytes.assign(raw.begin(), raw.end());
  const size_t per = ds.image_bytes();
  if (ds.bytes.size() % per != 0)
    throw IoError("dataset " + path + ": " + std::to_string(ds.bytes.size()) +
                  " bytes is not a whole number of " + std::to_string(per) +
                  "-byte images (" + std::to_string(ds.bytes.size() % per) +
                  " trailing bytes)");
  ds.count = static_cast<int>(ds.bytes.size() / per);
  if (ds.count == 0) throw IoError("dataset " + path + ": no images");
  return ds;
}

inline std::pair<Dataset, Dataset> split_head_tail(const Dataset& ds,
                                                   int head) {
  if (head < 0 || head > ds.count)
    throw ContractError("split_head_tail: head " + std::to_string(head) +
                        " outside [0," + std::to_string(ds.count) + "]");
  Dataset a, b;
  a.c = b.c = ds.c;
  a.h = b.h = ds.h;
  a.w = b.w = ds.w;
  a.count = head;
  b.count = ds.count - head;
  const size_t cut = head * ds.image_bytes();
  a.bytes.assign(ds.bytes.begin(), ds.bytes.begin() + cut);
  b.bytes.assign(ds.bytes.begin() + cut, ds.bytes.end());
  return {std::move(a), std::move(b)};
}

template <typename T>
Tensor4<T> dataset_images(const Dataset& ds, int first, int n) {
  if (first < 0 || n < 1 || first + n > ds.count)
    throw ContractError("dataset_images: range [" + std::to_string(first) +
                        "," + std::to_string(first + n) + ") outside 0.." +
                        std::to_string(ds.count));
  Tensor4<T> x(n, ds.c, ds.h, ds.w);
  const size_t per = ds.image_bytes();
  for (size_t i = 0; i < x.data.size(); ++i)
    x.data[i] = static_cast<T>(ds.bytes[first * per + i] / 255.0);
  return x;
}

// x + U(-s/2, s/2) iid per element; s = 0 leaves x untouched and draws
// nothing, so callers in discrete mode consume no rng state.
template <typename T>
void dequantize(Tensor4<T>& x, double s, Rng& rng) {
  if (s == 0) return;
  if (s < 0) throw ContractError("dequantize: negative step");
  for (auto& v : x.data) v += static_cast<T>((rng.uniform01() - 0.5) * s);
}

enum class Binarize { kNone, kDynamic, kThreshold };

struct BatchOptions {
  Binarize binarize = Binarize::kNone;
  double threshold = 0.5;  // kThreshold: 1 where x/255 >= threshold
  double dequant_s = 0.0;  // uniform noise width after scaling
};

// Shuffled minibatch stream. Each epoch reshuffles with Rng(seed + epoch)
// and the same stream then supplies that epoch's binarization and
// dequantization draws, so noise is fresh every epoch yet the whole
// sequence is a function of (dataset, batch, seed, options).
template <typename T>
class BatchStream {
 public:
  BatchStream(const Dataset& ds, int batch, uint64_t seed,
              BatchOptions opts = {})
      : ds_(ds), batch_(batch), seed_(seed), opts_(opts), rng_(seed) {
    if (batch < 1) throw ContractError("BatchStream: batch must be >= 1");
    if (ds.count < 1) throw ContractError("BatchStream: empty dataset");
    start_epoch(0);
  }

  int epoch() const { return epoch_; }
  int batches_per_epoch() const { return (ds_.count + batch_ - 1) / batch_; }

  Tensor4<T> next() {
    if (cursor_ >= ds_.count) start_epoch(epoch_ + 1);
    const int n = std::min(batch_, ds_.count - cursor_);
    Tensor4<T> x(n, ds_.c, ds_.h, ds_.w);
    const size_t per = ds_.image_bytes();
    for (int i = 0; i < n; ++i) {
      const uint8_t* src = ds_.image(order_[cursor_ + i]);
      T* dst = &x.data[x.idx(i, 0, 0, 0)];
      switch (opts_.binarize) {
        case Binarize::kNone:
          for (size_t j = 0; j < per; ++j)
            dst[j] = static_cast<T>(src[j] / 255.0);
          break;
        case Binarize::kThreshold:
          for (size_t j = 0; j < per; ++j)
            dst[j] = src[j] / 255.0 >= opts_.threshold ? T(1) : T(0);
          break;
        case Binarize::kDynamic:
          for (size_t j = 0; j < per; ++j)
            dst[j] = rng_.uniform01() < src[j] / 255.0 ? T(1) : T(0);
          break;
      }
    }
    dequantize(x, opts_.dequant_s, rng_);
    cursor_ += n;
    return x;
  }

 private:
  void start_epoch(int e) {
    epoch_ = e;
    cursor_ = 0;
    rng_ = Rng(seed_ + static_cast<uint64_t>(e));
    order_.resize(ds_.count);
    std::iota(order_.begin(), order_.end(), 0);
    // Fisher-Yates on our own engine: std::shuffle's draw pattern is
    // implementation-defined and would unpin batch order.
    for (int i = ds_.count - 1; i > 0; --i) {
      const int j = static_cast<int>(rng_.next_u64() % (i + 1));
      std::swap(order_[i], order_[j]);
    }
  }

  const Dataset& ds_;
  int batch_;
  uint64_t seed_;
  BatchOptions opts_;
  Rng rng_;
  std::vector<int> order_;
  int epoch_ = -1;
  int cursor_ = 0;
};

}  // namespace cdraw

#endif  // CDRAW_DATASET_H_
