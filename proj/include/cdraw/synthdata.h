#ifndef CDRAW_SYNTHDATA_H_
#define CDRAW_SYNTHDATA_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "cdraw/dataset.h"
#include "cdraw/rng.h"

namespace cdraw {

namespace detail {

struct Pt {
  double x, y;
};

inline double seg_dist(Pt p, Pt a, Pt b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double wx = p.x - a.x, wy = p.y - a.y;
  const double vv = vx * vx + vy * vy;
  const double t = vv > 0 ? std::clamp((wx * vx + wy * vy) / vv, 0.0, 1.0) : 0.0;
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

// Binary stroke characters in unit coordinates: a small alphabet of random
// polyline prototypes, each rendering jittered by an affine map. Pixels are
// 0 or 255, so /255 scaling reproduces exact {0,1} values and dynamic
// binarization is the identity.
inline Dataset make_glyph_dataset(int count, int size, int alphabet,
                                  uint64_t seed) {
  if (count < 1 || size < 4 || alphabet < 1)
    throw ContractError("make_glyph_dataset: bad arguments");
  Rng rng(seed);

  using detail::Pt;
  std::vector<std::vector<std::pair<Pt, Pt>>> protos(alphabet);
  for (auto& segs : protos) {
    const int strokes = 1 + static_cast<int>(rng.next_u64() % 3);
    for (int s = 0; s < strokes; ++s) {
      Pt p{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
      double heading = rng.uniform(0, 2 * M_PI);
      const int n = 2 + static_cast<int>(rng.next_u64() % 3);
      for (int i = 0; i < n; ++i) {
        heading += rng.uniform(-1.2, 1.2);
        const double len = rng.uniform(0.18, 0.38);
        Pt q{std::clamp(p.x + len * std::cos(heading), 0.08, 0.92),
             std::clamp(p.y + len * std::sin(heading), 0.08, 0.92)};
        segs.push_back({p, q});
        p = q;
      }
    }
  }

  Dataset ds;
  ds.count = count;
  ds.c = 1;
  ds.h = size;
  ds.w = size;
  ds.bytes.resize(static_cast<size_t>(count) * size * size);
  std::vector<std::pair<Pt, Pt>> placed;
  for (int i = 0; i < count; ++i) {
    const auto& proto = protos[rng.next_u64() % alphabet];
    const double th = rng.uniform(-0.3, 0.3);
    const double sc = rng.uniform(0.8, 1.1);
    const double tx = rng.uniform(-0.1, 0.1), ty = rng.uniform(-0.1, 0.1);
    const double radius = rng.uniform(0.035, 0.055);
    const double ca = sc * std::cos(th), sa = sc * std::sin(th);
    auto map = [&](Pt p) {
      const double x = p.x - 0.5, y = p.y - 0.5;
      return Pt{0.5 + tx + ca * x - sa * y, 0.5 + ty + sa * x + ca * y};
    };
    placed.clear();
    for (const auto& [a, b] : proto) placed.push_back({map(a), map(b)});

    uint8_t* img = &ds.bytes[static_cast<size_t>(i) * size * size];
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const Pt p{(x + 0.5) / size, (y + 0.5) / size};
        double d = 1e9;
        for (const auto& [a, b] : placed)
          d = std::min(d, detail::seg_dist(p, a, b));
        img[y * size + x] = d <= radius ? 255 : 0;
      }
  }
  return ds;
}

// Smooth grayscale-or-color images: a linear shade plus a few Gaussian
// bumps, quantized to u8. Structured enough for a small model to beat a
// factorized baseline, smooth enough for the Gaussian likelihood.
inline Dataset make_blob_dataset(int count, int channels, int size,
                                 uint64_t seed) {
  if (count < 1 || channels < 1 || size < 4)
    throw ContractError("make_blob_dataset: bad arguments");
  Rng rng(seed);
  Dataset ds;
  ds.count = count;
  ds.c = channels;
  ds.h = size;
  ds.w = size;
  ds.bytes.resize(static_cast<size_t>(count) * channels * size * size);

  struct Bump {
    double cx, cy, s2, amp;
    std::vector<double> chw;
  };
  std::vector<Bump> bumps;
  for (int i = 0; i < count; ++i) {
    const double b0 = rng.uniform(0.15, 0.5);
    const double gx = rng.uniform(-0.3, 0.3), gy = rng.uniform(-0.3, 0.3);
    bumps.clear();
    const int k = 2 + static_cast<int>(rng.next_u64() % 3);
    for (int j = 0; j < k; ++j) {
      Bump b;
      b.cx = rng.uniform(0.2, 0.8);
      b.cy = rng.uniform(0.2, 0.8);
      const double sigma = rng.uniform(0.08, 0.22);
      b.s2 = 2 * sigma * sigma;
      b.amp = rng.uniform(0.25, 0.7);
      for (int ch = 0; ch < channels; ++ch)
        b.chw.push_back(channels == 1 ? 1.0 : rng.uniform(0.4, 1.0));
      bumps.push_back(std::move(b));
    }
    uint8_t* img = &ds.bytes[static_cast<size_t>(i) * channels * size * size];
    for (int ch = 0; ch < channels; ++ch)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double px = (x + 0.5) / size, py = (y + 0.5) / size;
          double v = b0 + gx * (px - 0.5) + gy * (py - 0.5);
          for (const auto& b : bumps) {
            const double dx = px - b.cx, dy = py - b.cy;
            v += b.amp * b.chw[ch] * std::exp(-(dx * dx + dy * dy) / b.s2);
          }
          img[(ch * size + y) * size + x] =
              static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255));
        }
  }
  return ds;
}

}  // namespace cdraw

#endif  // CDRAW_SYNTHDATA_H_
