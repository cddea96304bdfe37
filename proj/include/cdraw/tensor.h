#ifndef CDRAW_TENSOR_H_
#define CDRAW_TENSOR_H_

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cdraw/error.h"
#include "cdraw/rng.h"

namespace cdraw {

// Dense NCHW tensor, row-major within each channel plane.
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
      throw ContractError("Tensor4: negative dimension in " + shape_str());
  }

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  size_t idx(int in, int ic, int iy, int ix) const {
    return ((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix;
  }
  T& at(int in, int ic, int iy, int ix) { return data[idx(in, ic, iy, ix)]; }
  const T& at(int in, int ic, int iy, int ix) const {
    return data[idx(in, ic, iy, ix)];
  }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  std::string shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }

  static Tensor4 zeros_like(const Tensor4& o) { return Tensor4(o.n, o.c, o.h, o.w); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  void fill_uniform(Rng& rng, T lo, T hi) {
    for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
  }
  void fill_normal(Rng& rng, T scale = T(1)) {
    for (auto& v : data) v = static_cast<T>(scale * rng.normal());
  }

  bool all_finite() const {
    for (const auto& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  // Converting copy (f32 <-> f64).
  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(n, c, h, w);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

// NaN/Inf rejection at API boundaries (dataset ingestion, checkpoint load).
template <typename T>
void require_finite(const Tensor4<T>& t, const std::string& what) {
  if (!t.all_finite())
    throw ContractError(what + ": non-finite values in tensor " + t.shape_str());
}

template <typename T>
void require_same_shape(const Tensor4<T>& a, const Tensor4<T>& b,
                        const std::string& what) {
  if (!a.same_shape(b))
    throw ContractError(what + ": shape mismatch " + a.shape_str() + " vs " +
                        b.shape_str());
}

}  // namespace cdraw

#endif  // CDRAW_TENSOR_H_
