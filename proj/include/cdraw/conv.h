#ifndef CDRAW_CONV_H_
#define CDRAW_CONV_H_

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cdraw/tensor.h"

namespace cdraw {

// 2-D cross-correlation kernel (no flip). Weights are (out_c, in_c, kh, kw).
// conv2d maps in_c -> out_c channels; conv_transpose2d runs the adjoint map
// out_c -> in_c with the same weights.
template <typename T>
struct ConvKernel {
  Tensor4<T> w;
  std::vector<T> bias;  // per out_c; empty = no bias
  int stride = 1;
  int pad = 0;

  int out_c() const { return w.n; }
  int in_c() const { return w.c; }
  int kh() const { return w.h; }
  int kw() const { return w.w; }
};

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using MapRowMajor =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMapRowMajor = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// col(kidx, m): patch matrix for one image. kidx runs over (ic, ky, kx),
// m over output positions (oy, ox).
template <typename T>
void im2col(const Tensor4<T>& x, int in, int kh, int kw, int stride, int pad,
            int oh, int ow, MatX<T>& col) {
  const int kdim = x.c * kh * kw;
  col.resize(kdim, static_cast<Eigen::Index>(oh) * ow);
  for (int ic = 0; ic < x.c; ++ic) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (ic * kh + ky) * kw + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          const bool y_ok = iy >= 0 && iy < x.h;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            T v = T(0);
            if (y_ok && ix >= 0 && ix < x.w) v = x.at(in, ic, iy, ix);
            col(row, static_cast<Eigen::Index>(oy) * ow + ox) = v;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add patches back into the image plane.
template <typename T>
void col2im_add(const MatX<T>& col, Tensor4<T>& x, int in, int kh, int kw,
                int stride, int pad, int oh, int ow) {
  for (int ic = 0; ic < x.c; ++ic) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (ic * kh + ky) * kw + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.w) continue;
            x.at(in, ic, iy, ix) +=
                col(row, static_cast<Eigen::Index>(oy) * ow + ox);
          }
        }
      }
    }
  }
}

}  // namespace detail

// Strided cross-correlation plus optional per-out-channel bias.
// `bias`, when non-null, must point at w.n values.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& w, const T* bias,
                  int stride, int pad) {
  if (x.c != w.c)
    throw ContractError("conv2d: input channels " + x.shape_str() +
                        " vs kernel " + w.shape_str());
  const int oh = conv_out_dim(x.h, w.h, stride, pad);
  const int ow = conv_out_dim(x.w, w.w, stride, pad);
  if (oh < 1 || ow < 1)
    throw ContractError("conv2d: empty output for input " + x.shape_str() +
                        " kernel " + w.shape_str());

  Tensor4<T> y(x.n, w.n, oh, ow);
  const int kdim = w.c * w.h * w.w;
  detail::ConstMapRowMajor<T> wmat(w.data.data(), w.n, kdim);
  detail::MatX<T> col;
  for (int in = 0; in < x.n; ++in) {
    detail::im2col(x, in, w.h, w.w, stride, pad, oh, ow, col);
    detail::MapRowMajor<T> ymat(&y.data[y.idx(in, 0, 0, 0)], w.n,
                                static_cast<Eigen::Index>(oh) * ow);
    ymat.noalias() = wmat * col;
    if (bias)
      for (int oc = 0; oc < w.n; ++oc) ymat.row(oc).array() += bias[oc];
  }
  return y;
}

// Gradients of conv2d. Any of gx/gw/gbias may be null; non-null outputs must
// be pre-shaped and are accumulated into, in batch order.
template <typename T>
void conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& w,
                     const Tensor4<T>& gy, int stride, int pad, Tensor4<T>* gx,
                     Tensor4<T>* gw, T* gbias) {
  const int oh = gy.h, ow = gy.w;
  const int kdim = w.c * w.h * w.w;
  detail::ConstMapRowMajor<T> wmat(w.data.data(), w.n, kdim);
  detail::MatX<T> col, gcol;
  for (int in = 0; in < x.n; ++in) {
    detail::ConstMapRowMajor<T> gymat(&gy.data[gy.idx(in, 0, 0, 0)], w.n,
                                      static_cast<Eigen::Index>(oh) * ow);
    if (gw) {
      detail::im2col(x, in, w.h, w.w, stride, pad, oh, ow, col);
      detail::MapRowMajor<T> gwmat(gw->data.data(), w.n, kdim);
      gwmat.noalias() += gymat * col.transpose();
    }
    if (gbias) {
      // Scalar accumulation: Eigen's redux splits the loop at an
      // alignment-dependent boundary, which perturbs the rounding with the
      // heap layout and breaks bit-level run-to-run determinism.
      for (int oc = 0; oc < w.n; ++oc) {
        const T* p = &gy.data[gy.idx(in, oc, 0, 0)];
        T s = T(0);
        for (int i = 0; i < oh * ow; ++i) s += p[i];
        gbias[oc] += s;
      }
    }
    if (gx) {
      gcol.noalias() = wmat.transpose() * gymat;
      detail::col2im_add(gcol, *gx, in, w.h, w.w, stride, pad, oh, ow);
    }
  }
}

// Adjoint of conv2d: maps out_c-channel maps back to in_c-channel maps.
// The output size is ambiguous under striding (several input sizes floor to
// the same conv output), so callers may pass the intended spatial dims; the
// default is the minimal size (h-1)*stride - 2*pad + kh. `bias`, when
// non-null, is a per in_c-channel offset applied after the adjoint map.
template <typename T>
Tensor4<T> conv_transpose2d(const Tensor4<T>& x, const Tensor4<T>& w,
                            const T* bias, int stride, int pad, int out_h = -1,
                            int out_w = -1) {
  if (x.c != w.n)
    throw ContractError("conv_transpose2d: input channels " + x.shape_str() +
                        " vs kernel " + w.shape_str());
  const int min_h = (x.h - 1) * stride - 2 * pad + w.h;
  const int min_w = (x.w - 1) * stride - 2 * pad + w.w;
  if (out_h < 0) out_h = min_h;
  if (out_w < 0) out_w = min_w;
  if (out_h < 1 || out_w < 1)
    throw ContractError("conv_transpose2d: empty output for input " +
                        x.shape_str());
  // The declared output must conv back to the input's spatial dims.
  if (conv_out_dim(out_h, w.h, stride, pad) != x.h ||
      conv_out_dim(out_w, w.w, stride, pad) != x.w)
    throw ContractError("conv_transpose2d: output dims " +
                        std::to_string(out_h) + "x" + std::to_string(out_w) +
                        " inconsistent with input " + x.shape_str());

  Tensor4<T> y(x.n, w.c, out_h, out_w);
  const int kdim = w.c * w.h * w.w;
  detail::ConstMapRowMajor<T> wmat(w.data.data(), w.n, kdim);
  detail::MatX<T> col;
  for (int in = 0; in < x.n; ++in) {
    detail::ConstMapRowMajor<T> xmat(&x.data[x.idx(in, 0, 0, 0)], w.n,
                                     static_cast<Eigen::Index>(x.h) * x.w);
    col.noalias() = wmat.transpose() * xmat;
    detail::col2im_add(col, y, in, w.h, w.w, stride, pad, x.h, x.w);
  }
  if (bias) {
    for (int in = 0; in < y.n; ++in)
      for (int ic = 0; ic < y.c; ++ic) {
        T* p = &y.data[y.idx(in, ic, 0, 0)];
        const T b = bias[ic];
        for (int i = 0; i < out_h * out_w; ++i) p[i] += b;
      }
  }
  return y;
}

template <typename T>
void conv_transpose2d_backward(const Tensor4<T>& x, const Tensor4<T>& w,
                               const Tensor4<T>& gy, int stride, int pad,
                               Tensor4<T>* gx, Tensor4<T>* gw, T* gbias) {
  const int kdim = w.c * w.h * w.w;
  detail::MatX<T> col;
  for (int in = 0; in < x.n; ++in) {
    // d/dx of col2im(W^T x) is the forward conv of gy with the same kernel.
    detail::im2col(gy, in, w.h, w.w, stride, pad, x.h, x.w, col);
    if (gx) {
      detail::ConstMapRowMajor<T> wmat(w.data.data(), w.n, kdim);
      detail::MapRowMajor<T> gxmat(&gx->data[gx->idx(in, 0, 0, 0)], w.n,
                                   static_cast<Eigen::Index>(x.h) * x.w);
      gxmat.noalias() += wmat * col;
    }
    if (gw) {
      detail::ConstMapRowMajor<T> xmat(&x.data[x.idx(in, 0, 0, 0)], w.n,
                                       static_cast<Eigen::Index>(x.h) * x.w);
      detail::MapRowMajor<T> gwmat(gw->data.data(), w.n, kdim);
      gwmat.noalias() += xmat * col.transpose();
    }
  }
  if (gbias) {
    for (int in = 0; in < gy.n; ++in)
      for (int ic = 0; ic < gy.c; ++ic) {
        const T* p = &gy.data[gy.idx(in, ic, 0, 0)];
        T s = T(0);
        for (int i = 0; i < gy.h * gy.w; ++i) s += p[i];
        gbias[ic] += s;
      }
  }
}

// ConvKernel conveniences.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const ConvKernel<T>& k) {
  if (!k.bias.empty() && static_cast<int>(k.bias.size()) != k.out_c())
    throw ContractError("conv2d: bias size mismatch");
  return conv2d(x, k.w, k.bias.empty() ? nullptr : k.bias.data(), k.stride,
                k.pad);
}

template <typename T>
Tensor4<T> conv_transpose2d(const Tensor4<T>& x, const ConvKernel<T>& k,
                            int out_h = -1, int out_w = -1) {
  return conv_transpose2d<T>(x, k.w, nullptr, k.stride, k.pad, out_h, out_w);
}

}  // namespace cdraw

#endif  // CDRAW_CONV_H_
