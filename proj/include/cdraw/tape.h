#ifndef CDRAW_TAPE_H_
#define CDRAW_TAPE_H_

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "cdraw/conv.h"
#include "cdraw/likelihood.h"
#include "cdraw/tensor.h"

namespace cdraw {

// Reverse-mode accumulation over a recorded operation tape. Values are held
// by the tape for the lifetime of one rollout; gradients are allocated lazily
// during backward(), so untouched subgraphs cost nothing.
//
// Elementwise ops require exact shape matches; the only implicit shape
// changes are the explicit broadcast/slice/concat/sum ops.
template <typename T>
class Tape {
 public:
  using Var = int;

  Var leaf(Tensor4<T> value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }

  const Tensor4<T>& val(Var v) const { return nodes_[v].value; }
  bool requires_grad(Var v) const { return nodes_[v].requires_grad; }

  // Valid after backward(); zero tensor if the node was never reached.
  const Tensor4<T>& grad(Var v) {
    Node& nd = nodes_[v];
    if (nd.grad.empty()) nd.grad = Tensor4<T>::zeros_like(nd.value);
    return nd.grad;
  }

  size_t num_nodes() const { return nodes_.size(); }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Tensor4<T> out = nodes_[a].value;
    const Tensor4<T>& bv = nodes_[b].value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    return push(std::move(out), rg(a) || rg(b), [this, a, b](Var o) {
      if (rg(a)) accum_same(a, nodes_[o].grad);
      if (rg(b)) accum_same(b, nodes_[o].grad);
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Tensor4<T> out = nodes_[a].value;
    const Tensor4<T>& bv = nodes_[b].value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
    return push(std::move(out), rg(a) || rg(b), [this, a, b](Var o) {
      if (rg(a)) accum_same(a, nodes_[o].grad);
      if (rg(b)) accum_scaled(b, nodes_[o].grad, T(-1));
    });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Tensor4<T> out = nodes_[a].value;
    const Tensor4<T>& bv = nodes_[b].value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
    return push(std::move(out), rg(a) || rg(b), [this, a, b](Var o) {
      const Tensor4<T>& g = nodes_[o].grad;
      if (rg(a)) {
        Tensor4<T>& ga = grad_buf(a);
        const Tensor4<T>& bv = nodes_[b].value;
        for (size_t i = 0; i < g.data.size(); ++i)
          ga.data[i] += g.data[i] * bv.data[i];
      }
      if (rg(b)) {
        Tensor4<T>& gb = grad_buf(b);
        const Tensor4<T>& av = nodes_[a].value;
        for (size_t i = 0; i < g.data.size(); ++i)
          gb.data[i] += g.data[i] * av.data[i];
      }
    });
  }

  Var square(Var a) {
    Tensor4<T> out = nodes_[a].value;
    for (auto& v : out.data) v *= v;
    return push(std::move(out), rg(a), [this, a](Var o) {
      if (!rg(a)) return;
      Tensor4<T>& ga = grad_buf(a);
      const Tensor4<T>& g = nodes_[o].grad;
      const Tensor4<T>& av = nodes_[a].value;
      for (size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += T(2) * av.data[i] * g.data[i];
    });
  }

  Var scale(Var a, T s) {
    Tensor4<T> out = nodes_[a].value;
    for (auto& v : out.data) v *= s;
    return push(std::move(out), rg(a), [this, a, s](Var o) {
      if (rg(a)) accum_scaled(a, nodes_[o].grad, s);
    });
  }

  Var add_const(Var a, T c) {
    Tensor4<T> out = nodes_[a].value;
    for (auto& v : out.data) v += c;
    return push(std::move(out), rg(a), [this, a](Var o) {
      if (rg(a)) accum_same(a, nodes_[o].grad);
    });
  }

  Var sigmoid(Var a) {
    Tensor4<T> out = nodes_[a].value;
    for (auto& v : out.data) v = sigmoid_scalar(v);
    return push(std::move(out), rg(a), [this, a](Var o) {
      if (!rg(a)) return;
      Tensor4<T>& ga = grad_buf(a);
      const Tensor4<T>& g = nodes_[o].grad;
      const Tensor4<T>& s = nodes_[o].value;
      for (size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += g.data[i] * s.data[i] * (T(1) - s.data[i]);
    });
  }

  Var tanh_(Var a) {
    Tensor4<T> out = nodes_[a].value;
    for (auto& v : out.data) v = std::tanh(v);
    return push(std::move(out), rg(a), [this, a](Var o) {
      if (!rg(a)) return;
      Tensor4<T>& ga = grad_buf(a);
      const Tensor4<T>& g = nodes_[o].grad;
      const Tensor4<T>& t = nodes_[o].value;
      for (size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += g.data[i] * (T(1) - t.data[i] * t.data[i]);
    });
  }

  Var exp_(Var a) {
    Tensor4<T> out = nodes_[a].value;
    for (auto& v : out.data) v = std::exp(v);
    return push(std::move(out), rg(a), [this, a](Var o) {
      if (!rg(a)) return;
      Tensor4<T>& ga = grad_buf(a);
      const Tensor4<T>& g = nodes_[o].grad;
      const Tensor4<T>& e = nodes_[o].value;
      for (size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += g.data[i] * e.data[i];
    });
  }

  // log(1 + e^x), overflow-safe; derivative is sigmoid(x).
  Var softplus(Var a) {
    Tensor4<T> out = nodes_[a].value;
    for (auto& v : out.data)
      v = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
    return push(std::move(out), rg(a), [this, a](Var o) {
      if (!rg(a)) return;
      Tensor4<T>& ga = grad_buf(a);
      const Tensor4<T>& g = nodes_[o].grad;
      const Tensor4<T>& av = nodes_[a].value;
      for (size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += g.data[i] * sigmoid_scalar(av.data[i]);
    });
  }

  // Gradient passes through the interior, zero where the input was cut.
  Var clamp(Var a, T lo, T hi) {
    Tensor4<T> out = nodes_[a].value;
    for (auto& v : out.data) v = std::min(std::max(v, lo), hi);
    return push(std::move(out), rg(a), [this, a, lo, hi](Var o) {
      if (!rg(a)) return;
      Tensor4<T>& ga = grad_buf(a);
      const Tensor4<T>& g = nodes_[o].grad;
      const Tensor4<T>& av = nodes_[a].value;
      for (size_t i = 0; i < g.data.size(); ++i)
        if (av.data[i] >= lo && av.data[i] <= hi) ga.data[i] += g.data[i];
    });
  }

  // Elementwise -log of the Gaussian mass on the pixel bin [x-s/2, x+s/2],
  // with mu and log-variance as tape inputs and x as fixed data. Backward:
  //   d/dmu  = (phi(b) - phi(a)) / (sigma M)
  //   d/dlv  = (b phi(b) - a phi(a)) / (2 M)
  // for a,b the standardized bin edges and M the bin mass.
  Var gauss_bin_nll(Var mu, Var logvar, const Tensor4<T>& x, T s) {
    check_same(mu, logvar, "gauss_bin_nll");
    require_same_shape(nodes_[mu].value, x, "gauss_bin_nll x");
    const Tensor4<T>& mv = nodes_[mu].value;
    const Tensor4<T>& lv = nodes_[logvar].value;
    Tensor4<T> out = Tensor4<T>::zeros_like(mv);
    for (size_t i = 0; i < out.data.size(); ++i) {
      const double sigma = std::exp(0.5 * static_cast<double>(lv.data[i]));
      out.data[i] = static_cast<T>(-std::log(gauss_bin_mass(
          static_cast<double>(x.data[i]), static_cast<double>(mv.data[i]),
          sigma, static_cast<double>(s))));
    }
    return push(std::move(out), rg(mu) || rg(logvar),
                [this, mu, logvar, x, s](Var o) {
                  const Tensor4<T>& g = nodes_[o].grad;
                  const Tensor4<T>& mv = nodes_[mu].value;
                  const Tensor4<T>& lv = nodes_[logvar].value;
                  Tensor4<T>* gm = rg(mu) ? &grad_buf(mu) : nullptr;
                  Tensor4<T>* gl = rg(logvar) ? &grad_buf(logvar) : nullptr;
                  const double inv_sqrt2pi = 0.3989422804014326779;
                  for (size_t i = 0; i < g.data.size(); ++i) {
                    const double sigma =
                        std::exp(0.5 * static_cast<double>(lv.data[i]));
                    const double xm = static_cast<double>(x.data[i]) -
                                      static_cast<double>(mv.data[i]);
                    const double a = (xm - 0.5 * s) / sigma;
                    const double b = (xm + 0.5 * s) / sigma;
                    const double m = gauss_bin_mass(
                        static_cast<double>(x.data[i]),
                        static_cast<double>(mv.data[i]), sigma,
                        static_cast<double>(s));
                    const double pa =
                        inv_sqrt2pi * std::exp(-0.5 * a * a);
                    const double pb =
                        inv_sqrt2pi * std::exp(-0.5 * b * b);
                    if (gm)
                      gm->data[i] += static_cast<T>(
                          static_cast<double>(g.data[i]) * (pb - pa) /
                          (sigma * m));
                    if (gl)
                      gl->data[i] += static_cast<T>(
                          static_cast<double>(g.data[i]) * (b * pb - a * pa) /
                          (2.0 * m));
                  }
                });
  }

  // ---- shape ops ----

  Var concat_c(Var a, Var b) {
    const Tensor4<T>& av = nodes_[a].value;
    const Tensor4<T>& bv = nodes_[b].value;
    if (av.n != bv.n || av.h != bv.h || av.w != bv.w)
      throw ContractError("concat_c: " + av.shape_str() + " vs " +
                          bv.shape_str());
    Tensor4<T> out(av.n, av.c + bv.c, av.h, av.w);
    const size_t plane = static_cast<size_t>(av.h) * av.w;
    for (int in = 0; in < av.n; ++in) {
      std::copy_n(&av.data[av.idx(in, 0, 0, 0)], av.c * plane,
                  &out.data[out.idx(in, 0, 0, 0)]);
      std::copy_n(&bv.data[bv.idx(in, 0, 0, 0)], bv.c * plane,
                  &out.data[out.idx(in, av.c, 0, 0)]);
    }
    const int ac = av.c;
    return push(std::move(out), rg(a) || rg(b), [this, a, b, ac](Var o) {
      const Tensor4<T>& g = nodes_[o].grad;
      const size_t plane = static_cast<size_t>(g.h) * g.w;
      if (rg(a)) {
        Tensor4<T>& ga = grad_buf(a);
        for (int in = 0; in < g.n; ++in)
          for (size_t i = 0; i < ac * plane; ++i)
            ga.data[ga.idx(in, 0, 0, 0) + i] += g.data[g.idx(in, 0, 0, 0) + i];
      }
      if (rg(b)) {
        Tensor4<T>& gb = grad_buf(b);
        const int bc = g.c - ac;
        for (int in = 0; in < g.n; ++in)
          for (size_t i = 0; i < bc * plane; ++i)
            gb.data[gb.idx(in, 0, 0, 0) + i] += g.data[g.idx(in, ac, 0, 0) + i];
      }
    });
  }

  // Channels [c0, c1).
  Var slice_c(Var a, int c0, int c1) {
    const Tensor4<T>& av = nodes_[a].value;
    if (c0 < 0 || c1 > av.c || c0 >= c1)
      throw ContractError("slice_c: [" + std::to_string(c0) + "," +
                          std::to_string(c1) + ") of " + av.shape_str());
    Tensor4<T> out(av.n, c1 - c0, av.h, av.w);
    const size_t plane = static_cast<size_t>(av.h) * av.w;
    for (int in = 0; in < av.n; ++in)
      std::copy_n(&av.data[av.idx(in, c0, 0, 0)], (c1 - c0) * plane,
                  &out.data[out.idx(in, 0, 0, 0)]);
    return push(std::move(out), rg(a), [this, a, c0](Var o) {
      if (!rg(a)) return;
      Tensor4<T>& ga = grad_buf(a);
      const Tensor4<T>& g = nodes_[o].grad;
      const size_t plane = static_cast<size_t>(g.h) * g.w;
      for (int in = 0; in < g.n; ++in)
        for (size_t i = 0; i < static_cast<size_t>(g.c) * plane; ++i)
          ga.data[ga.idx(in, c0, 0, 0) + i] += g.data[g.idx(in, 0, 0, 0) + i];
    });
  }

  // [1,C,H,W] -> [N,C,H,W]; backward sums over the batch.
  Var broadcast_batch(Var a, int n) {
    const Tensor4<T>& av = nodes_[a].value;
    if (av.n != 1) throw ContractError("broadcast_batch: " + av.shape_str());
    Tensor4<T> out(n, av.c, av.h, av.w);
    const size_t sz = av.data.size();
    for (int in = 0; in < n; ++in)
      std::copy_n(av.data.data(), sz, &out.data[in * sz]);
    return push(std::move(out), rg(a), [this, a](Var o) {
      if (!rg(a)) return;
      Tensor4<T>& ga = grad_buf(a);
      const Tensor4<T>& g = nodes_[o].grad;
      const size_t sz = ga.data.size();
      for (int in = 0; in < g.n; ++in)
        for (size_t i = 0; i < sz; ++i) ga.data[i] += g.data[in * sz + i];
    });
  }

  // [1,C,1,1] -> [N,C,H,W]; backward sums over batch and space.
  Var broadcast_chan(Var a, int n, int h, int w) {
    const Tensor4<T>& av = nodes_[a].value;
    if (av.n != 1 || av.h != 1 || av.w != 1)
      throw ContractError("broadcast_chan: " + av.shape_str());
    Tensor4<T> out(n, av.c, h, w);
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < av.c; ++ic) {
        T* p = &out.data[out.idx(in, ic, 0, 0)];
        std::fill_n(p, static_cast<size_t>(h) * w, av.data[ic]);
      }
    return push(std::move(out), rg(a), [this, a](Var o) {
      if (!rg(a)) return;
      Tensor4<T>& ga = grad_buf(a);
      const Tensor4<T>& g = nodes_[o].grad;
      const size_t plane = static_cast<size_t>(g.h) * g.w;
      for (int in = 0; in < g.n; ++in)
        for (int ic = 0; ic < g.c; ++ic) {
          const T* p = &g.data[g.idx(in, ic, 0, 0)];
          T s = T(0);
          for (size_t i = 0; i < plane; ++i) s += p[i];
          ga.data[ic] += s;
        }
    });
  }

  Var sum_all(Var a) {
    const Tensor4<T>& av = nodes_[a].value;
    Tensor4<T> out(1, 1, 1, 1);
    T s = T(0);
    for (const auto& v : av.data) s += v;
    out.data[0] = s;
    return push(std::move(out), rg(a), [this, a](Var o) {
      if (!rg(a)) return;
      Tensor4<T>& ga = grad_buf(a);
      const T g = nodes_[o].grad.data[0];
      for (auto& v : ga.data) v += g;
    });
  }

  // [N,C,H,W] -> [N,1,1,1].
  Var sum_per_image(Var a) {
    const Tensor4<T>& av = nodes_[a].value;
    Tensor4<T> out(av.n, 1, 1, 1);
    const size_t per = av.data.size() / std::max(1, av.n);
    for (int in = 0; in < av.n; ++in) {
      T s = T(0);
      for (size_t i = 0; i < per; ++i) s += av.data[in * per + i];
      out.data[in] = s;
    }
    return push(std::move(out), rg(a), [this, a](Var o) {
      if (!rg(a)) return;
      Tensor4<T>& ga = grad_buf(a);
      const Tensor4<T>& g = nodes_[o].grad;
      const size_t per = ga.data.size() / std::max(1, ga.n);
      for (int in = 0; in < ga.n; ++in)
        for (size_t i = 0; i < per; ++i) ga.data[in * per + i] += g.data[in];
    });
  }

  // ---- convolution ----

  // w: (out_c, in_c, kh, kw); b: (1, out_c, 1, 1) or -1 for none.
  Var conv(Var x, Var w, Var b, int stride, int pad) {
    if (b >= 0 && nodes_[b].value.c != nodes_[w].value.n)
      throw ContractError("conv: bias channels " + nodes_[b].value.shape_str() +
                          " vs kernel " + nodes_[w].value.shape_str());
    Tensor4<T> out =
        conv2d(nodes_[x].value, nodes_[w].value,
               b >= 0 ? nodes_[b].value.data.data() : nullptr, stride, pad);
    bool needs = rg(x) || rg(w) || (b >= 0 && rg(b));
    return push(std::move(out), needs, [this, x, w, b, stride, pad](Var o) {
      const Tensor4<T>& g = nodes_[o].grad;
      Tensor4<T>* gx = rg(x) ? &grad_buf(x) : nullptr;
      Tensor4<T>* gw = rg(w) ? &grad_buf(w) : nullptr;
      T* gb = (b >= 0 && rg(b)) ? grad_buf(b).data.data() : nullptr;
      conv2d_backward(nodes_[x].value, nodes_[w].value, g, stride, pad, gx, gw,
                      gb);
    });
  }

  // Transposed (adjoint) convolution with explicit output dims.
  Var deconv(Var x, Var w, Var b, int stride, int pad, int out_h, int out_w) {
    Tensor4<T> out = conv_transpose2d(
        nodes_[x].value, nodes_[w].value,
        b >= 0 ? nodes_[b].value.data.data() : nullptr, stride, pad, out_h,
        out_w);
    bool needs = rg(x) || rg(w) || (b >= 0 && rg(b));
    return push(std::move(out), needs, [this, x, w, b, stride, pad](Var o) {
      const Tensor4<T>& g = nodes_[o].grad;
      Tensor4<T>* gx = rg(x) ? &grad_buf(x) : nullptr;
      Tensor4<T>* gw = rg(w) ? &grad_buf(w) : nullptr;
      T* gb = (b >= 0 && rg(b)) ? grad_buf(b).data.data() : nullptr;
      conv_transpose2d_backward(nodes_[x].value, nodes_[w].value, g, stride,
                                pad, gx, gw, gb);
    });
  }

  // ---- backward ----

  void backward(Var root) {
    const Tensor4<T>& rv = nodes_[root].value;
    if (rv.size() != 1)
      throw ContractError("backward: root must be scalar, got " +
                          rv.shape_str());
    Tensor4<T> seed(1, 1, 1, 1);
    seed.data[0] = T(1);
    backward(root, seed);
  }

  void backward(Var root, const Tensor4<T>& seed) {
    require_same_shape(nodes_[root].value, seed, "backward seed");
    grad_buf(root) = seed;
    for (Var v = root; v >= 0; --v) {
      Node& nd = nodes_[v];
      if (nd.grad.empty() || !nd.backward) continue;
      nd.backward(v);
    }
  }

 private:
  struct Node {
    Tensor4<T> value;
    Tensor4<T> grad;
    bool requires_grad = false;
    std::function<void(Var)> backward;
  };

  static T sigmoid_scalar(T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  }

  bool rg(Var v) const { return nodes_[v].requires_grad; }

  Tensor4<T>& grad_buf(Var v) {
    Node& nd = nodes_[v];
    if (nd.grad.empty()) nd.grad = Tensor4<T>::zeros_like(nd.value);
    return nd.grad;
  }

  void accum_same(Var v, const Tensor4<T>& g) {
    Tensor4<T>& gv = grad_buf(v);
    for (size_t i = 0; i < g.data.size(); ++i) gv.data[i] += g.data[i];
  }

  void accum_scaled(Var v, const Tensor4<T>& g, T s) {
    Tensor4<T>& gv = grad_buf(v);
    for (size_t i = 0; i < g.data.size(); ++i) gv.data[i] += s * g.data[i];
  }

  void check_same(Var a, Var b, const char* what) const {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
      throw ContractError(std::string(what) + ": shape mismatch " +
                          nodes_[a].value.shape_str() + " vs " +
                          nodes_[b].value.shape_str());
  }

  Var push(Tensor4<T> value, bool requires_grad,
           std::function<void(Var)> backward) {
    Node nd;
    nd.value = std::move(value);
    nd.requires_grad = requires_grad;
    nd.backward = std::move(backward);
    nodes_.push_back(std::move(nd));
    return static_cast<Var>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

}  // namespace cdraw

#endif  // CDRAW_TAPE_H_
