#ifndef CDRAW_LIKELIHOOD_H_
#define CDRAW_LIKELIHOOD_H_

#include <algorithm>
#include <cmath>

#include "cdraw/tensor.h"

namespace cdraw {

// Log-variances are clamped to this band everywhere they are produced
// (posterior, prior, output), which bounds every exp() and keeps KL finite.
inline constexpr double kLogVarMin = -14.0;
inline constexpr double kLogVarMax = 14.0;

template <typename T>
struct GaussianParamsT {
  Tensor4<T> mu;
  Tensor4<T> log_var;  // same shape

  bool empty() const { return mu.empty(); }
};

// Elementwise KL(q | p) between diagonal Gaussians, in nats:
//   log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2
// floored at 0 (the exact value can round a hair negative near q == p).
template <typename T>
Tensor4<T> gaussian_kl(const GaussianParamsT<T>& q,
                       const GaussianParamsT<T>& p) {
  require_same_shape(q.mu, q.log_var, "gaussian_kl q");
  require_same_shape(p.mu, p.log_var, "gaussian_kl p");
  require_same_shape(q.mu, p.mu, "gaussian_kl q vs p");
  Tensor4<T> out = Tensor4<T>::zeros_like(q.mu);
  for (size_t i = 0; i < out.data.size(); ++i) {
    const double lq = q.log_var.data[i], lp = p.log_var.data[i];
    const double dm = static_cast<double>(q.mu.data[i]) - p.mu.data[i];
    double kl = 0.5 * (lp - lq) +
                (std::exp(lq) + dm * dm) / (2.0 * std::exp(lp)) - 0.5;
    out.data[i] = static_cast<T>(kl < 0 ? 0 : kl);
  }
  return out;
}

// Negative log-likelihood of the dequantized-Gaussian output model, summed
// over dims per image, relative to the uniform density 1/s per pixel bin:
//   sum [ log(1/s) + log(2*pi)/2 + a/2 + (x-m)^2 / (2 e^a) ]
// r carries [means | log-vars] blocked along channels.
template <typename T>
Tensor4<T> input_nll_gaussian(const Tensor4<T>& x, const Tensor4<T>& r,
                              double s) {
  if (r.n != x.n || r.c != 2 * x.c || r.h != x.h || r.w != x.w)
    throw ContractError("input_nll_gaussian: canvas " + r.shape_str() +
                        " does not pair with input " + x.shape_str());
  if (s <= 0) throw ContractError("input_nll_gaussian: s must be > 0");
  const double base = std::log(1.0 / s) + 0.5 * std::log(2.0 * M_PI);
  Tensor4<T> out(x.n, 1, 1, 1);
  const int plane = x.h * x.w;
  for (int n = 0; n < x.n; ++n) {
    double acc = 0;
    for (int c = 0; c < x.c; ++c)
      for (int i = 0; i < plane; ++i) {
        const size_t xi = x.idx(n, c, 0, 0) + i;
        const double m = r.data[r.idx(n, c, 0, 0) + i];
        const double a =
            std::clamp(static_cast<double>(r.data[r.idx(n, c + x.c, 0, 0) + i]),
                       kLogVarMin, kLogVarMax);
        const double d = static_cast<double>(x.data[xi]) - m;
        acc += base + 0.5 * a + d * d / (2.0 * std::exp(a));
      }
    out.data[n] = static_cast<T>(acc);
  }
  return out;
}

// Probability mass a Gaussian assigns to the pixel bin [x-s/2, x+s/2],
// evaluated from whichever tail keeps erfc well conditioned.
inline double gauss_bin_mass(double x, double mu, double sigma, double s) {
  const double inv = 1.0 / (sigma * M_SQRT2);
  const double a = (x - 0.5 * s - mu) * inv;
  const double b = (x + 0.5 * s - mu) * inv;
  double m;
  if (a + b > 0)
    m = 0.5 * (std::erfc(a) - std::erfc(b));
  else
    m = 0.5 * (std::erfc(-b) - std::erfc(-a));
  return m < 1e-300 ? 1e-300 : m;
}

// Bin-integrated variant: the exact discrete NLL sum of -log P(bin of x).
// Uniform model density gives -log s per dim, matching the ratio form's
// baseline, so the two variants share units.
template <typename T>
Tensor4<T> input_nll_gaussian_bin(const Tensor4<T>& x, const Tensor4<T>& r,
                                  double s) {
  if (r.n != x.n || r.c != 2 * x.c || r.h != x.h || r.w != x.w)
    throw ContractError("input_nll_gaussian_bin: canvas " + r.shape_str() +
                        " does not pair with input " + x.shape_str());
  if (s <= 0) throw ContractError("input_nll_gaussian_bin: s must be > 0");
  Tensor4<T> out(x.n, 1, 1, 1);
  const int plane = x.h * x.w;
  for (int n = 0; n < x.n; ++n) {
    double acc = 0;
    for (int c = 0; c < x.c; ++c)
      for (int i = 0; i < plane; ++i) {
        const double xv = x.data[x.idx(n, c, 0, 0) + i];
        const double m = r.data[r.idx(n, c, 0, 0) + i];
        const double a =
            std::clamp(static_cast<double>(r.data[r.idx(n, c + x.c, 0, 0) + i]),
                       kLogVarMin, kLogVarMax);
        acc -= std::log(gauss_bin_mass(xv, m, std::exp(0.5 * a), s));
      }
    out.data[n] = static_cast<T>(acc);
  }
  return out;
}

// Bernoulli NLL with the canvas as logits, summed per image:
//   softplus(l) - x*l   (== -log sigmoid(l) for x=1, -log(1-sigmoid) for 0)
template <typename T>
Tensor4<T> input_nll_bernoulli(const Tensor4<T>& x, const Tensor4<T>& r) {
  require_same_shape(x, r, "input_nll_bernoulli");
  Tensor4<T> out(x.n, 1, 1, 1);
  const size_t per = x.data.size() / x.n;
  for (int n = 0; n < x.n; ++n) {
    double acc = 0;
    for (size_t i = 0; i < per; ++i) {
      const size_t j = n * per + i;
      const double l = r.data[j];
      const double sp = std::log1p(std::exp(-std::abs(l))) + std::max(l, 0.0);
      acc += sp - static_cast<double>(x.data[j]) * l;
    }
    out.data[n] = static_cast<T>(acc);
  }
  return out;
}

inline double nats_to_bits_per_dim(double nats, int dims) {
  if (dims <= 0) throw ContractError("nats_to_bits_per_dim: dims must be > 0");
  return nats / (static_cast<double>(dims) * std::log(2.0));
}

}  // namespace cdraw

#endif  // CDRAW_LIKELIHOOD_H_
