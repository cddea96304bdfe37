#ifndef CDRAW_ANALYSIS_H_
#define CDRAW_ANALYSIS_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "cdraw/dataset.h"
#include "cdraw/error.h"
#include "cdraw/model.h"
#include "cdraw/ppm.h"
#include "cdraw/rng.h"

namespace cdraw {

// Variational upper bound on the negative log likelihood, reported at
// likelihood weight 1 regardless of the beta the model was trained with.
struct EvalResult {
  std::string dataset_id;
  int images = 0;
  int noise_draws = 1;     // ELBO averaging draws; 1 = plain bound
  double mean_nats = 0.0;  // per image; an upper bound on the true NLL
  double bits_per_dim = 0.0;
  double lx_nats = 0.0;
  double kl_nats = 0.0;
  double stderr_nats = 0.0;  // spread of the mean over (image, draw) samples
};

struct KlProfile {
  int timesteps = 0;
  int layers = 0;
  std::vector<std::vector<double>> mean_kl_nats;  // [t][layer]

  std::string csv() const {
    std::string out = "t,layer,kl_nats\n";
    char line[96];
    for (int t = 0; t < timesteps; ++t) {
      for (int l = 0; l < layers; ++l) {
        std::snprintf(line, sizeof(line), "%d,%d,%.17g\n", t, l + 1,
                      mean_kl_nats[t][l]);
        out += line;
      }
    }
    return out;
  }
};

namespace detail {

struct EvalPass {
  std::vector<double> lx;                  // per image
  std::vector<double> kl;                  // per image, summed over (t, layer)
  std::vector<std::vector<double>> kl_tl;  // [t][layer], summed over images
};

// One sampled-z sweep over the dataset. kl_profile and eval_bound share this
// so a single-draw evaluation and the profile see identical traces.
template <typename T>
EvalPass eval_pass(const ConvDraw<T>& m, const Dataset& ds, Rng rng,
                   int batch) {
  EvalPass pass;
  pass.lx.reserve(ds.count);
  pass.kl.reserve(ds.count);
  pass.kl_tl.assign(m.cfg.timesteps,
                    std::vector<double>(m.eff_layers(), 0.0));
  const bool gauss = m.cfg.likelihood == Likelihood::kDequantizedGaussian;
  for (int first = 0; first < ds.count; first += batch) {
    const int n = std::min(batch, ds.count - first);
    Tensor4<T> x = dataset_images<T>(ds, first, n);
    if (gauss) dequantize(x, m.cfg.quant_step, rng);
    std::vector<double> kl_img(n, 0.0);
    DrawState<T> state = m.init_state(n);
    for (int t = 0; t < m.cfg.timesteps; ++t) {
      auto [next, trace] = m.inference_step(state, x, nullptr, &rng);
      state = std::move(next);
      for (int l = 0; l < m.eff_layers(); ++l) {
        const auto& kl = trace.layers[l].kl;
        const size_t per_img = kl.size() / n;
        for (int i = 0; i < n; ++i) {
          double acc = 0.0;
          const T* p = &kl.data[per_img * i];
          for (size_t u = 0; u < per_img; ++u) acc += p[u];
          kl_img[i] += acc;
          pass.kl_tl[t][l] += acc;
        }
      }
    }
    const Tensor4<T> lx = m.lx_per_image(x, state.r);
    for (int i = 0; i < n; ++i) {
      pass.lx.push_back(lx.data[i]);
      pass.kl.push_back(kl_img[i]);
    }
  }
  return pass;
}

}  // namespace detail

template <typename T>
EvalResult eval_bound(const ConvDraw<T>& m, const Dataset& ds, int noise_draws,
                      uint64_t seed = 0, int batch = 16,
                      const std::string& dataset_id = "") {
  if (noise_draws < 1) throw ContractError("eval_bound: need at least 1 draw");
  if (ds.count < 1) throw ContractError("eval_bound: empty dataset");
  EvalResult res;
  res.dataset_id = dataset_id;
  res.images = ds.count;
  res.noise_draws = noise_draws;

  double sum = 0.0, sum_sq = 0.0, sum_lx = 0.0, sum_kl = 0.0;
  for (int d = 0; d < noise_draws; ++d) {
    const auto pass =
        detail::eval_pass(m, ds, Rng(seed).fork(static_cast<uint64_t>(d)),
                          batch);
    for (int i = 0; i < ds.count; ++i) {
      const double b = pass.lx[i] + pass.kl[i];
      sum += b;
      sum_sq += b * b;
      sum_lx += pass.lx[i];
      sum_kl += pass.kl[i];
    }
  }
  const double count = static_cast<double>(ds.count) * noise_draws;
  res.mean_nats = sum / count;
  res.lx_nats = sum_lx / count;
  res.kl_nats = sum_kl / count;
  res.bits_per_dim = res.mean_nats / (m.cfg.pixel_dims() * std::log(2.0));
  if (count > 1) {
    const double var =
        std::max(0.0, (sum_sq - sum * sum / count) / (count - 1));
    res.stderr_nats = std::sqrt(var / count);
  }
  return res;
}

// Mean KL per (timestep, layer) over a dataset, single sampled-z pass. With
// the same seed its totals agree with eval_bound(noise_draws = 1) exactly up
// to summation order.
template <typename T>
KlProfile kl_profile(const ConvDraw<T>& m, const Dataset& ds,
                     uint64_t seed = 0, int batch = 16) {
  if (ds.count < 1) throw ContractError("kl_profile: empty dataset");
  const auto pass = detail::eval_pass(m, ds, Rng(seed).fork(0), batch);
  KlProfile prof;
  prof.timesteps = m.cfg.timesteps;
  prof.layers = m.eff_layers();
  prof.mean_kl_nats.assign(prof.timesteps,
                           std::vector<double>(prof.layers, 0.0));
  for (int t = 0; t < prof.timesteps; ++t) {
    for (int l = 0; l < prof.layers; ++l) {
      prof.mean_kl_nats[t][l] = pass.kl_tl[t][l] / ds.count;
    }
  }
  return prof;
}

// Peak signal-to-noise ratio per image pair, in dB. Identical images report
// the +infinity sentinel.
template <typename T>
std::vector<double> psnr(const Tensor4<T>& a, const Tensor4<T>& b) {
  require_same_shape(a, b, "psnr");
  const size_t per_img = a.size() / a.n;
  std::vector<double> out(a.n);
  for (int i = 0; i < a.n; ++i) {
    double acc = 0.0;
    const T* pa = &a.data[per_img * i];
    const T* pb = &b.data[per_img * i];
    for (size_t u = 0; u < per_img; ++u) {
      const double d = static_cast<double>(pa[u]) - static_cast<double>(pb[u]);
      acc += d * d;
    }
    const double mse = acc / per_img;
    out[i] = mse == 0.0 ? std::numeric_limits<double>::infinity()
                        : 10.0 * std::log10(1.0 / mse);
  }
  return out;
}

// Mosaic of image rows with 1-pixel separators on every side: a grid of
// r rows by c columns of (ih x iw) images renders as
// (r*ih + r + 1) x (c*iw + c + 1) pixels. Grayscale replicates to RGB.
template <typename T>
PpmImage render_grid(const std::vector<Tensor4<T>>& rows) {
  if (rows.empty()) throw ContractError("render_grid: no rows");
  const int c = rows[0].c, ih = rows[0].h, iw = rows[0].w;
  if (c != 1 && c != 3)
    throw ContractError("render_grid: images must have 1 or 3 channels");
  int cols = 0;
  for (const auto& r : rows) {
    if (r.c != c || r.h != ih || r.w != iw)
      throw ContractError("render_grid: rows disagree on image dims");
    cols = std::max(cols, r.n);
  }
  const int n_rows = static_cast<int>(rows.size());
  PpmImage img;
  img.h = n_rows * ih + n_rows + 1;
  img.w = cols * iw + cols + 1;
  const uint8_t kSep = 128;
  img.rgb.assign(static_cast<size_t>(img.w) * img.h * 3, kSep);

  for (int gr = 0; gr < n_rows; ++gr) {
    const auto& row = rows[gr];
    for (int gc = 0; gc < row.n; ++gc) {
      const int y0 = 1 + gr * (ih + 1);
      const int x0 = 1 + gc * (iw + 1);
      for (int y = 0; y < ih; ++y) {
        for (int x = 0; x < iw; ++x) {
          uint8_t px[3];
          for (int ch = 0; ch < 3; ++ch) {
            const T v = row.data[row.idx(gc, c == 3 ? ch : 0, y, x)];
            const double clamped =
                std::min(1.0, std::max(0.0, static_cast<double>(v)));
            px[ch] = static_cast<uint8_t>(std::llround(clamped * 255.0));
          }
          uint8_t* dst =
              &img.rgb[(static_cast<size_t>(y0 + y) * img.w + (x0 + x)) * 3];
          dst[0] = px[0];
          dst[1] = px[1];
          dst[2] = px[2];
        }
      }
    }
  }
  return img;
}

template <typename T>
void emit_grid(const std::vector<Tensor4<T>>& rows, const std::string& path) {
  write_ppm_file(path, render_grid(rows));
}

// Reconstruction depth schedule, scaled from the reference 32-step run
// {2,4,6,8,10,14,18,25,32}; duplicates after scaling collapse.
inline std::vector<int> default_progression_schedule(int timesteps) {
  static const int base[] = {2, 4, 6, 8, 10, 14, 18, 25, 32};
  std::vector<int> out;
  for (int v : base) {
    const int scaled = std::clamp(
        static_cast<int>(std::llround(v * timesteps / 32.0)), 1, timesteps);
    if (out.empty() || out.back() != scaled) out.push_back(scaled);
  }
  return out;
}

// One grid row per reconstruction depth, originals on the bottom row.
template <typename T>
void progression_sheet(const ConvDraw<T>& m, const Tensor4<T>& images,
                       std::vector<int> t_list, double lambda,
                       const std::string& path, uint64_t seed = 0) {
  if (t_list.empty()) t_list = default_progression_schedule(m.cfg.timesteps);
  std::vector<Tensor4<T>> rows;
  rows.reserve(t_list.size() + 1);
  for (size_t i = 0; i < t_list.size(); ++i) {
    Rng rng = Rng(seed).fork(i);
    rows.push_back(m.reconstruct_partial(images, t_list[i], lambda, rng));
  }
  Tensor4<T> originals = images;
  for (auto& v : originals.data) v = std::min(std::max(v, T(0)), T(1));
  rows.push_back(std::move(originals));
  emit_grid(rows, path);
}

}  // namespace cdraw

#endif  // CDRAW_ANALYSIS_H_
