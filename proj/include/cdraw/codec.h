#ifndef CDRAW_CODEC_H_
#define CDRAW_CODEC_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "cdraw/arith.h"
#include "cdraw/bitstream.h"
#include "cdraw/dataset.h"
#include "cdraw/error.h"
#include "cdraw/model.h"
#include "cdraw/quant.h"
#include "cdraw/rng.h"

namespace cdraw {

// Rate accounting for one coded image. coded_bits in a row is the exact price
// the arithmetic coder pays for that step's symbols (sum of -log2 freq/2^16);
// payload_bits is the finished stream including flush and byte padding slack.
struct RateRow {
  int t = 0;
  int layer = 1;        // 1-based, matching trace order
  double coded_bits = 0.0;
  double kl_bits = 0.0;  // KL(q || p) of this step/layer, nats / ln 2
};

struct RateReport {
  std::vector<RateRow> rows;
  size_t payload_bits = 0;
  double coder_ideal_bits = 0.0;
  double kl_bits_total = 0.0;
  // What a bits-back scheme would pay in principle (sum KL / ln 2). Reference
  // only; this codec does not implement bits-back.
  double bits_back_ideal_bits = 0.0;
  double bits_per_dim = 0.0;
  long symbols = 0;
  long clamped = 0;  // posterior means pushed back inside the grid bounds

  std::string csv() const;
};

inline std::string RateReport::csv() const {
  std::string out = "t,layer,coded_bits,kl_bits\n";
  char line[128];
  for (const RateRow& r : rows) {
    std::snprintf(line, sizeof(line), "%d,%d,%.17g,%.17g\n", r.t, r.layer,
                  r.coded_bits, r.kl_bits);
    out += line;
  }
  return out;
}

template <typename T>
struct CompressResult {
  Bitstream bs;
  Tensor4<T> recon;  // encoder-side reconstruction, identical to decompress
  RateReport report;
};

namespace detail {

inline std::string kmin_name(int layer) {
  return "codec.kmin" + std::to_string(layer + 1);
}
inline std::string kmax_name(int layer) {
  return "codec.kmax" + std::to_string(layer + 1);
}

template <typename T>
std::vector<double> layer_deltas(const ConvDraw<T>& m, int layer) {
  const auto& lv = m.params.at("q" + std::to_string(layer + 1) + ".logvar");
  std::vector<double> delta(lv.size());
  for (size_t c = 0; c < delta.size(); ++c) {
    const double clamped = std::clamp(static_cast<double>(lv.data[c]),
                                      kLogVarMin, kLogVarMax);
    delta[c] = std::exp(0.5 * clamped);
  }
  return delta;
}

}  // namespace detail

template <typename T>
bool codec_calibrated(const ConvDraw<T>& m) {
  for (int l = 0; l < m.eff_layers(); ++l) {
    if (!m.params.has(detail::kmin_name(l)) ||
        !m.params.has(detail::kmax_name(l))) {
      return false;
    }
  }
  return true;
}

// Reads the coding grid out of the model: bin width from the learned
// posterior scale, symbol bounds from the stored calibration tensors.
template <typename T>
QuantGrid grid_from_model(const ConvDraw<T>& m) {
  if (!m.cfg.fixed_posterior_variance) {
    throw ContractError(
        "codec: model must use a fixed posterior variance (the grid width is "
        "the learned posterior scale)");
  }
  if (!codec_calibrated(m)) {
    throw ContractError(
        "codec: model carries no calibration; run calibration before coding");
  }
  QuantGrid grid;
  const int layers = m.eff_layers();
  grid.delta.resize(layers);
  grid.k_min.resize(layers);
  grid.k_max.resize(layers);
  for (int l = 0; l < layers; ++l) {
    grid.delta[l] = detail::layer_deltas(m, l);
    const auto& lo = m.params.at(detail::kmin_name(l));
    const auto& hi = m.params.at(detail::kmax_name(l));
    if (lo.size() != grid.delta[l].size() || hi.size() != grid.delta[l].size()) {
      throw ContractError("codec: calibration tensors have the wrong shape");
    }
    grid.k_min[l].resize(lo.size());
    grid.k_max[l].resize(hi.size());
    for (size_t c = 0; c < lo.size(); ++c) {
      grid.k_min[l][c] = static_cast<int>(std::llround(lo.data[c]));
      grid.k_max[l][c] = static_cast<int>(std::llround(hi.data[c]));
    }
  }
  validate_grid(grid);
  return grid;
}

// Runs quantized-feedback inference over calibration images and stores
// per-channel symbol bounds wide enough for mu_p +- 8 sigma_p everywhere the
// prior was observed. The bounds live in the parameter store under "codec."
// names so they travel inside checkpoints without joining the trainable set.
template <typename T>
void calibrate_codec(ConvDraw<T>& m, const Dataset& ds, int n_images) {
  if (!m.cfg.fixed_posterior_variance) {
    throw ContractError(
        "codec: model must use a fixed posterior variance (the grid width is "
        "the learned posterior scale)");
  }
  n_images = std::min(n_images, ds.count);
  if (n_images < 1) throw ContractError("codec: no calibration images");

  const int layers = m.eff_layers();
  std::vector<std::vector<double>> delta(layers);
  std::vector<std::vector<double>> lo(layers), hi(layers);
  for (int l = 0; l < layers; ++l) {
    delta[l] = detail::layer_deltas(m, l);
    lo[l].assign(delta[l].size(), std::numeric_limits<double>::infinity());
    hi[l].assign(delta[l].size(), -std::numeric_limits<double>::infinity());
  }

  for (int i = 0; i < n_images; ++i) {
    const Tensor4<T> x = dataset_images<T>(ds, i, 1);
    DrawState<T> state = m.init_state(1);
    for (int t = 0; t < m.cfg.timesteps; ++t) {
      StepPlan<T> plan;
      plan.generate = false;
      for (int l = 0; l < layers; ++l) {
        plan.z.push_back(ZSource<T>::chooser(
            [&, l](const GaussianParamsT<T>& q, const GaussianParamsT<T>& p) {
              const int hw = p.mu.h * p.mu.w;
              Tensor4<T> out(q.mu.n, q.mu.c, q.mu.h, q.mu.w);
              for (size_t u = 0; u < p.mu.size(); ++u) {
                const int c = static_cast<int>(u) / hw;
                const double mu_p = p.mu.data[u];
                const double sd_p = std::exp(0.5 * p.log_var.data[u]);
                lo[l][c] = std::min(lo[l][c], mu_p - 8.0 * sd_p);
                hi[l][c] = std::max(hi[l][c], mu_p + 8.0 * sd_p);
                const double k = static_cast<double>(
                    std::llround(q.mu.data[u] / delta[l][c]));
                out.data[u] = static_cast<T>(k * delta[l][c]);
              }
              return out;
            }));
      }
      state = m.run_plain_step(state, &x, plan).first;
    }
  }

  for (int l = 0; l < layers; ++l) {
    const int chans = static_cast<int>(delta[l].size());
    auto& kmin = m.params.has(detail::kmin_name(l))
                     ? m.params.at(detail::kmin_name(l))
                     : m.params.create(detail::kmin_name(l), 1, chans, 1, 1);
    auto& kmax = m.params.has(detail::kmax_name(l))
                     ? m.params.at(detail::kmax_name(l))
                     : m.params.create(detail::kmax_name(l), 1, chans, 1, 1);
    for (int c = 0; c < chans; ++c) {
      // Uncalibrated channels (prior never observed finite) collapse to {0}.
      double k_lo = 0.0, k_hi = 0.0;
      if (std::isfinite(lo[l][c])) k_lo = std::floor(lo[l][c] / delta[l][c]);
      if (std::isfinite(hi[l][c])) k_hi = std::ceil(hi[l][c] / delta[l][c]);
      kmin.data[c] = static_cast<T>(std::min(0.0, k_lo));
      kmax.data[c] = static_cast<T>(std::max(0.0, k_hi));
    }
  }
  validate_grid(grid_from_model(m));
}

// Compresses one image. Inference runs with the quantized latent fed back
// into the decoder, so the decoder-side trajectory in decompress() replays
// this one bit for bit. Steps past t_keep follow the generative prior at
// temperature lambda (seeded; irrelevant when t_keep == T or lambda == 0).
template <typename T>
CompressResult<T> compress(const ConvDraw<T>& m, const Tensor4<T>& x,
                           int t_keep, double lambda, uint64_t seed = 0) {
  if (x.n != 1 || x.c != m.cfg.input_c || x.h != m.cfg.input_h ||
      x.w != m.cfg.input_w) {
    throw ContractError("compress: image shape does not match the model");
  }
  if (t_keep < 0 || t_keep > m.cfg.timesteps) {
    throw ContractError("compress: t_keep " + std::to_string(t_keep) +
                        " outside [0, " + std::to_string(m.cfg.timesteps) +
                        "]");
  }
  if (lambda < 0.0 || lambda > 1.0) {
    throw ContractError("compress: lambda must lie in [0, 1]");
  }
  const QuantGrid grid = grid_from_model(m);
  const int layers = m.eff_layers();

  CompressResult<T> out;
  RateReport& rep = out.report;
  ArithEncoder enc;
  Rng tail_rng(seed);

  DrawState<T> state = m.init_state(1);
  for (int t = 0; t < m.cfg.timesteps; ++t) {
    if (t >= t_keep) {
      state = m.generation_step(state, lambda,
                                nullptr, lambda > 0 ? &tail_rng : nullptr)
                  .first;
      continue;
    }
    std::vector<double> step_bits(layers, 0.0);
    StepPlan<T> plan;
    plan.generate = false;
    for (int l = 0; l < layers; ++l) {
      plan.z.push_back(ZSource<T>::chooser(
          [&, l](const GaussianParamsT<T>& q, const GaussianParamsT<T>& p) {
            const int hw = p.mu.h * p.mu.w;
            const double before = enc.ideal_bits();
            Tensor4<T> zq(q.mu.n, q.mu.c, q.mu.h, q.mu.w);
            for (size_t u = 0; u < p.mu.size(); ++u) {
              const int c = static_cast<int>(u) / hw;
              const double d = grid.delta[l][c];
              const int kmin = grid.k_min[l][c], kmax = grid.k_max[l][c];
              const int k = quantize_mean(q.mu.data[u], d, kmin, kmax,
                                          &rep.clamped);
              const auto table = FreqTable::from(
                  bin_freqs(p.mu.data[u], p.log_var.data[u], d, kmin, kmax));
              enc.encode(k - kmin, table);
              zq.data[u] = static_cast<T>(k * d);
            }
            rep.symbols += static_cast<long>(p.mu.size());
            step_bits[l] = enc.ideal_bits() - before;
            return zq;
          }));
    }
    auto [next, trace] = m.run_plain_step(state, &x, plan);
    state = std::move(next);
    for (int l = 0; l < layers; ++l) {
      RateRow row;
      row.t = t;
      row.layer = l + 1;
      row.coded_bits = step_bits[l];
      double kl_nats = 0.0;
      const auto& kl = trace.layers[l].kl;
      for (size_t u = 0; u < kl.size(); ++u) kl_nats += kl.data[u];
      row.kl_bits = kl_nats / std::log(2.0);
      rep.kl_bits_total += row.kl_bits;
      rep.rows.push_back(row);
    }
  }

  out.recon = m.emit_image(state.r);
  if (t_keep > 0) {
    out.bs.payload = enc.finish();
    rep.payload_bits = enc.bit_count();
    rep.coder_ideal_bits = enc.ideal_bits();
  }
  rep.bits_back_ideal_bits = rep.kl_bits_total;
  rep.bits_per_dim =
      static_cast<double>(rep.payload_bits) / m.cfg.pixel_dims();

  out.bs.header.model_hash = m.cfg.hash();
  out.bs.header.h = static_cast<uint16_t>(m.cfg.input_h);
  out.bs.header.w = static_cast<uint16_t>(m.cfg.input_w);
  out.bs.header.c = static_cast<uint8_t>(m.cfg.input_c);
  out.bs.header.t_total = static_cast<uint8_t>(m.cfg.timesteps);
  out.bs.header.t_stored = static_cast<uint8_t>(t_keep);
  out.bs.header.lambda = static_cast<float>(lambda);
  return out;
}

// Decodes the stored steps by replaying the decoder's prior, then lets the
// model imagine the remaining steps at the header's lambda.
template <typename T>
Tensor4<T> decompress(const ConvDraw<T>& m, const Bitstream& bs,
                      uint64_t seed = 0) {
  const uint64_t want = m.cfg.hash();
  if (bs.header.model_hash != want) {
    char msg[128];
    std::snprintf(msg, sizeof(msg),
                  "bitstream was written by model %016llx but this model is "
                  "%016llx",
                  static_cast<unsigned long long>(bs.header.model_hash),
                  static_cast<unsigned long long>(want));
    throw CorruptStream(msg);
  }
  const QuantGrid grid = grid_from_model(m);
  const int layers = m.eff_layers();
  const int t_stored = bs.header.t_stored;
  const double lambda = bs.header.lambda;

  ArithDecoder dec(bs.payload);
  Rng tail_rng(seed);
  DrawState<T> state = m.init_state(1);
  for (int t = 0; t < m.cfg.timesteps; ++t) {
    if (t >= t_stored) {
      state = m.generation_step(state, lambda,
                                nullptr, lambda > 0 ? &tail_rng : nullptr)
                  .first;
      continue;
    }
    StepPlan<T> plan;
    plan.generate = true;
    for (int l = 0; l < layers; ++l) {
      plan.z.push_back(ZSource<T>::chooser(
          [&, l](const GaussianParamsT<T>&, const GaussianParamsT<T>& p) {
            const int hw = p.mu.h * p.mu.w;
            Tensor4<T> zq(p.mu.n, p.mu.c, p.mu.h, p.mu.w);
            for (size_t u = 0; u < p.mu.size(); ++u) {
              const int c = static_cast<int>(u) / hw;
              const double d = grid.delta[l][c];
              const int kmin = grid.k_min[l][c], kmax = grid.k_max[l][c];
              const auto table = FreqTable::from(
                  bin_freqs(p.mu.data[u], p.log_var.data[u], d, kmin, kmax));
              const int k = kmin + dec.decode(table);
              zq.data[u] = static_cast<T>(k * d);
            }
            return zq;
          }));
    }
    state = m.run_plain_step(state, nullptr, plan).first;
  }
  return m.emit_image(state.r);
}

// Full-depth rate accounting for one image; nothing is written anywhere.
template <typename T>
RateReport rate_report(const ConvDraw<T>& m, const Tensor4<T>& x) {
  return compress(m, x, m.cfg.timesteps, 0.0).report;
}

}  // namespace cdraw

#endif  // CDRAW_CODEC_H_
