#ifndef CDRAW_MODEL_H_
#define CDRAW_MODEL_H_

#include <cmath>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cdraw/config.h"
#include "cdraw/likelihood.h"
#include "cdraw/lstm.h"
#include "cdraw/params.h"
#include "cdraw/rng.h"
#include "cdraw/tape.h"
#include "cdraw/tensor.h"

namespace cdraw {

// All recurrent variables of one unrolled model instance.
template <typename T>
struct DrawState {
  Tensor4<T> r;                         // canvas at input resolution
  std::vector<ConvLstmState<T>> enc;    // per layer, stride-reduced
  std::vector<ConvLstmState<T>> dec;
};

template <typename T>
struct TimestepTrace {
  struct Layer {
    GaussianParamsT<T> q;  // empty on generation steps
    GaussianParamsT<T> p;
    Tensor4<T> z;
    Tensor4<T> kl;  // per-unit nats; empty on generation steps
  };
  int t = 0;
  std::vector<Layer> layers;  // index 0 = layer 1 (bottom)
};

// Where the z fed to the decoder comes from at one (timestep, layer).
template <typename T>
struct ZSource {
  enum class Kind { kSampleQ, kSamplePrior, kRecorded, kChoose };
  using Chooser = std::function<Tensor4<T>(const GaussianParamsT<T>& q,
                                           const GaussianParamsT<T>& p)>;

  Kind kind = Kind::kSampleQ;
  const Tensor4<T>* noise = nullptr;     // kSampleQ, kSamplePrior (lambda > 0)
  double lambda = 1.0;                   // kSamplePrior temperature
  const Tensor4<T>* recorded = nullptr;  // kRecorded
  Chooser choose;                        // kChoose; q empty when generating

  static ZSource sample_q(const Tensor4<T>* n) {
    ZSource s;
    s.kind = Kind::kSampleQ;
    s.noise = n;
    return s;
  }
  static ZSource sample_prior(double lambda, const Tensor4<T>* n) {
    ZSource s;
    s.kind = Kind::kSamplePrior;
    s.lambda = lambda;
    s.noise = n;
    return s;
  }
  static ZSource recorded_z(const Tensor4<T>* z) {
    ZSource s;
    s.kind = Kind::kRecorded;
    s.recorded = z;
    return s;
  }
  static ZSource chooser(Chooser fn) {
    ZSource s;
    s.kind = Kind::kChoose;
    s.choose = std::move(fn);
    return s;
  }
};

template <typename T>
struct StepPlan {
  bool generate = false;      // true: skip the encoder (no x, no q, no KL)
  std::vector<ZSource<T>> z;  // one per effective layer
  // Backing storage for noise drawn on the caller's behalf.
  std::vector<std::unique_ptr<Tensor4<T>>> owned_noise;
};

// Tape handles for one timestep; -1 marks slots a generation step lacks.
struct StepTraceVars {
  struct Layer {
    int q_mu = -1, q_lv = -1;
    int p_mu = -1, p_lv = -1;
    int z = -1, kl = -1;
  };
  int t = 0;
  std::vector<Layer> layers;
};

struct RolloutVars {
  std::vector<StepTraceVars> steps;
  int r_final = -1;
  int canvas_means = -1;   // mean channels / logits' sigmoid, unclamped
  int lx_per_image = -1;   // [N,1,1,1]; -1 when no input image
  int kl_per_image = -1;   // [N,1,1,1]
  int loss = -1;           // scalar: mean over batch of beta*lx + sum KL
  std::vector<std::pair<std::string, int>> param_vars;
};

template <typename T>
class ConvDraw {
 public:
  explicit ConvDraw(const ModelConfig& config) : cfg(config) {
    cfg.validate();
    build_param_shapes();
  }

  ModelConfig cfg;
  ParamStore<T> params;

  // Layers actually carrying latents; a two-layer config with zero layer-2
  // latent maps degenerates to the single-layer model, parameters included.
  int eff_layers() const {
    return (cfg.layers == 2 && cfg.latent_maps[1] > 0) ? 2 : 1;
  }

  int latent_c(int l) const { return cfg.latent_maps[l]; }
  int latent_h(int l) const { return cfg.layer_h(l); }
  int latent_w(int l) const { return cfg.layer_w(l); }

  void init_params(Rng& rng) {
    for (auto& e : params.entries) {
      if (e.name.size() > 2 && e.name.compare(e.name.size() - 2, 2, ".w") == 0) {
        const bool is_deconv = deconv_params_.count(e.name) > 0;
        const int fan_in = (is_deconv ? e.value.n : e.value.c) * e.value.h *
                           e.value.w;
        const T b = static_cast<T>(std::sqrt(3.0 / fan_in));
        e.value.fill_uniform(rng, -b, b);
      } else {
        e.value.fill(T(0));
      }
    }
    // Forget-gate bias +1 on every LSTM bias block [input|forget|out|cand].
    for (const auto& name : lstm_bias_params_) {
      Tensor4<T>& b = params.at(name);
      const int hidden = b.c / 4;
      for (int ch = hidden; ch < 2 * hidden; ++ch) b.data[b.idx(0, ch, 0, 0)] = T(1);
    }
  }

  Tensor4<T> latent_noise(int batch, int layer, Rng& rng) const {
    Tensor4<T> n(batch, latent_c(layer), latent_h(layer), latent_w(layer));
    n.fill_normal(rng);
    return n;
  }

  // ---- full unroll on one tape ----

  // x may be null for pure generation (then batch sets the batch size).
  // plans.size() is the number of steps to run; sampling steps need x.
  RolloutVars unroll(Tape<T>& tape, const Tensor4<T>* x, int batch,
                     const std::vector<StepPlan<T>>& plans,
                     bool track_grads) const {
    if (x) {
      if (x->n != batch)
        throw ContractError("unroll: batch " + std::to_string(batch) +
                            " vs input " + x->shape_str());
      if (x->c != cfg.input_c || x->h != cfg.input_h || x->w != cfg.input_w)
        throw ContractError("unroll: input " + x->shape_str() +
                            " does not match config");
    }
    Ctx c;
    c.tape = &tape;
    c.batch = batch;
    leaf_params(c, track_grads);
    state_from_biases(c);
    if (x) c.x = tape.leaf(*x, false);

    RolloutVars out;
    out.param_vars = c.pv_list;
    const int layers = eff_layers();
    Tensor4<T> zero_pi(batch, 1, 1, 1);
    int kl_pi = tape.leaf(zero_pi, false);
    for (size_t t = 0; t < plans.size(); ++t) {
      const StepPlan<T>& plan = plans[t];
      if (static_cast<int>(plan.z.size()) != layers)
        throw ContractError("unroll: step " + std::to_string(t) + " has " +
                            std::to_string(plan.z.size()) + " z sources for " +
                            std::to_string(layers) + " layers");
      if (!plan.generate && c.x < 0)
        throw ContractError("unroll: inference step without an input image");
      StepTraceVars tv = timestep(c, plan);
      tv.t = static_cast<int>(t);
      for (const auto& lt : tv.layers)
        if (lt.kl >= 0) kl_pi = tape.add(kl_pi, tape.sum_per_image(lt.kl));
      out.steps.push_back(std::move(tv));
    }
    out.r_final = c.r;
    out.canvas_means = canvas_means_on_tape(c, c.r);
    out.kl_per_image = kl_pi;
    if (c.x >= 0 && x) {
      out.lx_per_image = lx_on_tape(c, *x);
      int per_image = tape.add(
          tape.scale(out.lx_per_image, static_cast<T>(cfg.beta)), kl_pi);
      out.loss = tape.scale(tape.sum_all(per_image),
                            static_cast<T>(1.0 / batch));
    }
    return out;
  }

  GradMap<T> collect_grads(Tape<T>& tape, const RolloutVars& rv) const {
    GradMap<T> g;
    for (const auto& [name, var] : rv.param_vars) g[name] = tape.grad(var);
    return g;
  }

  // ---- plain-tensor step API ----

  DrawState<T> init_state(int batch) const {
    if (batch < 1) throw ContractError("init_state: batch must be >= 1");
    Tape<T> tape;
    Ctx c;
    c.tape = &tape;
    c.batch = batch;
    leaf_params(c, false);
    state_from_biases(c);
    return state_values(c);
  }

  // One inference timestep. noise: one tensor per effective layer, drawn
  // from rng when absent.
  std::pair<DrawState<T>, TimestepTrace<T>> inference_step(
      const DrawState<T>& state, const Tensor4<T>& x,
      const std::vector<Tensor4<T>>* noise, Rng* rng = nullptr) const {
    StepPlan<T> plan;
    fill_noise_plan(plan, noise, rng, x.n, false, 0.0);
    return run_plain_step(state, &x, plan);
  }

  std::pair<DrawState<T>, TimestepTrace<T>> two_layer_step(
      const DrawState<T>& state, const Tensor4<T>& x,
      const std::vector<Tensor4<T>>* noise, Rng* rng = nullptr) const {
    if (cfg.layers != 2)
      throw ContractError("two_layer_step: model has one layer");
    return inference_step(state, x, noise, rng);
  }

  std::pair<DrawState<T>, TimestepTrace<T>> generation_step(
      const DrawState<T>& state, double lambda,
      const std::vector<Tensor4<T>>* noise, Rng* rng = nullptr) const {
    if (lambda < 0 || lambda > 1)
      throw ContractError("generation_step: lambda must lie in [0,1]");
    StepPlan<T> plan;
    fill_noise_plan(plan, noise, rng, state.r.n, true, lambda);
    return run_plain_step(state, nullptr, plan);
  }

  // Arbitrary plan step (codec paths use this with ZSource::chooser).
  std::pair<DrawState<T>, TimestepTrace<T>> run_plain_step(
      const DrawState<T>& state, const Tensor4<T>* x,
      const StepPlan<T>& plan) const {
    Tape<T> tape;
    Ctx c;
    c.tape = &tape;
    c.batch = state.r.n;
    leaf_params(c, false);
    state_from(c, state);
    if (x) c.x = tape.leaf(*x, false);
    if (static_cast<int>(plan.z.size()) != eff_layers())
      throw ContractError("step: z sources do not match layer count");
    StepTraceVars tv = timestep(c, plan);
    TimestepTrace<T> trace = extract_trace(tape, tv);
    return {state_values(c), std::move(trace)};
  }

  // Mean-image channels of a canvas (Gaussian: mean planes; Bernoulli:
  // sigmoid of logits). Unclamped.
  Tensor4<T> canvas_means(const Tensor4<T>& r) const {
    Tensor4<T> out(r.n, cfg.input_c, r.h, r.w);
    if (cfg.likelihood == Likelihood::kDequantizedGaussian) {
      const size_t plane = static_cast<size_t>(r.h) * r.w;
      for (int n = 0; n < r.n; ++n)
        std::copy_n(&r.data[r.idx(n, 0, 0, 0)], cfg.input_c * plane,
                    &out.data[out.idx(n, 0, 0, 0)]);
    } else {
      for (size_t i = 0; i < out.data.size(); ++i) {
        const T v = r.data[i];
        out.data[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                : std::exp(v) / (T(1) + std::exp(v));
      }
    }
    return out;
  }

  // Reconstruction for display or MSE: means clamped to [0,1].
  Tensor4<T> emit_image(const Tensor4<T>& r) const {
    Tensor4<T> out = canvas_means(r);
    for (auto& v : out.data) v = std::min(std::max(v, T(0)), T(1));
    return out;
  }

  Tensor4<T> lx_per_image(const Tensor4<T>& x, const Tensor4<T>& r) const {
    switch (cfg.likelihood) {
      case Likelihood::kBernoulli:
        return input_nll_bernoulli(x, r);
      case Likelihood::kDequantizedGaussian:
        return cfg.bin_integrated_likelihood
                   ? input_nll_gaussian_bin(x, r, cfg.quant_step)
                   : input_nll_gaussian(x, r, cfg.quant_step);
    }
    throw ContractError("lx_per_image: bad likelihood");
  }

  // Inference for t < t_keep (z sampled from q), generation at temperature
  // lambda for the rest; returns canvas means clamped to [0,1].
  Tensor4<T> reconstruct_partial(const Tensor4<T>& x, int t_keep,
                                 double lambda, Rng& rng) const {
    if (t_keep < 0 || t_keep > cfg.timesteps)
      throw ContractError("reconstruct_partial: t_keep " +
                          std::to_string(t_keep) + " outside [0," +
                          std::to_string(cfg.timesteps) + "]");
    DrawState<T> s = init_state(x.n);
    for (int t = 0; t < cfg.timesteps; ++t) {
      if (t < t_keep)
        s = inference_step(s, x, nullptr, &rng).first;
      else
        s = generation_step(s, lambda, nullptr, &rng).first;
    }
    return emit_image(s.r);
  }

 private:
  struct Ctx {
    Tape<T>* tape = nullptr;
    std::unordered_map<std::string, int> pv;
    std::vector<std::pair<std::string, int>> pv_list;
    int batch = 0;
    int x = -1;
    int r = -1;
    std::vector<int> eh, ec, dh, dc;  // per layer
  };

  int pad() const { return cfg.kernel / 2; }

  int P(Ctx& c, const std::string& name) const {
    auto it = c.pv.find(name);
    if (it == c.pv.end())
      throw ContractError("model: parameter " + name + " not materialized");
    return it->second;
  }

  void build_param_shapes() {
    const int C = cfg.input_c, R = cfg.canvas_c();
    const int k = cfg.kernel;
    const int E1 = cfg.lstm_maps[0], L1 = cfg.latent_maps[0];
    const int H1 = cfg.layer_h(0), W1 = cfg.layer_w(0);
    const bool fixed = cfg.fixed_posterior_variance;

    params.create("init.r", 1, R, cfg.input_h, cfg.input_w);
    params.create("init.enc1.h", 1, E1, H1, W1);
    params.create("init.enc1.c", 1, E1, H1, W1);
    params.create("init.dec1.h", 1, E1, H1, W1);
    params.create("init.dec1.c", 1, E1, H1, W1);
    params.create("enc1.x.w", 4 * E1, 2 * C, k, k);
    params.create("enc1.h.w", 4 * E1, E1, k, k);
    params.create("enc1.hd.w", 4 * E1, E1, 1, 1);
    params.create("enc1.b", 1, 4 * E1, 1, 1);
    params.create("q1.w", fixed ? L1 : 2 * L1, E1, k, k);
    params.create("q1.b", 1, fixed ? L1 : 2 * L1, 1, 1);
    if (fixed) params.create("q1.logvar", 1, L1, 1, 1);
    params.create("p1.w", 2 * L1, E1, k, k);
    params.create("p1.b", 1, 2 * L1, 1, 1);
    params.create("dec1.z.w", 4 * E1, L1, k, k);
    params.create("dec1.h.w", 4 * E1, E1, k, k);
    params.create("dec1.r.w", 4 * E1, R, k, k);
    params.create("dec1.b", 1, 4 * E1, 1, 1);
    params.create("write.w", E1, R, k, k);
    params.create("write.b", 1, R, 1, 1);
    lstm_bias_params_ = {"enc1.b", "dec1.b"};
    deconv_params_ = {"write.w"};

    if (eff_layers() == 2) {
      const int E2 = cfg.lstm_maps[1], L2 = cfg.latent_maps[1];
      const int H2 = cfg.layer_h(1), W2 = cfg.layer_w(1);
      params.create("init.enc2.h", 1, E2, H2, W2);
      params.create("init.enc2.c", 1, E2, H2, W2);
      params.create("init.dec2.h", 1, E2, H2, W2);
      params.create("init.dec2.c", 1, E2, H2, W2);
      params.create("enc2.in.w", 4 * E2, L1, k, k);
      params.create("enc2.h.w", 4 * E2, E2, k, k);
      params.create("enc2.hd.w", 4 * E2, E2, 1, 1);
      params.create("enc2.b", 1, 4 * E2, 1, 1);
      params.create("q2.w", fixed ? L2 : 2 * L2, E2, k, k);
      params.create("q2.b", 1, fixed ? L2 : 2 * L2, 1, 1);
      if (fixed) params.create("q2.logvar", 1, L2, 1, 1);
      params.create("p2.w", 2 * L2, E2, k, k);
      params.create("p2.b", 1, 2 * L2, 1, 1);
      params.create("dec2.z.w", 4 * E2, L2, k, k);
      params.create("dec2.h.w", 4 * E2, E2, k, k);
      params.create("dec2.b", 1, 4 * E2, 1, 1);
      params.create("p1.hd2.w", E2, 2 * L1, k, k);
      params.create("dec1.hd2.w", E2, 4 * E1, k, k);
      lstm_bias_params_.push_back("enc2.b");
      lstm_bias_params_.push_back("dec2.b");
      deconv_params_.insert("p1.hd2.w");
      deconv_params_.insert("dec1.hd2.w");
    }
  }

  void leaf_params(Ctx& c, bool track) const {
    for (const auto& e : params.entries) {
      if (e.name.rfind("codec.", 0) == 0) continue;  // calibration data
      int v = c.tape->leaf(e.value, track);
      c.pv[e.name] = v;
      c.pv_list.emplace_back(e.name, v);
    }
  }

  void state_from_biases(Ctx& c) const {
    Tape<T>& t = *c.tape;
    c.r = t.broadcast_batch(P(c, "init.r"), c.batch);
    c.eh.assign(eff_layers(), -1);
    c.ec = c.dh = c.dc = c.eh;
    for (int l = 0; l < eff_layers(); ++l) {
      const std::string s = std::to_string(l + 1);
      c.eh[l] = t.broadcast_batch(P(c, "init.enc" + s + ".h"), c.batch);
      c.ec[l] = t.broadcast_batch(P(c, "init.enc" + s + ".c"), c.batch);
      c.dh[l] = t.broadcast_batch(P(c, "init.dec" + s + ".h"), c.batch);
      c.dc[l] = t.broadcast_batch(P(c, "init.dec" + s + ".c"), c.batch);
    }
  }

  void state_from(Ctx& c, const DrawState<T>& s) const {
    Tape<T>& t = *c.tape;
    if (static_cast<int>(s.enc.size()) != eff_layers() ||
        static_cast<int>(s.dec.size()) != eff_layers())
      throw ContractError("state has wrong layer count");
    c.r = t.leaf(s.r, false);
    c.eh.assign(eff_layers(), -1);
    c.ec = c.dh = c.dc = c.eh;
    for (int l = 0; l < eff_layers(); ++l) {
      c.eh[l] = t.leaf(s.enc[l].h, false);
      c.ec[l] = t.leaf(s.enc[l].c, false);
      c.dh[l] = t.leaf(s.dec[l].h, false);
      c.dc[l] = t.leaf(s.dec[l].c, false);
    }
  }

  DrawState<T> state_values(const Ctx& c) const {
    DrawState<T> s;
    s.r = c.tape->val(c.r);
    for (int l = 0; l < eff_layers(); ++l) {
      s.enc.push_back({c.tape->val(c.eh[l]), c.tape->val(c.ec[l])});
      s.dec.push_back({c.tape->val(c.dh[l]), c.tape->val(c.dc[l])});
    }
    return s;
  }

  void fill_noise_plan(StepPlan<T>& plan, const std::vector<Tensor4<T>>* noise,
                       Rng* rng, int batch, bool generate,
                       double lambda) const {
    plan.generate = generate;
    if (noise && static_cast<int>(noise->size()) != eff_layers())
      throw ContractError("step: need one noise tensor per layer");
    plan.owned_noise.clear();
    for (int l = 0; l < eff_layers(); ++l) {
      const Tensor4<T>* n = nullptr;
      if (noise) {
        n = &(*noise)[l];
      } else if (generate && lambda == 0.0) {
        n = nullptr;  // unused
      } else {
        if (!rng)
          throw ContractError("step: need either noise tensors or an rng");
        plan.owned_noise.push_back(
            std::make_unique<Tensor4<T>>(latent_noise(batch, l, *rng)));
        n = plan.owned_noise.back().get();
      }
      plan.z.push_back(generate ? ZSource<T>::sample_prior(lambda, n)
                                : ZSource<T>::sample_q(n));
    }
  }

  // ---- tape-level step ----

  int kl_on_tape(Tape<T>& t, int qm, int ql, int pm, int pl) const {
    int a = t.scale(t.sub(pl, ql), T(0.5));
    int b = t.scale(
        t.mul(t.add(t.exp_(ql), t.square(t.sub(qm, pm))),
              t.exp_(t.scale(pl, T(-1)))),
        T(0.5));
    return t.clamp(t.add_const(t.add(a, b), T(-0.5)), T(0), T(1e30));
  }

  std::pair<int, int> q_head(Ctx& c, int layer, int he) const {
    Tape<T>& t = *c.tape;
    const std::string n = "q" + std::to_string(layer + 1);
    const int L = latent_c(layer);
    int out = t.conv(he, P(c, n + ".w"), P(c, n + ".b"), 1, pad());
    if (cfg.fixed_posterior_variance) {
      int lv = t.clamp(
          t.broadcast_chan(P(c, n + ".logvar"), c.batch, latent_h(layer),
                           latent_w(layer)),
          T(kLogVarMin), T(kLogVarMax));
      return {out, lv};
    }
    int mu = t.slice_c(out, 0, L);
    int lv = t.clamp(t.slice_c(out, L, 2 * L), T(kLogVarMin), T(kLogVarMax));
    return {mu, lv};
  }

  std::pair<int, int> split_prior(Ctx& c, int raw, int L) const {
    Tape<T>& t = *c.tape;
    int mu = t.slice_c(raw, 0, L);
    int lv = t.clamp(t.slice_c(raw, L, 2 * L), T(kLogVarMin), T(kLogVarMax));
    return {mu, lv};
  }

  int make_z(Ctx& c, const ZSource<T>& zs, int qm, int ql, int pm, int pl,
             int layer) const {
    Tape<T>& t = *c.tape;
    const int N = c.batch, L = latent_c(layer);
    const int h = latent_h(layer), w = latent_w(layer);
    auto check_noise = [&](const Tensor4<T>* n) {
      if (!n)
        throw ContractError("z source: missing noise tensor");
      if (n->n != N || n->c != L || n->h != h || n->w != w)
        throw ContractError("z source: noise " + n->shape_str() +
                            " does not match latent shape");
    };
    switch (zs.kind) {
      case ZSource<T>::Kind::kSampleQ: {
        if (qm < 0) throw ContractError("z source: no posterior on this step");
        check_noise(zs.noise);
        int sigma = t.exp_(t.scale(ql, T(0.5)));
        return t.add(qm, t.mul(sigma, t.leaf(*zs.noise, false)));
      }
      case ZSource<T>::Kind::kSamplePrior: {
        if (zs.lambda == 0.0) return pm;
        check_noise(zs.noise);
        int sigma = t.exp_(t.scale(pl, T(0.5)));
        return t.add(pm, t.scale(t.mul(sigma, t.leaf(*zs.noise, false)),
                                 static_cast<T>(zs.lambda)));
      }
      case ZSource<T>::Kind::kRecorded: {
        check_noise(zs.recorded);
        return t.leaf(*zs.recorded, false);
      }
      case ZSource<T>::Kind::kChoose: {
        GaussianParamsT<T> q, p;
        if (qm >= 0) q = {t.val(qm), t.val(ql)};
        p = {t.val(pm), t.val(pl)};
        Tensor4<T> z = zs.choose(q, p);
        if (z.n != N || z.c != L || z.h != h || z.w != w)
          throw ContractError("z source: chosen z " + z.shape_str() +
                              " does not match latent shape");
        return t.leaf(std::move(z), false);
      }
    }
    throw ContractError("z source: bad kind");
  }

  StepTraceVars timestep(Ctx& c, const StepPlan<T>& plan) const {
    Tape<T>& t = *c.tape;
    const int C = cfg.input_c;
    const int layers = eff_layers();
    StepTraceVars tv;
    tv.layers.resize(layers);

    // Layer-1 encoder and posterior (inference steps only).
    if (!plan.generate) {
      int r_means = cfg.likelihood == Likelihood::kDequantizedGaussian
                        ? t.slice_c(c.r, 0, C)
                        : c.r;
      int eps = t.sub(c.x, r_means);
      int xe = t.concat_c(c.x, eps);
      int gates = t.conv(xe, P(c, "enc1.x.w"), P(c, "enc1.b"), cfg.stride,
                         pad());
      gates = t.add(gates, t.conv(c.eh[0], P(c, "enc1.h.w"), -1, 1, pad()));
      gates = t.add(gates, t.conv(c.dh[0], P(c, "enc1.hd.w"), -1, 1, 0));
      auto [eh1, ec1] = lstm_gates_apply(t, gates, c.ec[0], cfg.lstm_maps[0]);
      c.eh[0] = eh1;
      c.ec[0] = ec1;
      auto [qm, ql] = q_head(c, 0, eh1);
      tv.layers[0].q_mu = qm;
      tv.layers[0].q_lv = ql;

      if (layers == 2) {
        int g2 = t.conv(qm, P(c, "enc2.in.w"), P(c, "enc2.b"), cfg.stride,
                        pad());
        g2 = t.add(g2, t.conv(c.eh[1], P(c, "enc2.h.w"), -1, 1, pad()));
        g2 = t.add(g2, t.conv(c.dh[1], P(c, "enc2.hd.w"), -1, 1, 0));
        auto [eh2, ec2] = lstm_gates_apply(t, g2, c.ec[1], cfg.lstm_maps[1]);
        c.eh[1] = eh2;
        c.ec[1] = ec2;
        auto [qm2, ql2] = q_head(c, 1, eh2);
        tv.layers[1].q_mu = qm2;
        tv.layers[1].q_lv = ql2;
      }
    }

    // Top layer first: prior from the pre-update decoder state, z, decoder
    // update. For two layers the updated top state then biases layer 1's
    // prior and decoder.
    int dh2_new = -1;
    if (layers == 2) {
      auto [pm2, pl2] = split_prior(
          c, t.conv(c.dh[1], P(c, "p2.w"), P(c, "p2.b"), 1, pad()),
          latent_c(1));
      tv.layers[1].p_mu = pm2;
      tv.layers[1].p_lv = pl2;
      int z2 = make_z(c, plan.z[1], tv.layers[1].q_mu, tv.layers[1].q_lv, pm2,
                      pl2, 1);
      tv.layers[1].z = z2;
      if (tv.layers[1].q_mu >= 0)
        tv.layers[1].kl =
            kl_on_tape(t, tv.layers[1].q_mu, tv.layers[1].q_lv, pm2, pl2);
      int gd2 = t.conv(z2, P(c, "dec2.z.w"), P(c, "dec2.b"), 1, pad());
      gd2 = t.add(gd2, t.conv(c.dh[1], P(c, "dec2.h.w"), -1, 1, pad()));
      auto [dh2, dc2] = lstm_gates_apply(t, gd2, c.dc[1], cfg.lstm_maps[1]);
      dh2_new = dh2;
      c.dh[1] = dh2;
      c.dc[1] = dc2;
    }

    // Layer-1 prior (uses the updated top decoder state in two-layer mode).
    int p1_raw = t.conv(c.dh[0], P(c, "p1.w"), P(c, "p1.b"), 1, pad());
    if (layers == 2)
      p1_raw = t.add(p1_raw,
                     t.deconv(dh2_new, P(c, "p1.hd2.w"), -1, cfg.stride, pad(),
                              latent_h(0), latent_w(0)));
    auto [pm1, pl1] = split_prior(c, p1_raw, latent_c(0));
    tv.layers[0].p_mu = pm1;
    tv.layers[0].p_lv = pl1;
    int z1 = make_z(c, plan.z[0], tv.layers[0].q_mu, tv.layers[0].q_lv, pm1,
                    pl1, 0);
    tv.layers[0].z = z1;
    if (tv.layers[0].q_mu >= 0)
      tv.layers[0].kl =
          kl_on_tape(t, tv.layers[0].q_mu, tv.layers[0].q_lv, pm1, pl1);

    // Layer-1 decoder consumes z, its own state, the canvas, and (two-layer)
    // the updated top state; then writes the canvas.
    int gd1 = t.conv(z1, P(c, "dec1.z.w"), P(c, "dec1.b"), 1, pad());
    gd1 = t.add(gd1, t.conv(c.dh[0], P(c, "dec1.h.w"), -1, 1, pad()));
    gd1 = t.add(gd1, t.conv(c.r, P(c, "dec1.r.w"), -1, cfg.stride, pad()));
    if (layers == 2)
      gd1 = t.add(gd1,
                  t.deconv(dh2_new, P(c, "dec1.hd2.w"), -1, cfg.stride, pad(),
                           latent_h(0), latent_w(0)));
    auto [dh1, dc1] = lstm_gates_apply(t, gd1, c.dc[0], cfg.lstm_maps[0]);
    c.dh[0] = dh1;
    c.dc[0] = dc1;
    c.r = t.add(c.r, t.deconv(dh1, P(c, "write.w"), P(c, "write.b"),
                              cfg.stride, pad(), cfg.input_h, cfg.input_w));
    return tv;
  }

  int canvas_means_on_tape(Ctx& c, int r) const {
    Tape<T>& t = *c.tape;
    if (cfg.likelihood == Likelihood::kDequantizedGaussian)
      return t.slice_c(r, 0, cfg.input_c);
    return t.sigmoid(r);
  }

  int lx_on_tape(Ctx& c, const Tensor4<T>& x) const {
    Tape<T>& t = *c.tape;
    const int C = cfg.input_c;
    if (cfg.likelihood == Likelihood::kBernoulli) {
      int term = t.sub(t.softplus(c.r), t.mul(c.x, c.r));
      return t.sum_per_image(term);
    }
    int mu = t.slice_c(c.r, 0, C);
    int alpha = t.clamp(t.slice_c(c.r, C, 2 * C), T(kLogVarMin),
                        T(kLogVarMax));
    if (cfg.bin_integrated_likelihood) {
      int term = t.gauss_bin_nll(mu, alpha, x,
                                 static_cast<T>(cfg.quant_step));
      return t.sum_per_image(term);
    }
    const T base = static_cast<T>(std::log(1.0 / cfg.quant_step) +
                                  0.5 * std::log(2.0 * M_PI));
    int quad = t.mul(t.square(t.sub(c.x, mu)),
                     t.scale(t.exp_(t.scale(alpha, T(-1))), T(0.5)));
    int term = t.add_const(t.add(t.scale(alpha, T(0.5)), quad), base);
    return t.sum_per_image(term);
  }

  TimestepTrace<T> extract_trace(Tape<T>& t, const StepTraceVars& tv) const {
    TimestepTrace<T> out;
    out.t = tv.t;
    for (const auto& l : tv.layers) {
      typename TimestepTrace<T>::Layer lt;
      if (l.q_mu >= 0) lt.q = {t.val(l.q_mu), t.val(l.q_lv)};
      lt.p = {t.val(l.p_mu), t.val(l.p_lv)};
      lt.z = t.val(l.z);
      if (l.kl >= 0) lt.kl = t.val(l.kl);
      out.layers.push_back(std::move(lt));
    }
    return out;
  }

  std::vector<std::string> lstm_bias_params_;
  std::set<std::string> deconv_params_;
};

// Per-image ELBO in nats: beta * lx + sum of all KL mass, from plain traces.
template <typename T>
Tensor4<T> elbo_per_image(const std::vector<TimestepTrace<T>>& traces,
                          const Tensor4<T>& lx, double beta) {
  Tensor4<T> out = lx;
  for (auto& v : out.data) v *= static_cast<T>(beta);
  for (const auto& tr : traces)
    for (const auto& l : tr.layers) {
      if (l.kl.empty()) continue;
      const size_t per = l.kl.data.size() / l.kl.n;
      for (int n = 0; n < l.kl.n; ++n) {
        T s = T(0);
        for (size_t i = 0; i < per; ++i) s += l.kl.data[n * per + i];
        out.data[n] += s;
      }
    }
  return out;
}

// Mean over the batch, scalar nats.
template <typename T>
double elbo_loss(const std::vector<TimestepTrace<T>>& traces,
                 const Tensor4<T>& lx, double beta) {
  Tensor4<T> per = elbo_per_image(traces, lx, beta);
  double acc = 0;
  for (const auto& v : per.data) acc += static_cast<double>(v);
  return acc / per.n;
}

}  // namespace cdraw

#endif  // CDRAW_MODEL_H_
