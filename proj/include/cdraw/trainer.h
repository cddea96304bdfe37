#ifndef CDRAW_TRAINER_H_
#define CDRAW_TRAINER_H_

#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cdraw/dataset.h"
#include "cdraw/likelihood.h"
#include "cdraw/model.h"
#include "cdraw/params.h"

namespace cdraw {

struct TrainOptions {
  int batch = 32;
  AdamConfig adam;      // lr 0 disables the update entirely
  double clip_norm = 0;  // global-norm clip; 0 = off, guard value 10
  double spike_threshold = 3.0;
  double ema_decay = 0.99;
  int snapshot_interval = 500;
  uint64_t seed = 0;
  std::optional<Binarize> binarize;  // default: dynamic for Bernoulli input
  double threshold = 0.5;
};

template <typename T>
struct RollbackGuard {
  ParamStore<T> snapshot;  // includes Adam moments and step counter
  long snapshot_step = 0;
  double spike_threshold = 3.0;
  double ema_decay = 0.99;
  int snapshot_interval = 500;
  double ema_loss = 0;
  bool initialized = false;  // set by the first finite observed loss
};

enum class StepOutcome { kKept, kReverted };

// Spike rule: revert when the loss is non-finite or exceeds the EMA by
// (threshold - 1) x |EMA|, which for positive EMA is exactly
// loss > threshold * EMA and stays meaningful if the bound goes negative
// (dense Gaussian fits can push nats below zero). A kept step updates the
// EMA and refreshes the snapshot every snapshot_interval steps.
template <typename T>
StepOutcome maybe_rollback(RollbackGuard<T>& g, ParamStore<T>& params,
                           double loss, long step) {
  if (!g.initialized) {
    if (!std::isfinite(loss)) {
      params = g.snapshot;
      return StepOutcome::kReverted;
    }
    g.ema_loss = loss;
    g.initialized = true;
    return StepOutcome::kKept;
  }
  if (!std::isfinite(loss) ||
      loss - g.ema_loss > (g.spike_threshold - 1.0) * std::abs(g.ema_loss)) {
    params = g.snapshot;
    return StepOutcome::kReverted;
  }
  g.ema_loss = g.ema_decay * g.ema_loss + (1.0 - g.ema_decay) * loss;
  if (step - g.snapshot_step >= g.snapshot_interval) {
    g.snapshot = params;
    g.snapshot_step = step;
  }
  return StepOutcome::kKept;
}

struct TrainRecord {
  long step = 0;
  double wall_ms = 0;
  double loss_nats = 0;
  double loss_bits_per_dim = 0;
  double kl_nats = 0;
  double lx_nats = 0;
  bool reverted = false;  // in-memory only, not a CSV column
};

inline std::string train_log_csv(const std::vector<TrainRecord>& log) {
  std::string out = "step,wall_ms,loss_nats,loss_bits_per_dim,kl_nats,lx_nats\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.step, r.wall_ms, r.loss_nats, r.loss_bits_per_dim,
                  r.kl_nats, r.lx_nats);
    out += buf;
  }
  return out;
}

// Minibatch training loop: forward the full unroll, let the rollback guard
// veto the step, then backprop and apply Adam. One thread owns the
// parameters; everything stochastic descends from opts.seed.
template <typename T>
class Trainer {
 public:
  Trainer(ConvDraw<T>& model, const Dataset& data, const TrainOptions& opts)
      : model_(model),
        opts_(opts),
        stream_(data, opts.batch, opts.seed, batch_options(model.cfg, opts)),
        noise_rng_(Rng(opts.seed).fork(0x6c6174656e74)),
        start_(Clock::now()) {
    guard_.spike_threshold = opts.spike_threshold;
    guard_.ema_decay = opts.ema_decay;
    guard_.snapshot_interval = opts.snapshot_interval;
    guard_.snapshot = model.params;
  }

  static BatchOptions batch_options(const ModelConfig& cfg,
                                    const TrainOptions& o) {
    BatchOptions b;
    b.binarize = o.binarize.value_or(cfg.likelihood == Likelihood::kBernoulli
                                         ? Binarize::kDynamic
                                         : Binarize::kNone);
    b.threshold = o.threshold;
    b.dequant_s = cfg.likelihood == Likelihood::kDequantizedGaussian
                      ? cfg.quant_step
                      : 0.0;
    return b;
  }

  TrainRecord step() {
    Tensor4<T> x = stream_.next();
    const int n = x.n;
    std::vector<StepPlan<T>> plans(model_.cfg.timesteps);
    for (auto& plan : plans) {
      for (int l = 0; l < model_.eff_layers(); ++l) {
        plan.owned_noise.push_back(std::make_unique<Tensor4<T>>(
            model_.latent_noise(n, l, noise_rng_)));
        plan.z.push_back(ZSource<T>::sample_q(plan.owned_noise.back().get()));
      }
    }

    Tape<T> tape;
    RolloutVars rv = model_.unroll(tape, &x, n, plans, true);
    const double loss = static_cast<double>(tape.val(rv.loss).data[0]);

    TrainRecord rec;
    rec.step = ++step_;
    rec.loss_nats = loss;
    rec.loss_bits_per_dim =
        nats_to_bits_per_dim(loss, model_.cfg.pixel_dims());
    rec.kl_nats = batch_mean(tape.val(rv.kl_per_image));
    rec.lx_nats = batch_mean(tape.val(rv.lx_per_image));

    StepOutcome outcome = maybe_rollback(guard_, model_.params, loss, step_);
    if (outcome == StepOutcome::kKept && opts_.adam.lr > 0) {
      try {
        tape.backward(rv.loss);
        GradMap<T> grads = model_.collect_grads(tape, rv);
        if (opts_.clip_norm > 0) clip_grads_by_norm(grads, opts_.clip_norm);
        adam_step(model_.params, grads, opts_.adam);
      } catch (const NumericFault&) {
        // adam_step aborts before touching state, so the snapshot restore
        // only rewinds whatever earlier kept steps had changed.
        model_.params = guard_.snapshot;
        outcome = StepOutcome::kReverted;
      }
    }
    rec.reverted = outcome == StepOutcome::kReverted;
    rec.wall_ms = elapsed_ms();
    log_.push_back(rec);
    return rec;
  }

  long steps_taken() const { return step_; }
  const std::vector<TrainRecord>& log() const { return log_; }
  RollbackGuard<T>& guard() { return guard_; }
  const RollbackGuard<T>& guard() const { return guard_; }
  int epoch() const { return stream_.epoch(); }
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(Clock::now() - start_)
        .count();
  }

 private:
  using Clock = std::chrono::steady_clock;

  static double batch_mean(const Tensor4<T>& per_image) {
    double s = 0;
    for (const auto& v : per_image.data) s += static_cast<double>(v);
    return s / per_image.n;
  }

  ConvDraw<T>& model_;
  TrainOptions opts_;
  BatchStream<T> stream_;
  Rng noise_rng_;
  RollbackGuard<T> guard_;
  std::vector<TrainRecord> log_;
  long step_ = 0;
  Clock::time_point start_;
};

struct BenchRow {
  int n_t = 0;
  long examples_seen = 0;
  double wall_ms = 0;
  double loss_nats = 0;
  double loss_ema_nats = 0;
};

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "n_t,examples_seen,wall_ms,loss_nats,loss_ema_nats\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%ld,%.17g,%.17g,%.17g\n", r.n_t,
                  r.examples_seen, r.wall_ms, r.loss_nats, r.loss_ema_nats);
    out += buf;
  }
  return out;
}

// Trains one fresh model per timestep count, identical otherwise, and
// tabulates loss against examples seen and against wall clock.
template <typename T>
std::vector<BenchRow> bench_depth(const ModelConfig& base, const Dataset& data,
                                  const std::vector<int>& t_grid,
                                  long example_budget,
                                  const TrainOptions& opts,
                                  int record_points = 10) {
  if (t_grid.empty()) throw ContractError("bench_depth: empty grid");
  if (example_budget < opts.batch)
    throw ContractError("bench_depth: budget below one batch");
  std::vector<BenchRow> rows;
  for (int nt : t_grid) {
    ModelConfig cfg = base;
    cfg.timesteps = nt;
    ConvDraw<T> model(cfg);
    Rng init(opts.seed);
    model.init_params(init);
    Trainer<T> trainer(model, data, opts);
    const long steps = (example_budget + opts.batch - 1) / opts.batch;
    const long every = steps < record_points ? 1 : steps / record_points;
    for (long s = 1; s <= steps; ++s) {
      TrainRecord rec = trainer.step();
      if (s % every == 0 || s == steps) {
        BenchRow row;
        row.n_t = nt;
        row.examples_seen = s * opts.batch;
        row.wall_ms = rec.wall_ms;
        row.loss_nats = rec.loss_nats;
        row.loss_ema_nats = trainer.guard().ema_loss;
        rows.push_back(row);
      }
    }
  }
  return rows;
}

}  // namespace cdraw

#endif  // CDRAW_TRAINER_H_
