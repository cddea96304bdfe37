// Command-line front end: training, evaluation, compression, and the
// reporting pipelines, all keyed by an explicit seed so identical invocations
// produce identical artifacts.
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cdraw/analysis.h"
#include "cdraw/checkpoint.h"
#include "cdraw/codec.h"
#include "cdraw/config.h"
#include "cdraw/dataset.h"
#include "cdraw/error.h"
#include "cdraw/model.h"
#include "cdraw/ppm.h"
#include "cdraw/trainer.h"

namespace {

constexpr uint64_t kDefaultSeed = 1234;

int verbosity() {
  const char* v = std::getenv("CDRAW_VERBOSE");
  return v ? std::atoi(v) : 1;
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// defaults < config file < --set flags, with typo rejection after all
// consumers have read their keys.
cdraw::KeyValueConfig merged_kv(const std::string& config_path,
                                const std::vector<std::string>& sets) {
  cdraw::KeyValueConfig kv;
  if (!config_path.empty()) kv = cdraw::KeyValueConfig::load(config_path);
  for (const std::string& s : sets) {
    const size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw UsageError("--set expects key=value, got '" + s + "'");
    }
    std::string key = s.substr(0, eq);
    std::string value = s.substr(eq + 1);
    while (!key.empty() && key.back() == ' ') key.pop_back();
    while (!value.empty() && value.front() == ' ') value.erase(0, 1);
    kv.set(key, value);
  }
  return kv;
}

void reject_unused(const cdraw::KeyValueConfig& kv) {
  const auto unused = kv.unused_keys();
  if (unused.empty()) return;
  std::string msg = "unknown config keys:";
  for (const auto& k : unused) msg += " " + k;
  throw UsageError(msg);
}

cdraw::TrainOptions train_options_from(cdraw::KeyValueConfig& kv,
                                       const cdraw::ModelConfig& cfg) {
  cdraw::TrainOptions o;
  o.batch = kv.get_int("train.batch", o.batch);
  o.adam.lr = kv.get_double("train.lr", o.adam.lr);
  o.adam.beta1 = kv.get_double("train.beta1", o.adam.beta1);
  o.adam.beta2 = kv.get_double("train.beta2", o.adam.beta2);
  o.clip_norm = kv.get_double("train.clip_norm", o.clip_norm);
  o.spike_threshold = kv.get_double("train.spike_threshold", o.spike_threshold);
  o.ema_decay = kv.get_double("train.ema_decay", o.ema_decay);
  o.snapshot_interval =
      kv.get_int("train.snapshot_interval", o.snapshot_interval);
  o.threshold = kv.get_double("train.threshold", o.threshold);
  const std::string bin = kv.get_string("train.binarize", "default");
  if (bin == "none") {
    o.binarize = cdraw::Binarize::kNone;
  } else if (bin == "dynamic") {
    o.binarize = cdraw::Binarize::kDynamic;
  } else if (bin == "threshold") {
    o.binarize = cdraw::Binarize::kThreshold;
  } else if (bin != "default") {
    throw UsageError("train.binarize must be default|none|dynamic|threshold");
  }
  (void)cfg;
  return o;
}

std::vector<int> parse_int_list(const std::string& text,
                                const std::string& flag) {
  std::vector<int> out;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const std::string tok = text.substr(pos, comma - pos);
    try {
      size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError(flag + " expects comma-separated integers, got '" +
                       text + "'");
    }
    pos = comma + 1;
  }
  if (out.empty()) throw UsageError(flag + " expects at least one integer");
  return out;
}

// ---- model loading -------------------------------------------------------

struct LoadedModel {
  cdraw::ModelConfig cfg;
  cdraw::ConvDraw<float> model;
};

LoadedModel load_model(const std::string& path) {
  auto loaded = cdraw::load_checkpoint<float>(path);
  if (!loaded.config.has_value()) {
    throw cdraw::IoError(path + ": checkpoint carries no model config");
  }
  LoadedModel lm{*loaded.config, cdraw::ConvDraw<float>(*loaded.config)};
  for (const auto& e : lm.model.params.entries) {
    if (!loaded.params.has(e.name)) {
      throw cdraw::IoError(path + ": checkpoint is missing parameter " +
                           e.name);
    }
    const auto& got = loaded.params.at(e.name);
    if (got.n != e.value.n || got.c != e.value.c || got.h != e.value.h ||
        got.w != e.value.w) {
      throw cdraw::IoError(path + ": parameter " + e.name +
                           " does not match the model config");
    }
  }
  lm.model.params = std::move(loaded.params);
  return lm;
}

// ---- image file I/O ------------------------------------------------------

cdraw::Tensor4<float> load_image(const std::string& path,
                                 const cdraw::ModelConfig& cfg) {
  const std::string bytes = cdraw::read_file_bytes(path);
  cdraw::Tensor4<float> x(1, cfg.input_c, cfg.input_h, cfg.input_w);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
    const auto img = cdraw::parse_ppm(bytes, path);
    if (img.w != cfg.input_w || img.h != cfg.input_h) {
      throw cdraw::IoError(path + ": image is " + std::to_string(img.w) + "x" +
                           std::to_string(img.h) + ", model expects " +
                           std::to_string(cfg.input_w) + "x" +
                           std::to_string(cfg.input_h));
    }
    for (int y = 0; y < cfg.input_h; ++y) {
      for (int xx = 0; xx < cfg.input_w; ++xx) {
        const uint8_t* px =
            &img.rgb[(static_cast<size_t>(y) * img.w + xx) * 3];
        if (cfg.input_c == 3) {
          for (int c = 0; c < 3; ++c) {
            x.data[x.idx(0, c, y, xx)] = px[c] / 255.0f;
          }
        } else if (cfg.input_c == 1) {
          if (px[0] != px[1] || px[0] != px[2]) {
            throw cdraw::IoError(path +
                                 ": color PPM fed to a single-channel model");
          }
          x.data[x.idx(0, 0, y, xx)] = px[0] / 255.0f;
        } else {
          throw cdraw::IoError(path + ": PPM input needs a 1- or 3-channel "
                                      "model");
        }
      }
    }
    return x;
  }
  const size_t want = static_cast<size_t>(cfg.pixel_dims());
  if (bytes.size() != want) {
    throw cdraw::IoError(path + ": raw image has " +
                         std::to_string(bytes.size()) + " bytes, model " +
                         "expects " + std::to_string(want) +
                         " (C*H*W unsigned bytes)");
  }
  for (size_t i = 0; i < want; ++i) {
    x.data[i] = static_cast<uint8_t>(bytes[i]) / 255.0f;
  }
  return x;
}

uint8_t to_byte(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

void write_image(const std::string& path, const cdraw::Tensor4<float>& x) {
  const bool ppm = path.size() >= 4 && path.rfind(".ppm") == path.size() - 4;
  if (ppm) {
    if (x.c != 1 && x.c != 3) {
      throw cdraw::ContractError("PPM output needs 1 or 3 channels");
    }
    cdraw::PpmImage img;
    img.w = x.w;
    img.h = x.h;
    img.rgb.resize(static_cast<size_t>(x.w) * x.h * 3);
    for (int y = 0; y < x.h; ++y) {
      for (int xx = 0; xx < x.w; ++xx) {
        uint8_t* px = &img.rgb[(static_cast<size_t>(y) * x.w + xx) * 3];
        for (int c = 0; c < 3; ++c) {
          px[c] = to_byte(x.data[x.idx(0, x.c == 3 ? c : 0, y, xx)]);
        }
      }
    }
    cdraw::write_ppm_file(path, img);
    return;
  }
  std::string out(x.size(), '\0');
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<char>(to_byte(x.data[i]));
  }
  cdraw::write_file_bytes(path, out);
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
  } else {
    cdraw::write_file_bytes(path, text);
  }
}

// Splits a batch tensor into grid rows of at most `per_row` images.
std::vector<cdraw::Tensor4<float>> grid_rows(const cdraw::Tensor4<float>& all,
                                             int per_row) {
  std::vector<cdraw::Tensor4<float>> rows;
  const size_t img = all.size() / all.n;
  for (int first = 0; first < all.n; first += per_row) {
    const int n = std::min(per_row, all.n - first);
    cdraw::Tensor4<float> row(n, all.c, all.h, all.w);
    std::copy_n(&all.data[img * first], img * n, row.data.begin());
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- subcommands ---------------------------------------------------------

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  uint64_t seed = kDefaultSeed;
};

int cmd_train(const CommonArgs& common, const std::string& data_path,
              const std::string& val_path, int steps_flag,
              const std::string& out_dir) {
  auto kv = merged_kv(common.config_path, common.sets);
  const auto cfg = cdraw::ModelConfig::from_kv(kv);
  auto opts = train_options_from(kv, cfg);
  opts.seed = common.seed;
  int steps = kv.get_int("train.steps", 200);
  const int calib_images = kv.get_int("train.calibrate_images", 64);
  reject_unused(kv);
  if (steps_flag >= 0) steps = steps_flag;

  const auto ds = cdraw::load_dataset_file(data_path, cfg.input_c, cfg.input_h,
                                           cfg.input_w);
  cdraw::ConvDraw<float> model(cfg);
  {
    cdraw::Rng rng(common.seed);
    model.init_params(rng);
  }
  cdraw::Trainer<float> trainer(model, ds, opts);
  const int report_every = std::max(1, steps / 10);
  for (int i = 0; i < steps; ++i) {
    const auto& rec = trainer.step();
    if (verbosity() >= 1 && ((i + 1) % report_every == 0 || i + 1 == steps)) {
      std::fprintf(stderr, "step %ld loss %.4f nats (%.4f bits/dim)%s\n",
                   rec.step, rec.loss_nats, rec.loss_bits_per_dim,
                   rec.reverted ? " [reverted]" : "");
    }
  }
  if (cfg.fixed_posterior_variance) {
    cdraw::calibrate_codec(model, ds, std::min(calib_images, ds.count));
  }

  const std::string ckpt = out_dir + "/model.ckpt";
  const std::string log = out_dir + "/train_log.csv";
  cdraw::save_checkpoint(ckpt, model.params, &cfg, true);
  cdraw::write_file_bytes(log, cdraw::train_log_csv(trainer.log()));
  std::printf("trained %ld steps on %d images, wrote %s and %s\n",
              trainer.steps_taken(), ds.count, ckpt.c_str(), log.c_str());

  if (!val_path.empty()) {
    const auto val = cdraw::load_dataset_file(val_path, cfg.input_c,
                                              cfg.input_h, cfg.input_w);
    const auto res = cdraw::eval_bound(model, val, 1, common.seed);
    std::printf("validation nats %.17g\nvalidation bits_per_dim %.17g\n",
                res.mean_nats, res.bits_per_dim);
  }
  return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& model_path,
             const std::string& data_path, int draws, int batch) {
  auto lm = load_model(model_path);
  const auto ds = cdraw::load_dataset_file(data_path, lm.cfg.input_c,
                                           lm.cfg.input_h, lm.cfg.input_w);
  const auto res =
      cdraw::eval_bound(lm.model, ds, draws, common.seed, batch, data_path);
  std::printf("images %d\n", res.images);
  std::printf("draws %d\n", res.noise_draws);
  std::printf("nats %.17g\n", res.mean_nats);
  std::printf("bits_per_dim %.17g\n", res.bits_per_dim);
  std::printf("lx_nats %.17g\n", res.lx_nats);
  std::printf("kl_nats %.17g\n", res.kl_nats);
  std::printf("stderr_nats %.17g\n", res.stderr_nats);
  return 0;
}

int cmd_compress(const CommonArgs& common, const std::string& model_path,
                 int t_keep, double lambda, const std::string& input,
                 const std::string& output) {
  auto lm = load_model(model_path);
  if (t_keep < 0) t_keep = lm.cfg.timesteps;
  const auto x = load_image(input, lm.cfg);
  const auto res = cdraw::compress(lm.model, x, t_keep, lambda, common.seed);
  cdraw::write_file_bytes(output, cdraw::serialize_bitstream(res.bs));
  std::printf("payload_bytes %zu\n", res.bs.payload.size());
  std::printf("bits_per_dim %.17g\n", res.report.bits_per_dim);
  std::printf("coder_ideal_bits %.17g\n", res.report.coder_ideal_bits);
  std::printf("kl_bits %.17g\n", res.report.kl_bits_total);
  std::printf("clamped %ld\n", res.report.clamped);
  return 0;
}

int cmd_decompress(const CommonArgs& common, const std::string& model_path,
                   const std::string& input, const std::string& output) {
  auto lm = load_model(model_path);
  const auto bs = cdraw::parse_bitstream(cdraw::read_file_bytes(input));
  const auto y = cdraw::decompress(lm.model, bs, common.seed);
  write_image(output, y);
  std::printf("wrote %s\n", output.c_str());
  return 0;
}

int cmd_sample(const CommonArgs& common, const std::string& model_path,
               int count, double lambda, const std::string& out_path) {
  auto lm = load_model(model_path);
  if (count < 1) throw UsageError("--count must be at least 1");
  cdraw::Rng rng(common.seed);
  auto state = lm.model.init_state(count);
  for (int t = 0; t < lm.cfg.timesteps; ++t) {
    state = lm.model
                .generation_step(state, lambda, nullptr,
                                 lambda > 0 ? &rng : nullptr)
                .first;
  }
  const auto imgs = lm.model.emit_image(state.r);
  cdraw::emit_grid(grid_rows(imgs, 8), out_path);
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int cmd_profile(const CommonArgs& common, const std::string& model_path,
                const std::string& data_path, int batch,
                const std::string& out_path) {
  auto lm = load_model(model_path);
  const auto ds = cdraw::load_dataset_file(data_path, lm.cfg.input_c,
                                           lm.cfg.input_h, lm.cfg.input_w);
  const auto prof = cdraw::kl_profile(lm.model, ds, common.seed, batch);
  write_text(out_path, prof.csv());
  return 0;
}

int cmd_bench(const CommonArgs& common, const std::string& data_path,
              const std::string& t_grid_text, int budget,
              const std::string& out_path) {
  auto kv = merged_kv(common.config_path, common.sets);
  const auto cfg = cdraw::ModelConfig::from_kv(kv);
  auto opts = train_options_from(kv, cfg);
  opts.seed = common.seed;
  // Step count and calibration belong to `train`; accept them here so the
  // same config file drives both subcommands.
  (void)kv.get_int("train.steps", 0);
  (void)kv.get_int("train.calibrate_images", 0);
  reject_unused(kv);
  const auto t_grid = parse_int_list(t_grid_text, "--t-grid");
  const auto ds = cdraw::load_dataset_file(data_path, cfg.input_c, cfg.input_h,
                                           cfg.input_w);
  const auto rows = cdraw::bench_depth<float>(cfg, ds, t_grid, budget, opts);
  write_text(out_path, cdraw::bench_csv(rows));
  return 0;
}

int cmd_progression(const CommonArgs& common, const std::string& model_path,
                    const std::string& data_path, int count,
                    const std::string& t_list_text, double lambda,
                    const std::string& out_path) {
  auto lm = load_model(model_path);
  const auto ds = cdraw::load_dataset_file(data_path, lm.cfg.input_c,
                                           lm.cfg.input_h, lm.cfg.input_w);
  count = std::min(count, ds.count);
  if (count < 1) throw UsageError("--count must be at least 1");
  const auto x = cdraw::dataset_images<float>(ds, 0, count);
  std::vector<int> t_list;
  if (!t_list_text.empty()) t_list = parse_int_list(t_list_text, "--t-list");
  cdraw::progression_sheet(lm.model, x, t_list, lambda, out_path, common.seed);
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"convolutional DRAW: training, evaluation, and progressive "
               "compression"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string data_path, val_path, model_path, input, output;
  std::string out_dir = ".";
  std::string csv_out;
  std::string sheet_out;
  std::string t_grid_text = "2,4,8";
  std::string t_list_text;
  int steps_flag = -1, draws = 1, batch = 16, budget = 512;
  int sample_count = 16, progr_count = 8;
  int t_keep = -1;
  double lambda = 0.0;
  double sample_lambda = 1.0;

  const auto add_common = [&](CLI::App* sub, bool with_config) {
    sub->add_option("--seed", common.seed, "random seed (fixed default)");
    if (with_config) {
      sub->add_option("--config", common.config_path, "key=value config file");
      sub->add_option("--set", common.sets, "config override key=value");
    }
  };

  auto* train = app.add_subcommand("train", "train a model on a raw dataset");
  add_common(train, true);
  train->add_option("--data", data_path, "raw u8 dataset file")->required();
  train->add_option("--val", val_path, "validation dataset for a final bound");
  train->add_option("--steps", steps_flag, "training steps");
  train->add_option("--out", out_dir, "output directory")
      ->capture_default_str();

  auto* eval = app.add_subcommand("eval", "variational bound on a dataset");
  add_common(eval, false);
  eval->add_option("--model", model_path, "checkpoint")->required();
  eval->add_option("--data", data_path, "raw u8 dataset file")->required();
  eval->add_option("--draws", draws, "noise draws to average");
  eval->add_option("--batch", batch, "evaluation batch size");

  auto* comp = app.add_subcommand("compress", "encode one image");
  add_common(comp, false);
  comp->add_option("--model", model_path, "checkpoint")->required();
  comp->add_option("--t-keep", t_keep, "latent steps to store (default: all)");
  comp->add_option("--lambda", lambda, "prior temperature past t_keep");
  comp->add_option("input", input, "raw or PPM image")->required();
  comp->add_option("output", output, "bitstream file")->required();

  auto* dec = app.add_subcommand("decompress", "decode a bitstream");
  add_common(dec, false);
  dec->add_option("--model", model_path, "checkpoint")->required();
  dec->add_option("input", input, "bitstream file")->required();
  dec->add_option("output", output, "output image (.ppm or raw)")->required();

  auto* sample = app.add_subcommand("sample", "unconditional samples sheet");
  add_common(sample, false);
  sample->add_option("--model", model_path, "checkpoint")->required();
  sample->add_option("--count", sample_count, "number of samples");
  sample->add_option("--lambda", sample_lambda, "prior temperature");
  sample->add_option("--out", sheet_out, "output PPM")->required();

  auto* prof = app.add_subcommand("profile", "per-step KL information CSV");
  add_common(prof, false);
  prof->add_option("--model", model_path, "checkpoint")->required();
  prof->add_option("--data", data_path, "raw u8 dataset file")->required();
  prof->add_option("--batch", batch, "evaluation batch size");
  prof->add_option("--out", csv_out, "CSV path (default: stdout)");

  auto* bench = app.add_subcommand("bench", "loss-vs-compute over depths");
  add_common(bench, true);
  bench->add_option("--data", data_path, "raw u8 dataset file")->required();
  bench->add_option("--t-grid", t_grid_text, "comma-separated depths")
      ->capture_default_str();
  bench->add_option("--budget", budget, "training examples per depth");
  bench->add_option("--out", csv_out, "CSV path (default: stdout)");

  auto* progr = app.add_subcommand("progression", "reconstruction depth sheet");
  add_common(progr, false);
  progr->add_option("--model", model_path, "checkpoint")->required();
  progr->add_option("--data", data_path, "raw u8 dataset file")->required();
  progr->add_option("--count", progr_count, "images per row");
  progr->add_option("--t-list", t_list_text, "depths (default: scaled sheet)");
  progr->add_option("--lambda", lambda, "prior temperature past each depth");
  progr->add_option("--out", sheet_out, "output PPM")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << app.help() << "\n";
    return 1;
  }

  try {
    if (app.got_subcommand(train)) {
      return cmd_train(common, data_path, val_path, steps_flag, out_dir);
    }
    if (app.got_subcommand(eval)) {
      return cmd_eval(common, model_path, data_path, draws, batch);
    }
    if (app.got_subcommand(comp)) {
      return cmd_compress(common, model_path, t_keep, lambda, input, output);
    }
    if (app.got_subcommand(dec)) {
      return cmd_decompress(common, model_path, input, output);
    }
    if (app.got_subcommand(sample)) {
      return cmd_sample(common, model_path, sample_count, sample_lambda,
                        sheet_out);
    }
    if (app.got_subcommand(prof)) {
      return cmd_profile(common, model_path, data_path, batch, csv_out);
    }
    if (app.got_subcommand(bench)) {
      return cmd_bench(common, data_path, t_grid_text, budget, csv_out);
    }
    if (app.got_subcommand(progr)) {
      return cmd_progression(common, model_path, data_path, progr_count,
                             t_list_text, lambda, sheet_out);
    }
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
