#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cdraw/analysis.h"
#include "cdraw/dataset.h"
#include "cdraw/error.h"
#include "cdraw/model.h"
#include "cdraw/ppm.h"
#include "cdraw/rng.h"
#include "cdraw/synthdata.h"
#include "doctest.h"

namespace {

cdraw::ModelConfig ana_cfg() {
  cdraw::ModelConfig cfg;
  cfg.layers = 1;
  cfg.timesteps = 3;
  cfg.input_c = 1;
  cfg.input_h = 8;
  cfg.input_w = 8;
  cfg.lstm_maps = {8};
  cfg.latent_maps = {2};
  cfg.kernel = 3;
  cfg.stride = 2;
  cfg.likelihood = cdraw::Likelihood::kBernoulli;
  return cfg;
}

void zero_params(cdraw::ConvDraw<double>& m) {
  for (auto& e : m.params.entries) {
    std::fill(e.value.data.begin(), e.value.data.end(), 0.0);
  }
}

int count_lines(const std::string& s) {
  return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("zero-weight model's bound is the coin-flip baseline") {
  cdraw::ConvDraw<double> m(ana_cfg());
  cdraw::Rng rng(1);
  m.init_params(rng);
  zero_params(m);
  const auto ds = cdraw::make_glyph_dataset(10, 8, 3, 71);

  const auto res = cdraw::eval_bound(m, ds, 1, 5, 4, "glyphs");
  CHECK(res.dataset_id == "glyphs");
  CHECK(res.images == 10);
  CHECK(res.noise_draws == 1);
  CHECK(res.mean_nats == doctest::Approx(64.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(res.lx_nats == doctest::Approx(64.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(res.kl_nats == doctest::Approx(0.0));
  CHECK(res.bits_per_dim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.stderr_nats == doctest::Approx(0.0));
}

TEST_CASE("bits per dim is nats over dimensions and ln 2") {
  cdraw::ConvDraw<double> m(ana_cfg());
  cdraw::Rng rng(2);
  m.init_params(rng);
  const auto ds = cdraw::make_glyph_dataset(6, 8, 3, 73);
  const auto res = cdraw::eval_bound(m, ds, 2, 11);
  CHECK(res.bits_per_dim ==
        doctest::Approx(res.mean_nats / (64.0 * std::log(2.0)))
            .epsilon(1e-12));
  CHECK(res.mean_nats ==
        doctest::Approx(res.lx_nats + res.kl_nats).epsilon(1e-12));
}

TEST_CASE("noise draws agree within Monte-Carlo error") {
  auto cfg = ana_cfg();
  cfg.likelihood = cdraw::Likelihood::kDequantizedGaussian;
  cdraw::ConvDraw<double> m(cfg);
  cdraw::Rng rng(3);
  m.init_params(rng);
  const auto ds = cdraw::make_blob_dataset(24, 1, 8, 79);

  const auto a = cdraw::eval_bound(m, ds, 2, 9);
  const auto b = cdraw::eval_bound(m, ds, 6, 123);
  CHECK(a.stderr_nats > 0.0);
  CHECK(b.stderr_nats > 0.0);
  CHECK(std::abs(a.mean_nats - b.mean_nats) <=
        6.0 * (a.stderr_nats + b.stderr_nats) + 1e-9);
}

TEST_CASE("kl profile reconciles with the bound's KL term") {
  auto cfg = ana_cfg();
  cfg.layers = 2;
  cfg.lstm_maps = {6, 4};
  cfg.latent_maps = {2, 1};
  cdraw::ConvDraw<double> m(cfg);
  cdraw::Rng rng(4);
  m.init_params(rng);
  const auto ds = cdraw::make_glyph_dataset(9, 8, 3, 83);

  const auto prof = cdraw::kl_profile(m, ds, 17);
  REQUIRE(prof.timesteps == 3);
  REQUIRE(prof.layers == 2);
  double total = 0.0;
  for (const auto& row : prof.mean_kl_nats) {
    for (double v : row) {
      CHECK(v >= 0.0);
      total += v;
    }
  }
  const auto res = cdraw::eval_bound(m, ds, 1, 17);
  CHECK(total == doctest::Approx(res.kl_nats).epsilon(1e-9));

  const std::string csv = prof.csv();
  CHECK(csv.rfind("t,layer,kl_nats\n", 0) == 0);
  CHECK(count_lines(csv) == 1 + 3 * 2);  // header + t * layers
}

TEST_CASE("untrained-to-zero model has a flat zero profile") {
  cdraw::ConvDraw<double> m(ana_cfg());
  cdraw::Rng rng(5);
  m.init_params(rng);
  zero_params(m);
  const auto ds = cdraw::make_glyph_dataset(5, 8, 3, 89);
  const auto prof = cdraw::kl_profile(m, ds, 0);
  for (const auto& row : prof.mean_kl_nats) {
    for (double v : row) CHECK(v <= 1e-12);
  }
}

TEST_CASE("psnr arithmetic and sentinels") {
  cdraw::Tensor4<double> a(2, 1, 4, 4), b(2, 1, 4, 4);
  std::fill(a.data.begin(), a.data.end(), 0.3);
  std::fill(b.data.begin(), b.data.end(), 0.3);
  for (size_t i = b.size() / 2; i < b.size(); ++i) b.data[i] = 0.4;

  const auto ab = cdraw::psnr(a, b);
  REQUIRE(ab.size() == 2);
  CHECK(std::isinf(ab[0]));
  CHECK(ab[1] == doctest::Approx(20.0).epsilon(1e-9));

  const auto ba = cdraw::psnr(b, a);
  CHECK(ba[1] == doctest::Approx(ab[1]).epsilon(1e-12));

  cdraw::Tensor4<double> c(1, 1, 4, 4);
  CHECK_THROWS_AS(cdraw::psnr(a, c), cdraw::ContractError);
}

TEST_CASE("grids lay out with single-pixel separators") {
  // 2 rows x 3 columns of 8x8 images: 2*8+3 = 19 rows, 3*8+4 = 28 columns.
  cdraw::Tensor4<double> row1(3, 1, 8, 8), row2(3, 1, 8, 8);
  cdraw::Rng rng(6);
  for (auto& v : row1.data) v = rng.uniform01();
  for (auto& v : row2.data) v = rng.uniform01();

  const auto img = cdraw::render_grid<double>({row1, row2});
  CHECK(img.h == 19);
  CHECK(img.w == 28);

  const std::string bytes = cdraw::encode_ppm(img);
  CHECK(bytes.rfind("P6\n", 0) == 0);
  const auto back = cdraw::parse_ppm(bytes, "grid");
  CHECK(back.w == img.w);
  CHECK(back.h == img.h);
  CHECK(back.rgb == img.rgb);

  // Grayscale replicates across RGB; check the first interior pixel.
  const size_t px = (static_cast<size_t>(1) * img.w + 1) * 3;
  CHECK(img.rgb[px] == img.rgb[px + 1]);
  CHECK(img.rgb[px] == img.rgb[px + 2]);
  const uint8_t expect =
      static_cast<uint8_t>(std::llround(row1.data[row1.idx(0, 0, 0, 0)] * 255));
  CHECK(img.rgb[px] == expect);

  // Border and separator pixels carry the fill value.
  CHECK(img.rgb[0] == 128);
  const size_t sep = (static_cast<size_t>(0) * img.w + 9) * 3;  // between col 0 and 1
  CHECK(img.rgb[sep] == 128);

  cdraw::Tensor4<double> single(1, 1, 2, 2);
  const auto tiny = cdraw::render_grid<double>({single});
  CHECK(tiny.h == 4);
  CHECK(tiny.w == 4);

  cdraw::Tensor4<double> two_chan(1, 2, 4, 4);
  CHECK_THROWS_AS(cdraw::render_grid<double>({two_chan}), cdraw::ContractError);
  CHECK_THROWS_AS(cdraw::render_grid<double>({row1, single}),
                  cdraw::ContractError);
}

TEST_CASE("progression schedule scales the reference depths") {
  CHECK(cdraw::default_progression_schedule(32) ==
        std::vector<int>{2, 4, 6, 8, 10, 14, 18, 25, 32});
  CHECK(cdraw::default_progression_schedule(8) ==
        std::vector<int>{1, 2, 3, 4, 5, 6, 8});
  CHECK(cdraw::default_progression_schedule(1) == std::vector<int>{1});
}

TEST_CASE("progression sheets stack depths over originals") {
  cdraw::ConvDraw<double> m(ana_cfg());
  cdraw::Rng rng(7);
  m.init_params(rng);
  const auto ds = cdraw::make_glyph_dataset(3, 8, 3, 97);
  const auto x = cdraw::dataset_images<double>(ds, 0, 3);

  const std::string path = "/tmp/cdraw_test_progression.ppm";
  cdraw::progression_sheet(m, x, {1, 2, 3}, 0.0, path, 13);
  const auto img = cdraw::read_ppm_file(path);
  CHECK(img.h == 4 * 8 + 5);  // three depths + originals
  CHECK(img.w == 3 * 8 + 4);

  // Deterministic at a fixed seed.
  const std::string path2 = "/tmp/cdraw_test_progression2.ppm";
  cdraw::progression_sheet(m, x, {1, 2, 3}, 0.0, path2, 13);
  CHECK(cdraw::read_file_bytes(path) == cdraw::read_file_bytes(path2));

  // Bottom row holds the originals: glyph pixels are exactly 0 or 1, so the
  // stored bytes are exactly 0 or 255.
  const int y0 = 1 + 3 * 9;
  for (int y = 0; y < 8; ++y) {
    for (int x_px = 0; x_px < 8; ++x_px) {
      const size_t at =
          (static_cast<size_t>(y0 + y) * img.w + (1 + x_px)) * 3;
      const uint8_t expect = static_cast<uint8_t>(
          std::llround(x.data[x.idx(0, 0, y, x_px)] * 255));
      REQUIRE(img.rgb[at] == expect);
    }
  }

  cdraw::progression_sheet(m, x, {3}, 0.0, path, 13);
  const auto two = cdraw::read_ppm_file(path);
  CHECK(two.h == 2 * 8 + 3);
}
