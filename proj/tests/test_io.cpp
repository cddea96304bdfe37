#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cdraw/binio.h"
#include "cdraw/checkpoint.h"
#include "cdraw/config.h"
#include "cdraw/error.h"
#include "cdraw/model.h"
#include "cdraw/ppm.h"
#include "cdraw/rng.h"
#include "doctest.h"

namespace {

cdraw::ModelConfig io_cfg() {
  cdraw::ModelConfig cfg;
  cfg.layers = 2;
  cfg.timesteps = 3;
  cfg.input_c = 1;
  cfg.input_h = 8;
  cfg.input_w = 8;
  cfg.lstm_maps = {6, 4};
  cfg.latent_maps = {2, 1};
  cfg.kernel = 3;
  cfg.stride = 2;
  cfg.beta = 0.7;
  cfg.likelihood = cdraw::Likelihood::kBernoulli;
  cfg.fixed_posterior_variance = true;
  return cfg;
}

double f32_round(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

TEST_CASE("checkpoint round-trips weights, moments, and config") {
  const auto cfg = io_cfg();
  cdraw::ConvDraw<double> m(cfg);
  cdraw::Rng rng(31);
  m.init_params(rng);
  for (auto& e : m.params.entries) {
    std::fill(e.m.data.begin(), e.m.data.end(), 0.25);
    std::fill(e.v.data.begin(), e.v.data.end(), 0.0625);
  }
  m.params.step = 7;

  const std::string bytes = cdraw::serialize_checkpoint(m.params, &cfg, true);
  const auto loaded = cdraw::parse_checkpoint<double>(bytes, "test");
  CHECK(loaded.has_adam);
  REQUIRE(loaded.config.has_value());
  CHECK(*loaded.config == cfg);
  CHECK(loaded.config->hash() == cfg.hash());
  CHECK(loaded.params.step == 7);
  REQUIRE(loaded.params.entries.size() == m.params.entries.size());
  for (size_t i = 0; i < m.params.entries.size(); ++i) {
    const auto& orig = m.params.entries[i];
    const auto& back = loaded.params.entries[i];
    REQUIRE(back.name == orig.name);
    REQUIRE(back.value.size() == orig.value.size());
    for (size_t j = 0; j < orig.value.size(); ++j) {
      REQUIRE(back.value.data[j] == f32_round(orig.value.data[j]));
    }
    for (size_t j = 0; j < orig.m.size(); ++j) {
      REQUIRE(back.m.data[j] == 0.25);
      REQUIRE(back.v.data[j] == 0.0625);
    }
  }

  // Without Adam state the moments come back zeroed.
  const std::string lean = cdraw::serialize_checkpoint(m.params, nullptr, false);
  const auto lean_loaded = cdraw::parse_checkpoint<double>(lean, "test");
  CHECK(!lean_loaded.has_adam);
  CHECK(!lean_loaded.config.has_value());
  CHECK(lean_loaded.params.step == 0);
  for (const auto& e : lean_loaded.params.entries) {
    for (double v : e.m.data) REQUIRE(v == 0.0);
  }
}

TEST_CASE("checkpoint file round trip preserves float32 payload bits") {
  const auto cfg = io_cfg();
  cdraw::ConvDraw<float> m(cfg);
  cdraw::Rng rng(37);
  m.init_params(rng);

  const std::string path = "/tmp/cdraw_test_ckpt.bin";
  cdraw::save_checkpoint(path, m.params, &cfg, false);
  const auto loaded = cdraw::load_checkpoint<float>(path);
  REQUIRE(loaded.params.entries.size() == m.params.entries.size());
  for (size_t i = 0; i < m.params.entries.size(); ++i) {
    REQUIRE(loaded.params.entries[i].value.data ==
            m.params.entries[i].value.data);
  }
}

TEST_CASE("checkpoint parser rejects damage") {
  const auto cfg = io_cfg();
  cdraw::ConvDraw<double> m(cfg);
  cdraw::Rng rng(41);
  m.init_params(rng);
  const std::string bytes = cdraw::serialize_checkpoint(m.params, &cfg, false);

  CHECK_THROWS_AS(cdraw::parse_checkpoint<double>("short", "t"),
                  cdraw::IoError);

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(cdraw::parse_checkpoint<double>(bad, "t"), cdraw::IoError);

  bad = bytes;
  bad[8] = 99;  // version low byte
  CHECK_THROWS_AS(cdraw::parse_checkpoint<double>(bad, "t"), cdraw::IoError);

  bad = bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(cdraw::parse_checkpoint<double>(bad, "t"), cdraw::IoError);

  // Corrupt the rank byte of the first record ("init.r" + u16 length ahead).
  bad = bytes;
  const size_t name_at = bad.find("init.r");
  REQUIRE(name_at != std::string::npos);
  bad[name_at + 6] = 3;
  CHECK_THROWS_AS(cdraw::parse_checkpoint<double>(bad, "t"), cdraw::IoError);

  CHECK_THROWS_AS(cdraw::load_checkpoint<double>("/tmp/cdraw_missing_ckpt"),
                  cdraw::IoError);
}

TEST_CASE("model config text round trip is canonical") {
  const auto cfg = io_cfg();
  const std::string text = cfg.canonical_text();
  auto kv = cdraw::KeyValueConfig::parse(text);
  const auto back = cdraw::ModelConfig::from_kv(kv);
  CHECK(back == cfg);
  CHECK(back.canonical_text() == text);
  CHECK(back.hash() == cfg.hash());

  auto other = cfg;
  other.timesteps += 1;
  CHECK(other.hash() != cfg.hash());
}

TEST_CASE("ppm parser accepts comments and rejects malformed input") {
  const std::string good = "P6\n# test\n2 1\n255\n" + std::string(6, '\x40');
  const auto img = cdraw::parse_ppm(good, "t");
  CHECK(img.w == 2);
  CHECK(img.h == 1);
  CHECK(img.rgb.size() == 6);

  CHECK_THROWS_AS(cdraw::parse_ppm("P5\n1 1\n255\nabc", "t"), cdraw::IoError);
  CHECK_THROWS_AS(cdraw::parse_ppm("P6\n1 1\n254\n" + std::string(3, 'a'), "t"),
                  cdraw::IoError);
  CHECK_THROWS_AS(cdraw::parse_ppm("P6\n2 2\n255\nabc", "t"), cdraw::IoError);
  CHECK_THROWS_AS(
      cdraw::parse_ppm("P6\n1 1\n255\n" + std::string(4, 'a'), "t"),
      cdraw::IoError);
  CHECK_THROWS_AS(cdraw::parse_ppm("P6\n-1 1\n255\n", "t"), cdraw::IoError);

  cdraw::PpmImage bad;
  bad.w = 2;
  bad.h = 2;
  bad.rgb.assign(5, 0);  // wrong byte count
  CHECK_THROWS_AS(cdraw::encode_ppm(bad), cdraw::ContractError);
}

TEST_CASE("file io reports the path on failure") {
  CHECK_THROWS_WITH_AS(cdraw::read_file_bytes("/tmp/cdraw_no_such_file"),
                       doctest::Contains("/tmp/cdraw_no_such_file"),
                       cdraw::IoError);
  CHECK_THROWS_AS(
      cdraw::write_file_bytes("/tmp/no_such_dir_cdraw/x.bin", "data"),
      cdraw::IoError);
}
