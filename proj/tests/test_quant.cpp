#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "cdraw/arith.h"
#include "cdraw/error.h"
#include "cdraw/quant.h"
#include "cdraw/rng.h"
#include "doctest.h"

namespace {

double gauss_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * 3.14159265358979323846));
}

// Composite Simpson integral of the Gaussian density, independent of the
// erfc-based CDF inside bin_freqs.
double simpson_mass(double lo, double hi, double mu, double sigma) {
  const int n = 128;  // even
  const double h = (hi - lo) / n;
  double acc = gauss_pdf(lo, mu, sigma) + gauss_pdf(hi, mu, sigma);
  for (int i = 1; i < n; ++i) {
    acc += gauss_pdf(lo + i * h, mu, sigma) * (i % 2 ? 4.0 : 2.0);
  }
  return acc * h / 3.0;
}

}  // namespace

TEST_CASE("quantize_mean rounds to the nearest grid point and clamps") {
  long clamped = 0;
  CHECK(cdraw::quantize_mean(0.0, 0.5, -4, 4, &clamped) == 0);
  CHECK(cdraw::quantize_mean(1.4 * 0.5, 0.5, -4, 4, &clamped) == 1);
  CHECK(cdraw::quantize_mean(-1.4 * 0.5, 0.5, -4, 4, &clamped) == -1);
  CHECK(cdraw::quantize_mean(2.5 * 0.5, 0.5, -4, 4, &clamped) == 3);
  CHECK(clamped == 0);
  CHECK(cdraw::quantize_mean(10.0, 0.5, -4, 4, &clamped) == 4);
  CHECK(clamped == 1);
  CHECK(cdraw::quantize_mean(-10.0, 0.5, -4, 4, &clamped) == -4);
  CHECK(clamped == 2);
}

TEST_CASE("round-trip error stays within half a bin") {
  cdraw::Rng rng(311);
  const double deltas[] = {0.3, 1.0, 2.7};
  for (double delta : deltas) {
    const int k_min = -12, k_max = 12;
    for (int i = 0; i < 100000 / 3; ++i) {
      const double mu = rng.uniform((k_min - 0.49) * delta, (k_max + 0.49) * delta);
      const int k = cdraw::quantize_mean(mu, delta, k_min, k_max);
      REQUIRE(std::abs(k * delta - mu) <= delta / 2 + 1e-12);
    }
  }
}

TEST_CASE("symmetric prior yields symmetric frequencies within one count") {
  const double log_vars[] = {-2.0, 0.0, 1.5};
  const double deltas[] = {0.4, 1.0};
  for (double lv : log_vars) {
    for (double delta : deltas) {
      const auto freq = cdraw::bin_freqs(0.0, lv, delta, -9, 9);
      REQUIRE(freq.size() == 19);
      for (int i = 0; i < 19; ++i) {
        CAPTURE(lv);
        CAPTURE(delta);
        CAPTURE(i);
        CHECK(std::abs(static_cast<long>(freq[i]) -
                       static_cast<long>(freq[18 - i])) <= 1);
      }
    }
  }
}

TEST_CASE("vanishing prior variance collapses mass onto the nearest bin") {
  // log-variance at the numeric clamp floor: sigma ~ 9e-4, hundreds of sigmas
  // from the nearest bin edge, so one bin owns everything but the floor.
  auto freq = cdraw::bin_freqs(0.3, -14.0, 1.0, -3, 3);
  REQUIRE(freq.size() == 7);
  for (int i = 0; i < 7; ++i) {
    const int k = -3 + i;
    CHECK(freq[i] == (k == 0 ? 65536u - 6u : 1u));
  }
  freq = cdraw::bin_freqs(1.7, -14.0, 1.0, -3, 3);
  for (int i = 0; i < 7; ++i) {
    const int k = -3 + i;
    CHECK(freq[i] == (k == 2 ? 65536u - 6u : 1u));
  }
}

TEST_CASE("bin masses match numerical integration of the prior density") {
  const double mu = 0.7, log_var = 0.4, delta = 0.8;
  const int k_min = -5, k_max = 5;
  const int n = k_max - k_min + 1;
  const double sigma = std::exp(0.5 * log_var);

  std::vector<double> mass(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int k = k_min + i;
    mass[i] = simpson_mass((k - 0.5) * delta, (k + 0.5) * delta, mu, sigma);
    total += mass[i];
  }
  const auto freq = cdraw::bin_freqs(mu, log_var, delta, k_min, k_max);
  REQUIRE(static_cast<int>(freq.size()) == n);
  const double budget = 65536.0 - n;
  for (int i = 0; i < n; ++i) {
    const double expected = 1.0 + mass[i] / total * budget;
    CAPTURE(i);
    CHECK(std::abs(static_cast<double>(freq[i]) - expected) <= 1.6);
  }
}

TEST_CASE("frequencies sum to the full 16-bit budget for random priors") {
  cdraw::Rng rng(707);
  for (int trial = 0; trial < 1000; ++trial) {
    const double mu = rng.uniform(-20.0, 20.0);
    const double lv = rng.uniform(-14.0, 6.0);
    const double delta = rng.uniform(0.05, 3.0);
    const int k_min = -static_cast<int>(rng.next_u64() % 41);
    const int k_max = static_cast<int>(rng.next_u64() % 41);
    const auto freq = cdraw::bin_freqs(mu, lv, delta, k_min, k_max);
    uint64_t sum = 0;
    uint32_t lowest = 1u << 31;
    for (uint32_t f : freq) {
      sum += f;
      lowest = std::min(lowest, f);
    }
    CAPTURE(trial);
    REQUIRE(sum == 65536u);
    REQUIRE(lowest >= 1u);
  }
  // Degenerate corners: single-symbol alphabet, and a prior so far off the
  // grid that every bin mass underflows to zero.
  auto freq = cdraw::bin_freqs(0.0, 0.0, 1.0, 0, 0);
  REQUIRE(freq.size() == 1);
  CHECK(freq[0] == 65536u);
  freq = cdraw::bin_freqs(1000.0, -14.0, 1.0, -2, 2);
  CHECK(std::accumulate(freq.begin(), freq.end(), uint64_t{0}) == 65536u);
}

TEST_CASE("grid validation rejects malformed grids") {
  cdraw::QuantGrid good;
  good.delta = {{0.5, 1.0}};
  good.k_min = {{-3, -4}};
  good.k_max = {{3, 4}};
  CHECK_NOTHROW(cdraw::validate_grid(good));

  auto g = good;
  g.delta[0][1] = 0.0;
  CHECK_THROWS_AS(cdraw::validate_grid(g), cdraw::ContractError);

  g = good;
  g.k_min[0][0] = 1;
  CHECK_THROWS_AS(cdraw::validate_grid(g), cdraw::ContractError);

  g = good;
  g.k_max[0][0] = -1;
  CHECK_THROWS_AS(cdraw::validate_grid(g), cdraw::ContractError);

  g = good;
  g.k_min[0][0] = -70000;
  g.k_max[0][0] = 70000;
  CHECK_THROWS_AS(cdraw::validate_grid(g), cdraw::ContractError);

  g = good;
  g.k_max[0].pop_back();
  CHECK_THROWS_AS(cdraw::validate_grid(g), cdraw::ContractError);
}
