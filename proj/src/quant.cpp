#include "cdraw/quant.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cdraw/arith.h"
#include "cdraw/error.h"

namespace cdraw {

void validate_grid(const QuantGrid& grid) {
  const size_t layers = grid.delta.size();
  if (grid.k_min.size() != layers || grid.k_max.size() != layers) {
    throw ContractError("quant grid layer counts disagree");
  }
  for (size_t l = 0; l < layers; ++l) {
    const size_t chans = grid.delta[l].size();
    if (grid.k_min[l].size() != chans || grid.k_max[l].size() != chans) {
      throw ContractError("quant grid channel counts disagree at layer " +
                          std::to_string(l + 1));
    }
    for (size_t c = 0; c < chans; ++c) {
      if (!(grid.delta[l][c] > 0.0)) {
        throw ContractError("quant grid delta must be positive (layer " +
                            std::to_string(l + 1) + ", channel " +
                            std::to_string(c) + ")");
      }
      if (grid.k_min[l][c] > 0 || grid.k_max[l][c] < 0) {
        throw ContractError("quant grid must bracket symbol 0 (layer " +
                            std::to_string(l + 1) + ", channel " +
                            std::to_string(c) + ")");
      }
      const long span = static_cast<long>(grid.k_max[l][c]) - grid.k_min[l][c] + 1;
      if (span > static_cast<long>(FreqTable::kFreqTotal)) {
        throw ContractError("quant grid alphabet of " + std::to_string(span) +
                            " symbols exceeds " +
                            std::to_string(FreqTable::kFreqTotal));
      }
    }
  }
}

double gauss_cdf(double x, double mu, double sigma) {
  return 0.5 * std::erfc(-(x - mu) / (sigma * std::sqrt(2.0)));
}

int quantize_mean(double mu, double delta, int k_min, int k_max,
                  long* clamped) {
  const long k = std::llround(mu / delta);
  if (k < k_min) {
    if (clamped) ++*clamped;
    return k_min;
  }
  if (k > k_max) {
    if (clamped) ++*clamped;
    return k_max;
  }
  return static_cast<int>(k);
}

std::vector<uint32_t> bin_freqs(double mu, double log_var, double delta,
                                int k_min, int k_max) {
  if (k_min > k_max) throw ContractError("bin_freqs: k_min exceeds k_max");
  if (!(delta > 0.0)) throw ContractError("bin_freqs: delta must be positive");
  const int n = k_max - k_min + 1;
  if (static_cast<uint32_t>(n) > FreqTable::kFreqTotal) {
    throw ContractError("bin_freqs: alphabet exceeds frequency total");
  }
  const double sigma = std::exp(0.5 * log_var);

  std::vector<double> mass(n);
  double total = 0.0;
  double prev = gauss_cdf((k_min - 0.5) * delta, mu, sigma);
  for (int i = 0; i < n; ++i) {
    const double next = gauss_cdf((k_min + i + 0.5) * delta, mu, sigma);
    mass[i] = std::max(0.0, next - prev);
    total += mass[i];
    prev = next;
  }

  // Every symbol owns one guaranteed count; the rest of the budget is split
  // proportionally to the Gaussian bin masses.
  const uint32_t budget = FreqTable::kFreqTotal - static_cast<uint32_t>(n);
  std::vector<uint32_t> freq(n, 1);
  std::vector<double> frac(n, 0.0);
  uint64_t assigned = 0;
  if (total > 0.0) {
    for (int i = 0; i < n; ++i) {
      const double share = mass[i] / total * budget;
      const double base = std::floor(share);
      freq[i] += static_cast<uint32_t>(base);
      frac[i] = share - base;
      assigned += static_cast<uint64_t>(base);
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (frac[a] != frac[b]) return frac[a] > frac[b];
    return a < b;
  });
  long leftover = static_cast<long>(budget) - static_cast<long>(assigned);
  for (int i = 0; leftover > 0; i = (i + 1) % n, --leftover) freq[order[i]] += 1;
  // Floating-point drift in the shares can overshoot by a count or two; take
  // it back from the heaviest symbols so the total stays exact.
  while (leftover < 0) {
    const auto it = std::max_element(freq.begin(), freq.end());
    if (*it <= 1) throw ContractError("bin_freqs: cannot rebalance counts");
    --*it;
    ++leftover;
  }
  return freq;
}

}  // namespace cdraw
