#ifndef CDRAW_QUANT_H_
#define CDRAW_QUANT_H_

#include <cstdint>
#include <vector>

namespace cdraw {

// Uniform scalar grid for coding latent means. Anchored at zero: symbol k
// stands for the reconstruction k * delta. One entry per latent layer, inner
// vectors indexed by latent channel. delta comes from the learned posterior
// scale; the symbol bounds come from a calibration pass over the prior.
struct QuantGrid {
  std::vector<std::vector<double>> delta;
  std::vector<std::vector<int>> k_min;
  std::vector<std::vector<int>> k_max;

  int layers() const { return static_cast<int>(delta.size()); }
  int alphabet(int layer, int ch) const {
    return k_max[layer][ch] - k_min[layer][ch] + 1;
  }
};

// Throws ContractError unless every channel has delta > 0,
// k_min <= 0 <= k_max, and an alphabet of at most 2^16 symbols.
void validate_grid(const QuantGrid& grid);

// Standard normal CDF evaluated via erfc, stable in both tails.
double gauss_cdf(double x, double mu, double sigma);

// Nearest grid symbol for a posterior mean, clamped to [k_min, k_max].
// *clamped is incremented when the clamp changes the symbol.
int quantize_mean(double mu, double delta, int k_min, int k_max,
                  long* clamped = nullptr);

// Integer frequencies over symbols k_min..k_max for the prior
// N(mu, exp(log_var)). Each symbol's share is the Gaussian mass of its bin
// ((k-1/2)*delta, (k+1/2)*delta]; every symbol keeps at least one count and
// the counts sum to exactly 2^16 (largest-remainder rounding).
std::vector<uint32_t> bin_freqs(double mu, double log_var, double delta,
                                int k_min, int k_max);

}  // namespace cdraw

#endif  // CDRAW_QUANT_H_
