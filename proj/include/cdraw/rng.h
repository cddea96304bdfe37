#ifndef CDRAW_RNG_H_
#define CDRAW_RNG_H_

#include <cmath>
#include <cstdint>
#include <random>

namespace cdraw {

// Deterministic random source. std::mt19937_64 has a fully specified output
// sequence; the distributions below are written out explicitly because the
// standard library's distribution objects are implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Standard normal via Box-Muller. Draws two uniforms per call and keeps no
  // spare, so the consumed engine state per call is fixed.
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Derived stream for an independent consumer.
  Rng fork(uint64_t salt) { return Rng(eng_() ^ (salt * 0x9e3779b97f4a7c15ull)); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace cdraw

#endif  // CDRAW_RNG_H_
