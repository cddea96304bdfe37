#ifndef CDRAW_CONFIG_H_
#define CDRAW_CONFIG_H_

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cdraw/error.h"

namespace cdraw {

uint64_t fnv1a64(std::string_view s);

// Flat `key = value` text config. Keys are tracked on access so callers can
// reject settings nothing consumed (catches typos in files and --set flags).
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback);
  int get_int(const std::string& key, int fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<int> get_int_list(const std::string& key,
                                const std::vector<int>& fallback);

  // Sorted `key = value` lines; parse(serialize()) round-trips.
  std::string serialize() const;

  // Keys present but never read through a getter.
  std::vector<std::string> unused_keys() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  const std::string* find(const std::string& key);

  std::map<std::string, std::string> kv_;
  std::set<std::string> accessed_;
};

enum class Likelihood { kBernoulli, kDequantizedGaussian };

// Architecture and objective settings for one model. The canonical text form
// is embedded in checkpoints and hashed into bitstream headers, so two
// configs match exactly iff their hashes do.
struct ModelConfig {
  int layers = 1;
  int timesteps = 32;
  int input_c = 1;
  int input_h = 28;
  int input_w = 28;
  std::vector<int> lstm_maps = {160};    // per layer
  std::vector<int> latent_maps = {12};   // per layer; layer 2 may be 0
  int kernel = 5;
  int stride = 2;
  double beta = 1.0;
  Likelihood likelihood = Likelihood::kBernoulli;
  bool fixed_posterior_variance = false;
  double quant_step = 1.0 / 256.0;  // pixel spacing s
  bool bin_integrated_likelihood = false;

  void validate() const;

  static ModelConfig from_kv(KeyValueConfig& kv);
  std::string canonical_text() const;
  uint64_t hash() const { return fnv1a64(canonical_text()); }

  // Spatial dims of layer-l recurrent maps (l = 0 is one stride below the
  // input, l = 1 one below that).
  int layer_h(int l) const;
  int layer_w(int l) const;
  // Canvas channel count: mean + log-variance planes for the Gaussian
  // likelihood, logits for Bernoulli.
  int canvas_c() const {
    return likelihood == Likelihood::kDequantizedGaussian ? 2 * input_c
                                                          : input_c;
  }
  int pixel_dims() const { return input_c * input_h * input_w; }

  bool operator==(const ModelConfig& o) const = default;
};

std::string likelihood_name(Likelihood l);
Likelihood likelihood_from_name(const std::string& name);

}  // namespace cdraw

#endif  // CDRAW_CONFIG_H_
