#include "cdraw/config.h"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace cdraw {

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ContractError("config line " + std::to_string(lineno) +
                          ": expected `key = value`, got \"" + t + "\"");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ContractError("config line " + std::to_string(lineno) +
                          ": empty key");
    if (out.kv_.count(key))
      throw ContractError("config line " + std::to_string(lineno) +
                          ": duplicate key " + key);
    out.kv_[key] = value;
  }
  return out;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw ContractError("config: empty key");
  kv_[key] = value;
}

bool KeyValueConfig::has(const std::string& key) const {
  return kv_.count(key) > 0;
}

const std::string* KeyValueConfig::find(const std::string& key) {
  auto it = kv_.find(key);
  if (it == kv_.end()) return nullptr;
  accessed_.insert(key);
  return &it->second;
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) {
  const std::string* v = find(key);
  if (!v) return fallback;
  try {
    size_t used = 0;
    int out = std::stoi(*v, &used);
    if (used != v->size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ContractError("config key " + key + ": not an integer: " + *v);
  }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
  const std::string* v = find(key);
  if (!v) return fallback;
  try {
    size_t used = 0;
    double out = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ContractError("config key " + key + ": not a number: " + *v);
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
  const std::string* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw ContractError("config key " + key + ": not a boolean: " + *v);
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key,
                                              const std::vector<int>& fallback) {
  const std::string* v = find(key);
  if (!v) return fallback;
  std::vector<int> out;
  std::string item;
  std::istringstream in(*v);
  while (std::getline(in, item, ',')) {
    std::string t = trim(item);
    if (t.empty())
      throw ContractError("config key " + key + ": empty list element");
    try {
      size_t used = 0;
      out.push_back(std::stoi(t, &used));
      if (used != t.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ContractError("config key " + key + ": not an integer: " + t);
    }
  }
  if (out.empty())
    throw ContractError("config key " + key + ": empty list");
  return out;
}

std::string KeyValueConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : kv_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

std::vector<std::string> KeyValueConfig::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : kv_)
    if (!accessed_.count(k)) out.push_back(k);
  return out;
}

std::string likelihood_name(Likelihood l) {
  switch (l) {
    case Likelihood::kBernoulli:
      return "bernoulli";
    case Likelihood::kDequantizedGaussian:
      return "dequantized_gaussian";
  }
  throw ContractError("likelihood_name: bad enum value");
}

Likelihood likelihood_from_name(const std::string& name) {
  if (name == "bernoulli") return Likelihood::kBernoulli;
  if (name == "dequantized_gaussian") return Likelihood::kDequantizedGaussian;
  throw ContractError(
      "likelihood must be bernoulli or dequantized_gaussian, got " + name);
}

void ModelConfig::validate() const {
  if (layers != 1 && layers != 2)
    throw ContractError("ModelConfig: layers must be 1 or 2");
  if (timesteps < 1) throw ContractError("ModelConfig: timesteps must be >= 1");
  if (input_c < 1 || input_h < 1 || input_w < 1)
    throw ContractError("ModelConfig: input dims must be positive");
  if (kernel < 1 || kernel % 2 == 0)
    throw ContractError("ModelConfig: kernel must be odd and positive");
  if (stride < 1) throw ContractError("ModelConfig: stride must be >= 1");
  if (beta <= 0) throw ContractError("ModelConfig: beta must be > 0");
  if (quant_step <= 0 || quant_step > 1)
    throw ContractError("ModelConfig: quant_step must lie in (0, 1]");
  if (static_cast<int>(lstm_maps.size()) != layers)
    throw ContractError("ModelConfig: lstm_maps needs one entry per layer");
  if (static_cast<int>(latent_maps.size()) != layers)
    throw ContractError("ModelConfig: latent_maps needs one entry per layer");
  for (int l = 0; l < layers; ++l) {
    if (lstm_maps[l] < 1)
      throw ContractError("ModelConfig: lstm_maps must be positive");
    // latent_maps[1] == 0 is the degenerate two-layer case; layer 1 must
    // still carry latents.
    if (latent_maps[l] < (l == 0 ? 1 : 0))
      throw ContractError("ModelConfig: latent_maps[0] must be positive");
  }
  int h = input_h, w = input_w;
  for (int l = 0; l < layers; ++l) {
    if (h % stride != 0 || w % stride != 0)
      throw ContractError("ModelConfig: spatial dims " + std::to_string(h) +
                          "x" + std::to_string(w) +
                          " not divisible by stride at layer " +
                          std::to_string(l + 1));
    h /= stride;
    w /= stride;
  }
}

int ModelConfig::layer_h(int l) const {
  int h = input_h;
  for (int i = 0; i <= l; ++i) h /= stride;
  return h;
}

int ModelConfig::layer_w(int l) const {
  int w = input_w;
  for (int i = 0; i <= l; ++i) w /= stride;
  return w;
}

ModelConfig ModelConfig::from_kv(KeyValueConfig& kv) {
  ModelConfig cfg;
  cfg.layers = kv.get_int("layers", cfg.layers);
  cfg.timesteps = kv.get_int("timesteps", cfg.timesteps);
  cfg.input_c = kv.get_int("input_channels", cfg.input_c);
  cfg.input_h = kv.get_int("input_height", cfg.input_h);
  cfg.input_w = kv.get_int("input_width", cfg.input_w);
  std::vector<int> default_lstm(cfg.layers, 160);
  std::vector<int> default_latent(cfg.layers, 12);
  cfg.lstm_maps = kv.get_int_list("lstm_maps", default_lstm);
  cfg.latent_maps = kv.get_int_list("latent_maps", default_latent);
  cfg.kernel = kv.get_int("kernel", cfg.kernel);
  cfg.stride = kv.get_int("stride", cfg.stride);
  cfg.beta = kv.get_double("beta", cfg.beta);
  cfg.likelihood = likelihood_from_name(
      kv.get_string("likelihood", likelihood_name(cfg.likelihood)));
  cfg.fixed_posterior_variance =
      kv.get_bool("fixed_posterior_variance", cfg.fixed_posterior_variance);
  cfg.quant_step = kv.get_double("quant_step", cfg.quant_step);
  cfg.bin_integrated_likelihood =
      kv.get_bool("bin_integrated_likelihood", cfg.bin_integrated_likelihood);
  cfg.validate();
  return cfg;
}

std::string ModelConfig::canonical_text() const {
  auto join = [](const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(v[i]);
    }
    return out;
  };
  KeyValueConfig kv;
  kv.set("layers", std::to_string(layers));
  kv.set("timesteps", std::to_string(timesteps));
  kv.set("input_channels", std::to_string(input_c));
  kv.set("input_height", std::to_string(input_h));
  kv.set("input_width", std::to_string(input_w));
  kv.set("lstm_maps", join(lstm_maps));
  kv.set("latent_maps", join(latent_maps));
  kv.set("kernel", std::to_string(kernel));
  kv.set("stride", std::to_string(stride));
  kv.set("beta", fmt_double(beta));
  kv.set("likelihood", likelihood_name(likelihood));
  kv.set("fixed_posterior_variance", fixed_posterior_variance ? "1" : "0");
  kv.set("quant_step", fmt_double(quant_step));
  kv.set("bin_integrated_likelihood", bin_integrated_likelihood ? "1" : "0");
  return kv.serialize();
}

}  // namespace cdraw
