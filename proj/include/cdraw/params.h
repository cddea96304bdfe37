#ifndef CDRAW_PARAMS_H_
#define CDRAW_PARAMS_H_

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cdraw/tensor.h"

namespace cdraw {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (lr <= 0) throw ContractError("AdamConfig: lr must be > 0");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
      throw ContractError("AdamConfig: betas must lie in (0,1)");
    if (eps <= 0) throw ContractError("AdamConfig: eps must be > 0");
  }
};

template <typename T>
using GradMap = std::unordered_map<std::string, Tensor4<T>>;

// Named parameter tensors with per-parameter Adam moments. Iteration order is
// insertion order, which keeps updates and checkpoints deterministic.
// Copyable by value; the trainer's rollback snapshots rely on that.
template <typename T>
struct ParamStore {
  struct Entry {
    std::string name;
    Tensor4<T> value;
    Tensor4<T> m, v;  // Adam first/second moments, shape-matched to value
  };

  std::vector<Entry> entries;
  std::unordered_map<std::string, int> index;
  int64_t step = 0;

  Tensor4<T>& create(const std::string& name, int n, int c, int h, int w) {
    if (index.count(name))
      throw ContractError("ParamStore: duplicate parameter " + name);
    Entry e;
    e.name = name;
    e.value = Tensor4<T>(n, c, h, w);
    e.m = Tensor4<T>(n, c, h, w);
    e.v = Tensor4<T>(n, c, h, w);
    index[name] = static_cast<int>(entries.size());
    entries.push_back(std::move(e));
    return entries.back().value;
  }

  bool has(const std::string& name) const { return index.count(name) > 0; }

  Entry& entry(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end())
      throw ContractError("ParamStore: unknown parameter " + name);
    return entries[it->second];
  }
  const Entry& entry(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end())
      throw ContractError("ParamStore: unknown parameter " + name);
    return entries[it->second];
  }

  Tensor4<T>& at(const std::string& name) { return entry(name).value; }
  const Tensor4<T>& at(const std::string& name) const {
    return entry(name).value;
  }

  size_t total_elements() const {
    size_t s = 0;
    for (const auto& e : entries) s += e.value.size();
    return s;
  }

  bool bitwise_equal(const ParamStore& o) const {
    if (entries.size() != o.entries.size() || step != o.step) return false;
    for (size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].name != o.entries[i].name) return false;
      if (entries[i].value.data != o.entries[i].value.data) return false;
      if (entries[i].m.data != o.entries[i].m.data) return false;
      if (entries[i].v.data != o.entries[i].v.data) return false;
    }
    return true;
  }
};

// Standard Adam update with bias correction. Parameters without a gradient
// entry are left untouched. A non-finite gradient aborts before any state is
// modified so the rollback path never sees a half-applied step.
template <typename T>
void adam_step(ParamStore<T>& params, const GradMap<T>& grads,
               const AdamConfig& cfg) {
  cfg.validate();
  for (const auto& [name, g] : grads)
    if (!params.has(name))
      throw ContractError("adam_step: gradient for unknown parameter " + name);
  for (const auto& e : params.entries) {
    auto it = grads.find(e.name);
    if (it == grads.end()) continue;
    require_same_shape(e.value, it->second, "adam_step grads for " + e.name);
    if (!it->second.all_finite())
      throw NumericFault("adam_step: non-finite gradient", e.name);
  }

  params.step += 1;
  const double t = static_cast<double>(params.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& e : params.entries) {
    auto it = grads.find(e.name);
    if (it == grads.end()) continue;
    const Tensor4<T>& g = it->second;
    for (size_t i = 0; i < e.value.data.size(); ++i) {
      const double gi = static_cast<double>(g.data[i]);
      double m = cfg.beta1 * static_cast<double>(e.m.data[i]) +
                 (1.0 - cfg.beta1) * gi;
      double v = cfg.beta2 * static_cast<double>(e.v.data[i]) +
                 (1.0 - cfg.beta2) * gi * gi;
      e.m.data[i] = static_cast<T>(m);
      e.v.data[i] = static_cast<T>(v);
      const double update = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      e.value.data[i] = static_cast<T>(static_cast<double>(e.value.data[i]) -
                                       update);
    }
  }
}

// Global-norm gradient clip; returns the pre-clip norm. Off unless the
// trainer enables it.
template <typename T>
double clip_grads_by_norm(GradMap<T>& grads, double max_norm) {
  double sq = 0;
  for (const auto& [name, g] : grads)
    for (const auto& v : g.data) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [name, g] : grads)
      for (auto& v : g.data) v *= s;
  }
  return norm;
}

}  // namespace cdraw

#endif  // CDRAW_PARAMS_H_
