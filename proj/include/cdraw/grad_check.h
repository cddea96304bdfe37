#ifndef CDRAW_GRAD_CHECK_H_
#define CDRAW_GRAD_CHECK_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "cdraw/params.h"

namespace cdraw {

struct GradCheckResult {
  double max_rel_err = 0;
  std::string worst_param;
  size_t worst_index = 0;
  double worst_fd = 0;
  double worst_an = 0;
  size_t checked = 0;
};

// Compares reverse-mode gradients against central finite differences.
// `loss_fn` must be deterministic given its parameters (reparameterization
// noise frozen by the caller). `analytic` holds the reverse-mode gradients
// for the unperturbed parameters; missing entries are treated as zero.
// `max_per_param` bounds how many elements of each tensor are probed
// (evenly strided); 0 means all. Differences at or below `abs_tol` count as
// exact: central differences carry roundoff of order ulp(loss)/eps, which
// swamps the relative metric whenever the true gradient is near zero.
template <typename T>
GradCheckResult grad_check(
    const std::function<double(const ParamStore<T>&)>& loss_fn,
    ParamStore<T> params, const GradMap<T>& analytic, double eps,
    size_t max_per_param = 0, double abs_tol = 0.0) {
  GradCheckResult res;
  for (auto& e : params.entries) {
    const Tensor4<T>* ga = nullptr;
    auto it = analytic.find(e.name);
    if (it != analytic.end()) ga = &it->second;

    const size_t count = e.value.size();
    size_t stride = 1;
    if (max_per_param > 0 && count > max_per_param)
      stride = (count + max_per_param - 1) / max_per_param;
    for (size_t i = 0; i < count; i += stride) {
      const T saved = e.value.data[i];
      e.value.data[i] = static_cast<T>(saved + eps);
      const double lp = loss_fn(params);
      e.value.data[i] = static_cast<T>(saved - eps);
      const double lm = loss_fn(params);
      e.value.data[i] = saved;

      const double fd = (lp - lm) / (2.0 * eps);
      const double an = ga ? static_cast<double>(ga->data[i]) : 0.0;
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      const double diff = std::abs(fd - an);
      const double rel = diff <= abs_tol ? 0.0 : diff / denom;
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = e.name;
        res.worst_index = i;
        res.worst_fd = fd;
        res.worst_an = an;
      }
    }
  }
  return res;
}

}  // namespace cdraw

#endif  // CDRAW_GRAD_CHECK_H_
