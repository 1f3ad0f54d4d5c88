#pragma once

#include <cstdint>
#include <functional>

#include "patchtts/params.hpp"

namespace patchtts {

/// Evaluates a scalar loss at the store's current values. When `with_grad`
/// is true it must also accumulate d(loss)/d(param) into Parameter::grad
/// (grads are zeroed by the caller).
using LossFn = std::function<double(ParamStore& params, bool with_grad)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  int probes = 0;
  size_t worst_param = 0;
  size_t worst_index = 0;
};

/// Compares reverse-mode gradients with central differences
/// (f(t+eps) - f(t-eps)) / (2 eps) on `n_probe` coordinates drawn uniformly
/// (seeded) from all scalars in the store. Relative error per probe is
/// |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|). Throws NumericError on a
/// non-finite loss.
GradCheckResult grad_check(const LossFn& loss_fn, ParamStore& params, int n_probe, double eps,
                           uint64_t seed = 0);

}  // namespace patchtts
