#include "patchtts/gradcheck.hpp"

#include <cmath>

#include "patchtts/rng.hpp"

namespace patchtts {

GradCheckResult grad_check(const LossFn& loss_fn, ParamStore& params, int n_probe, double eps,
                           uint64_t seed) {
  const size_t total = params.scalar_count();
  if (total == 0 || n_probe <= 0) throw std::invalid_argument("grad_check: nothing to probe");

  params.zero_grad();
  const double base = loss_fn(params, true);
  if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss");

  GradCheckResult result;
  Rng rng(seed);
  for (int probe = 0; probe < n_probe; ++probe) {
    size_t flat = rng.below(total);
    size_t pi = 0;
    while (flat >= params[pi].value.size()) {
      flat -= params[pi].value.size();
      ++pi;
    }
    Parameter& p = params[pi];
    const double saved = p.value.data[flat];
    p.value.data[flat] = saved + eps;
    const double up = loss_fn(params, false);
    p.value.data[flat] = saved - eps;
    const double down = loss_fn(params, false);
    p.value.data[flat] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite loss");

    const double g_fd = (up - down) / (2.0 * eps);
    const double g_ad = p.grad.data[flat];
    const double rel = std::abs(g_ad - g_fd) / std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_param = pi;
      result.worst_index = flat;
    }
    ++result.probes;
  }
  return result;
}

}  // namespace patchtts
