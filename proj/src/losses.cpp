#include "patchtts/losses.hpp"

#include <stdexcept>

namespace patchtts {

std::vector<int> l0_targets(const PatchSequence& patches, int eos) {
  std::vector<int> t;
  t.reserve(patches.size() + 1);
  for (const Patch& p : patches.frames) t.push_back(p[0]);
  t.push_back(eos);
  return t;
}

Var flux_loss(Graph& g, std::span<const FluxInput> inputs, double beta, double eps) {
  std::vector<Var> ce_terms;
  for (const FluxInput& in : inputs) {
    const int rows = in.l0_logits.rows();
    if (static_cast<int>(in.targets.size()) != rows) throw std::invalid_argument("flux_loss: one target per row");
    if (rows < 2) continue;
    const std::span<const int> prev(in.targets.data(), static_cast<size_t>(rows - 1));
    ce_terms.push_back(cross_entropy_rows(slice_rows(in.l0_logits, 1, rows - 1), prev));
  }
  if (ce_terms.empty()) return g.constant(Tensor::scalar(0.0));
  const Var ce = ce_terms.size() == 1 ? ce_terms[0] : concat_rows(ce_terms);
  return scale(mean(reciprocal(add_scalar(ce, eps))), beta);
}

double flux_loss(const Tensor& logits, std::span<const int> targets, double beta, double eps) {
  const int rows = logits.rows();
  if (static_cast<int>(targets.size()) != rows) throw std::invalid_argument("flux_loss: one target per row");
  if (rows < 2) return 0.0;
  double acc = 0.0;
  for (int t = 1; t < rows; ++t) acc += beta / (eps + cross_entropy(logits.row(t), targets[static_cast<size_t>(t - 1)]));
  return acc / (rows - 1);
}

}  // namespace patchtts
