#pragma once

#include <span>
#include <vector>

#include "patchtts/autograd.hpp"
#include "patchtts/toycodec.hpp"

namespace patchtts {

/// L0 logits of one sequence (T rows) and its T targets (frames then EOS).
struct FluxInput {
  Var l0_logits;
  std::vector<int> targets;
};

/// [patch[0] for each frame] ++ [eos].
std::vector<int> l0_targets(const PatchSequence& patches, int eos);

/// Repetition penalty on L0: beta / (eps + CE(logits[t], targets[t-1])),
/// averaged over every t >= 1 of every input. Sequences with T < 2 add no
/// terms; with no terms at all the result is 0.
Var flux_loss(Graph& g, std::span<const FluxInput> inputs, double beta, double eps);

/// Same quantity on a plain T x V logit matrix.
double flux_loss(const Tensor& logits, std::span<const int> targets, double beta, double eps);

}  // namespace patchtts
