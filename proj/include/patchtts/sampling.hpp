#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchtts/rng.hpp"
#include "patchtts/toycodec.hpp"

namespace patchtts {

struct SampleConfig {
  double top_p = 0.2;
  double top_p_step = 0.2;
  double top_p_max = 1.0;
  int ras_window = 10;
  double ras_threshold = 0.09;
  double temperature = 1.0;
  int max_frames = 64;
  double min_length_ratio = 0.5;
  uint64_t seed = 0;
  bool ras = true;
  bool quality_prefix = true;
  /// Tag prepended when quality_prefix is on.
  Fidelity quality_tag = Fidelity::kHigh;

  void validate() const;
  bool operator==(const SampleConfig&) const = default;
};

void to_json(nlohmann::json& j, const SampleConfig& c);
void from_json(const nlohmann::json& j, SampleConfig& c);

/// Probabilities kept by nucleus truncation: sort descending (ties by lower
/// index), keep the shortest prefix whose mass reaches top_p (at least one
/// token), renormalize. Entries outside the nucleus are 0.
std::vector<double> nucleus_distribution(std::span<const double> logits, double top_p, double temperature = 1.0);

/// Draws from nucleus_distribution. Consumes exactly one uniform draw.
int nucleus_sample(std::span<const double> logits, double top_p, Rng& rng, double temperature = 1.0);

/// Nucleus sample v; if v != eos and v occurs in the last ras_window entries
/// of `history` with frequency count / ras_window > ras_threshold, v is
/// replaced by a draw from the full distribution (top_p = 1). Pass eos < 0
/// when no token is exempt.
int ras_sample(std::span<const double> logits, std::span<const int> history, const SampleConfig& cfg, double top_p,
               Rng& rng, int eos = -1);

}  // namespace patchtts
