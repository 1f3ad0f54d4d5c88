#include "patchtts/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace patchtts {

void SampleConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("sample config: " + m); };
  if (!(top_p > 0.0 && top_p <= 1.0)) fail("top_p must be in (0, 1]");
  if (!(top_p_step > 0.0)) fail("top_p_step must be positive");
  if (!(top_p_max >= top_p && top_p_max <= 1.0)) fail("top_p_max must be in [top_p, 1]");
  if (ras_window < 1) fail("ras_window must be >= 1");
  if (ras_threshold < 0.0 || ras_threshold > 1.0) fail("ras_threshold must be in [0, 1]");
  if (!(temperature > 0.0)) fail("temperature must be positive");
  if (max_frames < 1) fail("max_frames must be >= 1");
  if (min_length_ratio < 0.0) fail("min_length_ratio must be >= 0");
}

void to_json(nlohmann::json& j, const SampleConfig& c) {
  j = nlohmann::json{{"top_p", c.top_p},
                     {"top_p_step", c.top_p_step},
                     {"top_p_max", c.top_p_max},
                     {"ras_window", c.ras_window},
                     {"ras_threshold", c.ras_threshold},
                     {"temperature", c.temperature},
                     {"max_frames", c.max_frames},
                     {"min_length_ratio", c.min_length_ratio},
                     {"seed", c.seed},
                     {"ras", c.ras},
                     {"quality_prefix", c.quality_prefix},
                     {"quality_tag", std::string(to_string(c.quality_tag))}};
}

void from_json(const nlohmann::json& j, SampleConfig& c) {
  SampleConfig d;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("top_p", d.top_p);
  get("top_p_step", d.top_p_step);
  get("top_p_max", d.top_p_max);
  get("ras_window", d.ras_window);
  get("ras_threshold", d.ras_threshold);
  get("temperature", d.temperature);
  get("max_frames", d.max_frames);
  get("min_length_ratio", d.min_length_ratio);
  get("seed", d.seed);
  get("ras", d.ras);
  get("quality_prefix", d.quality_prefix);
  if (j.contains("quality_tag")) d.quality_tag = parse_fidelity(j.at("quality_tag").get<std::string>());
  c = d;
}

std::vector<double> nucleus_distribution(std::span<const double> logits, double top_p, double temperature) {
  if (logits.empty()) throw std::invalid_argument("nucleus: empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / temperature);
    z += p[i];
  }
  for (double& v : p) v /= z;
  std::vector<size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&p](size_t a, size_t b) { return p[a] > p[b]; });
  double cum = 0.0;
  size_t keep = 0;
  while (keep < idx.size()) {
    cum += p[idx[keep++]];
    if (cum >= top_p) break;
  }
  std::vector<double> out(p.size(), 0.0);
  for (size_t k = 0; k < keep; ++k) out[idx[k]] = p[idx[k]] / cum;
  return out;
}

int nucleus_sample(std::span<const double> logits, double top_p, Rng& rng, double temperature) {
  const std::vector<double> p = nucleus_distribution(logits, top_p, temperature);
  const double u = rng.uniform();
  double cum = 0.0;
  int last = -1;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    last = static_cast<int>(i);
    cum += p[i];
    if (u < cum) return last;
  }
  return last;  // rounding left u just above the final cumulative mass
}

int ras_sample(std::span<const double> logits, std::span<const int> history, const SampleConfig& cfg, double top_p,
               Rng& rng, int eos) {
  const int v = nucleus_sample(logits, top_p, rng, cfg.temperature);
  if (v == eos) return v;
  const size_t k = static_cast<size_t>(cfg.ras_window);
  const auto window = history.size() > k ? history.subspan(history.size() - k) : history;
  const auto count = std::count(window.begin(), window.end(), v);
  const double r = static_cast<double>(count) / static_cast<double>(k);
  if (r > cfg.ras_threshold) return nucleus_sample(logits, 1.0, rng, cfg.temperature);
  return v;
}

}  // namespace patchtts
