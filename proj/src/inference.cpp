#include "patchtts/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace patchtts {

void ModelFrameSource::start(const SpeakerRef& speaker, std::span<const int> text_ids, std::span<const Patch> prompt) {
  Graph g(false);
  memory_ = model_.encode_context(g, speaker, text_ids).value();
  frames_.assign(prompt.begin(), prompt.end());
  latent_ready_ = false;
}

std::vector<double> ModelFrameSource::logits(std::span<const int> prefix) {
  if (memory_.empty()) throw std::logic_error("ModelFrameSource: start() not called");
  if (!latent_ready_) {
    Graph g(false);
    const Var lat = model_.global_latents(g, frames_, g.constant(memory_));
    latent_ = slice_rows(lat, lat.rows() - 1, 1).value();
    latent_ready_ = true;
  }
  Graph g(false);
  const Var out = model_.local_step(g, g.constant(latent_), prefix);
  return out.value().data;
}

void ModelFrameSource::push(const Patch& frame) {
  frames_.push_back(frame);
  latent_ready_ = false;
}

std::string_view to_string(CloneMode m) { return m == CloneMode::kDeep ? "deep" : "shallow"; }

CloneMode parse_clone_mode(std::string_view s) {
  if (s == "shallow") return CloneMode::kShallow;
  if (s == "deep") return CloneMode::kDeep;
  throw std::invalid_argument("unknown mode: " + std::string(s));
}

DeepPrefix make_deep_prefix(const ToyCodec& codec, int speaker, Style style, std::string_view ref_transcript) {
  if (ref_transcript.empty()) throw std::invalid_argument("deep clone needs a non-empty reference transcript");
  DeepPrefix p;
  p.text = std::string(ref_transcript) + " ";
  p.patches = flatten(codec.encode(p.text, codec.speaker(speaker), style, Fidelity::kHigh), codec.config());
  return p;
}

std::vector<int> synth_text_ids(const BpeTokenizer& tok, const SynthRequest& req, const SampleConfig& cfg) {
  std::string text = req.text;
  if (req.mode == CloneMode::kDeep) {
    if (!req.prefix) throw std::invalid_argument("deep mode requires a reference prefix");
    text = req.prefix->text + text;
  }
  return tok.encode_text(text, cfg.quality_prefix ? std::optional<Fidelity>(cfg.quality_tag) : std::nullopt);
}

SynthResult synthesize(FrameSource& src, const BpeTokenizer& tok, const SynthRequest& req, const SampleConfig& cfg,
                       double top_p, uint64_t seed) {
  cfg.validate();
  const std::vector<int> ids = synth_text_ids(tok, req, cfg);
  if (ids.empty()) throw std::invalid_argument("synthesize: empty text");
  std::span<const Patch> prompt;
  if (req.mode == CloneMode::kDeep) prompt = req.prefix->patches.frames;
  const int limit = std::min(cfg.max_frames, src.frame_limit() - static_cast<int>(prompt.size()));
  if (limit < 1) throw std::invalid_argument("synthesize: reference prompt leaves no room to generate");

  src.start(req.speaker, ids, prompt);
  Rng rng(seed);
  SynthResult out;
  out.used_top_p = top_p;
  out.attempted_top_p = {top_p};
  std::vector<int> history;
  bool stopped = false;
  while (static_cast<int>(out.patches.size()) < limit) {
    Patch frame{};
    std::vector<int> prefix;
    for (int j = 0; j < kPatchSize; ++j) {
      const std::vector<double> lg = src.logits(prefix);
      int tok_j;
      if (j == 0)
        tok_j = cfg.ras ? ras_sample(lg, history, cfg, top_p, rng, src.eos())
                        : nucleus_sample(lg, top_p, rng, cfg.temperature);
      else
        tok_j = nucleus_sample(lg, top_p, rng, cfg.temperature);
      if (j == 0 && tok_j == src.eos()) {
        stopped = true;
        break;
      }
      frame[static_cast<size_t>(j)] = tok_j;
      prefix.push_back(tok_j);
    }
    if (stopped) break;
    history.push_back(frame[0]);
    out.patches.frames.push_back(frame);
    src.push(frame);
  }
  out.truncated = !stopped;
  return out;
}

std::vector<double> backoff_schedule(const SampleConfig& cfg) {
  std::vector<double> levels;
  for (int i = 0;; ++i) {
    // Snap to a 1e-12 grid so 0.2 + 2 * 0.2 reads as 0.6.
    const double p = std::round((cfg.top_p + i * cfg.top_p_step) * 1e12) / 1e12;
    if (p > cfg.top_p_max + 1e-12) break;
    levels.push_back(std::min(p, cfg.top_p_max));
  }
  return levels;
}

SynthResult synthesize_with_backoff(FrameSource& src, const BpeTokenizer& tok, const SynthRequest& req,
                                    const SampleConfig& cfg) {
  const double expected = static_cast<double>(req.text.size());
  const std::vector<double> levels = backoff_schedule(cfg);
  SynthResult best;
  bool have_best = false;
  std::vector<double> tried;
  for (size_t i = 0; i < levels.size(); ++i) {
    SynthResult r = synthesize(src, tok, req, cfg, levels[i], derive_seed(cfg.seed, static_cast<uint64_t>(i)));
    tried.push_back(levels[i]);
    const bool ok = static_cast<double>(r.patches.size()) >= cfg.min_length_ratio * expected;
    if (ok) {
      r.attempted_top_p = tried;
      return r;
    }
    if (!have_best || r.patches.size() > best.patches.size()) {
      best = std::move(r);
      have_best = true;
    }
  }
  best.attempted_top_p = tried;
  return best;
}

}  // namespace patchtts
