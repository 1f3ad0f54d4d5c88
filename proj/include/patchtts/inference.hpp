#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchtts/model.hpp"
#include "patchtts/sampling.hpp"
#include "patchtts/tokenizer.hpp"
#include "patchtts/toycodec.hpp"

namespace patchtts {

/// Anything that can produce per-position logits frame by frame. The model
/// implements it; tests substitute stubs.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  /// Begins an utterance. `prompt` frames are treated as already generated.
  virtual void start(const SpeakerRef& speaker, std::span<const int> text_ids, std::span<const Patch> prompt) = 0;
  /// Logits for position prefix.size() of the next frame. Position 0 has
  /// V0 + 1 entries (index V0 is EOS).
  virtual std::vector<double> logits(std::span<const int> prefix) = 0;
  virtual void push(const Patch& frame) = 0;
  /// Index of EOS in position-0 logits.
  virtual int eos() const = 0;
  /// Upper bound on prompt + generated frames.
  virtual int frame_limit() const = 0;
};

/// Runs the model without recording gradients. The encoder memory and the
/// latent of the frame being decoded are cached; the global decoder is
/// re-run over the whole prefix once per frame (no key/value cache).
class ModelFrameSource : public FrameSource {
 public:
  explicit ModelFrameSource(Model& model) : model_(model) {}
  void start(const SpeakerRef& speaker, std::span<const int> text_ids, std::span<const Patch> prompt) override;
  std::vector<double> logits(std::span<const int> prefix) override;
  void push(const Patch& frame) override;
  int eos() const override { return model_.config().eos(); }
  int frame_limit() const override { return model_.config().max_frames; }

 private:
  Model& model_;
  Tensor memory_;
  Tensor latent_;
  bool latent_ready_ = false;
  std::vector<Patch> frames_;
};

enum class CloneMode { kShallow, kDeep };
std::string_view to_string(CloneMode m);
CloneMode parse_clone_mode(std::string_view s);

/// Deep-clone prompt: `text` is prepended verbatim to the target text on the
/// encoder side and `patches` are the reference frames fed to the global
/// decoder. With the toy codec, text is the reference transcript followed by
/// one space and patches encode exactly that string.
struct DeepPrefix {
  std::string text;
  PatchSequence patches;
};

DeepPrefix make_deep_prefix(const ToyCodec& codec, int speaker, Style style, std::string_view ref_transcript);

struct SynthRequest {
  std::string text;
  SpeakerRef speaker;
  CloneMode mode = CloneMode::kShallow;
  std::optional<DeepPrefix> prefix;  // required for deep mode
};

struct SynthResult {
  PatchSequence patches;  // prompt excluded
  bool truncated = false;
  double used_top_p = 0.0;
  std::vector<double> attempted_top_p;
};

/// Encoder input ids for a request: the cfg.quality_tag token ([48000] by
/// default; omitted when quality_prefix is off) followed by BPE of
/// (deep prefix text ++ target text).
std::vector<int> synth_text_ids(const BpeTokenizer& tok, const SynthRequest& req, const SampleConfig& cfg);

/// One generation pass at a fixed top_p with Rng(seed). Position 0 uses
/// ras_sample (nucleus_sample when cfg.ras is off), positions 1..6 use
/// nucleus_sample. Stops on EOS or when cfg.max_frames frames (or the
/// source's frame limit) are reached, the latter flagged as truncated.
SynthResult synthesize(FrameSource& src, const BpeTokenizer& tok, const SynthRequest& req, const SampleConfig& cfg,
                       double top_p, uint64_t seed);

/// top_p levels tried by backoff: top_p, top_p + step, ... up to top_p_max.
std::vector<double> backoff_schedule(const SampleConfig& cfg);

/// Attempt i (0-based) runs at backoff_schedule(cfg)[i] with seed
/// derive_seed(cfg.seed, i). An attempt is accepted when its frame count is
/// at least min_length_ratio x the character count of the target text;
/// otherwise the longest attempt (earliest on ties) is returned.
SynthResult synthesize_with_backoff(FrameSource& src, const BpeTokenizer& tok, const SynthRequest& req,
                                    const SampleConfig& cfg);

}  // namespace patchtts
