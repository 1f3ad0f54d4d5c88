#pragma once

// Encoder / global decoder / local decoder stack.
//
//   encoder:  [proj(sv), proj(clap), text embeddings] + sinusoidal PE,
//             non-causal pre-norm blocks with Mish feed-forward.
//   global:   [begin-of-audio, patch_embed(frame 0..F-1)] + sinusoidal PE,
//             causal self-attention then cross-attention to the encoder.
//             Output row t conditions frame t; row F predicts EOS.
//   local:    7 positions per frame with learned positions. Position 0 input
//             is the frame latent, position j > 0 is the embedding of token
//             j-1 of the same frame. Causal within the frame only.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchtts/autograd.hpp"
#include "patchtts/params.hpp"
#include "patchtts/rng.hpp"
#include "patchtts/toycodec.hpp"

namespace patchtts {

struct ModelConfig {
  std::string preset = "desk";
  int d_model = 64;
  int n_heads = 4;
  int n_layers_enc = 2;
  int n_layers_global = 2;
  int n_layers_local = 2;
  int d_ff = 256;
  int v0 = 64;
  int v1 = 32;
  int v2 = 32;
  int text_vocab = 512;
  int patch_size = kPatchSize;
  int max_frames = 64;
  int max_text = 128;  // encoder positions including the two speaker slots
  int d_sv = 32;
  int d_clap = 32;
  double flux_beta_pretrain = 0.01;
  double flux_beta_orpo = 0.1;
  double flux_eps = 1e-3;
  double init_std = 0.02;

  static ModelConfig desk();
  /// 8-layer 512-wide encoder/global decoder, 4-layer local decoder. Head
  /// count and feed-forward width are not given for this scale; 8 heads and
  /// 2048 are placeholders.
  static ModelConfig paper();
  static ModelConfig preset_named(const std::string& name);

  void validate() const;
  int eos() const { return v0; }
  /// Output width per patch position; position 0 carries EOS at index v0.
  std::array<int, kPatchSize> head_vocab() const { return {v0 + 1, v1, v1, v2, v2, v2, v2}; }
  std::array<int, kPatchSize> token_vocab() const { return {v0, v1, v1, v2, v2, v2, v2}; }
  CodecConfig codec() const;
  int patch_embed_width() const { return (d_model + 4) / 8; }

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Everything the loss needs for one utterance.
struct Example {
  SpeakerRef speaker;
  std::vector<int> text_ids;
  PatchSequence patches;
};

/// Logits of one teacher-forced utterance. l0 has F+1 rows (last row is the
/// EOS prediction); rest[j-1] holds position j for the F real frames.
struct SequenceLogits {
  Var l0;
  std::array<Var, kPatchSize - 1> rest;
  int frames = 0;
};

struct LossParts {
  Var ce;
  Var flux;
  Var total;
};

class Model {
 public:
  Model(ModelConfig cfg, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Returns (2 + len(text_ids)) x d_model.
  Var encode_context(Graph& g, const SpeakerRef& speaker, std::span<const int> text_ids);
  /// Returns (F + 1) x d_model for F previous frames.
  Var global_latents(Graph& g, std::span<const Patch> frames, Var memory);
  /// Teacher-forced local decoding of n frames at once. `latents` is n x d and
  /// teacher[f] supplies tokens 0..5 of frame f (token 6 is never an input).
  /// Returns logits per position, each n x head_vocab()[j].
  std::array<Var, kPatchSize> local_logits(Graph& g, Var latents, std::span<const Patch> teacher);
  /// Position `prefix.size()` logits (1 x head_vocab) for one frame latent
  /// (1 x d) given the already-sampled tokens of that frame.
  Var local_step(Graph& g, Var latent, std::span<const int> prefix);

  SequenceLogits sequence_logits(Graph& g, const Example& ex);
  /// Mean cross-entropy over the 7F+1 predictions (EOS included), 1 x 1.
  Var sequence_nll(Graph& g, const SequenceLogits& logits, const PatchSequence& target);

  /// ce: mean over the batch of per-utterance mean CE. flux: beta-weighted
  /// penalty on L0 pooled over all valid timesteps of the batch; skipped
  /// (constant 0) when flux_beta is 0.
  LossParts forward_loss(Graph& g, std::span<const Example> batch, double flux_beta, double flux_eps);

 private:
  // Handles are indices into params_ so Model stays copyable.
  struct Linear {
    size_t w = 0;
    size_t b = 0;
  };
  struct Norm {
    size_t g = 0;
    size_t b = 0;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct Block {
    Norm ln_self;
    Attention self;
    Norm ln_cross;
    Attention cross;  // global decoder only
    Norm ln_ff;
    Linear ff1, ff2;
  };

  /// Hidden projections default to N(0, 1/in); residual output projections
  /// and output heads pass init_std.
  Linear make_linear(Rng& rng, const std::string& name, int in, int out, double std = 0.0);
  Norm make_norm(const std::string& name, int dim);
  Attention make_attention(Rng& rng, const std::string& name);
  Block make_block(Rng& rng, const std::string& name, bool with_cross);
  size_t make_table(Rng& rng, const std::string& name, int rows, int cols);
  Var p(Graph& g, size_t idx) { return g.param(params_[idx]); }

  Var apply(Graph& g, const Linear& l, Var x);
  Var apply(Graph& g, const Norm& n, Var x);
  Var attend(Graph& g, const Attention& a, Var xq, Var xkv, Mask mask);
  Var run_block(Graph& g, const Block& b, Var x, Var memory, Mask mask);

  ModelConfig cfg_;
  ParamStore params_;

  Linear spk_sv_, spk_clap_;
  size_t text_emb_ = 0;
  std::vector<Block> enc_;
  Norm enc_out_;

  size_t boa_ = 0;
  std::array<size_t, kPatchSize> patch_emb_{};
  Linear patch_proj_;
  std::vector<Block> glob_;
  Norm glob_out_;

  std::array<size_t, kPatchSize - 1> local_in_{};
  size_t local_pos_ = 0;
  std::vector<Block> loc_;
  Norm loc_out_;
  std::array<Linear, kPatchSize> heads_;
};

}  // namespace patchtts
