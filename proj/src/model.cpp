#include "patchtts/model.hpp"

#include <cmath>
#include <stdexcept>

#include "patchtts/losses.hpp"

namespace patchtts {

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.flux_beta_orpo = 1e-3;
  return c;
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = "paper";
  c.d_model = 512;
  c.n_heads = 8;
  c.n_layers_enc = 8;
  c.n_layers_global = 8;
  c.n_layers_local = 4;
  c.d_ff = 2048;
  c.max_frames = 1024;
  c.max_text = 512;
  return c;
}

ModelConfig ModelConfig::preset_named(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw std::invalid_argument("unknown preset: " + name);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (patch_size != kPatchSize) fail("patch_size must be 7");
  if (d_model <= 0 || d_model % 2 != 0) fail("d_model must be positive and even");
  if (n_heads <= 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (n_layers_enc < 0 || n_layers_global < 0 || n_layers_local < 0) fail("layer counts must be >= 0");
  if (d_ff <= 0) fail("d_ff must be positive");
  if (v0 <= 0 || v1 <= 0 || v2 <= 0 || text_vocab <= 0) fail("vocab sizes must be positive");
  if (max_frames <= 0 || max_text <= 2) fail("max_frames/max_text too small");
  if (flux_eps <= 0.0) fail("flux_eps must be positive");
}

CodecConfig ModelConfig::codec() const {
  CodecConfig c;
  c.v0 = v0;
  c.v1 = v1;
  c.v2 = v2;
  c.d_sv = d_sv;
  c.d_clap = d_clap;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"preset", c.preset},
                     {"d_model", c.d_model},
                     {"n_heads", c.n_heads},
                     {"n_layers_enc", c.n_layers_enc},
                     {"n_layers_global", c.n_layers_global},
                     {"n_layers_local", c.n_layers_local},
                     {"d_ff", c.d_ff},
                     {"v0", c.v0},
                     {"v1", c.v1},
                     {"v2", c.v2},
                     {"text_vocab", c.text_vocab},
                     {"patch_size", c.patch_size},
                     {"max_frames", c.max_frames},
                     {"max_text", c.max_text},
                     {"d_sv", c.d_sv},
                     {"d_clap", c.d_clap},
                     {"flux_beta_pretrain", c.flux_beta_pretrain},
                     {"flux_beta_orpo", c.flux_beta_orpo},
                     {"flux_eps", c.flux_eps},
                     {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d = j.contains("preset") ? ModelConfig::preset_named(j.at("preset").get<std::string>()) : ModelConfig{};
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("preset", d.preset);
  get("d_model", d.d_model);
  get("n_heads", d.n_heads);
  get("n_layers_enc", d.n_layers_enc);
  get("n_layers_global", d.n_layers_global);
  get("n_layers_local", d.n_layers_local);
  get("d_ff", d.d_ff);
  get("v0", d.v0);
  get("v1", d.v1);
  get("v2", d.v2);
  get("text_vocab", d.text_vocab);
  get("patch_size", d.patch_size);
  get("max_frames", d.max_frames);
  get("max_text", d.max_text);
  get("d_sv", d.d_sv);
  get("d_clap", d.d_clap);
  get("flux_beta_pretrain", d.flux_beta_pretrain);
  get("flux_beta_orpo", d.flux_beta_orpo);
  get("flux_eps", d.flux_eps);
  get("init_std", d.init_std);
  c = d;
}

// --- construction ------------------------------------------------------------

Model::Model(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(init_seed);
  const int d = cfg_.d_model;

  spk_sv_ = make_linear(rng, "enc.spk_sv", cfg_.d_sv, d);
  spk_clap_ = make_linear(rng, "enc.spk_clap", cfg_.d_clap, d);
  text_emb_ = make_table(rng, "enc.text_emb", cfg_.text_vocab, d);
  for (int i = 0; i < cfg_.n_layers_enc; ++i) enc_.push_back(make_block(rng, "enc.L" + std::to_string(i), false));
  enc_out_ = make_norm("enc.ln_out", d);

  boa_ = make_table(rng, "glob.boa", 1, d);
  const auto vocab = cfg_.token_vocab();
  const int pe = cfg_.patch_embed_width();
  for (int j = 0; j < kPatchSize; ++j)
    patch_emb_[static_cast<size_t>(j)] =
        make_table(rng, "glob.patch_emb" + std::to_string(j), vocab[static_cast<size_t>(j)], pe);
  patch_proj_ = make_linear(rng, "glob.patch_proj", pe * kPatchSize, d);
  for (int i = 0; i < cfg_.n_layers_global; ++i) glob_.push_back(make_block(rng, "glob.L" + std::to_string(i), true));
  glob_out_ = make_norm("glob.ln_out", d);

  for (int j = 0; j < kPatchSize - 1; ++j)
    local_in_[static_cast<size_t>(j)] =
        make_table(rng, "loc.in_emb" + std::to_string(j), vocab[static_cast<size_t>(j)], d);
  local_pos_ = make_table(rng, "loc.pos", kPatchSize, d);
  for (int i = 0; i < cfg_.n_layers_local; ++i) loc_.push_back(make_block(rng, "loc.L" + std::to_string(i), false));
  loc_out_ = make_norm("loc.ln_out", d);

  const auto hv = cfg_.head_vocab();
  for (int j = 0; j < kPatchSize; ++j)
    heads_[static_cast<size_t>(j)] = make_linear(rng, "head" + std::to_string(j), d, hv[static_cast<size_t>(j)], cfg_.init_std);
}

Model::Linear Model::make_linear(Rng& rng, const std::string& name, int in, int out, double std) {
  Tensor w = Tensor::matrix(in, out);
  if (std <= 0.0) std = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : w.data) v = rng.normal() * std;
  Linear l;
  l.w = params_.size();
  params_.add(name + ".w", std::move(w), true);
  l.b = params_.size();
  params_.add(name + ".b", Tensor::matrix(1, out), false);
  return l;
}

Model::Norm Model::make_norm(const std::string& name, int dim) {
  Norm n;
  n.g = params_.size();
  params_.add(name + ".g", Tensor::matrix(1, dim, 1.0), false);
  n.b = params_.size();
  params_.add(name + ".b", Tensor::matrix(1, dim), false);
  return n;
}

Model::Attention Model::make_attention(Rng& rng, const std::string& name) {
  const int d = cfg_.d_model;
  return Attention{make_linear(rng, name + ".q", d, d), make_linear(rng, name + ".k", d, d),
                   make_linear(rng, name + ".v", d, d), make_linear(rng, name + ".o", d, d, cfg_.init_std)};
}

Model::Block Model::make_block(Rng& rng, const std::string& name, bool with_cross) {
  Block b;
  b.ln_self = make_norm(name + ".ln_self", cfg_.d_model);
  b.self = make_attention(rng, name + ".self");
  if (with_cross) {
    b.ln_cross = make_norm(name + ".ln_cross", cfg_.d_model);
    b.cross = make_attention(rng, name + ".cross");
  }
  b.ln_ff = make_norm(name + ".ln_ff", cfg_.d_model);
  b.ff1 = make_linear(rng, name + ".ff1", cfg_.d_model, cfg_.d_ff);
  b.ff2 = make_linear(rng, name + ".ff2", cfg_.d_ff, cfg_.d_model, cfg_.init_std);
  return b;
}

size_t Model::make_table(Rng& rng, const std::string& name, int rows, int cols) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data) v = rng.normal() * cfg_.init_std;
  const size_t idx = params_.size();
  params_.add(name, std::move(t), true);
  return idx;
}

// --- building blocks ---------------------------------------------------------

Var Model::apply(Graph& g, const Linear& l, Var x) { return add_row(matmul(x, p(g, l.w)), p(g, l.b)); }

Var Model::apply(Graph& g, const Norm& n, Var x) { return layer_norm(x, p(g, n.g), p(g, n.b)); }

Var Model::attend(Graph& g, const Attention& a, Var xq, Var xkv, Mask mask) {
  const Var q = apply(g, a.q, xq);
  const Var k = apply(g, a.k, xkv);
  const Var v = apply(g, a.v, xkv);
  if (mask.kind == Mask::kBlockCausal)
    return apply(g, a.o, block_causal_attention(q, k, v, mask.block, cfg_.n_heads));
  const int dh = cfg_.d_model / cfg_.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(cfg_.n_heads));
  for (int h = 0; h < cfg_.n_heads; ++h) {
    const Var qh = slice_cols(q, h * dh, dh);
    const Var kh = slice_cols(k, h * dh, dh);
    const Var vh = slice_cols(v, h * dh, dh);
    const Var att = softmax_rows(scale(matmul(qh, kh, false, true), inv_sqrt), mask);
    heads.push_back(matmul(att, vh));
  }
  const Var merged = cfg_.n_heads == 1 ? heads[0] : concat_cols(heads);
  return apply(g, a.o, merged);
}

Var Model::run_block(Graph& g, const Block& b, Var x, Var memory, Mask mask) {
  const Var hs = apply(g, b.ln_self, x);
  x = add(x, attend(g, b.self, hs, hs, mask));
  if (memory.valid()) {
    const Var hc = apply(g, b.ln_cross, x);
    x = add(x, attend(g, b.cross, hc, memory, Mask::none()));
  }
  const Var hf = apply(g, b.ln_ff, x);
  return add(x, apply(g, b.ff2, mish(apply(g, b.ff1, hf))));
}

// --- the three stacks ----------------------------------------------------------

Var Model::encode_context(Graph& g, const SpeakerRef& speaker, std::span<const int> text_ids) {
  if (text_ids.empty()) throw std::invalid_argument("encode_context: text_ids must be non-empty");
  const int len = 2 + static_cast<int>(text_ids.size());
  if (len > cfg_.max_text)
    throw std::invalid_argument("encode_context: input length " + std::to_string(len) + " exceeds max_text " +
                                std::to_string(cfg_.max_text));
  if (static_cast<int>(speaker.sv_embed.size()) != cfg_.d_sv ||
      static_cast<int>(speaker.clap_embed.size()) != cfg_.d_clap)
    throw std::invalid_argument("encode_context: speaker embedding width mismatch");
  for (int id : text_ids)
    if (id < 0 || id >= cfg_.text_vocab) throw std::out_of_range("encode_context: text id " + std::to_string(id));

  const Var sv = apply(g, spk_sv_, g.constant(Tensor({1, cfg_.d_sv}, speaker.sv_embed)));
  const Var clap = apply(g, spk_clap_, g.constant(Tensor({1, cfg_.d_clap}, speaker.clap_embed)));
  const Var text = gather_rows(p(g, text_emb_), text_ids);
  const std::array<Var, 3> parts{sv, clap, text};
  Var x = add(concat_rows(parts), g.constant(sinusoidal_pe(len, cfg_.d_model)));
  for (const Block& b : enc_) x = run_block(g, b, x, Var{}, Mask::none());
  return apply(g, enc_out_, x);
}

Var Model::global_latents(Graph& g, std::span<const Patch> frames, Var memory) {
  const int n = static_cast<int>(frames.size());
  if (n > cfg_.max_frames)
    throw std::invalid_argument("global_latents: " + std::to_string(n) + " frames exceeds max_frames");
  Var x = p(g, boa_);
  if (n > 0) {
    const auto vocab = cfg_.token_vocab();
    std::array<Var, kPatchSize> cols;
    std::vector<int> ids(static_cast<size_t>(n));
    for (int j = 0; j < kPatchSize; ++j) {
      for (int f = 0; f < n; ++f) {
        const int t = frames[static_cast<size_t>(f)][static_cast<size_t>(j)];
        if (t < 0 || t >= vocab[static_cast<size_t>(j)])
          throw std::invalid_argument("global_latents: patch token outside position vocab");
        ids[static_cast<size_t>(f)] = t;
      }
      cols[static_cast<size_t>(j)] = gather_rows(p(g, patch_emb_[static_cast<size_t>(j)]), ids);
    }
    const Var embedded = apply(g, patch_proj_, concat_cols(cols));
    const std::array<Var, 2> parts{x, embedded};
    x = concat_rows(parts);
  }
  x = add(x, g.constant(sinusoidal_pe(n + 1, cfg_.d_model)));
  for (const Block& b : glob_) x = run_block(g, b, x, memory, Mask::causal());
  return apply(g, glob_out_, x);
}

std::array<Var, kPatchSize> Model::local_logits(Graph& g, Var latents, std::span<const Patch> teacher) {
  const int n = latents.rows();
  if (static_cast<int>(teacher.size()) != n) throw std::invalid_argument("local_logits: one teacher patch per latent");
  const auto vocab = cfg_.token_vocab();

  // Inputs laid out position-major, then permuted to frame-major rows f*7+j.
  std::vector<Var> blocks{latents};
  std::vector<int> ids(static_cast<size_t>(n));
  for (int j = 0; j < kPatchSize - 1; ++j) {
    for (int f = 0; f < n; ++f) {
      const int t = teacher[static_cast<size_t>(f)][static_cast<size_t>(j)];
      if (t < 0 || t >= vocab[static_cast<size_t>(j)])
        throw std::invalid_argument("local_logits: teacher token " + std::to_string(t) + " outside vocab at position " +
                                    std::to_string(j));
      ids[static_cast<size_t>(f)] = t;
    }
    blocks.push_back(gather_rows(p(g, local_in_[static_cast<size_t>(j)]), ids));
  }
  std::vector<int> order(static_cast<size_t>(n * kPatchSize));
  std::vector<int> pos(static_cast<size_t>(n * kPatchSize));
  for (int f = 0; f < n; ++f)
    for (int j = 0; j < kPatchSize; ++j) {
      order[static_cast<size_t>(f * kPatchSize + j)] = j * n + f;
      pos[static_cast<size_t>(f * kPatchSize + j)] = j;
    }
  Var x = add(gather_rows(concat_rows(blocks), order), gather_rows(p(g, local_pos_), pos));
  for (const Block& b : loc_) x = run_block(g, b, x, Var{}, Mask::block_causal(kPatchSize));
  x = apply(g, loc_out_, x);

  std::array<Var, kPatchSize> out;
  std::vector<int> rows(static_cast<size_t>(n));
  for (int j = 0; j < kPatchSize; ++j) {
    for (int f = 0; f < n; ++f) rows[static_cast<size_t>(f)] = f * kPatchSize + j;
    out[static_cast<size_t>(j)] = apply(g, heads_[static_cast<size_t>(j)], gather_rows(x, rows));
  }
  return out;
}

Var Model::local_step(Graph& g, Var latent, std::span<const int> prefix) {
  const int len = static_cast<int>(prefix.size());
  if (latent.rows() != 1) throw std::invalid_argument("local_step: latent must be a single row");
  if (len >= kPatchSize) throw std::invalid_argument("local_step: prefix already fills the patch");
  const auto vocab = cfg_.token_vocab();
  std::vector<Var> rows{latent};
  for (int j = 0; j < len; ++j) {
    const int t = prefix[static_cast<size_t>(j)];
    if (t < 0 || t >= vocab[static_cast<size_t>(j)])
      throw std::invalid_argument("local_step: token outside vocab at position " + std::to_string(j));
    const std::array<int, 1> id{t};
    rows.push_back(gather_rows(p(g, local_in_[static_cast<size_t>(j)]), id));
  }
  std::vector<int> pos(static_cast<size_t>(len + 1));
  for (int j = 0; j <= len; ++j) pos[static_cast<size_t>(j)] = j;
  Var x = add(concat_rows(rows), gather_rows(p(g, local_pos_), pos));
  for (const Block& b : loc_) x = run_block(g, b, x, Var{}, Mask::causal());
  x = apply(g, loc_out_, slice_rows(x, len, 1));
  return apply(g, heads_[static_cast<size_t>(len)], x);
}

SequenceLogits Model::sequence_logits(Graph& g, const Example& ex) {
  const int frames = static_cast<int>(ex.patches.size());
  const Var memory = encode_context(g, ex.speaker, ex.text_ids);
  const Var latents = global_latents(g, ex.patches.frames, memory);
  std::vector<Patch> teacher = ex.patches.frames;
  teacher.push_back(Patch{});  // EOS frame: only position 0 is read
  const auto logits = local_logits(g, latents, teacher);
  SequenceLogits out;
  out.frames = frames;
  out.l0 = logits[0];
  for (int j = 1; j < kPatchSize; ++j)
    out.rest[static_cast<size_t>(j - 1)] = frames > 0 ? slice_rows(logits[static_cast<size_t>(j)], 0, frames) : Var{};
  return out;
}

Var Model::sequence_nll(Graph& g, const SequenceLogits& logits, const PatchSequence& target) {
  (void)g;
  const int frames = logits.frames;
  if (static_cast<int>(target.size()) != frames) throw std::invalid_argument("sequence_nll: frame count mismatch");
  std::vector<int> l0(static_cast<size_t>(frames + 1));
  for (int f = 0; f < frames; ++f) l0[static_cast<size_t>(f)] = target.frames[static_cast<size_t>(f)][0];
  l0[static_cast<size_t>(frames)] = cfg_.eos();
  std::vector<Var> terms{sum(cross_entropy_rows(logits.l0, l0))};
  std::vector<int> tg(static_cast<size_t>(frames));
  for (int j = 1; j < kPatchSize && frames > 0; ++j) {
    for (int f = 0; f < frames; ++f) tg[static_cast<size_t>(f)] = target.frames[static_cast<size_t>(f)][static_cast<size_t>(j)];
    terms.push_back(sum(cross_entropy_rows(logits.rest[static_cast<size_t>(j - 1)], tg)));
  }
  const Var total = terms.size() == 1 ? terms[0] : sum(concat_rows(terms));
  return scale(total, 1.0 / static_cast<double>(kPatchSize * frames + 1));
}

LossParts Model::forward_loss(Graph& g, std::span<const Example> batch, double flux_beta, double flux_eps) {
  if (batch.empty()) throw std::invalid_argument("forward_loss: empty batch");
  // Frames are independent in the local decoder, so every utterance's
  // latents go through it in one call.
  std::vector<Var> latents;
  std::vector<Patch> teacher;
  std::vector<int> offsets;
  int rows = 0;
  for (const Example& ex : batch) {
    const Var memory = encode_context(g, ex.speaker, ex.text_ids);
    latents.push_back(global_latents(g, ex.patches.frames, memory));
    teacher.insert(teacher.end(), ex.patches.frames.begin(), ex.patches.frames.end());
    teacher.push_back(Patch{});
    offsets.push_back(rows);
    rows += static_cast<int>(ex.patches.size()) + 1;
  }
  const auto logits = local_logits(g, latents.size() == 1 ? latents[0] : concat_rows(latents), teacher);

  // Utterance e contributes mean CE over its 7F+1 predictions, scaled by 1/B.
  // Position j > 0 rows of the EOS frame get weight 0.
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::array<std::vector<int>, kPatchSize> targets;
  std::array<Tensor, kPatchSize> weights;
  for (auto& w : weights) w = Tensor::matrix(rows, 1);
  for (size_t e = 0; e < batch.size(); ++e) {
    const auto& frames = batch[e].patches.frames;
    const double w = inv_b / static_cast<double>(kPatchSize * frames.size() + 1);
    for (int j = 0; j < kPatchSize; ++j) {
      const size_t jj = static_cast<size_t>(j);
      for (size_t f = 0; f <= frames.size(); ++f) {
        const bool eos_frame = f == frames.size();
        targets[jj].push_back(eos_frame ? (j == 0 ? cfg_.eos() : 0) : frames[f][jj]);
        weights[jj](offsets[e] + static_cast<int>(f), 0) = (eos_frame && j > 0) ? 0.0 : w;
      }
    }
  }
  std::vector<Var> terms;
  for (int j = 0; j < kPatchSize; ++j) {
    const size_t jj = static_cast<size_t>(j);
    terms.push_back(sum(mul(cross_entropy_rows(logits[jj], targets[jj]), g.constant(std::move(weights[jj])))));
  }

  LossParts out;
  out.ce = sum(concat_rows(terms));
  if (flux_beta != 0.0) {
    std::vector<FluxInput> flux_inputs;
    for (size_t e = 0; e < batch.size(); ++e)
      flux_inputs.push_back({slice_rows(logits[0], offsets[e], static_cast<int>(batch[e].patches.size()) + 1),
                             l0_targets(batch[e].patches, cfg_.eos())});
    out.flux = flux_loss(g, flux_inputs, flux_beta, flux_eps);
  } else {
    out.flux = g.constant(Tensor::scalar(0.0));
  }
  out.total = add(out.ce, out.flux);
  if (!std::isfinite(out.total.value().item())) throw NumericError("forward_loss: non-finite loss");
  return out;
}

}  // namespace patchtts
