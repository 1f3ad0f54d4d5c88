#include "patchtts/preference.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "patchtts/losses.hpp"
#include "patchtts/metrics.hpp"
#include "patchtts/rng.hpp"

namespace patchtts {

namespace {

nlohmann::json patches_to_json(const PatchSequence& p) {
  nlohmann::json a = nlohmann::json::array();
  for (const Patch& f : p.frames) a.push_back(f);
  return a;
}

PatchSequence patches_from_json(const nlohmann::json& j) {
  PatchSequence p;
  for (const auto& f : j) p.frames.push_back(f.get<Patch>());
  return p;
}

SequenceLogits logits_for(Model& model, Graph& g, Var memory, const PatchSequence& patches) {
  const Var latents = model.global_latents(g, patches.frames, memory);
  std::vector<Patch> teacher = patches.frames;
  teacher.push_back(Patch{});
  const auto logits = model.local_logits(g, latents, teacher);
  SequenceLogits out;
  out.frames = static_cast<int>(patches.size());
  out.l0 = logits[0];
  for (int j = 1; j < kPatchSize; ++j)
    out.rest[static_cast<size_t>(j - 1)] =
        out.frames > 0 ? slice_rows(logits[static_cast<size_t>(j)], 0, out.frames) : Var{};
  return out;
}

}  // namespace

void PreferencePair::validate() const {
  if (chosen.empty()) throw std::invalid_argument("preference pair " + id + ": empty chosen sequence");
  if (rejected.empty()) throw std::invalid_argument("preference pair " + id + ": empty rejected sequence");
  if (text_ids.empty()) throw std::invalid_argument("preference pair " + id + ": empty text");
}

nlohmann::json pair_to_json(const PreferencePair& p) {
  return nlohmann::json{{"id", p.id},
                        {"context", {{"sv_embed", p.speaker.sv_embed},
                                     {"clap_embed", p.speaker.clap_embed},
                                     {"text_ids", p.text_ids}}},
                        {"chosen", patches_to_json(p.chosen)},
                        {"rejected", patches_to_json(p.rejected)},
                        {"cer_rejected", p.cer_rejected},
                        {"quality_rejected", p.quality_rejected}};
}

PreferencePair pair_from_json(const nlohmann::json& j) {
  PreferencePair p;
  p.id = j.at("id").get<std::string>();
  const auto& ctx = j.at("context");
  p.speaker.sv_embed = ctx.at("sv_embed").get<std::vector<double>>();
  p.speaker.clap_embed = ctx.at("clap_embed").get<std::vector<double>>();
  p.text_ids = ctx.at("text_ids").get<std::vector<int>>();
  p.chosen = patches_from_json(j.at("chosen"));
  p.rejected = patches_from_json(j.at("rejected"));
  p.cer_rejected = j.at("cer_rejected").get<double>();
  p.quality_rejected = j.at("quality_rejected").get<double>();
  p.validate();
  return p;
}

void write_pairs(const std::filesystem::path& path, std::span<const PreferencePair> pairs) {
  std::vector<nlohmann::json> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) rows.push_back(pair_to_json(p));
  write_jsonl(path, rows);
}

std::vector<PreferencePair> read_pairs(const std::filesystem::path& path) {
  std::vector<PreferencePair> out;
  size_t line = 0;
  for (const auto& row : read_jsonl(path)) {
    ++line;
    try {
      out.push_back(pair_from_json(row));
    } catch (const std::exception& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

CycleCandidate score_candidate(const ToyCodec& codec, const SpeakerTable& speaker, PatchSequence patches,
                               std::string_view transcript) {
  CycleCandidate c;
  c.patches = std::move(patches);
  if (c.patches.empty()) return c;
  const CodebookStream stream = unflatten(c.patches, codec.config());
  c.cer = cer(codec.transcribe(stream, speaker), transcript);
  c.quality = 1.0 - stuck_rate(stream);
  return c;
}

size_t worst_candidate(std::span<const CycleCandidate> candidates) {
  size_t worst = candidates.size();
  for (size_t i = 0; i < candidates.size(); ++i) {
    const CycleCandidate& c = candidates[i];
    if (c.patches.empty()) continue;
    if (worst == candidates.size()) {
      worst = i;
      continue;
    }
    const CycleCandidate& w = candidates[worst];
    if (c.cer > w.cer || (c.cer == w.cer && c.quality < w.quality)) worst = i;
  }
  return worst;
}

int identify_speaker(const ToyCodec& codec, const CodebookStream& stream, int n_speakers, int fallback) {
  if (stream.frames() == 0 || n_speakers < 1) return fallback;
  int best = 0;
  double best_score = -1.0;
  for (int s = 0; s < n_speakers; ++s) {
    const double score = codec.speaker_score(stream, codec.speaker(s));
    if (score > best_score || (score == best_score && s == fallback)) {
      best = s;
      best_score = score;
    }
  }
  return best;
}

void PairConfig::validate() const {
  if (n_cycles < 1) throw std::invalid_argument("pair config: n_cycles must be >= 1");
  if (n_speakers < 1) throw std::invalid_argument("pair config: n_speakers must be >= 1");
}

std::vector<PreferencePair> build_pairs(const CycleSynth& synth, const ToyCodec& codec, const BpeTokenizer& tok,
                                        std::span<const Utterance> seeds, std::span<const std::string> arbitrary_texts,
                                        const PairConfig& cfg, PairStats* stats) {
  cfg.validate();
  if (arbitrary_texts.empty()) throw std::invalid_argument("build_pairs: no arbitrary texts");
  const uint64_t base = derive_seed(cfg.seed, "pairs");
  const uint64_t per_utt = static_cast<uint64_t>(cfg.n_cycles) + 1;
  std::vector<PreferencePair> pairs;
  PairStats local;
  for (size_t i = 0; i < seeds.size(); ++i) {
    const Utterance& u = seeds[i];
    const SpeakerTable table = codec.speaker(u.speaker);
    const std::string& other = arbitrary_texts[i % arbitrary_texts.size()];
    const PatchSequence first = synth(codec.speaker_embed(u.speaker, u.style), other, derive_seed(base, i * per_utt));
    const int ref_speaker =
        identify_speaker(codec, unflatten(first, codec.config()), cfg.n_speakers, u.speaker);
    const SpeakerRef ref = codec.speaker_embed(ref_speaker, u.style);

    std::vector<CycleCandidate> cycles;
    for (int k = 0; k < cfg.n_cycles; ++k)
      cycles.push_back(
          score_candidate(codec, table, synth(ref, u.text, derive_seed(base, i * per_utt + 1 + static_cast<uint64_t>(k))), u.text));
    const size_t w = worst_candidate(cycles);
    if (w == cycles.size()) {
      ++local.dropped;
      continue;
    }
    PreferencePair p;
    p.id = u.id;
    p.speaker = codec.speaker_embed(u.speaker, u.style);
    p.text_ids = tok.encode_text(u.text, u.fidelity);
    p.chosen = flatten(u.stream, codec.config());
    p.rejected = cycles[w].patches;
    p.cer_rejected = cycles[w].cer;
    p.quality_rejected = cycles[w].quality;
    p.validate();
    local.mean_cer_rejected += p.cer_rejected;
    pairs.push_back(std::move(p));
  }
  if (!pairs.empty()) local.mean_cer_rejected /= static_cast<double>(pairs.size());
  if (stats) *stats = local;
  return pairs;
}

CycleSynth model_cycle_synth(Model& model, const BpeTokenizer& tok, const SampleConfig& sample) {
  return [&model, &tok, sample](const SpeakerRef& speaker, const std::string& text, uint64_t seed) {
    ModelFrameSource src(model);
    SampleConfig cfg = sample;
    cfg.seed = seed;
    SynthRequest req;
    req.text = text;
    req.speaker = speaker;
    return synthesize_with_backoff(src, tok, req, cfg).patches;
  };
}

Var odds_ratio_term(Var logp_chosen, Var logp_rejected) {
  // -log sigmoid(x) = softplus(-x)
  const Var diff = add(log_odds(logp_chosen), scale(log_odds(logp_rejected), -1.0));
  return softplus(scale(diff, -1.0));
}

OrpoParts orpo_loss(Model& model, Graph& g, const PreferencePair& pair, double lambda, double flux_beta,
                    double flux_eps) {
  pair.validate();
  const Var memory = model.encode_context(g, pair.speaker, pair.text_ids);
  const SequenceLogits chosen = logits_for(model, g, memory, pair.chosen);
  const SequenceLogits rejected = logits_for(model, g, memory, pair.rejected);
  OrpoParts out;
  out.nll_chosen = model.sequence_nll(g, chosen, pair.chosen);
  const Var nll_rejected = model.sequence_nll(g, rejected, pair.rejected);
  const Var logp_c = scale(out.nll_chosen, -1.0);
  const Var logp_r = scale(nll_rejected, -1.0);
  out.logp_chosen = logp_c.value().item();
  out.logp_rejected = logp_r.value().item();
  out.or_term = odds_ratio_term(logp_c, logp_r);
  if (flux_beta > 0.0) {
    const FluxInput in{chosen.l0, l0_targets(pair.chosen, model.config().eos())};
    out.flux = flux_loss(g, std::span<const FluxInput>(&in, 1), flux_beta, flux_eps);
  } else {
    out.flux = g.constant(Tensor::scalar(0.0));
  }
  out.total = add(add(out.nll_chosen, scale(out.or_term, lambda)), out.flux);
  return out;
}

OrpoParts orpo_batch_loss(Model& model, Graph& g, std::span<const PreferencePair> batch, double lambda,
                          double flux_beta, double flux_eps) {
  if (batch.empty()) throw std::invalid_argument("orpo_batch_loss: empty batch");
  if (batch.size() == 1) return orpo_loss(model, g, batch[0], lambda, flux_beta, flux_eps);
  std::vector<Var> nll, ort, flux, total;
  OrpoParts out;
  for (const PreferencePair& p : batch) {
    const OrpoParts part = orpo_loss(model, g, p, lambda, flux_beta, flux_eps);
    nll.push_back(part.nll_chosen);
    ort.push_back(part.or_term);
    flux.push_back(part.flux);
    total.push_back(part.total);
    out.logp_chosen += part.logp_chosen;
    out.logp_rejected += part.logp_rejected;
  }
  const double n = static_cast<double>(batch.size());
  out.nll_chosen = mean(concat_rows(nll));
  out.or_term = mean(concat_rows(ort));
  out.flux = mean(concat_rows(flux));
  out.total = mean(concat_rows(total));
  out.logp_chosen /= n;
  out.logp_rejected /= n;
  return out;
}

double mean_margin(Model& model, std::span<const PreferencePair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("mean_margin: no pairs");
  double total = 0.0;
  for (const PreferencePair& p : pairs) {
    Graph g(false);
    const Var memory = model.encode_context(g, p.speaker, p.text_ids);
    const double c = model.sequence_nll(g, logits_for(model, g, memory, p.chosen), p.chosen).value().item();
    const double r = model.sequence_nll(g, logits_for(model, g, memory, p.rejected), p.rejected).value().item();
    total += r - c;
  }
  return total / static_cast<double>(pairs.size());
}

FinetuneConfig FinetuneConfig::defaults(const ModelConfig& model) {
  FinetuneConfig c;
  c.opt.steps = 200;
  c.opt.warmup_steps = 0;
  c.opt.lr_start = TrainConfig{}.lr_end;
  c.opt.lr_end = c.opt.lr_start;
  c.opt.batch_size = 4;
  c.opt.flux_beta = model.flux_beta_orpo;
  c.opt.flux_eps = model.flux_eps;
  return c;
}

void FinetuneConfig::validate() const {
  opt.validate();
  if (!(lambda >= 0.0)) throw std::invalid_argument("finetune config: lambda must be >= 0");
}

void to_json(nlohmann::json& j, const FinetuneConfig& c) {
  j = nlohmann::json{{"opt", c.opt}, {"lambda", c.lambda}};
}

void from_json(const nlohmann::json& j, FinetuneConfig& c) {
  FinetuneConfig d = FinetuneConfig::defaults(ModelConfig::desk());
  if (j.contains("opt")) j.at("opt").get_to(d.opt);
  if (j.contains("lambda")) j.at("lambda").get_to(d.lambda);
  c = d;
}

FinetuneResult finetune(Model& model, std::span<const PreferencePair> pairs, const FinetuneConfig& cfg,
                        const std::function<void(const FinetuneLog&)>& on_step) {
  cfg.validate();
  if (pairs.empty()) throw std::invalid_argument("finetune: no preference pairs");
  const TrainConfig& oc = cfg.opt;
  Rng rng(derive_seed(oc.seed, "train"));
  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t cursor = order.size();

  AdamW opt(oc);
  ParamStore& params = model.params();
  FinetuneResult result;
  std::vector<PreferencePair> batch;
  for (int s = 0; s < oc.steps; ++s) {
    batch.clear();
    while (static_cast<int>(batch.size()) < oc.batch_size) {
      if (cursor == order.size()) {
        for (size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
        cursor = 0;
      }
      batch.push_back(pairs[order[cursor++]]);
    }
    FinetuneLog row;
    row.step = s;
    row.lr = lr_at(oc, s + 1);
    try {
      params.zero_grad();
      Graph g;
      const OrpoParts loss = orpo_batch_loss(model, g, batch, cfg.lambda, oc.flux_beta, oc.flux_eps);
      row.nll = loss.nll_chosen.value().item();
      row.or_term = loss.or_term.value().item();
      row.flux = loss.flux.value().item();
      row.total = loss.total.value().item();
      row.margin = loss.logp_chosen - loss.logp_rejected;
      g.backward(loss.total);
      const double norm = clip_grad_norm(params, oc.clip_norm);
      if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(s));
    } catch (const NumericError& e) {
      result.aborted = true;
      result.error = e.what();
      return result;
    }
    opt.step(params, row.lr);
    result.completed = s + 1;
    result.log.push_back(row);
    if (on_step) on_step(row);
  }
  return result;
}

void write_finetune_csv(const std::filesystem::path& path, std::span<const FinetuneLog> log) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "step,lr,nll,or_term,flux,total,margin\n";
  char buf[320];
  for (const FinetuneLog& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.lr, r.nll, r.or_term, r.flux,
                  r.total, r.margin);
    os << buf;
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace patchtts
