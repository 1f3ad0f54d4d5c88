// Acceptance runner: one PASS/FAIL line per criterion. Exit status 0 only
// when every selected criterion passes.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "eer_oracle.hpp"
#include "patchtts/checkpoint.hpp"
#include "patchtts/losses.hpp"
#include "patchtts/pipeline.hpp"
#include "stub_sources.hpp"

using namespace patchtts;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string random_text(Rng& rng, int max_len) {
  const int len = static_cast<int>(rng.below(static_cast<uint64_t>(max_len + 1)));
  std::string t;
  for (int i = 0; i < len; ++i) t.push_back(kAlphabet[rng.below(kAlphabet.size())]);
  return t;
}

double mean_l2(const std::vector<SynthRecord>& recs) {
  double sum = 0.0;
  size_t n = 0;
  for (const auto& r : recs)
    for (int t : r.stream.l2) {
      sum += t;
      ++n;
    }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double summary_value(const fs::path& eval_dir, const std::string& key) {
  return nlohmann::json::parse(read_file(eval_dir / "summary.json")).at(key).get<double>();
}

// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(int wins, int n) {
  double p = 0.0;
  for (int k = wins; k <= n; ++k) p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0));
  return p / std::pow(2.0, n);
}

class Runner {
 public:
  explicit Runner(fs::path work) : work_(std::move(work)) { fs::create_directories(work_); }

  RunConfig desk() const { return resolve_config(std::nullopt, {}); }

  Outcome roundtrips() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(11);
    const CodecConfig cc;
    int flat_ok = 0;
    for (int i = 0; i < 1000; ++i) {
      const size_t n = rng.below(20);
      CodebookStream s;
      for (size_t k = 0; k < n; ++k) s.l0.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(cc.v0))));
      for (size_t k = 0; k < 2 * n; ++k) s.l1.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(cc.v1))));
      for (size_t k = 0; k < 4 * n; ++k) s.l2.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(cc.v2))));
      flat_ok += unflatten(flatten(s, cc), cc) == s;
    }
    const ToyCodec codec(7);
    int codec_ok = 0;
    for (int i = 0; i < 500; ++i) {
      const std::string text = random_text(rng, 24);
      const int speaker = static_cast<int>(rng.below(4));
      const Style style = kAllStyles[rng.below(kNumStyles)];
      const Fidelity fid = rng.below(2) ? Fidelity::kHigh : Fidelity::kLow;
      codec_ok += codec.transcribe(codec.encode(text, codec.speaker(speaker), style, fid), codec.speaker(speaker)) == text;
    }
    const Corpus corpus = generate_corpus(desk().data);
    std::vector<std::string> train_texts = transcripts(corpus.train);
    train_texts.emplace_back(kAlphabet);
    int bpe_ok = 0, bpe_n = 0;
    for (int vocab : {32, 64, 128}) {
      const BpeTokenizer tok = BpeTokenizer::train(train_texts, vocab);
      for (const auto& t : transcripts(corpus.heldout)) {
        bpe_ok += tok.decode(tok.encode_text(t, Fidelity::kHigh)) == t;
        ++bpe_n;
      }
      for (int i = 0; i < 300; ++i) {
        const std::string t = random_text(rng, 30);
        bpe_ok += tok.decode(tok.encode(t)) == t;
        ++bpe_n;
      }
    }
    const double secs = seconds_since(t0);
    const bool pass = flat_ok == 1000 && codec_ok == 500 && bpe_ok == bpe_n && secs < 10.0;
    return {pass, fmt("flatten %d/1000, transcribe %d/500, bpe %d/%d, %.1fs", flat_ok, codec_ok, bpe_ok, bpe_n, secs)};
  }

  Outcome gradcheck() {
    const auto t0 = std::chrono::steady_clock::now();
    const GradcheckReport r = run_gradcheck(desk(), 50, 1e-5);
    const double secs = seconds_since(t0);
    return {r.max() < 1e-3 && secs < 120.0,
            fmt("forward_loss %.2e, orpo_loss %.2e over %d probes, %.1fs", r.forward_loss, r.orpo_loss, r.probes, secs)};
  }

  Outcome causality() {
    const RunConfig cfg = desk();
    CorpusConfig cc = cfg.data;
    cc.n_utts = 8;
    const Corpus corpus = generate_corpus(cc);
    const ToyCodec codec(corpus.codec_seed);
    const BpeTokenizer tok = BpeTokenizer::train(transcripts(corpus.train), cfg.tokenizer_vocab);
    Model model(cfg.model, 5);
    const auto hv = cfg.model.token_vocab();

    Example base = make_example(corpus.train[0], codec, tok);
    for (const auto& u : corpus.train)
      if (u.stream.l0.size() > base.patches.size()) base = make_example(u, codec, tok);
    const int frames = static_cast<int>(base.patches.size());

    auto logits = [&](const Example& ex) {
      Graph g(false);
      SequenceLogits s = model.sequence_logits(g, ex);
      std::vector<Tensor> out{s.l0.value()};
      for (const Var& v : s.rest) out.push_back(v.value());
      return out;
    };
    auto row_equal = [](const Tensor& a, const Tensor& b, int r) {
      const auto x = a.row(r), y = b.row(r);
      return std::equal(x.begin(), x.end(), y.begin(), y.end());
    };
    const auto ref = logits(base);

    int checks = 0, violations = 0, downstream = 0;
    // Frame granularity: changing frame t leaves the L0 rows 0..t and all
    // local rows of frames before t unchanged.
    for (int t = 0; t < frames; ++t) {
      Example ex = base;
      for (int j = 0; j < kPatchSize; ++j) {
        int& tok_j = ex.patches.frames[static_cast<size_t>(t)][static_cast<size_t>(j)];
        tok_j = (tok_j + 1) % hv[static_cast<size_t>(j)];
      }
      const auto out = logits(ex);
      for (int r = 0; r <= t; ++r, ++checks) violations += !row_equal(ref[0], out[0], r);
      for (int j = 1; j < kPatchSize; ++j)
        for (int r = 0; r < t; ++r, ++checks) violations += !row_equal(ref[static_cast<size_t>(j)], out[static_cast<size_t>(j)], r);
      downstream += !row_equal(ref[0], out[0], t + 1);
    }
    // Local position granularity: changing token k of frame t leaves
    // positions 0..k of frame t unchanged.
    for (int t = 0; t < frames; ++t)
      for (int k = 0; k < kPatchSize; ++k) {
        Example ex = base;
        int& tok_k = ex.patches.frames[static_cast<size_t>(t)][static_cast<size_t>(k)];
        tok_k = (tok_k + 1) % hv[static_cast<size_t>(k)];
        const auto out = logits(ex);
        for (int r = 0; r <= t; ++r, ++checks) violations += !row_equal(ref[0], out[0], r);
        for (int j = 1; j <= k; ++j, ++checks)
          violations += !row_equal(ref[static_cast<size_t>(j)], out[static_cast<size_t>(j)], t);
        if (k + 1 < kPatchSize) downstream += !row_equal(ref[static_cast<size_t>(k + 1)], out[static_cast<size_t>(k + 1)], t);
      }
    const int expected_downstream = frames + frames * (kPatchSize - 1);
    return {violations == 0 && downstream == expected_downstream,
            fmt("%d past-row comparisons over %d frames, %d changed; %d/%d future rows react", checks, frames, violations,
                downstream, expected_downstream)};
  }

  Outcome flux_oracle() {
    const Tensor uniform = Tensor::matrix(6, 65, 0.0);
    const std::vector<int> targets{0, 17, 17, 40, 63, 64};
    const double got = flux_loss(uniform, targets, 1.0, 1e-3);
    const double want = 1.0 / (0.001 + std::log(65.0));
    Tensor sure = Tensor::matrix(6, 65, 0.0);
    for (int t = 1; t < 6; ++t) sure(t, targets[static_cast<size_t>(t - 1)]) = 80.0;
    const double limit = flux_loss(sure, targets, 1.0, 1e-3);
    const bool pass = std::abs(got - want) < 1e-9 && std::abs(limit - 1.0 / 1e-3) < 1e-6;
    return {pass, fmt("uniform %.12f vs %.12f, limit %.9f vs 1000", got, want, limit)};
  }

  Outcome overfit() {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = desk();
    cfg.data.n_utts = 20;
    const Corpus corpus = generate_corpus(cfg.data);
    const ToyCodec codec(corpus.codec_seed);
    const BpeTokenizer tok = BpeTokenizer::train(transcripts(corpus.train), cfg.tokenizer_vocab);
    const Utterance& u = corpus.train[0];
    const std::vector<Example> one{make_example(u, codec, tok)};
    Model model(cfg.model, derive_seed(cfg.seed, "init"));
    TrainConfig tc = cfg.train;
    tc.steps = 500;
    tc.batch_size = 1;
    const TrainResult tr = train(model, one, tc);
    const double ce = tr.log.empty() ? INFINITY : tr.log.back().ce;

    SampleConfig sc = cfg.sample;
    sc.ras = false;
    sc.quality_tag = u.fidelity;
    ModelFrameSource src(model);
    const SynthRequest req{u.text, codec.speaker_embed(u.speaker, u.style), CloneMode::kShallow, {}};
    const SynthResult r = synthesize(src, tok, req, sc, 1e-9, 1);
    const CodebookStream got = unflatten(r.patches, codec.config());
    const double c = cer(codec.transcribe(got, codec.speaker(u.speaker)), u.text);
    const bool exact = got == u.stream;
    const double secs = seconds_since(t0);
    return {!tr.aborted && ce < 0.1 && exact && c == 0.0 && secs < 180.0,
            fmt("final CE %.4f, exact stream %s (%zu frames), CER %.3f, %.0fs", ce, exact ? "yes" : "no",
                u.stream.l0.size(), c, secs)};
  }

  // Trains the desk model on the default corpus once; later criteria reuse it.
  const fs::path& trained() {
    if (!trained_dir_.empty()) return trained_dir_;
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig cfg = desk();
    const fs::path root = work_ / "e2e";
    cmd_gen_data(cfg, {root / "data", true});
    cmd_train(cfg, {root / "data", root / "train", true, true});
    train_seconds_ = seconds_since(t0);
    trained_dir_ = root;
    return trained_dir_;
  }

  fs::path synth_eval(const RunConfig& cfg, const fs::path& ckpt, const fs::path& out) {
    SynthOptions so;
    so.ckpt = ckpt;
    so.out = out / "synth";
    so.data = trained() / "data";
    so.force = true;
    cmd_synth(cfg, so);
    cmd_eval(cfg, {trained() / "data", out / "synth", out / "eval", true});
    return out;
  }

  Outcome end_to_end() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path root = trained();
    const RunConfig cfg = desk();
    synth_eval(cfg, root / "train" / "model.ckpt", root / "base");
    const double secs = seconds_since(t0);
    const double c = summary_value(root / "base" / "eval", "cer_mean");
    const double spk = summary_value(root / "base" / "eval", "spk_mean");
    const double n = summary_value(root / "base" / "eval", "n");
    return {c < 0.05 && spk > 0.95 && secs < 1800.0,
            fmt("held-out CER %.4f, speaker_score %.4f over %.0f utterances, train %.0fs, total %.0fs", c, spk, n,
                train_seconds_, secs)};
  }

  Outcome flux_ablation() {
    const auto t0 = std::chrono::steady_clock::now();
    const int seeds = 10;
    // Paper-preset ORPO flux weight; the pretraining weight is reported alongside.
    const double beta = ModelConfig::paper().flux_beta_orpo;
    const double beta_pretrain = ModelConfig::desk().flux_beta_pretrain;
    int wins = 0, wins_pretrain = 0;
    double sum_on = 0.0, sum_off = 0.0;
    std::string per_seed;
    for (int s = 0; s < seeds; ++s) {
      const uint64_t seed = static_cast<uint64_t>(100 + s);
      const double off = repetition_stuck(seed, 0.0);
      const double on = repetition_stuck(seed, beta);
      const double on_pretrain = repetition_stuck(seed, beta_pretrain);
      wins += on < off;
      wins_pretrain += on_pretrain < off;
      sum_on += on;
      sum_off += off;
      per_seed += fmt(" %.3f/%.3f", on, off);
    }
    const double p = sign_test_p(wins, seeds);
    return {p < 0.05 && sum_on < sum_off,
            fmt("beta %.2g: flux on lower in %d/%d seeds (sign test p=%.4f), mean stuck %.4f vs %.4f; on/off:%s; "
                "beta %.2g lower in %d/%d; %.0fs",
                beta, wins, seeds, p, sum_on / seeds, sum_off / seeds, per_seed.c_str(), beta_pretrain, wins_pretrain,
                seeds, seconds_since(t0))};
  }

  // Mean held-out stuck rate of a small model trained on the
  // repetition-prone corpus with flux weight `beta` (RAS off at synthesis).
  // Init, data order and sampling seeds depend only on `seed`.
  double repetition_stuck(uint64_t seed, double beta) {
    CorpusConfig cc;
    cc.seed = seed;
    cc.n_speakers = 1;
    cc.lexicon_size = 16;
    cc.n_utts = 100;
    cc.n_heldout = 40;
    cc.run_prob = 0.5;
    const Corpus corpus = generate_corpus(cc);
    const ToyCodec codec(corpus.codec_seed);
    const BpeTokenizer tok = BpeTokenizer::train(transcripts(corpus.train), 32);
    std::vector<Example> data;
    for (const auto& u : corpus.train) data.push_back(make_example(u, codec, tok));
    ModelConfig mc = ModelConfig::desk();
    mc.d_model = 32;
    mc.n_heads = 2;
    mc.d_ff = 64;
    mc.n_layers_enc = mc.n_layers_global = mc.n_layers_local = 1;
    Model model(mc, derive_seed(seed, "init"));
    TrainConfig tc;
    tc.steps = 600;
    tc.warmup_steps = 20;
    tc.batch_size = 8;
    tc.lr_start = 2e-3;
    tc.seed = seed;
    tc.flux_beta = beta;
    train(model, data, tc);
    SampleConfig sc;
    sc.ras = false;
    ModelFrameSource src(model);
    double total = 0.0;
    for (size_t i = 0; i < corpus.heldout.size(); ++i) {
      const Utterance& u = corpus.heldout[i];
      sc.seed = derive_seed(seed, i);
      const SynthRequest req{u.text, codec.speaker_embed(u.speaker, u.style), CloneMode::kShallow, {}};
      const SynthResult r = synthesize_with_backoff(src, tok, req, sc);
      const CodebookStream st = unflatten(r.patches, codec.config());
      total += st.l0.empty() ? 0.0 : stuck_rate(st);
    }
    return total / static_cast<double>(corpus.heldout.size());
  }

  Outcome ras_ablation() {
    auto run = [](bool ras) {
      testing::RepeatStub src(1000);
      SampleConfig sc;
      sc.ras = ras;
      sc.max_frames = 1000;
      const BpeTokenizer tok = BpeTokenizer::train(std::vector<std::string>{"a b"}, 40);
      synthesize(src, tok, SynthRequest{"a", {}, CloneMode::kShallow, {}}, sc, sc.top_p, 3);
      std::vector<int> l0;
      for (const Patch& p : src.frames) l0.push_back(p[0]);
      return std::make_pair(stuck_rate(l0), l0.size());
    };
    const auto [with, n_with] = run(true);
    const auto [without, n_without] = run(false);
    return {n_with == 1000 && n_without == 1000 && with < without,
            fmt("stuck_rate %.4f with RAS vs %.4f without over %zu frames", with, without, n_with)};
  }

  Outcome preference() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path root = trained();
    const RunConfig cfg = desk();
    const fs::path base_ckpt = root / "train" / "model.ckpt";
    cmd_finetune(cfg, {root / "data", base_ckpt, root / "finetune", true, true});
    const auto pairs = read_pairs(root / "finetune" / "pairs.jsonl");
    LoadedCheckpoint before = load_checkpoint(base_ckpt);
    LoadedCheckpoint after = load_checkpoint(root / "finetune" / "model.ckpt");
    const double m0 = mean_margin(before.model, pairs);
    const double m1 = mean_margin(after.model, pairs);
    if (!fs::exists(root / "base" / "eval" / "summary.json")) synth_eval(cfg, base_ckpt, root / "base");
    synth_eval(cfg, root / "finetune" / "model.ckpt", root / "tuned");
    const double c0 = summary_value(root / "base" / "eval", "cer_mean");
    const double c1 = summary_value(root / "tuned" / "eval", "cer_mean");
    const int steps = cfg.finetune.opt.steps;
    return {m1 > m0 && c1 <= c0,
            fmt("%d pairs, %d steps: margin %.4f -> %.4f, held-out CER %.4f -> %.4f, %.0fs", static_cast<int>(pairs.size()),
                steps, m0, m1, c0, c1, seconds_since(t0))};
  }

  Outcome ablations() {
    const Outcome a = flux_ablation();
    const Outcome b = ras_ablation();
    const Outcome c = preference();
    return {a.pass && b.pass && c.pass, "(a) " + std::string(a.pass ? "pass" : "FAIL") + ": " + a.detail + "; (b) " +
                                            (b.pass ? "pass" : "FAIL") + ": " + b.detail + "; (c) " +
                                            (c.pass ? "pass" : "FAIL") + ": " + c.detail};
  }

  Outcome sampler() {
    Rng rng(21);
    std::vector<double> logits(65);
    for (double& l : logits) l = 2.0 * rng.normal();
    const int draws = 100000;
    double worst_nucleus = 0.0;
    for (double top_p : {0.2, 0.5, 0.8, 0.95}) {
      // Oracle: sort by probability, keep the smallest prefix reaching top_p.
      std::vector<double> prob(logits.size());
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (size_t i = 0; i < logits.size(); ++i) z += prob[i] = std::exp(logits[i] - mx);
      for (double& p : prob) p /= z;
      std::vector<size_t> order(prob.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return prob[a] > prob[b]; });
      std::vector<double> want(prob.size(), 0.0);
      double mass = 0.0;
      for (size_t i : order) {
        want[i] = prob[i];
        mass += prob[i];
        if (mass >= top_p) break;
      }
      for (double& w : want) w /= mass;
      std::vector<double> freq(prob.size(), 0.0);
      Rng draw(static_cast<uint64_t>(top_p * 1000));
      for (int i = 0; i < draws; ++i) freq[static_cast<size_t>(nucleus_sample(logits, top_p, draw))] += 1.0 / draws;
      double tv = 0.0;
      for (size_t i = 0; i < freq.size(); ++i) tv += 0.5 * std::abs(freq[i] - want[i]);
      worst_nucleus = std::max(worst_nucleus, tv);
    }
    // RAS resample path: the nucleus always picks the argmax, which fills the
    // history, so every draw is replaced by a full-softmax sample.
    const int top = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    SampleConfig sc;
    const std::vector<int> history(static_cast<size_t>(sc.ras_window), top);
    std::vector<double> soft(logits.size()), freq(logits.size(), 0.0);
    const double mx = logits[static_cast<size_t>(top)];
    double z = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) z += soft[i] = std::exp(logits[i] - mx);
    Rng draw(99);
    for (int i = 0; i < draws; ++i) freq[static_cast<size_t>(ras_sample(logits, history, sc, 1e-9, draw))] += 1.0 / draws;
    double tv_ras = 0.0;
    for (size_t i = 0; i < freq.size(); ++i) tv_ras += 0.5 * std::abs(freq[i] - soft[i] / z);
    return {worst_nucleus < 0.02 && tv_ras < 0.02,
            fmt("nucleus worst TV %.4f over top_p {0.2,0.5,0.8,0.95}, RAS resample TV %.4f (%d draws each)", worst_nucleus,
                tv_ras, draws)};
  }

  Outcome eer_check() {
    long datasets = 0, mismatches = 0;
    for (int n = 2; n <= 12; ++n)
      testing::for_each_dataset(n, [&](const std::vector<ScoredPair>& d) {
        ++datasets;
        mismatches += std::abs(eer(d) - testing::eer_oracle(d)) > 1e-12;
      });
    const std::vector<ScoredPair> separated{{0.1, 0}, {0.2, 0}, {0.3, 0}, {0.7, 1}, {0.8, 1}, {0.9, 1}};
    std::vector<ScoredPair> identical;
    for (double s : {0.1, 0.4, 0.4, 0.9}) {
      identical.push_back({s, 0});
      identical.push_back({s, 1});
    }
    const double e_sep = eer(separated), e_same = eer(identical);
    return {mismatches == 0 && e_sep == 0.0 && std::abs(e_same - 0.5) < 1e-12,
            fmt("%ld/%ld datasets of 2..12 scores differ from the threshold sweep; separated %.3f, identical %.3f",
                mismatches, datasets, e_sep, e_same)};
  }

  Outcome backoff() {
    const BpeTokenizer tok = BpeTokenizer::train(std::vector<std::string>{"the cat sat"}, 40);
    const SynthRequest req{"the cat sat", {}, CloneMode::kShallow, {}};
    const SampleConfig sc;
    testing::EosStub eos;
    const SynthResult r_eos = synthesize_with_backoff(eos, tok, req, sc);
    testing::LengthStub healthy(static_cast<int>(req.text.size()));
    const SynthResult r_ok = synthesize_with_backoff(healthy, tok, req, sc);
    const std::vector<double> want{0.2, 0.4, 0.6, 0.8, 1.0};
    bool ladder = r_eos.attempted_top_p.size() == want.size();
    for (size_t i = 0; ladder && i < want.size(); ++i) ladder = std::abs(r_eos.attempted_top_p[i] - want[i]) < 1e-12;
    const bool stays = r_ok.attempted_top_p == std::vector<double>{0.2} && r_ok.used_top_p == 0.2;
    std::string seq;
    for (double p : r_eos.attempted_top_p) seq += fmt(" %.1f", p);
    return {ladder && stays && eos.starts == 5,
            fmt("EOS stub tried%s; healthy stub used %.1f after %zu attempt(s)", seq.c_str(), r_ok.used_top_p,
                r_ok.attempted_top_p.size())};
  }

  Outcome determinism() {
    RunConfig cfg = desk();
    cfg.data.n_utts = 24;
    cfg.data.n_heldout = 4;
    cfg.train.steps = 20;
    cfg.train.warmup_steps = 5;
    cfg.train.batch_size = 4;
    cfg.finetune.opt.steps = 4;
    cfg.pair_utterances = 4;
    auto run = [&](const fs::path& root) {
      cmd_gen_data(cfg, {root / "data", true});
      cmd_train(cfg, {root / "data", root / "train", true, true});
      cmd_finetune(cfg, {root / "data", root / "train" / "model.ckpt", root / "finetune", true, true});
      SynthOptions so;
      so.ckpt = root / "finetune" / "model.ckpt";
      so.out = root / "synth";
      so.data = root / "data";
      so.force = true;
      cmd_synth(cfg, so);
      cmd_eval(cfg, {root / "data", root / "synth", root / "eval", true});
    };
    const fs::path a = work_ / "det_a", b = work_ / "det_b";
    run(a);
    run(b);
    std::set<std::string> identical_rel;
    int files = 0, differ = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), a);
      ++files;
      std::string x = read_file(entry.path()), y = read_file(b / rel);
      if (rel.filename() == "manifest.json") {
        // Input paths name the run directory; everything else must match.
        auto strip = [](std::string s, const std::string& dir) {
          for (size_t pos; (pos = s.find(dir)) != std::string::npos;) s.replace(pos, dir.size(), "<run>");
          return s;
        };
        x = strip(x, a.string());
        y = strip(y, b.string());
      }
      if (x != y) ++differ;
    }
    return {files > 0 && differ == 0, fmt("%d files compared across two runs, %d differ", files, differ)};
  }

  Outcome quality_prefix() {
    const fs::path root = trained();
    RunConfig cfg = desk();
    cfg.sample.quality_tag = Fidelity::kHigh;
    synth_eval(cfg, root / "train" / "model.ckpt", root / "tag_high");
    cfg.sample.quality_tag = Fidelity::kLow;
    synth_eval(cfg, root / "train" / "model.ckpt", root / "tag_low");
    const double hi = mean_l2(read_synth_records(root / "tag_high" / "synth" / "streams.jsonl"));
    const double lo = mean_l2(read_synth_records(root / "tag_low" / "synth" / "streams.jsonl"));
    return {hi > 1.0 && lo < 0.1,
            fmt("mean L2 token %.3f under [48000] vs %.3f under [16000] on held-out text", hi, lo)};
  }

 private:
  fs::path work_;
  fs::path trained_dir_;
  double train_seconds_ = 0.0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::string work = (fs::temp_directory_path() / "patchtts_acceptance").string();
  std::vector<int> only;
  app.add_option("--workdir", work, "Scratch directory for pipeline runs");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',')->check(CLI::Range(1, 12));
  CLI11_PARSE(app, argc, argv);

  Runner runner(work);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"round-trips", [&] { return runner.roundtrips(); }},
      {"gradient check", [&] { return runner.gradcheck(); }},
      {"causality", [&] { return runner.causality(); }},
      {"flux loss oracle", [&] { return runner.flux_oracle(); }},
      {"overfit smoke", [&] { return runner.overfit(); }},
      {"end-to-end learning", [&] { return runner.end_to_end(); }},
      {"ablation directions", [&] { return runner.ablations(); }},
      {"sampler statistics", [&] { return runner.sampler(); }},
      {"EER oracle", [&] { return runner.eer_check(); }},
      {"backoff contract", [&] { return runner.backoff(); }},
      {"determinism", [&] { return runner.determinism(); }},
      {"quality prefixing", [&] { return runner.quality_prefix(); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  std::ofstream results(fs::path(work) / "results.txt");
  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    const std::string line =
        fmt("%s %2d %s: ", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str()) + o.detail;
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    results << line << '\n' << std::flush;
  }
  return failures == 0 ? 0 : 1;
}
