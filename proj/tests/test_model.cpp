#include <doctest.h>

#include <cmath>

#include "patchtts/dataset.hpp"
#include "patchtts/losses.hpp"
#include "patchtts/model.hpp"

using namespace patchtts;

namespace {

struct Fixture {
  Corpus corpus;
  ToyCodec codec{0};
  BpeTokenizer tok;
  Model model{ModelConfig::desk(), 11};

  Fixture() {
    CorpusConfig cc;
    cc.n_utts = 20;
    cc.n_heldout = 4;
    corpus = generate_corpus(cc);
    codec = ToyCodec(corpus.codec_seed);
    const auto texts = transcripts(corpus.train);
    tok = BpeTokenizer::train(texts, 128);
  }

  Example example(size_t i) const { return make_example(corpus.train[i], codec, tok); }
};

Tensor value_of(Var v) { return v.value(); }

bool rows_equal(const Tensor& a, const Tensor& b, int rows) {
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < a.cols(); ++c)
      if (a(r, c) != b(r, c)) return false;
  return true;
}

double row_ce(const Tensor& logits, int row, int target) {
  std::vector<double> r(static_cast<size_t>(logits.cols()));
  for (int c = 0; c < logits.cols(); ++c) r[static_cast<size_t>(c)] = logits(row, c);
  return cross_entropy(r, target);
}

}  // namespace

TEST_CASE("config presets and validation") {
  const ModelConfig d = ModelConfig::desk();
  CHECK(d.d_model == 64);
  CHECK(d.n_heads == 4);
  CHECK(d.d_ff == 256);
  CHECK(d.n_layers_enc == 2);
  CHECK(d.n_layers_global == 2);
  CHECK(d.n_layers_local == 2);
  CHECK(d.max_frames == 64);
  CHECK(d.text_vocab == 512);
  CHECK(d.eos() == 64);
  CHECK(d.head_vocab() == std::array<int, 7>{65, 32, 32, 32, 32, 32, 32});
  const ModelConfig p = ModelConfig::paper();
  CHECK(p.d_model == 512);
  CHECK(p.n_layers_enc == 8);
  CHECK(p.n_layers_global == 8);
  CHECK(p.n_layers_local == 4);
  CHECK(ModelConfig::preset_named("paper") == p);
  CHECK_THROWS_AS(ModelConfig::preset_named("huge"), std::invalid_argument);

  ModelConfig bad = d;
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = d;
  bad.patch_size = 8;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  nlohmann::json j = d;
  CHECK(j.get<ModelConfig>() == d);
}

TEST_CASE("parameter registry is deterministic") {
  const Model a(ModelConfig::desk(), 1);
  const Model b(ModelConfig::desk(), 1);
  const Model c(ModelConfig::desk(), 2);
  CHECK(a.params().scalar_count() == 408065);
  REQUIRE(a.params().size() == b.params().size());
  bool same = true, differs = false;
  for (size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].name == b.params()[i].name);
    same = same && a.params()[i].value.data == b.params()[i].value.data;
    differs = differs || a.params()[i].value.data != c.params()[i].value.data;
  }
  CHECK(same);
  CHECK(differs);
  CHECK(a.params().contains("glob.boa"));
  CHECK(a.params().contains("head0.w"));
  CHECK(a.params().at("head0.w").value.cols() == 65);
}

TEST_CASE("encoder memory") {
  Fixture f;
  const Example ex = f.example(0);
  const std::vector<int> ten{5, 6, 7, 8, 9, 10, 11, 12, 13, 14};
  Graph g(false);
  const Tensor m1 = value_of(f.model.encode_context(g, ex.speaker, ten));
  CHECK(m1.rows() == 12);
  CHECK(m1.cols() == 64);
  const Tensor m2 = value_of(f.model.encode_context(g, ex.speaker, ten));
  CHECK(m1.data == m2.data);
  std::vector<int> perm = ten;
  std::swap(perm[0], perm[9]);
  CHECK(value_of(f.model.encode_context(g, ex.speaker, perm)).data != m1.data);
  CHECK_THROWS_AS(f.model.encode_context(g, ex.speaker, std::vector<int>{}), std::invalid_argument);
  CHECK_THROWS_AS(f.model.encode_context(g, ex.speaker, std::vector<int>(127, 5)), std::invalid_argument);
  CHECK_THROWS_AS(f.model.encode_context(g, ex.speaker, std::vector<int>{600}), std::out_of_range);
  for (int n = 1; n < 30; n += 7)
    CHECK(f.model.encode_context(g, ex.speaker, std::vector<int>(static_cast<size_t>(n), 9)).rows() == n + 2);
}

TEST_CASE("global decoder latents") {
  Fixture f;
  const Example ex = f.example(1);
  Graph g(false);
  const Var memory = f.model.encode_context(g, ex.speaker, ex.text_ids);
  CHECK(f.model.global_latents(g, {}, memory).rows() == 1);
  const int n = static_cast<int>(ex.patches.size());
  const Tensor base = value_of(f.model.global_latents(g, ex.patches.frames, memory));
  CHECK(base.rows() == n + 1);

  // Perturbing frame t leaves latents 0..t (which condition frames 0..t) unchanged.
  for (int t = 0; t < n; ++t) {
    std::vector<Patch> frames = ex.patches.frames;
    for (int j = 0; j < kPatchSize; ++j) frames[static_cast<size_t>(t)][static_cast<size_t>(j)] ^= 1;
    const Tensor pert = value_of(f.model.global_latents(g, frames, memory));
    CHECK(rows_equal(base, pert, t + 1));
    CHECK(!rows_equal(base, pert, t + 2));
  }

  const Var memory2 = f.model.encode_context(g, f.codec.speaker_embed(7, Style::kLoud), ex.text_ids);
  const Tensor moved = value_of(f.model.global_latents(g, ex.patches.frames, memory2));
  for (int r = 0; r <= n; ++r) {
    bool row_differs = false;
    for (int c = 0; c < 64; ++c) row_differs = row_differs || moved(r, c) != base(r, c);
    CHECK(row_differs);
  }
  CHECK_THROWS_AS(f.model.global_latents(g, std::vector<Patch>(65), memory), std::invalid_argument);
}

TEST_CASE("local decoder widths and causality") {
  Fixture f;
  const Example ex = f.example(3);
  Graph g(false);
  const Var memory = f.model.encode_context(g, ex.speaker, ex.text_ids);
  const Var latents = f.model.global_latents(g, ex.patches.frames, memory);
  std::vector<Patch> teacher = ex.patches.frames;
  teacher.push_back(Patch{});
  const auto base = f.model.local_logits(g, latents, teacher);
  const auto hv = f.model.config().head_vocab();
  for (int j = 0; j < kPatchSize; ++j) {
    CHECK(base[static_cast<size_t>(j)].cols() == hv[static_cast<size_t>(j)]);
    CHECK(base[static_cast<size_t>(j)].rows() == latents.rows());
  }
  CHECK(base[0].cols() == 65);
  for (int j = 3; j < 7; ++j) CHECK(base[static_cast<size_t>(j)].cols() == 32);

  // Changing token k of every frame leaves positions 0..k unchanged.
  for (int k = 0; k < kPatchSize; ++k) {
    std::vector<Patch> pert = teacher;
    for (Patch& p : pert) p[static_cast<size_t>(k)] = (p[static_cast<size_t>(k)] + 5) % 32;
    const auto out = f.model.local_logits(g, latents, pert);
    for (int j = 0; j < kPatchSize; ++j) {
      const bool same = value_of(out[static_cast<size_t>(j)]).data == value_of(base[static_cast<size_t>(j)]).data;
      if (j <= k) CHECK(same);
      else CHECK_FALSE(same);
    }
  }

  // Changing one frame's tokens does not leak into other frames.
  std::vector<Patch> one = teacher;
  one[0] = Patch{3, 3, 3, 3, 3, 3, 3};
  const auto out = f.model.local_logits(g, latents, one);
  for (int j = 0; j < kPatchSize; ++j) {
    const Tensor a = value_of(out[static_cast<size_t>(j)]);
    const Tensor b = value_of(base[static_cast<size_t>(j)]);
    for (int r = 1; r < a.rows(); ++r)
      for (int c = 0; c < a.cols(); ++c) CHECK(a(r, c) == b(r, c));
  }
  std::vector<Patch> bad = teacher;
  bad[0][1] = 40;
  CHECK_THROWS_AS(f.model.local_logits(g, latents, bad), std::invalid_argument);
}

TEST_CASE("parallel local decoding equals the autoregressive loop") {
  Fixture f;
  const Example ex = f.example(4);
  Graph g(false);
  const Var memory = f.model.encode_context(g, ex.speaker, ex.text_ids);
  const Var latents = f.model.global_latents(g, ex.patches.frames, memory);
  std::vector<Patch> teacher = ex.patches.frames;
  teacher.push_back(Patch{});
  const auto parallel = f.model.local_logits(g, latents, teacher);
  for (int fr = 0; fr < latents.rows(); ++fr) {
    const Var latent = slice_rows(latents, fr, 1);
    for (int j = 0; j < kPatchSize; ++j) {
      const std::vector<int> prefix(teacher[static_cast<size_t>(fr)].begin(),
                                    teacher[static_cast<size_t>(fr)].begin() + j);
      const Tensor step = value_of(f.model.local_step(g, latent, prefix));
      const Tensor& full = value_of(parallel[static_cast<size_t>(j)]);
      for (int c = 0; c < full.cols(); ++c) CHECK(std::abs(step(0, c) - full(fr, c)) < 1e-12);
    }
  }
}

TEST_CASE("sequence loss matches a row-by-row oracle") {
  Fixture f;
  for (size_t i = 0; i < 3; ++i) {
    const Example ex = f.example(i);
    Graph g(false);
    const SequenceLogits logits = f.model.sequence_logits(g, ex);
    const int n = logits.frames;
    CHECK(logits.l0.rows() == n + 1);
    double total = 0.0;
    for (int fr = 0; fr < n; ++fr) {
      total += row_ce(value_of(logits.l0), fr, ex.patches.frames[static_cast<size_t>(fr)][0]);
      for (int j = 1; j < kPatchSize; ++j)
        total += row_ce(value_of(logits.rest[static_cast<size_t>(j - 1)]), fr,
                        ex.patches.frames[static_cast<size_t>(fr)][static_cast<size_t>(j)]);
    }
    total += row_ce(value_of(logits.l0), n, f.model.config().eos());  // EOS, exactly once
    const double nll = f.model.sequence_nll(g, logits, ex.patches).value().item();
    CHECK(nll == doctest::Approx(total / (7.0 * n + 1.0)).epsilon(1e-13));
  }
}

TEST_CASE("untrained loss is close to the uniform cross-entropy") {
  Fixture f;
  std::vector<Example> batch;
  for (size_t i = 0; i < 8; ++i) batch.push_back(f.example(i));
  Graph g(false);
  const LossParts loss = f.model.forward_loss(g, batch, 0.01, 1e-3);
  double expected = 0.0;
  for (const Example& ex : batch) {
    const double n = static_cast<double>(ex.patches.size());
    expected += (n * (std::log(65.0) + 6.0 * std::log(32.0)) + std::log(65.0)) / (7.0 * n + 1.0);
  }
  expected /= static_cast<double>(batch.size());
  CHECK(std::abs(loss.ce.value().item() - expected) < 0.1 * expected);
  CHECK(loss.flux.value().item() < 0.01 * loss.ce.value().item());
  CHECK(loss.total.value().item() == doctest::Approx(loss.ce.value().item() + loss.flux.value().item()));
}

TEST_CASE("batched loss equals per-utterance losses") {
  Fixture f;
  std::vector<Example> batch;
  for (size_t i = 0; i < 4; ++i) batch.push_back(f.example(i));
  Graph g(false);
  const LossParts loss = f.model.forward_loss(g, batch, 0.05, 1e-3);
  double ce = 0.0;
  std::vector<FluxInput> flux_in;
  for (const Example& ex : batch) {
    const SequenceLogits sl = f.model.sequence_logits(g, ex);
    ce += f.model.sequence_nll(g, sl, ex.patches).value().item();
    flux_in.push_back({sl.l0, l0_targets(ex.patches, f.model.config().eos())});
  }
  CHECK(loss.ce.value().item() == doctest::Approx(ce / 4.0).epsilon(1e-12));
  CHECK(loss.flux.value().item() == doctest::Approx(flux_loss(g, flux_in, 0.05, 1e-3).value().item()).epsilon(1e-12));
  const LossParts no_flux = f.model.forward_loss(g, batch, 0.0, 1e-3);
  CHECK(no_flux.flux.value().item() == 0.0);
  CHECK_THROWS_AS(f.model.forward_loss(g, {}, 0.0, 1e-3), std::invalid_argument);
}
