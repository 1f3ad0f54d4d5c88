#pragma once

// Preference fine-tuning: cyclic (reverse-inference) pair construction and
// the odds-ratio preference objective.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchtts/dataset.hpp"
#include "patchtts/inference.hpp"
#include "patchtts/model.hpp"
#include "patchtts/training.hpp"

namespace patchtts {

struct PreferencePair {
  std::string id;
  SpeakerRef speaker;
  std::vector<int> text_ids;
  PatchSequence chosen;    // ground truth
  PatchSequence rejected;  // worst cyclic output
  double cer_rejected = 0.0;
  double quality_rejected = 0.0;

  /// Throws std::invalid_argument when either sequence is empty.
  void validate() const;
};

nlohmann::json pair_to_json(const PreferencePair& p);
PreferencePair pair_from_json(const nlohmann::json& j);
void write_pairs(const std::filesystem::path& path, std::span<const PreferencePair> pairs);
std::vector<PreferencePair> read_pairs(const std::filesystem::path& path);

/// One scored cyclic output.
struct CycleCandidate {
  PatchSequence patches;
  double cer = 1.0;
  double quality = 0.0;  // 1 - stuck_rate; 0 for an empty output
};

/// Scores a candidate against the transcript with the toy transcription
/// oracle of `speaker`. Empty output scores CER 1.
CycleCandidate score_candidate(const ToyCodec& codec, const SpeakerTable& speaker, PatchSequence patches,
                               std::string_view transcript);

/// Index of the worst candidate: highest CER, then lowest quality, then the
/// earliest. Empty candidates are skipped; returns candidates.size() if all
/// are empty.
size_t worst_candidate(std::span<const CycleCandidate> candidates);

/// Speaker whose codewords best explain a stream (highest speaker_score;
/// ties go to `fallback` if it is among them, else the lowest id). Stands in
/// for extracting a speaker embedding from reference audio. Returns
/// `fallback` for an empty stream.
int identify_speaker(const ToyCodec& codec, const CodebookStream& stream, int n_speakers, int fallback);

/// Synthesizes `text` for a speaker reference with the given seed.
using CycleSynth = std::function<PatchSequence(const SpeakerRef& speaker, const std::string& text, uint64_t seed)>;

struct PairConfig {
  int n_cycles = 4;
  int n_speakers = 4;  // candidate set for identify_speaker
  uint64_t seed = 0;

  void validate() const;
};

struct PairStats {
  int dropped = 0;  // utterances whose cyclic outputs were all empty
  double mean_cer_rejected = 0.0;
};

/// For seed utterance i: (1) synthesize arbitrary_texts[i mod n] from the
/// utterance's own speaker reference; (2) take the speaker identified in that
/// output as the new reference and re-synthesize the original transcript
/// n_cycles times; (3) rank the cycles and keep the worst as rejected with
/// the ground-truth stream as chosen. Seeds are derive_seed(derive_seed(
/// cfg.seed, "pairs"), i * (n_cycles + 1) + k).
std::vector<PreferencePair> build_pairs(const CycleSynth& synth, const ToyCodec& codec, const BpeTokenizer& tok,
                                        std::span<const Utterance> seeds, std::span<const std::string> arbitrary_texts,
                                        const PairConfig& cfg, PairStats* stats = nullptr);

/// CycleSynth backed by synthesize_with_backoff on a model in shallow mode.
CycleSynth model_cycle_synth(Model& model, const BpeTokenizer& tok, const SampleConfig& sample);

/// -log sigmoid(log odds(c) - log odds(r)) for 1 x 1 length-normalized
/// log-likelihoods, with exp(logp) clamped to [1e-9, 1 - 1e-9].
Var odds_ratio_term(Var logp_chosen, Var logp_rejected);

struct OrpoParts {
  Var nll_chosen;
  Var or_term;
  Var flux;
  Var total;
  double logp_chosen = 0.0;
  double logp_rejected = 0.0;
};

/// logp(y) is the mean token log-likelihood of y (7F+1 predictions, EOS
/// included). or_term = -log sigmoid(log odds(chosen) - log odds(rejected))
/// with exp(logp) clamped to [1e-9, 1 - 1e-9];
/// total = nll_chosen + lambda * or_term + flux(flux_beta) on chosen's L0.
OrpoParts orpo_loss(Model& model, Graph& g, const PreferencePair& pair, double lambda, double flux_beta,
                    double flux_eps);

/// Batch mean of orpo_loss; margins are averaged the same way.
OrpoParts orpo_batch_loss(Model& model, Graph& g, std::span<const PreferencePair> batch, double lambda,
                          double flux_beta, double flux_eps);

/// Mean logp(chosen) - logp(rejected) over the pairs, evaluated without
/// recording gradients.
double mean_margin(Model& model, std::span<const PreferencePair> pairs);

struct FinetuneConfig {
  TrainConfig opt;
  double lambda = 0.25;

  /// 200 steps at the end-of-pretraining lr (constant, no warmup), batch 4,
  /// flux weight flux_beta_orpo.
  static FinetuneConfig defaults(const ModelConfig& model);
  void validate() const;
};

void to_json(nlohmann::json& j, const FinetuneConfig& c);
void from_json(const nlohmann::json& j, FinetuneConfig& c);

struct FinetuneLog {
  int step = 0;
  double lr = 0.0;
  double nll = 0.0;
  double or_term = 0.0;
  double flux = 0.0;
  double total = 0.0;
  double margin = 0.0;
};

struct FinetuneResult {
  std::vector<FinetuneLog> log;
  bool aborted = false;
  std::string error;
  int completed = 0;
};

/// Same optimizer, clipping, shuffling and abort rules as train().
FinetuneResult finetune(Model& model, std::span<const PreferencePair> pairs, const FinetuneConfig& cfg,
                        const std::function<void(const FinetuneLog&)>& on_step = {});

void write_finetune_csv(const std::filesystem::path& path, std::span<const FinetuneLog> log);

}  // namespace patchtts
