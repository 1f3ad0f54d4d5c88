#pragma once

// End-to-end commands behind the CLI: configuration resolution, run
// manifests and the gen-data / train / finetune / synth / eval / gradcheck
// steps. Each command writes into one output directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchtts/dataset.hpp"
#include "patchtts/inference.hpp"
#include "patchtts/metrics.hpp"
#include "patchtts/model.hpp"
#include "patchtts/preference.hpp"
#include "patchtts/training.hpp"

namespace patchtts {

inline constexpr int kConfigSchemaVersion = 1;

/// Failure reported by a command. `code` is one of "usage", "config",
/// "io", "input", "exists", "numeric", "check".
class CommandError : public std::runtime_error {
 public:
  CommandError(std::string code, const std::string& message) : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

/// Every tunable of a run. The run seed is the only seed: resolve_config
/// copies it into every subsystem config, which then derive their own
/// streams ("data", "init", "train", "sampling", "pairs").
struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  std::string preset = "desk";
  uint64_t seed = 42;
  CorpusConfig data;
  int tokenizer_vocab = 32;
  ModelConfig model;
  TrainConfig train;
  FinetuneConfig finetune;
  PairConfig pairs;
  int pair_utterances = 32;  // training utterances used as RIO seeds
  SampleConfig sample;
  std::string mode = "shallow";

  /// Defaults for a preset ("desk" or "paper").
  static RunConfig defaults(const std::string& preset);
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Starts from the defaults of j["preset"] (desk when absent). Throws
/// CommandError("config") on unknown keys or wrong types.
void from_json(const nlohmann::json& j, RunConfig& c);

/// Command-line overrides; unset fields leave the config untouched.
struct ConfigOverrides {
  std::optional<std::string> preset;
  std::optional<uint64_t> seed;
  std::optional<int> steps;
  std::optional<std::string> mode;
  std::optional<double> top_p;
  bool no_ras = false;
  bool no_quality_prefix = false;
  bool no_flux = false;
  std::optional<int> n_speakers;
  std::optional<int> n_utts;
  std::optional<int> n_heldout;
};

/// Precedence: flags > config file > preset defaults. The preset is taken
/// from the flag, else the file, else "desk". `steps_target` selects which
/// step count --steps sets ("train" or "finetune").
RunConfig resolve_config(const std::optional<std::filesystem::path>& config_file, const ConfigOverrides& flags,
                         const std::string& steps_target = "train");

/// Written as manifest.json in every output directory.
struct RunManifest {
  std::string command;
  std::string version;
  uint64_t seed = 0;
  nlohmann::json config;
  nlohmann::json inputs = nlohmann::json::object();
  std::vector<std::string> outputs;  // file names relative to the output directory
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);
RunManifest read_run_manifest(const std::filesystem::path& dir);

/// git-describe style version string baked in at build time.
std::string version_string();

struct GenDataOptions {
  std::filesystem::path out;
  bool force = false;
};
/// Writes train.jsonl, heldout.jsonl and manifest.json.
RunManifest cmd_gen_data(const RunConfig& cfg, const GenDataOptions& opt);

struct TrainOptions {
  std::filesystem::path data;
  std::filesystem::path out;
  bool force = false;
  bool quiet = true;
};
/// Trains the tokenizer and the model; writes model.ckpt, train_log.csv and
/// manifest.json. An aborted run leaves model.ckpt at the last good update
/// and throws CommandError("numeric").
RunManifest cmd_train(const RunConfig& cfg, const TrainOptions& opt);

struct FinetuneOptions {
  std::filesystem::path data;
  std::filesystem::path ckpt;
  std::filesystem::path out;
  bool force = false;
  bool quiet = true;
};
/// Builds RIO pairs from the first pair_utterances training utterances
/// (arbitrary texts from the held-out transcripts), runs ORPO and writes
/// pairs.jsonl, finetune_log.csv, model.ckpt and manifest.json.
RunManifest cmd_finetune(const RunConfig& cfg, const FinetuneOptions& opt);

struct SynthOptions {
  std::filesystem::path ckpt;
  std::filesystem::path out;
  /// Either a dataset directory (synthesizes `split`, capped at `limit` when
  /// positive) or a single text for `speaker` / `style`.
  std::optional<std::filesystem::path> data;
  std::string split = "heldout";
  int limit = 0;
  std::optional<std::string> text;
  int speaker = 0;
  Style style = Style::kRegular;
  std::optional<std::string> ref_transcript;  // required in deep mode
  bool force = false;
};
/// Writes streams.jsonl (golden records plus id, mode, used_top_p,
/// truncated, frames) and manifest.json.
RunManifest cmd_synth(const RunConfig& cfg, const SynthOptions& opt);

struct EvalOptions {
  std::filesystem::path data;
  std::filesystem::path streams;
  std::filesystem::path out;
  bool force = false;
};
/// Scores streams.jsonl against the dataset; writes records.csv,
/// report.csv, summary.json and manifest.json.
RunManifest cmd_eval(const RunConfig& cfg, const EvalOptions& opt);

struct GradcheckReport {
  double forward_loss = 0.0;
  double orpo_loss = 0.0;
  int probes = 0;
  double eps = 0.0;
  double max() const { return std::max(forward_loss, orpo_loss); }
};
/// Full-model gradient check of forward_loss (batch of two utterances,
/// flux on) and orpo_loss (ground truth vs a re-voiced rejected stream).
GradcheckReport run_gradcheck(const RunConfig& cfg, int probes, double eps);

/// Rows of a synthesized-streams file.
struct SynthRecord {
  std::string id;
  int speaker = 0;
  Style style = Style::kRegular;
  std::string text;
  std::string mode;
  CodebookStream stream;
  double used_top_p = 0.0;
  bool truncated = false;
};
std::vector<SynthRecord> read_synth_records(const std::filesystem::path& path);

/// Scores one synthesized stream against its transcript and speaker.
EvalRecord evaluate_stream(const ToyCodec& codec, const SynthRecord& rec);

/// EER with the labeling protocol: (reference, generated) pairs get label
/// 0, (reference, another ground-truth utterance of the same speaker)
/// label 1; similarity is speaker_score against the reference speaker.
/// Records whose speaker has no ground-truth utterance are skipped.
double protocol_eer(const ToyCodec& codec, const std::vector<SynthRecord>& generated,
                    const std::vector<Utterance>& ground_truth);

}  // namespace patchtts
