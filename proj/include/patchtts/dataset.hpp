#pragma once

// Synthetic corpus: texts built from a seeded word lexicon, rendered by the
// toy codec with balanced styles and both fidelities.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchtts/model.hpp"
#include "patchtts/tokenizer.hpp"
#include "patchtts/toycodec.hpp"

namespace patchtts {

struct Utterance {
  std::string id;
  std::string text;
  int speaker = 0;
  Style style = Style::kRegular;
  Fidelity fidelity = Fidelity::kHigh;
  CodebookStream stream;

  bool operator==(const Utterance&) const = default;
};

struct CorpusConfig {
  uint64_t seed = 42;
  int n_speakers = 4;
  int n_utts = 500;
  int n_heldout = 50;
  int lexicon_size = 48;
  int min_word_len = 2;
  int max_word_len = 5;
  int min_words = 2;
  int max_words = 5;
  /// Probability that a word is replaced by a run of one repeated letter
  /// (the repetition-prone variant of the corpus).
  double run_prob = 0.0;
  int min_run = 3;
  int max_run = 6;

  void validate() const;
  bool operator==(const CorpusConfig&) const = default;
};

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);

struct Corpus {
  uint64_t codec_seed = 0;
  std::vector<std::string> lexicon;
  std::vector<Utterance> train;
  std::vector<Utterance> heldout;  // texts never seen in train
};

/// The codec world is ToyCodec(cfg.seed); texts, speakers and the lexicon
/// come from derive_seed(cfg.seed, "data"). Style of utterance i is
/// i mod 5 and fidelity alternates within each style, so every style gets
/// both fidelities and the style histogram is uniform within 1.
Corpus generate_corpus(const CorpusConfig& cfg, const CodecConfig& codec = {});

/// Golden record plus id and transcript fields.
nlohmann::json utterance_to_json(const Utterance& u, uint64_t codec_seed);
Utterance utterance_from_json(const nlohmann::json& j);

/// One JSON object per line. Throws std::runtime_error on I/O failure and
/// std::invalid_argument on a malformed line (with its line number).
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, const std::vector<Utterance>& utts, uint64_t codec_seed);
/// Returns the utterances and the codec seed they were rendered with.
std::vector<Utterance> read_manifest(const std::filesystem::path& path, uint64_t* codec_seed = nullptr);

/// Model input for an utterance: its own speaker/style embedding, the
/// fidelity-tagged text and the flattened stream.
Example make_example(const Utterance& u, const ToyCodec& codec, const BpeTokenizer& tok);

std::vector<std::string> transcripts(const std::vector<Utterance>& utts);

}  // namespace patchtts
