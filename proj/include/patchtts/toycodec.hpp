#pragma once

// Deterministic synthetic stand-in for a 3-level hierarchical audio codec.
//
// Each text character becomes one coarse frame: one L0 token (a per-speaker
// injective map of the character), two L1 tokens and four L2 tokens derived
// from the L0 token, the within-frame index and a per-(speaker, style)
// offset. Rates are therefore 1:2:4 and every frame flattens to a 7-token
// patch ordered [L0, L1a, L1b, L2a, L2b, L2c, L2d].

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace patchtts {

inline constexpr int kPatchSize = 7;
inline constexpr int kNumStyles = 5;
inline constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz ";
inline constexpr char kGarbageChar = '?';

enum class Style { kRegular = 0, kLoud, kWhisper, kFast, kSad };
enum class Fidelity { kLow = 0, kHigh };

std::string_view to_string(Style s);
std::string_view to_string(Fidelity f);
Style parse_style(std::string_view s);
Fidelity parse_fidelity(std::string_view s);
inline constexpr std::array<Style, kNumStyles> kAllStyles = {Style::kRegular, Style::kLoud, Style::kWhisper,
                                                             Style::kFast, Style::kSad};

struct CodecConfig {
  int v0 = 64;
  int v1 = 32;
  int v2 = 32;
  int d_sv = 32;
  int d_clap = 32;
  /// Style offsets are drawn from [0, style_offset_range).
  int style_offset_range = 4;

  /// Vocab size of each patch position: (V0, V1, V1, V2, V2, V2, V2).
  std::array<int, kPatchSize> position_vocab() const { return {v0, v1, v1, v2, v2, v2, v2}; }
  bool operator==(const CodecConfig&) const = default;
};

struct CodebookStream {
  std::vector<int> l0;
  std::vector<int> l1;  // 2 per frame
  std::vector<int> l2;  // 4 per frame

  size_t frames() const { return l0.size(); }
  /// Throws std::invalid_argument on a rate or vocab violation.
  void validate(const CodecConfig& cfg) const;
  bool operator==(const CodebookStream&) const = default;
};

using Patch = std::array<int, kPatchSize>;

struct PatchSequence {
  std::vector<Patch> frames;

  size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  void validate(const CodecConfig& cfg) const;
  bool operator==(const PatchSequence&) const = default;
};

PatchSequence flatten(const CodebookStream& stream, const CodecConfig& cfg);
CodebookStream unflatten(const PatchSequence& patches, const CodecConfig& cfg);

struct SpeakerTable {
  int speaker_id = 0;
  std::vector<int> pi0;  // alphabet index -> L0 token, injective
  std::array<int, kNumStyles> style_offsets{};
};

/// Unit-norm stand-ins for the speaker-verification and CLAP embeddings.
struct SpeakerRef {
  std::vector<double> sv_embed;
  std::vector<double> clap_embed;
};

/// The detail-token mixer: splitmix64 finalizer over
/// (level << 48) ^ (l0 << 32) ^ (j << 16) ^ offset. level is 1 or 2.
uint64_t detail_hash(int level, int l0, int j, int offset);

/// Pure functions of (seed, config); safe to share across threads.
class ToyCodec {
 public:
  explicit ToyCodec(uint64_t seed, CodecConfig cfg = {});

  uint64_t seed() const { return seed_; }
  const CodecConfig& config() const { return cfg_; }

  SpeakerTable speaker(int speaker_id) const;
  SpeakerRef speaker_embed(int speaker_id, Style style) const;

  /// Whisper style forces low fidelity; low fidelity zeroes all L2 tokens.
  CodebookStream encode(std::string_view text, const SpeakerTable& spk, Style style, Fidelity fid) const;
  /// Exact inverse on L0; tokens outside the speaker's image decode to '?'.
  std::string transcribe(const CodebookStream& stream, const SpeakerTable& spk) const;
  /// Fraction of frames whose full patch is a codeword this speaker emits for
  /// some (character, style, fidelity). 0 for an empty stream.
  double speaker_score(const CodebookStream& stream, const SpeakerTable& spk) const;

  Patch codeword(const SpeakerTable& spk, char c, Style style, Fidelity fid) const;

 private:
  uint64_t seed_;
  CodecConfig cfg_;
};

Fidelity effective_fidelity(Style style, Fidelity requested);
int alphabet_index(char c);  // -1 when not in the alphabet

/// Golden-file record: {seed, speaker, style, fidelity, text, l0, l1, l2}.
nlohmann::json golden_record(uint64_t seed, int speaker, Style style, Fidelity fid, std::string_view text,
                             const CodebookStream& stream);
CodebookStream stream_from_json(const nlohmann::json& j);

}  // namespace patchtts
