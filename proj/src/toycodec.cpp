#include "patchtts/toycodec.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "patchtts/rng.hpp"

namespace patchtts {

namespace {

constexpr std::array<std::string_view, kNumStyles> kStyleNames = {"regular", "loud", "whisper", "fast", "sad"};

void check_vocab(const std::vector<int>& tokens, int vocab, const char* level) {
  for (int t : tokens)
    if (t < 0 || t >= vocab)
      throw std::invalid_argument(std::string(level) + " token " + std::to_string(t) + " outside vocab " +
                                  std::to_string(vocab));
}

std::vector<double> unit_vector(uint64_t seed, int dim) {
  Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(dim));
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

uint64_t pack_patch(const Patch& p) {
  uint64_t key = 0;
  for (int t : p) key = (key << 8) | static_cast<uint64_t>(t & 0xff);
  return key;
}

}  // namespace

std::string_view to_string(Style s) { return kStyleNames[static_cast<size_t>(s)]; }
std::string_view to_string(Fidelity f) { return f == Fidelity::kHigh ? "high" : "low"; }

Style parse_style(std::string_view s) {
  for (size_t i = 0; i < kStyleNames.size(); ++i)
    if (kStyleNames[i] == s) return static_cast<Style>(i);
  throw std::invalid_argument("unknown style: " + std::string(s));
}

Fidelity parse_fidelity(std::string_view s) {
  if (s == "high") return Fidelity::kHigh;
  if (s == "low") return Fidelity::kLow;
  throw std::invalid_argument("unknown fidelity: " + std::string(s));
}

Fidelity effective_fidelity(Style style, Fidelity requested) {
  return style == Style::kWhisper ? Fidelity::kLow : requested;
}

int alphabet_index(char c) {
  const auto pos = kAlphabet.find(c);
  return pos == std::string_view::npos ? -1 : static_cast<int>(pos);
}

uint64_t detail_hash(int level, int l0, int j, int offset) {
  const uint64_t x = (static_cast<uint64_t>(level) << 48) ^ (static_cast<uint64_t>(l0) << 32) ^
                     (static_cast<uint64_t>(j) << 16) ^ static_cast<uint64_t>(offset);
  return mix64(x);
}

void CodebookStream::validate(const CodecConfig& cfg) const {
  if (l1.size() != 2 * l0.size() || l2.size() != 4 * l0.size())
    throw std::invalid_argument("codebook stream length mismatch: l0=" + std::to_string(l0.size()) +
                                " l1=" + std::to_string(l1.size()) + " l2=" + std::to_string(l2.size()));
  check_vocab(l0, cfg.v0, "l0");
  check_vocab(l1, cfg.v1, "l1");
  check_vocab(l2, cfg.v2, "l2");
}

void PatchSequence::validate(const CodecConfig& cfg) const {
  const auto vocab = cfg.position_vocab();
  for (const Patch& p : frames)
    for (int j = 0; j < kPatchSize; ++j)
      if (p[static_cast<size_t>(j)] < 0 || p[static_cast<size_t>(j)] >= vocab[static_cast<size_t>(j)])
        throw std::invalid_argument("patch position " + std::to_string(j) + " token " +
                                    std::to_string(p[static_cast<size_t>(j)]) + " outside vocab");
}

PatchSequence flatten(const CodebookStream& stream, const CodecConfig& cfg) {
  stream.validate(cfg);
  PatchSequence out;
  out.frames.reserve(stream.frames());
  for (size_t i = 0; i < stream.frames(); ++i) {
    out.frames.push_back({stream.l0[i], stream.l1[2 * i], stream.l1[2 * i + 1], stream.l2[4 * i],
                          stream.l2[4 * i + 1], stream.l2[4 * i + 2], stream.l2[4 * i + 3]});
  }
  return out;
}

CodebookStream unflatten(const PatchSequence& patches, const CodecConfig& cfg) {
  patches.validate(cfg);
  CodebookStream s;
  for (const Patch& p : patches.frames) {
    s.l0.push_back(p[0]);
    s.l1.insert(s.l1.end(), {p[1], p[2]});
    s.l2.insert(s.l2.end(), {p[3], p[4], p[5], p[6]});
  }
  return s;
}

ToyCodec::ToyCodec(uint64_t seed, CodecConfig cfg) : seed_(seed), cfg_(cfg) {
  if (cfg_.v0 < static_cast<int>(kAlphabet.size()))
    throw std::invalid_argument("V0 must cover the alphabet for an injective L0 map");
  if (cfg_.v0 > 255 || cfg_.v1 > 256 || cfg_.v2 > 256) throw std::invalid_argument("toy codec vocab too large");
  if (cfg_.style_offset_range < 1) throw std::invalid_argument("style_offset_range must be >= 1");
}

SpeakerTable ToyCodec::speaker(int speaker_id) const {
  Rng rng(derive_seed(derive_seed(seed_, "speaker"), static_cast<uint64_t>(speaker_id)));
  std::vector<int> perm(static_cast<size_t>(cfg_.v0));
  std::iota(perm.begin(), perm.end(), 0);
  for (size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  SpeakerTable t;
  t.speaker_id = speaker_id;
  t.pi0.assign(perm.begin(), perm.begin() + static_cast<ptrdiff_t>(kAlphabet.size()));
  for (auto& off : t.style_offsets) off = static_cast<int>(rng.below(static_cast<uint64_t>(cfg_.style_offset_range)));
  return t;
}

SpeakerRef ToyCodec::speaker_embed(int speaker_id, Style style) const {
  const uint64_t id = static_cast<uint64_t>(speaker_id);
  SpeakerRef ref;
  ref.sv_embed = unit_vector(derive_seed(derive_seed(seed_, "sv"), id), cfg_.d_sv);
  ref.clap_embed = unit_vector(
      derive_seed(derive_seed(derive_seed(seed_, "clap"), id), static_cast<uint64_t>(style)), cfg_.d_clap);
  return ref;
}

Patch ToyCodec::codeword(const SpeakerTable& spk, char c, Style style, Fidelity fid) const {
  const int ci = alphabet_index(c);
  if (ci < 0) throw std::invalid_argument(std::string("character not in alphabet: '") + c + "'");
  const int l0 = spk.pi0[static_cast<size_t>(ci)];
  const int offset = spk.style_offsets[static_cast<size_t>(style)];
  const bool high = effective_fidelity(style, fid) == Fidelity::kHigh;
  Patch p{};
  p[0] = l0;
  for (int j = 0; j < 2; ++j) p[static_cast<size_t>(1 + j)] = static_cast<int>(detail_hash(1, l0, j, offset) % cfg_.v1);
  for (int j = 0; j < 4; ++j)
    p[static_cast<size_t>(3 + j)] = high ? static_cast<int>(detail_hash(2, l0, j, offset) % cfg_.v2) : 0;
  return p;
}

CodebookStream ToyCodec::encode(std::string_view text, const SpeakerTable& spk, Style style, Fidelity fid) const {
  PatchSequence patches;
  for (char c : text) patches.frames.push_back(codeword(spk, c, style, fid));
  return unflatten(patches, cfg_);
}

std::string ToyCodec::transcribe(const CodebookStream& stream, const SpeakerTable& spk) const {
  std::vector<int> inverse(static_cast<size_t>(std::max(cfg_.v0, 1)), -1);
  for (size_t i = 0; i < spk.pi0.size(); ++i) inverse[static_cast<size_t>(spk.pi0[i])] = static_cast<int>(i);
  std::string out;
  out.reserve(stream.l0.size());
  for (int t : stream.l0) {
    const int ci = (t >= 0 && t < cfg_.v0) ? inverse[static_cast<size_t>(t)] : -1;
    out.push_back(ci < 0 ? kGarbageChar : kAlphabet[static_cast<size_t>(ci)]);
  }
  return out;
}

double ToyCodec::speaker_score(const CodebookStream& stream, const SpeakerTable& spk) const {
  if (stream.frames() == 0) return 0.0;
  std::unordered_set<uint64_t> codewords;
  for (char c : kAlphabet)
    for (Style s : kAllStyles)
      for (Fidelity f : {Fidelity::kLow, Fidelity::kHigh}) codewords.insert(pack_patch(codeword(spk, c, s, f)));
  size_t hits = 0;
  const PatchSequence patches = flatten(stream, cfg_);
  for (const Patch& p : patches.frames) hits += codewords.count(pack_patch(p));
  return static_cast<double>(hits) / static_cast<double>(patches.size());
}

nlohmann::json golden_record(uint64_t seed, int speaker, Style style, Fidelity fid, std::string_view text,
                             const CodebookStream& stream) {
  return nlohmann::json{{"seed", seed},
                        {"speaker", speaker},
                        {"style", to_string(style)},
                        {"fidelity", to_string(fid)},
                        {"text", text},
                        {"l0", stream.l0},
                        {"l1", stream.l1},
                        {"l2", stream.l2}};
}

CodebookStream stream_from_json(const nlohmann::json& j) {
  CodebookStream s;
  s.l0 = j.at("l0").get<std::vector<int>>();
  s.l1 = j.at("l1").get<std::vector<int>>();
  s.l2 = j.at("l2").get<std::vector<int>>();
  return s;
}

}  // namespace patchtts
