#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "patchtts/metrics.hpp"
#include "patchtts/rng.hpp"
#include "patchtts/toycodec.hpp"

using namespace patchtts;

namespace {

// Written out independently of src/rng.cpp: splitmix64 output stage.
uint64_t splitmix_reference(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string random_text(Rng& rng, int max_len) {
  const int len = static_cast<int>(rng.below(static_cast<uint64_t>(max_len + 1)));
  std::string t;
  for (int i = 0; i < len; ++i) t.push_back(kAlphabet[rng.below(kAlphabet.size())]);
  return t;
}

CodebookStream random_stream(Rng& rng, const CodecConfig& cfg) {
  const size_t n = rng.below(20);
  CodebookStream s;
  for (size_t i = 0; i < n; ++i) s.l0.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(cfg.v0))));
  for (size_t i = 0; i < 2 * n; ++i) s.l1.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(cfg.v1))));
  for (size_t i = 0; i < 4 * n; ++i) s.l2.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(cfg.v2))));
  return s;
}

}  // namespace

TEST_CASE("flatten order puts L0, then both L1, then four L2 tokens") {
  const CodebookStream s{{5}, {1, 2}, {9, 8, 7, 6}};
  const PatchSequence p = flatten(s, CodecConfig{});
  REQUIRE(p.size() == 1);
  CHECK(p.frames[0] == Patch{5, 1, 2, 9, 8, 7, 6});
  CHECK(unflatten(p, CodecConfig{}) == s);
}

TEST_CASE("flatten and unflatten are inverse on random streams") {
  Rng rng(1);
  const CodecConfig cfg;
  for (int i = 0; i < 1000; ++i) {
    const CodebookStream s = random_stream(rng, cfg);
    const PatchSequence p = flatten(s, cfg);
    CHECK(p.size() == s.frames());
    CHECK(unflatten(p, cfg) == s);
    CHECK(flatten(unflatten(p, cfg), cfg) == p);
  }
  CodebookStream three{{1, 2, 3}, {0, 0, 0, 0, 0, 0}, std::vector<int>(12, 1)};
  const PatchSequence p3 = flatten(three, cfg);
  CHECK(p3.size() == 3);
  CHECK(p3.size() * kPatchSize == 21);
}

TEST_CASE("flatten rejects malformed streams") {
  const CodecConfig cfg;
  CHECK_THROWS_AS(flatten(CodebookStream{{1}, {1}, {1, 1, 1, 1}}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(flatten(CodebookStream{{1}, {1, 2}, {1, 1, 1}}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(flatten(CodebookStream{{64}, {1, 2}, {1, 1, 1, 1}}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(flatten(CodebookStream{{1}, {32, 2}, {1, 1, 1, 1}}, cfg), std::invalid_argument);
  PatchSequence bad;
  bad.frames.push_back({0, 0, 0, 0, 0, 0, 40});
  CHECK_THROWS_AS(unflatten(bad, cfg), std::invalid_argument);
}

TEST_CASE("encode matches the committed golden records") {
  std::ifstream is(PATCHTTS_GOLDEN_DIR "/toycodec_seed7.jsonl");
  REQUIRE(is);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    const ToyCodec codec(j.at("seed").get<uint64_t>());
    const auto spk = codec.speaker(j.at("speaker").get<int>());
    const auto style = parse_style(j.at("style").get<std::string>());
    const auto fid = parse_fidelity(j.at("fidelity").get<std::string>());
    const CodebookStream s = codec.encode(j.at("text").get<std::string>(), spk, style, fid);
    CHECK(s == stream_from_json(j));
    CHECK(golden_record(codec.seed(), spk.speaker_id, style, fid, j.at("text").get<std::string>(), s) == j);
    ++n;
  }
  CHECK(n == 5);
}

TEST_CASE("detail tokens follow the documented mixer") {
  const ToyCodec codec(7);
  const SpeakerTable spk = codec.speaker(3);
  const CodebookStream s = codec.encode("ab", spk, Style::kRegular, Fidelity::kHigh);
  const uint64_t off = static_cast<uint64_t>(spk.style_offsets[static_cast<size_t>(Style::kRegular)]);
  for (size_t i = 0; i < 2; ++i) {
    const uint64_t l0 = static_cast<uint64_t>(s.l0[i]);
    for (uint64_t j = 0; j < 2; ++j)
      CHECK(s.l1[2 * i + j] == static_cast<int>(splitmix_reference((1ULL << 48) ^ (l0 << 32) ^ (j << 16) ^ off) % 32));
    for (uint64_t j = 0; j < 4; ++j)
      CHECK(s.l2[4 * i + j] == static_cast<int>(splitmix_reference((2ULL << 48) ^ (l0 << 32) ^ (j << 16) ^ off) % 32));
  }
}

TEST_CASE("encode basics") {
  const ToyCodec codec(7);
  const SpeakerTable spk = codec.speaker(2);
  const CodebookStream empty = codec.encode("", spk, Style::kRegular, Fidelity::kHigh);
  CHECK(empty.l0.empty());
  CHECK(empty.l1.empty());
  CHECK(empty.l2.empty());
  CHECK_THROWS_AS(codec.encode("Ab", spk, Style::kRegular, Fidelity::kHigh), std::invalid_argument);
  const CodebookStream low = codec.encode("hello there", spk, Style::kLoud, Fidelity::kLow);
  for (int t : low.l2) CHECK(t == 0);
  const CodebookStream whisper = codec.encode("hello there", spk, Style::kWhisper, Fidelity::kHigh);
  for (int t : whisper.l2) CHECK(t == 0);
}

TEST_CASE("speaker tables are injective and deterministic") {
  const ToyCodec codec(11);
  for (int id = 0; id < 50; ++id) {
    const SpeakerTable a = codec.speaker(id);
    const SpeakerTable b = codec.speaker(id);
    CHECK(a.pi0 == b.pi0);
    CHECK(a.style_offsets == b.style_offsets);
    CHECK(std::set<int>(a.pi0.begin(), a.pi0.end()).size() == kAlphabet.size());
    for (int t : a.pi0) CHECK((t >= 0 && t < 64));
  }
}

TEST_CASE("transcribe inverts encode for every speaker, style and fidelity") {
  const ToyCodec codec(5);
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const std::string text = random_text(rng, 24);
    const SpeakerTable spk = codec.speaker(static_cast<int>(rng.below(16)));
    const Style style = kAllStyles[rng.below(kNumStyles)];
    const Fidelity fid = rng.below(2) ? Fidelity::kHigh : Fidelity::kLow;
    const CodebookStream s = codec.encode(text, spk, style, fid);
    CHECK(s.l1.size() == 2 * s.l0.size());
    CHECK(s.l2.size() == 4 * s.l0.size());
    CHECK(codec.transcribe(s, spk) == text);
    if (!text.empty()) CHECK(codec.speaker_score(s, spk) == 1.0);
  }
}

TEST_CASE("l0 encoding is injective per speaker") {
  const ToyCodec codec(5);
  const SpeakerTable spk = codec.speaker(1);
  Rng rng(4);
  std::set<std::string> texts;
  std::set<std::vector<int>> streams;
  for (int i = 0; i < 300; ++i) {
    const std::string t = random_text(rng, 6);
    if (!texts.insert(t).second) continue;
    CHECK(streams.insert(codec.encode(t, spk, Style::kRegular, Fidelity::kHigh).l0).second);
  }
}

TEST_CASE("transcribe marks tokens outside the speaker image as garbage") {
  const ToyCodec codec(7);
  const SpeakerTable spk = codec.speaker(0);
  std::set<int> image(spk.pi0.begin(), spk.pi0.end());
  int outside = 0;
  while (image.count(outside)) ++outside;
  CodebookStream s{{outside, outside, outside}, std::vector<int>(6, 0), std::vector<int>(12, 0)};
  CHECK(codec.transcribe(s, spk) == "???");

  CodebookStream abc = codec.encode("abc", spk, Style::kRegular, Fidelity::kHigh);
  abc.l0[1] = outside;
  CHECK(codec.transcribe(abc, spk) == "a?c");
  CHECK(cer(codec.transcribe(abc, spk), "abc") == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("speaker score") {
  const ToyCodec codec(7);
  const SpeakerTable a = codec.speaker(0);
  const CodebookStream s = codec.encode("the quick brown fox", a, Style::kSad, Fidelity::kHigh);
  CHECK(codec.speaker_score(s, a) == 1.0);
  CHECK(codec.speaker_score(CodebookStream{}, a) == 0.0);

  // Corrupt half of the frames with a detail token no codeword uses at that slot.
  CodebookStream half = codec.encode("abcdefgh", a, Style::kRegular, Fidelity::kHigh);
  for (size_t i = 0; i < 4; ++i) {
    std::set<int> used;
    for (char c : kAlphabet)
      for (Style st : kAllStyles)
        for (Fidelity f : {Fidelity::kLow, Fidelity::kHigh}) {
          const Patch p = codec.codeword(a, c, st, f);
          if (p[0] == half.l0[i]) used.insert(p[1]);
        }
    int bad = 0;
    while (used.count(bad)) ++bad;
    half.l1[2 * i] = bad;
  }
  CHECK(codec.speaker_score(half, a) == doctest::Approx(0.5));

  // A speaker whose codewords share nothing with `a`: any patch of b whose
  // L0 lies outside a's image can never match.
  const CodecConfig wide{255, 32, 32, 32, 32, 4};
  const ToyCodec big(3, wide);
  const SpeakerTable p = big.speaker(0);
  std::set<int> image(p.pi0.begin(), p.pi0.end());
  for (int id = 1; id < 200; ++id) {
    const SpeakerTable q = big.speaker(id);
    bool disjoint = true;
    for (int t : q.pi0) disjoint = disjoint && !image.count(t);
    if (!disjoint) continue;
    const CodebookStream other = big.encode("some words here", q, Style::kRegular, Fidelity::kHigh);
    CHECK(big.speaker_score(other, p) == 0.0);
    break;
  }
}

TEST_CASE("speaker embeddings") {
  const ToyCodec codec(7);
  const SpeakerRef a = codec.speaker_embed(4, Style::kLoud);
  const SpeakerRef b = codec.speaker_embed(4, Style::kLoud);
  CHECK(a.sv_embed == b.sv_embed);
  CHECK(a.clap_embed == b.clap_embed);
  const SpeakerRef c = codec.speaker_embed(4, Style::kSad);
  CHECK(c.sv_embed == a.sv_embed);
  CHECK(c.clap_embed != a.clap_embed);
  CHECK(a.sv_embed.size() == 32);
  CHECK(a.clap_embed.size() == 32);
  for (int id = 0; id < 100; ++id) {
    const SpeakerRef r = codec.speaker_embed(id, kAllStyles[static_cast<size_t>(id % kNumStyles)]);
    double n1 = 0.0, n2 = 0.0;
    for (double v : r.sv_embed) n1 += v * v;
    for (double v : r.clap_embed) n2 += v * v;
    CHECK(std::abs(std::sqrt(n1) - 1.0) < 1e-6);
    CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-6);
  }
}

TEST_CASE("style and fidelity names round-trip") {
  for (Style s : kAllStyles) CHECK(parse_style(to_string(s)) == s);
  CHECK(parse_fidelity("high") == Fidelity::kHigh);
  CHECK(parse_fidelity("low") == Fidelity::kLow);
  CHECK_THROWS_AS(parse_style("angry"), std::invalid_argument);
}
