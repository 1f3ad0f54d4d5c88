#pragma once

#include <cmath>
#include <vector>

#include "patchtts/inference.hpp"

namespace patchtts::testing {

// Stub sources for the sampler: fixed logit patterns, no model.
class StubSource : public FrameSource {
 public:
  explicit StubSource(CodecConfig codec = {}, int limit = 64) : codec_(codec), limit_(limit) {}

  void start(const SpeakerRef& speaker, std::span<const int> text_ids, std::span<const Patch> prompt) override {
    last_speaker = speaker;
    last_text_ids.assign(text_ids.begin(), text_ids.end());
    last_prompt.assign(prompt.begin(), prompt.end());
    frames.assign(prompt.begin(), prompt.end());
    ++starts;
  }
  std::vector<double> logits(std::span<const int> prefix) override {
    const int j = static_cast<int>(prefix.size());
    if (j == 0) return l0_logits();
    return std::vector<double>(static_cast<size_t>(codec_.position_vocab()[static_cast<size_t>(j)]), 0.0);
  }
  void push(const Patch& frame) override { frames.push_back(frame); }
  int eos() const override { return codec_.v0; }
  int frame_limit() const override { return limit_; }

  SpeakerRef last_speaker;
  std::vector<int> last_text_ids;
  std::vector<Patch> last_prompt;
  std::vector<Patch> frames;
  int starts = 0;

 protected:
  virtual std::vector<double> l0_logits() = 0;
  int generated() const { return static_cast<int>(frames.size() - last_prompt.size()); }

  CodecConfig codec_;
  int limit_;
};

// Emits EOS with certainty at every frame.
class EosStub : public StubSource {
 protected:
  std::vector<double> l0_logits() override {
    std::vector<double> lg(static_cast<size_t>(codec_.v0 + 1), -1e9);
    lg[static_cast<size_t>(codec_.v0)] = 0.0;
    return lg;
  }
};

// Emits `length` frames with a distinct confident L0 token each, then EOS.
class LengthStub : public StubSource {
 public:
  explicit LengthStub(int length) : length_(length) {}

 protected:
  std::vector<double> l0_logits() override {
    std::vector<double> lg(static_cast<size_t>(codec_.v0 + 1), 0.0);
    const int target = generated() >= length_ ? codec_.v0 : generated() % codec_.v0;
    lg[static_cast<size_t>(target)] = 20.0;
    return lg;
  }

 private:
  int length_;
};

// Places `repeat_mass` on the previous frame's L0 token, spreads the rest
// uniformly over the other L0 tokens, never emits EOS.
class RepeatStub : public StubSource {
 public:
  explicit RepeatStub(int limit, double repeat_mass = 0.95) : StubSource({}, limit), mass_(repeat_mass) {}

 protected:
  std::vector<double> l0_logits() override {
    std::vector<double> lg(static_cast<size_t>(codec_.v0 + 1), -1e9);
    if (frames.empty()) {
      for (int i = 0; i < codec_.v0; ++i) lg[static_cast<size_t>(i)] = 0.0;
      return lg;
    }
    const int prev = frames.back()[0];
    const double other = (1.0 - mass_) / (codec_.v0 - 1);
    for (int i = 0; i < codec_.v0; ++i) lg[static_cast<size_t>(i)] = std::log(i == prev ? mass_ : other);
    return lg;
  }

 private:
  double mass_;
};

}  // namespace patchtts::testing
