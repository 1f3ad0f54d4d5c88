#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "patchtts/toycodec.hpp"

namespace patchtts {

/// Special tokens occupy the lowest ids in this fixed order.
enum SpecialToken : int { kPad = 0, kBos = 1, kEos = 2, kTag16k = 3, kTag48k = 4 };
inline constexpr int kNumSpecials = 5;
inline constexpr std::array<std::string_view, kNumSpecials> kSpecialNames = {"[PAD]", "[BOS]", "[EOS]", "[16000]",
                                                                            "[48000]"};

/// Fidelity tag token: low -> [16000], high -> [48000].
int fidelity_tag(Fidelity f);

/// Character-level BPE. Text is split into words (runs of non-space
/// characters) and single spaces; merges never cross a space. Base symbols
/// are the toy alphabet plus any other character present in the training
/// corpus; characters never seen at training time encode as the space token.
class BpeTokenizer {
 public:
  BpeTokenizer();

  /// Greedy highest-count pair merging (ties -> lexicographically smallest
  /// pair) until vocab_size is reached or no pair occurs twice.
  static BpeTokenizer train(std::span<const std::string> corpus, int vocab_size);

  std::vector<int> encode(std::string_view text) const;
  /// [tag] ++ encode(text); no tag when `tag` is empty.
  std::vector<int> encode_text(std::string_view text, std::optional<Fidelity> tag) const;
  /// Concatenates symbols, dropping specials.
  std::string decode(std::span<const int> ids) const;

  int vocab_size() const { return static_cast<int>(symbols_.size()); }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  const std::string& symbol(int id) const { return symbols_.at(static_cast<size_t>(id)); }

  /// Plain text: header line, one "special"/"base"/"merge" entry per line.
  std::string serialize() const;
  static BpeTokenizer deserialize(std::string_view text);

  bool operator==(const BpeTokenizer& other) const {
    return symbols_ == other.symbols_ && merges_ == other.merges_;
  }

 private:
  void add_base(char c);
  void rebuild_index();
  std::vector<int> encode_word(std::string_view word) const;

  std::vector<std::string> symbols_;
  std::vector<std::pair<std::string, std::string>> merges_;
  int base_end_ = kNumSpecials;  // ids [kNumSpecials, base_end_) are single characters
  std::array<int, 256> char_id_{};
  std::vector<std::pair<std::pair<int, int>, int>> merge_lookup_;  // sorted ((left,right), rank)
  std::vector<std::pair<int, int>> merge_ids_;                     // by rank
  std::vector<int> merge_result_;                                  // by rank
};

}  // namespace patchtts
