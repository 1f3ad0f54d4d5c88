#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "patchtts/toycodec.hpp"

namespace patchtts {

/// Unit-cost Levenshtein distance.
size_t levenshtein(std::span<const std::string> hyp, std::span<const std::string> ref);
size_t levenshtein(std::string_view hyp, std::string_view ref);

/// distance / len(ref); an empty reference gives 1 if hyp is non-empty else 0.
double cer(std::string_view hyp, std::string_view ref);
/// Same over words split on single spaces (empty pieces dropped).
double wer(std::string_view hyp, std::string_view ref);
std::vector<std::string> split_words(std::string_view text);

struct ScoredPair {
  double similarity = 0.0;
  int label = 0;  // 0: (reference, generated), 1: (reference, other ground truth)
};

/// Equal error rate for "accept as the reference speaker when similarity
/// >= threshold". Label 1 pairs are genuine, label 0 pairs impostors.
/// Thresholds are swept over the distinct scores (plus +/- infinity); the
/// false-accept and false-reject rates between consecutive operating points
/// are joined linearly and the EER is the lowest point where the two rates
/// cross on those segments. Throws if either label is missing.
double eer(std::span<const ScoredPair> scores);

/// (longest run of identical consecutive L0 tokens - 1) / max(1, len - 1).
/// Throws on an empty stream.
double stuck_rate(std::span<const int> l0);
double stuck_rate(const CodebookStream& stream);

struct EvalRecord {
  std::string id;
  std::string style;
  std::string mode;
  double cer = 0.0;
  double wer = 0.0;
  double speaker_score = 0.0;
  double stuck_rate = 0.0;
  int frames = 0;
  double used_top_p = 0.0;
};

struct GroupRow {
  std::string style;
  int n = 0;
  double wer_mean = 0.0;
  double cer_mean = 0.0;
  double spk_mean = 0.0;
  double stuck_mean = 0.0;
};

/// Per-style means, rows sorted by style name; styles with no records are
/// absent.
std::vector<GroupRow> grouped_report(std::span<const EvalRecord> records);

void write_records_csv(const std::filesystem::path& path, std::span<const EvalRecord> records);
/// Columns style,n,wer_mean,cer_mean,spk_mean,stuck_mean.
void write_report_csv(const std::filesystem::path& path, std::span<const GroupRow> rows);

}  // namespace patchtts
