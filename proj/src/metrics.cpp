#include "patchtts/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace patchtts {

namespace {

template <typename Seq>
size_t edit_distance(const Seq& a, const Seq& b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      const size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct RatePoint {
  double far = 0.0;  // false accepts: label-0 pairs with score >= threshold
  double frr = 0.0;  // false rejects: label-1 pairs with score < threshold
};

// Operating points for thresholds -inf, each distinct score, +inf, ordered by
// increasing threshold (far non-increasing, frr non-decreasing).
std::vector<RatePoint> operating_points(std::span<const ScoredPair> scores) {
  size_t n0 = 0, n1 = 0;
  for (const auto& s : scores) {
    if (s.label == 0) ++n0;
    else if (s.label == 1) ++n1;
    else throw std::invalid_argument("eer: labels must be 0 or 1");
  }
  if (n0 == 0 || n1 == 0) throw std::invalid_argument("eer: need at least one score of each label");
  std::vector<ScoredPair> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const ScoredPair& a, const ScoredPair& b) { return a.similarity < b.similarity; });
  std::vector<RatePoint> pts;
  pts.push_back({1.0, 0.0});
  size_t below0 = 0, below1 = 0;  // counts with score < current threshold
  for (size_t i = 0; i < sorted.size();) {
    pts.push_back({static_cast<double>(n0 - below0) / n0, static_cast<double>(below1) / n1});
    const double v = sorted[i].similarity;
    while (i < sorted.size() && sorted[i].similarity == v) {
      (sorted[i].label == 0 ? below0 : below1) += 1;
      ++i;
    }
  }
  pts.push_back({0.0, 1.0});
  return pts;
}

// Equal-rate value on the segment a -> b when far - frr changes sign
// (inclusive) along it; false otherwise.
bool crossing(const RatePoint& a, const RatePoint& b, double& out) {
  const double da = a.far - a.frr;
  const double db = b.far - b.frr;
  if (da == 0.0) {
    out = a.far;
    return true;
  }
  if (db == 0.0) {
    out = b.far;
    return true;
  }
  if ((da < 0.0) == (db < 0.0)) return false;
  const double t = da / (da - db);
  out = a.far + t * (b.far - a.far);
  return true;
}

double cross(const RatePoint& o, const RatePoint& a, const RatePoint& b) {
  return (a.far - o.far) * (b.frr - o.frr) - (a.frr - o.frr) * (b.far - o.far);
}

void write_double(std::ostream& os, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}

}  // namespace

size_t levenshtein(std::span<const std::string> hyp, std::span<const std::string> ref) { return edit_distance(hyp, ref); }

size_t levenshtein(std::string_view hyp, std::string_view ref) { return edit_distance(hyp, ref); }

double cer(std::string_view hyp, std::string_view ref) {
  if (ref.empty()) return hyp.empty() ? 0.0 : 1.0;
  return static_cast<double>(levenshtein(hyp, ref)) / static_cast<double>(ref.size());
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  size_t i = 0;
  while (i < text.size()) {
    const size_t j = std::min(text.find(' ', i), text.size());
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j + 1;
  }
  return words;
}

double wer(std::string_view hyp, std::string_view ref) {
  const auto h = split_words(hyp);
  const auto r = split_words(ref);
  if (r.empty()) return h.empty() ? 0.0 : 1.0;
  return static_cast<double>(levenshtein(h, r)) / static_cast<double>(r.size());
}

double eer(std::span<const ScoredPair> scores) {
  std::vector<RatePoint> pts = operating_points(scores);
  // Lower convex hull in (far, frr), walked from far = 0 to far = 1.
  std::reverse(pts.begin(), pts.end());
  std::vector<RatePoint> hull;
  for (const RatePoint& p : pts) {
    while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), p) <= 0.0) hull.pop_back();
    hull.push_back(p);
  }
  double value = 0.5;
  for (size_t i = 0; i + 1 < hull.size(); ++i)
    if (crossing(hull[i], hull[i + 1], value)) return value;
  return value;
}

double stuck_rate(std::span<const int> l0) {
  if (l0.empty()) throw std::invalid_argument("stuck_rate: empty stream");
  if (l0.size() == 1) return 0.0;
  size_t longest = 1, run = 1;
  for (size_t i = 1; i < l0.size(); ++i) {
    run = l0[i] == l0[i - 1] ? run + 1 : 1;
    longest = std::max(longest, run);
  }
  return static_cast<double>(longest - 1) / static_cast<double>(l0.size() - 1);
}

double stuck_rate(const CodebookStream& stream) { return stuck_rate(stream.l0); }

std::vector<GroupRow> grouped_report(std::span<const EvalRecord> records) {
  std::map<std::string, GroupRow> groups;
  for (const EvalRecord& r : records) {
    GroupRow& g = groups[r.style];
    g.style = r.style;
    ++g.n;
    g.wer_mean += r.wer;
    g.cer_mean += r.cer;
    g.spk_mean += r.speaker_score;
    g.stuck_mean += r.stuck_rate;
  }
  std::vector<GroupRow> rows;
  for (auto& [style, g] : groups) {
    g.wer_mean /= g.n;
    g.cer_mean /= g.n;
    g.spk_mean /= g.n;
    g.stuck_mean /= g.n;
    rows.push_back(g);
  }
  return rows;
}

void write_records_csv(const std::filesystem::path& path, std::span<const EvalRecord> records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "id,style,mode,cer,wer,speaker_score,stuck_rate,frames,used_top_p\n";
  for (const EvalRecord& r : records) {
    os << r.id << ',' << r.style << ',' << r.mode << ',';
    write_double(os, r.cer);
    os << ',';
    write_double(os, r.wer);
    os << ',';
    write_double(os, r.speaker_score);
    os << ',';
    write_double(os, r.stuck_rate);
    os << ',' << r.frames << ',';
    write_double(os, r.used_top_p);
    os << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

void write_report_csv(const std::filesystem::path& path, std::span<const GroupRow> rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "style,n,wer_mean,cer_mean,spk_mean,stuck_mean\n";
  for (const GroupRow& g : rows) {
    os << g.style << ',' << g.n << ',';
    write_double(os, g.wer_mean);
    os << ',';
    write_double(os, g.cer_mean);
    os << ',';
    write_double(os, g.spk_mean);
    os << ',';
    write_double(os, g.stuck_mean);
    os << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace patchtts
