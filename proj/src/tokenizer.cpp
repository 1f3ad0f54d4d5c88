#include "patchtts/tokenizer.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace patchtts {

namespace {

std::vector<std::string_view> split_units(std::string_view text) {
  std::vector<std::string_view> units;
  size_t i = 0;
  while (i < text.size()) {
    if (text[i] == ' ') {
      units.push_back(text.substr(i, 1));
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    units.push_back(text.substr(i, j - i));
    i = j;
  }
  return units;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case ' ': out += "\\s"; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out.push_back(s[i]);
      continue;
    }
    const char n = s[++i];
    out.push_back(n == 's' ? ' ' : n == 'n' ? '\n' : n == 't' ? '\t' : n);
  }
  return out;
}

}  // namespace

int fidelity_tag(Fidelity f) { return f == Fidelity::kHigh ? kTag48k : kTag16k; }

BpeTokenizer::BpeTokenizer() {
  for (auto name : kSpecialNames) symbols_.emplace_back(name);
  char_id_.fill(-1);
  for (char c : kAlphabet) add_base(c);
  rebuild_index();
}

void BpeTokenizer::add_base(char c) {
  const auto uc = static_cast<unsigned char>(c);
  if (char_id_[uc] >= 0) return;
  if (!merges_.empty()) throw std::logic_error("base symbols must precede merges");
  char_id_[uc] = static_cast<int>(symbols_.size());
  symbols_.emplace_back(1, c);
  base_end_ = static_cast<int>(symbols_.size());
}

void BpeTokenizer::rebuild_index() {
  std::map<std::string, int> id_of;
  for (size_t i = kNumSpecials; i < symbols_.size(); ++i) id_of.emplace(symbols_[i], static_cast<int>(i));
  // Two merges can spell the same string; encoding always uses the first id
  // carrying a given string so later merges see a single canonical symbol.
  merge_lookup_.clear();
  merge_ids_.clear();
  merge_result_.clear();
  for (size_t r = 0; r < merges_.size(); ++r) {
    const int l = id_of.at(merges_[r].first);
    const int rr = id_of.at(merges_[r].second);
    merge_lookup_.push_back({{l, rr}, static_cast<int>(r)});
    merge_ids_.emplace_back(l, rr);
    merge_result_.push_back(id_of.at(merges_[r].first + merges_[r].second));
  }
  std::sort(merge_lookup_.begin(), merge_lookup_.end());
}

BpeTokenizer BpeTokenizer::train(std::span<const std::string> corpus, int vocab_size) {
  if (corpus.empty()) throw std::invalid_argument("train_bpe: corpus is empty");
  BpeTokenizer tok;
  std::set<unsigned char> extra;
  for (const auto& text : corpus)
    for (char c : text)
      if (alphabet_index(c) < 0) extra.insert(static_cast<unsigned char>(c));
  for (unsigned char c : extra) tok.add_base(static_cast<char>(c));
  if (vocab_size < tok.vocab_size())
    throw std::invalid_argument("train_bpe: vocab_size " + std::to_string(vocab_size) +
                                " is smaller than specials + base alphabet (" + std::to_string(tok.vocab_size()) + ")");

  // Word -> frequency, each word held as its current symbol sequence.
  std::map<std::string, int> word_count;
  for (const auto& text : corpus)
    for (auto unit : split_units(text))
      if (unit != " ") ++word_count[std::string(unit)];
  std::vector<std::pair<std::vector<std::string>, int>> words;
  for (const auto& [w, n] : word_count) {
    std::vector<std::string> syms;
    for (char c : w) syms.emplace_back(1, c);
    words.emplace_back(std::move(syms), n);
  }

  while (tok.vocab_size() < vocab_size) {
    std::map<std::pair<std::string, std::string>, long> pair_count;
    for (const auto& [syms, n] : words)
      for (size_t i = 0; i + 1 < syms.size(); ++i) pair_count[{syms[i], syms[i + 1]}] += n;
    // std::map iterates pairs in lexicographic order, so the first maximum
    // is the lexicographically smallest among ties.
    const std::pair<std::string, std::string>* best = nullptr;
    long best_count = 0;
    for (const auto& [pair, n] : pair_count) {
      if (n > best_count) {
        best = &pair;
        best_count = n;
      }
    }
    if (best == nullptr || best_count < 2) break;
    const auto merge = *best;
    const std::string joined = merge.first + merge.second;
    tok.merges_.push_back(merge);
    tok.symbols_.push_back(joined);
    for (auto& [syms, n] : words) {
      std::vector<std::string> out;
      for (size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == merge.first && syms[i + 1] == merge.second) {
          out.push_back(joined);
          ++i;
        } else {
          out.push_back(syms[i]);
        }
      }
      syms = std::move(out);
    }
  }
  tok.rebuild_index();
  return tok;
}

std::vector<int> BpeTokenizer::encode_word(std::string_view word) const {
  std::vector<int> ids;
  ids.reserve(word.size());
  const int fallback = char_id_[static_cast<unsigned char>(' ')];
  for (char c : word) {
    const int id = char_id_[static_cast<unsigned char>(c)];
    ids.push_back(id >= 0 ? id : fallback);
  }
  auto rank_of = [this](int l, int r) {
    auto it = std::lower_bound(merge_lookup_.begin(), merge_lookup_.end(), std::make_pair(std::make_pair(l, r), -1));
    return (it != merge_lookup_.end() && it->first == std::make_pair(l, r)) ? it->second : -1;
  };
  while (ids.size() > 1) {
    int best_rank = -1;
    for (size_t i = 0; i + 1 < ids.size(); ++i) {
      const int r = rank_of(ids[i], ids[i + 1]);
      if (r >= 0 && (best_rank < 0 || r < best_rank)) best_rank = r;
    }
    if (best_rank < 0) break;
    const auto [l, r] = merge_ids_[static_cast<size_t>(best_rank)];
    const int merged = merge_result_[static_cast<size_t>(best_rank)];
    std::vector<int> out;
    out.reserve(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
      if (i + 1 < ids.size() && ids[i] == l && ids[i + 1] == r) {
        out.push_back(merged);
        ++i;
      } else {
        out.push_back(ids[i]);
      }
    }
    ids = std::move(out);
  }
  return ids;
}

std::vector<int> BpeTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (auto unit : split_units(text)) {
    auto part = encode_word(unit);
    ids.insert(ids.end(), part.begin(), part.end());
  }
  return ids;
}

std::vector<int> BpeTokenizer::encode_text(std::string_view text, std::optional<Fidelity> tag) const {
  std::vector<int> ids;
  if (tag) ids.push_back(fidelity_tag(*tag));
  auto body = encode(text);
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

std::string BpeTokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) throw std::out_of_range("decode: token id " + std::to_string(id));
    if (id < kNumSpecials) continue;
    out += symbols_[static_cast<size_t>(id)];
  }
  return out;
}

std::string BpeTokenizer::serialize() const {
  std::ostringstream os;
  os << "patchtts-bpe 1\n";
  for (auto name : kSpecialNames) os << "special " << name << "\n";
  for (int i = kNumSpecials; i < base_end_; ++i) os << "base " << escape(symbols_[static_cast<size_t>(i)]) << "\n";
  for (const auto& [l, r] : merges_) os << "merge " << escape(l) << " " << escape(r) << "\n";
  return os.str();
}

BpeTokenizer BpeTokenizer::deserialize(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  if (!std::getline(is, line) || line != "patchtts-bpe 1") throw std::invalid_argument("bad tokenizer header");
  BpeTokenizer tok;
  int specials_seen = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind, a, b;
    ls >> kind >> a;
    if (kind == "special") {
      if (specials_seen >= kNumSpecials || a != kSpecialNames[static_cast<size_t>(specials_seen)])
        throw std::invalid_argument("tokenizer specials out of order: " + a);
      ++specials_seen;
    } else if (kind == "base") {
      const std::string sym = unescape(a);
      if (sym.size() != 1) throw std::invalid_argument("base symbol must be one character");
      tok.add_base(sym[0]);
    } else if (kind == "merge") {
      ls >> b;
      std::string l = unescape(a), r = unescape(b);
      tok.merges_.emplace_back(l, r);
      tok.symbols_.push_back(l + r);
    } else {
      throw std::invalid_argument("unknown tokenizer line: " + line);
    }
  }
  if (specials_seen != kNumSpecials) throw std::invalid_argument("tokenizer missing specials");
  tok.rebuild_index();
  return tok;
}

}  // namespace patchtts
