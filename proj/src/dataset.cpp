#include "patchtts/dataset.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "patchtts/rng.hpp"

namespace patchtts {

namespace {

std::string random_word(Rng& rng, int min_len, int max_len) {
  const int len = min_len + static_cast<int>(rng.below(static_cast<uint64_t>(max_len - min_len + 1)));
  std::string w;
  for (int i = 0; i < len; ++i) w.push_back(static_cast<char>('a' + rng.below(26)));
  return w;
}

std::string random_text(Rng& rng, const CorpusConfig& cfg, const std::vector<std::string>& lexicon) {
  const int n = cfg.min_words + static_cast<int>(rng.below(static_cast<uint64_t>(cfg.max_words - cfg.min_words + 1)));
  std::string text;
  for (int i = 0; i < n; ++i) {
    if (i) text.push_back(' ');
    if (cfg.run_prob > 0.0 && rng.uniform() < cfg.run_prob) {
      const int len = cfg.min_run + static_cast<int>(rng.below(static_cast<uint64_t>(cfg.max_run - cfg.min_run + 1)));
      text.append(static_cast<size_t>(len), static_cast<char>('a' + rng.below(26)));
    } else {
      text += lexicon[rng.below(lexicon.size())];
    }
  }
  return text;
}

}  // namespace

void CorpusConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("corpus config: " + m); };
  if (n_speakers < 1) fail("n_speakers must be >= 1");
  if (n_utts < 1) fail("n_utts must be >= 1");
  if (n_heldout < 0) fail("n_heldout must be >= 0");
  if (lexicon_size < 1) fail("lexicon_size must be >= 1");
  if (min_word_len < 1 || max_word_len < min_word_len) fail("bad word length range");
  if (min_words < 1 || max_words < min_words) fail("bad words-per-utterance range");
  if (run_prob < 0.0 || run_prob > 1.0) fail("run_prob must be in [0, 1]");
  if (min_run < 1 || max_run < min_run) fail("bad run length range");
}

void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = nlohmann::json{{"seed", c.seed},         {"n_speakers", c.n_speakers},     {"n_utts", c.n_utts},
                     {"n_heldout", c.n_heldout}, {"lexicon_size", c.lexicon_size}, {"min_word_len", c.min_word_len},
                     {"max_word_len", c.max_word_len}, {"min_words", c.min_words}, {"max_words", c.max_words},
                     {"run_prob", c.run_prob},   {"min_run", c.min_run},           {"max_run", c.max_run}};
}

void from_json(const nlohmann::json& j, CorpusConfig& c) {
  CorpusConfig d;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("seed", d.seed);
  get("n_speakers", d.n_speakers);
  get("n_utts", d.n_utts);
  get("n_heldout", d.n_heldout);
  get("lexicon_size", d.lexicon_size);
  get("min_word_len", d.min_word_len);
  get("max_word_len", d.max_word_len);
  get("min_words", d.min_words);
  get("max_words", d.max_words);
  get("run_prob", d.run_prob);
  get("min_run", d.min_run);
  get("max_run", d.max_run);
  c = d;
}

Corpus generate_corpus(const CorpusConfig& cfg, const CodecConfig& codec_cfg) {
  cfg.validate();
  const ToyCodec codec(cfg.seed, codec_cfg);
  Rng rng(derive_seed(cfg.seed, "data"));
  Corpus corpus;
  corpus.codec_seed = cfg.seed;

  std::set<std::string> seen_words;
  int attempts = 0;
  while (static_cast<int>(corpus.lexicon.size()) < cfg.lexicon_size) {
    std::string w = random_word(rng, cfg.min_word_len, cfg.max_word_len);
    if (seen_words.insert(w).second) corpus.lexicon.push_back(std::move(w));
    if (++attempts > 100 * cfg.lexicon_size) throw std::invalid_argument("corpus config: lexicon too large for word lengths");
  }

  std::set<std::string> train_texts;
  auto render = [&](int index, const std::string& prefix, std::string text) {
    Utterance u;
    u.id = prefix + std::to_string(index);
    u.text = std::move(text);
    u.speaker = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.n_speakers)));
    u.style = kAllStyles[static_cast<size_t>(index % kNumStyles)];
    u.fidelity = (index / kNumStyles) % 2 == 0 ? Fidelity::kHigh : Fidelity::kLow;
    u.stream = codec.encode(u.text, codec.speaker(u.speaker), u.style, u.fidelity);
    return u;
  };
  for (int i = 0; i < cfg.n_utts; ++i) {
    std::string text = random_text(rng, cfg, corpus.lexicon);
    train_texts.insert(text);
    corpus.train.push_back(render(i, "train-", std::move(text)));
  }
  attempts = 0;
  for (int i = 0; i < cfg.n_heldout;) {
    std::string text = random_text(rng, cfg, corpus.lexicon);
    if (++attempts > 1000 * (cfg.n_heldout + 1)) throw std::invalid_argument("corpus config: cannot find unseen held-out texts");
    if (train_texts.count(text)) continue;
    corpus.heldout.push_back(render(i, "heldout-", std::move(text)));
    ++i;
  }
  return corpus;
}

nlohmann::json utterance_to_json(const Utterance& u, uint64_t codec_seed) {
  nlohmann::json j = golden_record(codec_seed, u.speaker, u.style, u.fidelity, u.text, u.stream);
  j["id"] = u.id;
  return j;
}

Utterance utterance_from_json(const nlohmann::json& j) {
  Utterance u;
  u.id = j.at("id").get<std::string>();
  u.text = j.at("text").get<std::string>();
  u.speaker = j.at("speaker").get<int>();
  u.style = parse_style(j.at("style").get<std::string>());
  u.fidelity = parse_fidelity(j.at("fidelity").get<std::string>());
  u.stream = stream_from_json(j);
  return u;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : rows) os << r.dump() << '\n';
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::vector<nlohmann::json> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_manifest(const std::filesystem::path& path, const std::vector<Utterance>& utts, uint64_t codec_seed) {
  std::vector<nlohmann::json> rows;
  rows.reserve(utts.size());
  for (const auto& u : utts) rows.push_back(utterance_to_json(u, codec_seed));
  write_jsonl(path, rows);
}

std::vector<Utterance> read_manifest(const std::filesystem::path& path, uint64_t* codec_seed) {
  std::vector<Utterance> utts;
  int lineno = 0;
  for (const auto& row : read_jsonl(path)) {
    ++lineno;
    try {
      utts.push_back(utterance_from_json(row));
      if (codec_seed) *codec_seed = row.at("seed").get<uint64_t>();
    } catch (const std::exception& e) {
      throw std::invalid_argument(path.string() + ": record " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return utts;
}

Example make_example(const Utterance& u, const ToyCodec& codec, const BpeTokenizer& tok) {
  Example ex;
  ex.speaker = codec.speaker_embed(u.speaker, u.style);
  ex.text_ids = tok.encode_text(u.text, u.fidelity);
  ex.patches = flatten(u.stream, codec.config());
  return ex;
}

std::vector<std::string> transcripts(const std::vector<Utterance>& utts) {
  std::vector<std::string> out;
  out.reserve(utts.size());
  for (const auto& u : utts) out.push_back(u.text);
  return out;
}

}  // namespace patchtts
