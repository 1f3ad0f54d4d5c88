#include "patchtts/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "patchtts/checkpoint.hpp"
#include "patchtts/gradcheck.hpp"

#ifndef PATCHTTS_VERSION
#define PATCHTTS_VERSION "unknown"
#endif

namespace patchtts {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestFile = "manifest.json";

// Reports keys of `given` that `known` lacks, recursing into objects.
void check_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& where) {
  if (!given.is_object()) throw CommandError("config", where + " must be a JSON object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!known.contains(key)) throw CommandError("config", "unknown config key '" + path + "'");
    if (known.at(key).is_object()) check_keys(value, known.at(key), path);
  }
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CommandError("io", "cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw CommandError("input", "malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CommandError("io", "cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw CommandError("io", "write failed: " + path.string());
}

// Creates `out` and refuses to clobber any of `files` without force.
void prepare_output(const fs::path& out, const std::vector<std::string>& files, bool force) {
  if (out.empty()) throw CommandError("usage", "--out is required");
  std::error_code ec;
  if (fs::exists(out) && !fs::is_directory(out)) throw CommandError("io", out.string() + " exists and is not a directory");
  if (!force) {
    std::vector<std::string> all = files;
    all.emplace_back(kManifestFile);
    for (const auto& f : all)
      if (fs::exists(out / f))
        throw CommandError("exists", (out / f).string() + " already exists (use --force to overwrite)");
  }
  fs::create_directories(out, ec);
  if (ec) throw CommandError("io", "cannot create " + out.string() + ": " + ec.message());
}

RunManifest make_manifest(const std::string& command, const RunConfig& cfg) {
  RunManifest m;
  m.command = command;
  m.version = version_string();
  m.seed = cfg.seed;
  m.config = cfg;
  return m;
}

void finish(const fs::path& out, RunManifest& m, std::vector<std::string> outputs) {
  m.outputs = std::move(outputs);
  write_json_file(out / kManifestFile, m);
}

// Library exceptions carry the type of failure; map them onto error codes.
template <typename Fn>
auto guarded(const std::string& what, Fn fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const CommandError&) {
    throw;
  } catch (const NumericError& e) {
    throw CommandError("numeric", what + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CommandError("input", what + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw CommandError("io", what + ": " + e.what());
  }
}

struct Dataset {
  uint64_t codec_seed = 0;
  std::vector<Utterance> train;
  std::vector<Utterance> heldout;
};

Dataset load_dataset(const fs::path& dir, bool need_heldout) {
  if (dir.empty()) throw CommandError("usage", "--data is required");
  Dataset d;
  guarded("dataset", [&] {
    d.train = read_manifest(dir / "train.jsonl", &d.codec_seed);
    if (fs::exists(dir / "heldout.jsonl")) {
      uint64_t seed = 0;
      d.heldout = read_manifest(dir / "heldout.jsonl", &seed);
      if (!d.heldout.empty() && seed != d.codec_seed)
        throw std::invalid_argument("heldout.jsonl was rendered with a different codec seed");
    }
    return 0;
  });
  if (d.train.empty()) throw CommandError("input", "dataset has no training utterances");
  if (need_heldout && d.heldout.empty()) throw CommandError("input", "dataset has no held-out utterances");
  return d;
}

LoadedCheckpoint load_ckpt(const fs::path& path) {
  if (path.empty()) throw CommandError("usage", "--ckpt is required");
  if (!fs::exists(path)) throw CommandError("io", "checkpoint not found: " + path.string());
  return guarded("checkpoint", [&] { return load_checkpoint(path); });
}

uint64_t ckpt_codec_seed(const LoadedCheckpoint& ck) {
  if (!ck.meta.contains("codec_seed")) throw CommandError("input", "checkpoint has no codec_seed");
  return ck.meta.at("codec_seed").get<uint64_t>();
}

int speaker_count(const std::vector<Utterance>& utts) {
  int n = 0;
  for (const auto& u : utts) n = std::max(n, u.speaker + 1);
  return n;
}

std::vector<std::string> csv_outputs(std::initializer_list<const char*> names) {
  return std::vector<std::string>(names.begin(), names.end());
}

}  // namespace

std::string version_string() { return PATCHTTS_VERSION; }

RunConfig RunConfig::defaults(const std::string& preset) {
  RunConfig c;
  c.preset = preset;
  c.model = ModelConfig::preset_named(preset);
  if (preset == "paper") {
    c.train.steps = 2000000;
    c.train.warmup_steps = 10000;
    c.train.batch_size = 96;
    c.tokenizer_vocab = 512;
  } else {
    c.train.lr_start = 1e-3;
  }
  c.train.flux_beta = c.model.flux_beta_pretrain;
  c.train.flux_eps = c.model.flux_eps;
  c.finetune = FinetuneConfig::defaults(c.model);
  c.sample.max_frames = c.model.max_frames;
  return c;
}

void RunConfig::validate() const {
  auto wrap = [](const char* part, auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      throw CommandError("config", std::string(part) + ": " + e.what());
    }
  };
  if (schema_version != kConfigSchemaVersion)
    throw CommandError("config", "unsupported schema_version " + std::to_string(schema_version));
  if (preset != "desk" && preset != "paper") throw CommandError("config", "preset must be desk or paper");
  wrap("data", [&] { data.validate(); });
  wrap("model", [&] { model.validate(); });
  wrap("train", [&] { train.validate(); });
  wrap("finetune", [&] { finetune.validate(); });
  wrap("pairs", [&] { pairs.validate(); });
  wrap("sample", [&] { sample.validate(); });
  wrap("mode", [&] { parse_clone_mode(mode); });
  if (tokenizer_vocab < kNumSpecials + static_cast<int>(kAlphabet.size()) || tokenizer_vocab > model.text_vocab)
    throw CommandError("config", "tokenizer_vocab must be in [" +
                                     std::to_string(kNumSpecials + static_cast<int>(kAlphabet.size())) + ", model.text_vocab]");
  if (pair_utterances < 1) throw CommandError("config", "pair_utterances must be >= 1");
  if (sample.max_frames > model.max_frames) throw CommandError("config", "sample.max_frames exceeds model.max_frames");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"schema_version", c.schema_version},
                     {"preset", c.preset},
                     {"seed", c.seed},
                     {"data", c.data},
                     {"tokenizer_vocab", c.tokenizer_vocab},
                     {"model", c.model},
                     {"train", c.train},
                     {"finetune", c.finetune},
                     {"pairs", {{"n_cycles", c.pairs.n_cycles}, {"n_speakers", c.pairs.n_speakers}, {"seed", c.pairs.seed}}},
                     {"pair_utterances", c.pair_utterances},
                     {"sample", c.sample},
                     {"mode", c.mode}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  const std::string preset = j.contains("preset") && j.at("preset").is_string() ? j.at("preset").get<std::string>() : "desk";
  if (preset != "desk" && preset != "paper") throw CommandError("config", "preset must be desk or paper");
  RunConfig d = RunConfig::defaults(preset);
  const nlohmann::json known = d;
  check_keys(j, known, "");
  nlohmann::json merged = known;
  merged.merge_patch(j);
  try {
    merged.at("schema_version").get_to(d.schema_version);
    merged.at("seed").get_to(d.seed);
    merged.at("data").get_to(d.data);
    merged.at("tokenizer_vocab").get_to(d.tokenizer_vocab);
    merged.at("model").get_to(d.model);
    merged.at("train").get_to(d.train);
    merged.at("finetune").get_to(d.finetune);
    const auto& p = merged.at("pairs");
    p.at("n_cycles").get_to(d.pairs.n_cycles);
    p.at("n_speakers").get_to(d.pairs.n_speakers);
    p.at("seed").get_to(d.pairs.seed);
    merged.at("pair_utterances").get_to(d.pair_utterances);
    merged.at("sample").get_to(d.sample);
    merged.at("mode").get_to(d.mode);
  } catch (const nlohmann::json::exception& e) {
    throw CommandError("config", std::string("bad config value: ") + e.what());
  }
  c = d;
}

RunConfig resolve_config(const std::optional<fs::path>& config_file, const ConfigOverrides& flags,
                         const std::string& steps_target) {
  nlohmann::json file = nlohmann::json::object();
  if (config_file) file = read_json_file(*config_file);
  if (!file.is_object()) throw CommandError("config", "config file must hold a JSON object");
  if (flags.preset) {
    // A preset flag replaces the file's preset and the defaults beneath it.
    file["preset"] = *flags.preset;
  }
  RunConfig c;
  from_json(file, c);

  if (flags.seed) c.seed = *flags.seed;
  if (flags.steps) {
    if (steps_target == "finetune") {
      c.finetune.opt.steps = *flags.steps;
    } else {
      c.train.steps = *flags.steps;
      c.train.warmup_steps = std::min(c.train.warmup_steps, std::max(0, *flags.steps - 1));
    }
  }
  if (flags.mode) c.mode = *flags.mode;
  if (flags.top_p) {
    c.sample.top_p = *flags.top_p;
    c.sample.top_p_max = std::max(c.sample.top_p_max, *flags.top_p);
  }
  if (flags.no_ras) c.sample.ras = false;
  if (flags.no_quality_prefix) c.sample.quality_prefix = false;
  if (flags.no_flux) {
    c.train.flux_beta = 0.0;
    c.finetune.opt.flux_beta = 0.0;
  }
  if (flags.n_speakers) c.data.n_speakers = *flags.n_speakers;
  if (flags.n_utts) c.data.n_utts = *flags.n_utts;
  if (flags.n_heldout) c.data.n_heldout = *flags.n_heldout;

  c.data.seed = c.seed;
  c.train.seed = c.seed;
  c.finetune.opt.seed = c.seed;
  c.pairs.seed = c.seed;
  c.sample.seed = c.seed;
  c.validate();
  return c;
}

void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"schema_version", kConfigSchemaVersion},
                     {"command", m.command},
                     {"version", m.version},
                     {"seed", m.seed},
                     {"config", m.config},
                     {"inputs", m.inputs},
                     {"outputs", m.outputs}};
}

void from_json(const nlohmann::json& j, RunManifest& m) {
  j.at("command").get_to(m.command);
  j.at("version").get_to(m.version);
  j.at("seed").get_to(m.seed);
  m.config = j.at("config");
  m.inputs = j.at("inputs");
  j.at("outputs").get_to(m.outputs);
}

RunManifest read_run_manifest(const fs::path& dir) {
  const nlohmann::json j = read_json_file(dir / kManifestFile);
  try {
    return j.get<RunManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw CommandError("input", "malformed manifest in " + dir.string() + ": " + e.what());
  }
}

RunManifest cmd_gen_data(const RunConfig& cfg, const GenDataOptions& opt) {
  const auto outputs = csv_outputs({"train.jsonl", "heldout.jsonl"});
  prepare_output(opt.out, outputs, opt.force);
  const Corpus corpus = guarded("gen-data", [&] { return generate_corpus(cfg.data, cfg.model.codec()); });
  guarded("gen-data", [&] {
    write_manifest(opt.out / "train.jsonl", corpus.train, corpus.codec_seed);
    write_manifest(opt.out / "heldout.jsonl", corpus.heldout, corpus.codec_seed);
    return 0;
  });
  RunManifest m = make_manifest("gen-data", cfg);
  finish(opt.out, m, outputs);
  return m;
}

RunManifest cmd_train(const RunConfig& cfg, const TrainOptions& opt) {
  const auto outputs = csv_outputs({"model.ckpt", "train_log.csv"});
  const Dataset data = load_dataset(opt.data, false);
  prepare_output(opt.out, outputs, opt.force);

  const auto texts = transcripts(data.train);
  const BpeTokenizer tok = guarded("tokenizer", [&] { return BpeTokenizer::train(texts, cfg.tokenizer_vocab); });
  const ToyCodec codec(data.codec_seed, cfg.model.codec());
  std::vector<Example> examples;
  for (const auto& u : data.train) examples.push_back(make_example(u, codec, tok));
  Model model(cfg.model, derive_seed(cfg.seed, "init"));

  const nlohmann::json config_json = cfg;
  TrainHooks hooks;
  hooks.checkpoint = [&](int completed, bool last_good) {
    save_checkpoint(opt.out / "model.ckpt", model, tok,
                    {{"codec_seed", data.codec_seed}, {"completed_steps", completed}, {"last_good", last_good},
                     {"config", config_json}});
  };
  if (!opt.quiet)
    hooks.on_step = [&](const StepLog& s) {
      if (s.step % 100 == 0 || s.step + 1 == cfg.train.steps)
        std::cerr << "step " << s.step << " lr " << s.lr << " ce " << s.ce << " flux " << s.flux << '\n';
    };
  const TrainResult result = guarded("train", [&] { return train(model, examples, cfg.train, hooks); });
  write_log_csv(opt.out / "train_log.csv", result.log);

  RunManifest m = make_manifest("train", cfg);
  m.inputs = {{"data", opt.data.string()}};
  finish(opt.out, m, outputs);
  if (result.aborted)
    throw CommandError("numeric", "training aborted after " + std::to_string(result.completed) +
                                      " updates: " + result.error + " (last good checkpoint kept)");
  return m;
}

RunManifest cmd_finetune(const RunConfig& cfg, const FinetuneOptions& opt) {
  const auto outputs = csv_outputs({"pairs.jsonl", "finetune_log.csv", "model.ckpt"});
  LoadedCheckpoint ck = load_ckpt(opt.ckpt);
  const Dataset data = load_dataset(opt.data, false);
  if (ckpt_codec_seed(ck) != data.codec_seed)
    throw CommandError("input", "checkpoint and dataset use different codec seeds");
  prepare_output(opt.out, outputs, opt.force);

  const ToyCodec codec(data.codec_seed, ck.model.config().codec());
  const size_t n_seeds = std::min(data.train.size(), static_cast<size_t>(cfg.pair_utterances));
  const std::span<const Utterance> seeds(data.train.data(), n_seeds);
  const auto arbitrary = transcripts(data.heldout.empty() ? data.train : data.heldout);
  PairConfig pc = cfg.pairs;
  pc.n_speakers = speaker_count(data.train);
  SampleConfig sample = cfg.sample;
  sample.max_frames = std::min(sample.max_frames, ck.model.config().max_frames);
  PairStats stats;
  const auto pairs = guarded("pairs", [&] {
    return build_pairs(model_cycle_synth(ck.model, ck.tokenizer, sample), codec, ck.tokenizer, seeds, arbitrary, pc,
                       &stats);
  });
  guarded("pairs", [&] {
    write_pairs(opt.out / "pairs.jsonl", pairs);
    return 0;
  });
  if (pairs.empty()) throw CommandError("input", "no preference pairs could be built");

  std::function<void(const FinetuneLog&)> on_step;
  if (!opt.quiet)
    on_step = [&](const FinetuneLog& s) {
      if (s.step % 20 == 0) std::cerr << "step " << s.step << " total " << s.total << " margin " << s.margin << '\n';
    };
  const FinetuneResult result = guarded("finetune", [&] { return finetune(ck.model, pairs, cfg.finetune, on_step); });
  write_finetune_csv(opt.out / "finetune_log.csv", result.log);
  nlohmann::json meta = ck.meta;
  meta["finetune"] = {{"completed_steps", result.completed},
                      {"pairs", pairs.size()},
                      {"dropped", stats.dropped},
                      {"mean_cer_rejected", stats.mean_cer_rejected}};
  meta["config"] = cfg;
  save_checkpoint(opt.out / "model.ckpt", ck.model, ck.tokenizer, meta);

  RunManifest m = make_manifest("finetune", cfg);
  m.inputs = {{"data", opt.data.string()}, {"ckpt", opt.ckpt.string()}};
  finish(opt.out, m, outputs);
  if (result.aborted) throw CommandError("numeric", "fine-tuning aborted: " + result.error);
  return m;
}

RunManifest cmd_synth(const RunConfig& cfg, const SynthOptions& opt) {
  const auto outputs = csv_outputs({"streams.jsonl"});
  const CloneMode mode = guarded("mode", [&] { return parse_clone_mode(cfg.mode); });
  if (mode == CloneMode::kDeep && (!opt.ref_transcript || opt.ref_transcript->empty()))
    throw CommandError("usage", "--mode deep requires --ref-transcript");
  if (opt.data.has_value() == opt.text.has_value()) throw CommandError("usage", "give exactly one of --data or --text");
  LoadedCheckpoint ck = load_ckpt(opt.ckpt);
  const uint64_t codec_seed = ckpt_codec_seed(ck);
  const ToyCodec codec(codec_seed, ck.model.config().codec());

  std::vector<Utterance> jobs;
  if (opt.data) {
    const Dataset data = load_dataset(*opt.data, opt.split == "heldout");
    if (data.codec_seed != codec_seed) throw CommandError("input", "checkpoint and dataset use different codec seeds");
    if (opt.split == "heldout") jobs = data.heldout;
    else if (opt.split == "train") jobs = data.train;
    else throw CommandError("usage", "--split must be train or heldout");
    if (opt.limit > 0 && static_cast<size_t>(opt.limit) < jobs.size()) jobs.resize(static_cast<size_t>(opt.limit));
  } else {
    if (opt.speaker < 0) throw CommandError("usage", "--speaker must be >= 0");
    for (char ch : *opt.text)
      if (alphabet_index(ch) < 0) throw CommandError("usage", "text may only contain a-z and spaces");
    Utterance u;
    u.id = "text-0";
    u.text = *opt.text;
    u.speaker = opt.speaker;
    u.style = opt.style;
    jobs.push_back(u);
  }
  prepare_output(opt.out, outputs, opt.force);

  SampleConfig sample = cfg.sample;
  sample.max_frames = std::min(sample.max_frames, ck.model.config().max_frames);
  const uint64_t sampling_seed = derive_seed(cfg.seed, "sampling");
  ModelFrameSource src(ck.model);
  std::vector<nlohmann::json> rows;
  for (size_t i = 0; i < jobs.size(); ++i) {
    const Utterance& u = jobs[i];
    SynthRequest req;
    req.text = u.text;
    req.speaker = codec.speaker_embed(u.speaker, u.style);
    req.mode = mode;
    if (mode == CloneMode::kDeep) req.prefix = make_deep_prefix(codec, u.speaker, u.style, *opt.ref_transcript);
    SampleConfig sc = sample;
    sc.seed = derive_seed(sampling_seed, static_cast<uint64_t>(i));
    const SynthResult r = guarded("synth " + u.id, [&] { return synthesize_with_backoff(src, ck.tokenizer, req, sc); });
    const CodebookStream stream = unflatten(r.patches, codec.config());
    nlohmann::json row = golden_record(codec_seed, u.speaker, u.style, sample.quality_tag, u.text, stream);
    row["id"] = u.id;
    row["mode"] = std::string(to_string(mode));
    row["quality_prefix"] = sample.quality_prefix;
    row["used_top_p"] = r.used_top_p;
    row["truncated"] = r.truncated;
    row["frames"] = r.patches.size();
    rows.push_back(std::move(row));
  }
  guarded("synth", [&] {
    write_jsonl(opt.out / "streams.jsonl", rows);
    return 0;
  });

  RunManifest m = make_manifest("synth", cfg);
  m.inputs = {{"ckpt", opt.ckpt.string()}};
  if (opt.data) m.inputs["data"] = opt.data->string();
  if (opt.text) m.inputs["text"] = *opt.text;
  if (opt.ref_transcript) m.inputs["ref_transcript"] = *opt.ref_transcript;
  finish(opt.out, m, outputs);
  return m;
}

std::vector<SynthRecord> read_synth_records(const fs::path& path) {
  const auto rows = guarded("streams", [&] { return read_jsonl(path); });
  std::vector<SynthRecord> out;
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& j = rows[i];
    try {
      SynthRecord r;
      r.id = j.at("id").get<std::string>();
      r.speaker = j.at("speaker").get<int>();
      r.style = parse_style(j.at("style").get<std::string>());
      r.text = j.at("text").get<std::string>();
      r.mode = j.at("mode").get<std::string>();
      r.stream = stream_from_json(j);
      r.used_top_p = j.at("used_top_p").get<double>();
      r.truncated = j.at("truncated").get<bool>();
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw CommandError("input", path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

EvalRecord evaluate_stream(const ToyCodec& codec, const SynthRecord& rec) {
  const SpeakerTable spk = codec.speaker(rec.speaker);
  const std::string hyp = codec.transcribe(rec.stream, spk);
  EvalRecord e;
  e.id = rec.id;
  e.style = std::string(to_string(rec.style));
  e.mode = rec.mode;
  e.cer = cer(hyp, rec.text);
  e.wer = wer(hyp, rec.text);
  e.speaker_score = codec.speaker_score(rec.stream, spk);
  e.stuck_rate = rec.stream.l0.empty() ? 0.0 : stuck_rate(rec.stream);
  e.frames = static_cast<int>(rec.stream.frames());
  e.used_top_p = rec.used_top_p;
  return e;
}

double protocol_eer(const ToyCodec& codec, const std::vector<SynthRecord>& generated,
                    const std::vector<Utterance>& ground_truth) {
  std::vector<ScoredPair> scores;
  for (size_t i = 0; i < generated.size(); ++i) {
    const SynthRecord& g = generated[i];
    std::vector<const Utterance*> same;
    for (const auto& u : ground_truth)
      if (u.speaker == g.speaker) same.push_back(&u);
    if (same.empty()) continue;
    const SpeakerTable ref = codec.speaker(g.speaker);
    scores.push_back({codec.speaker_score(g.stream, ref), 0});
    scores.push_back({codec.speaker_score(same[i % same.size()]->stream, ref), 1});
  }
  if (scores.empty()) throw CommandError("input", "no ground-truth utterances share a speaker with the streams");
  return eer(scores);
}

RunManifest cmd_eval(const RunConfig& cfg, const EvalOptions& opt) {
  const auto outputs = csv_outputs({"records.csv", "report.csv", "summary.json"});
  const Dataset data = load_dataset(opt.data, false);
  if (opt.streams.empty()) throw CommandError("usage", "--streams is required");
  const fs::path streams = fs::is_directory(opt.streams) ? opt.streams / "streams.jsonl" : opt.streams;
  if (!fs::exists(streams)) throw CommandError("io", "streams not found: " + streams.string());
  const auto synth = read_synth_records(streams);
  if (synth.empty()) throw CommandError("input", "no synthesized streams in " + streams.string());
  const auto rows = read_jsonl(streams);
  for (const auto& r : rows)
    if (r.at("seed").get<uint64_t>() != data.codec_seed)
      throw CommandError("input", "streams and dataset use different codec seeds");
  prepare_output(opt.out, outputs, opt.force);

  const ToyCodec codec(data.codec_seed, cfg.model.codec());
  std::vector<EvalRecord> records;
  for (const auto& s : synth) records.push_back(evaluate_stream(codec, s));
  const auto report = grouped_report(records);
  write_records_csv(opt.out / "records.csv", records);
  write_report_csv(opt.out / "report.csv", report);

  double cer_sum = 0, wer_sum = 0, spk_sum = 0, stuck_sum = 0;
  int truncated = 0;
  for (size_t i = 0; i < records.size(); ++i) {
    cer_sum += records[i].cer;
    wer_sum += records[i].wer;
    spk_sum += records[i].speaker_score;
    stuck_sum += records[i].stuck_rate;
    truncated += synth[i].truncated ? 1 : 0;
  }
  const double n = static_cast<double>(records.size());
  const nlohmann::json summary{{"n", records.size()},
                               {"cer_mean", cer_sum / n},
                               {"wer_mean", wer_sum / n},
                               {"spk_mean", spk_sum / n},
                               {"stuck_mean", stuck_sum / n},
                               {"truncated", truncated},
                               {"eer", protocol_eer(codec, synth, data.train)}};
  write_json_file(opt.out / "summary.json", summary);

  RunManifest m = make_manifest("eval", cfg);
  m.inputs = {{"data", opt.data.string()}, {"streams", streams.string()}};
  finish(opt.out, m, outputs);
  return m;
}

GradcheckReport run_gradcheck(const RunConfig& cfg, int probes, double eps) {
  if (probes < 1) throw CommandError("usage", "--probes must be >= 1");
  if (!(eps > 0.0)) throw CommandError("usage", "--eps must be positive");
  CorpusConfig cc = cfg.data;
  cc.n_utts = 2;
  cc.n_heldout = 0;
  const Corpus corpus = guarded("gradcheck", [&] { return generate_corpus(cc, cfg.model.codec()); });
  const ToyCodec codec(corpus.codec_seed, cfg.model.codec());
  const auto texts = transcripts(corpus.train);
  const BpeTokenizer tok = BpeTokenizer::train(texts, cfg.tokenizer_vocab);
  std::vector<Example> batch;
  for (const auto& u : corpus.train) batch.push_back(make_example(u, codec, tok));
  Model model(cfg.model, derive_seed(cfg.seed, "init"));

  GradcheckReport rep;
  rep.probes = probes;
  rep.eps = eps;
  const double flux_beta = cfg.train.flux_beta > 0.0 ? cfg.train.flux_beta : cfg.model.flux_beta_pretrain;
  LossFn fwd = [&](ParamStore&, bool with_grad) {
    Graph g(with_grad);
    const LossParts parts = model.forward_loss(g, batch, flux_beta, cfg.model.flux_eps);
    if (with_grad) g.backward(parts.total);
    return parts.total.value().item();
  };
  rep.forward_loss = guarded("gradcheck", [&] {
    return grad_check(fwd, model.params(), probes, eps, derive_seed(cfg.seed, "gradcheck")).max_rel_error;
  });

  // Rejected: the same transcript voiced by another speaker.
  const Utterance& u = corpus.train[0];
  PreferencePair pair;
  pair.id = u.id;
  pair.speaker = batch[0].speaker;
  pair.text_ids = batch[0].text_ids;
  pair.chosen = batch[0].patches;
  const int other = (u.speaker + 1) % std::max(2, cfg.data.n_speakers);
  pair.rejected = flatten(codec.encode(u.text, codec.speaker(other), u.style, u.fidelity), codec.config());
  LossFn orpo = [&](ParamStore&, bool with_grad) {
    Graph g(with_grad);
    const OrpoParts parts = orpo_loss(model, g, pair, cfg.finetune.lambda, cfg.model.flux_beta_orpo, cfg.model.flux_eps);
    if (with_grad) g.backward(parts.total);
    return parts.total.value().item();
  };
  rep.orpo_loss = guarded("gradcheck", [&] {
    return grad_check(orpo, model.params(), probes, eps, derive_seed(cfg.seed, "gradcheck-orpo")).max_rel_error;
  });
  return rep;
}

}  // namespace patchtts
