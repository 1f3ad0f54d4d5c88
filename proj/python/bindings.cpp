#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "patchtts/checkpoint.hpp"
#include "patchtts/losses.hpp"
#include "patchtts/pipeline.hpp"

namespace py = pybind11;
using namespace patchtts;

namespace {

// JSON crosses the boundary as text; the Python package parses it.
std::string dump(const nlohmann::json& j) { return j.dump(); }

RunConfig config_from(const std::string& json_text) {
  if (json_text.empty()) return RunConfig::defaults("desk");
  return nlohmann::json::parse(json_text).get<RunConfig>();
}

py::dict stream_dict(const CodebookStream& s) {
  py::dict d;
  d["l0"] = s.l0;
  d["l1"] = s.l1;
  d["l2"] = s.l2;
  return d;
}

CodebookStream stream_from(const py::dict& d) {
  CodebookStream s;
  s.l0 = d["l0"].cast<std::vector<int>>();
  s.l1 = d["l1"].cast<std::vector<int>>();
  s.l2 = d["l2"].cast<std::vector<int>>();
  return s;
}

class Synthesizer {
 public:
  Synthesizer(const std::filesystem::path& ckpt, const std::string& sample_json)
      : ck_(load_checkpoint(ckpt)), codec_(ck_.meta.at("codec_seed").get<uint64_t>(), ck_.model.config().codec()) {
    if (!sample_json.empty()) sample_ = nlohmann::json::parse(sample_json).get<SampleConfig>();
    sample_.max_frames = std::min(sample_.max_frames, ck_.model.config().max_frames);
  }

  py::dict synthesize(const std::string& text, int speaker, const std::string& style, const std::string& mode,
                      const std::optional<std::string>& ref_transcript, uint64_t seed) {
    const Style st = parse_style(style);
    SynthRequest req{text, codec_.speaker_embed(speaker, st), parse_clone_mode(mode), {}};
    if (req.mode == CloneMode::kDeep) {
      if (!ref_transcript) throw std::invalid_argument("deep clone needs ref_transcript");
      req.prefix = make_deep_prefix(codec_, speaker, st, *ref_transcript);
    }
    SampleConfig cfg = sample_;
    cfg.seed = seed;
    ModelFrameSource src(ck_.model);
    const SynthResult r = synthesize_with_backoff(src, ck_.tokenizer, req, cfg);
    const CodebookStream stream = unflatten(r.patches, codec_.config());
    py::dict out = stream_dict(stream);
    out["used_top_p"] = r.used_top_p;
    out["truncated"] = r.truncated;
    out["transcript"] = codec_.transcribe(stream, codec_.speaker(speaker));
    out["speaker_score"] = codec_.speaker_score(stream, codec_.speaker(speaker));
    return out;
  }

  std::string config_json() const { return dump(ck_.model.config()); }

 private:
  LoadedCheckpoint ck_;
  ToyCodec codec_;
  SampleConfig sample_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Toy-codec hierarchical TTS core";
  m.attr("__version__") = version_string();

  py::register_exception<CommandError>(m, "CommandError", PyExc_RuntimeError);

  py::class_<ToyCodec>(m, "ToyCodec")
      .def(py::init([](uint64_t seed) { return ToyCodec(seed); }), py::arg("seed"))
      .def_property_readonly("seed", &ToyCodec::seed)
      .def(
          "encode",
          [](const ToyCodec& c, const std::string& text, int speaker, const std::string& style, const std::string& fid) {
            return stream_dict(c.encode(text, c.speaker(speaker), parse_style(style), parse_fidelity(fid)));
          },
          py::arg("text"), py::arg("speaker"), py::arg("style") = "regular", py::arg("fidelity") = "high")
      .def(
          "transcribe",
          [](const ToyCodec& c, const py::dict& stream, int speaker) {
            return c.transcribe(stream_from(stream), c.speaker(speaker));
          },
          py::arg("stream"), py::arg("speaker"))
      .def(
          "speaker_score",
          [](const ToyCodec& c, const py::dict& stream, int speaker) {
            return c.speaker_score(stream_from(stream), c.speaker(speaker));
          },
          py::arg("stream"), py::arg("speaker"))
      .def(
          "flatten",
          [](const ToyCodec& c, const py::dict& stream) {
            std::vector<std::vector<int>> rows;
            for (const Patch& p : flatten(stream_from(stream), c.config()).frames) rows.emplace_back(p.begin(), p.end());
            return rows;
          },
          py::arg("stream"))
      .def(
          "unflatten",
          [](const ToyCodec& c, const std::vector<std::array<int, kPatchSize>>& rows) {
            PatchSequence p;
            p.frames.assign(rows.begin(), rows.end());
            return stream_dict(unflatten(p, c.config()));
          },
          py::arg("patches"));

  py::class_<BpeTokenizer>(m, "BpeTokenizer")
      .def_static(
          "train", [](const std::vector<std::string>& corpus, int vocab) { return BpeTokenizer::train(corpus, vocab); },
          py::arg("corpus"), py::arg("vocab_size"))
      .def("encode", &BpeTokenizer::encode, py::arg("text"))
      .def(
          "encode_text",
          [](const BpeTokenizer& t, const std::string& text, const std::optional<std::string>& tag) {
            return t.encode_text(text, tag ? std::optional<Fidelity>(parse_fidelity(*tag)) : std::nullopt);
          },
          py::arg("text"), py::arg("tag") = std::nullopt)
      .def("decode", [](const BpeTokenizer& t, const std::vector<int>& ids) { return t.decode(ids); }, py::arg("ids"))
      .def_property_readonly("vocab_size", &BpeTokenizer::vocab_size)
      .def("serialize", &BpeTokenizer::serialize)
      .def_static("deserialize", [](const std::string& s) { return BpeTokenizer::deserialize(s); });

  m.def("cer", [](const std::string& h, const std::string& r) { return cer(h, r); }, py::arg("hyp"), py::arg("ref"));
  m.def("wer", [](const std::string& h, const std::string& r) { return wer(h, r); }, py::arg("hyp"), py::arg("ref"));
  m.def(
      "eer",
      [](const std::vector<double>& scores, const std::vector<int>& labels) {
        if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
        std::vector<ScoredPair> pairs;
        for (size_t i = 0; i < scores.size(); ++i) pairs.push_back({scores[i], labels[i]});
        return eer(pairs);
      },
      py::arg("scores"), py::arg("labels"));
  m.def("stuck_rate", [](const std::vector<int>& l0) { return stuck_rate(l0); }, py::arg("l0"));
  m.def(
      "nucleus_distribution",
      [](const std::vector<double>& logits, double top_p, double temperature) {
        return nucleus_distribution(logits, top_p, temperature);
      },
      py::arg("logits"), py::arg("top_p"), py::arg("temperature") = 1.0);
  m.def(
      "nucleus_sample",
      [](const std::vector<double>& logits, double top_p, uint64_t seed, int n) {
        Rng rng(seed);
        std::vector<int> out;
        for (int i = 0; i < n; ++i) out.push_back(nucleus_sample(logits, top_p, rng));
        return out;
      },
      py::arg("logits"), py::arg("top_p"), py::arg("seed"), py::arg("n") = 1);
  m.def(
      "flux_loss",
      [](const std::vector<std::vector<double>>& logits, const std::vector<int>& targets, double beta, double eps) {
        if (logits.empty()) throw std::invalid_argument("logits are empty");
        Tensor t = Tensor::matrix(static_cast<int>(logits.size()), static_cast<int>(logits[0].size()));
        for (size_t r = 0; r < logits.size(); ++r) {
          if (logits[r].size() != logits[0].size()) throw std::invalid_argument("ragged logits");
          std::copy(logits[r].begin(), logits[r].end(), t.row(static_cast<int>(r)).begin());
        }
        return flux_loss(t, targets, beta, eps);
      },
      py::arg("logits"), py::arg("targets"), py::arg("beta") = 0.01, py::arg("eps") = 1e-3);

  m.def("default_config", [](const std::string& preset) { return dump(RunConfig::defaults(preset)); },
        py::arg("preset") = "desk");
  m.def(
      "resolve_config",
      [](const std::optional<std::filesystem::path>& file, const std::optional<uint64_t>& seed,
         const std::optional<int>& steps, const std::optional<std::string>& preset) {
        ConfigOverrides o;
        o.seed = seed;
        o.steps = steps;
        o.preset = preset;
        return dump(resolve_config(file, o));
      },
      py::arg("config_file") = std::nullopt, py::arg("seed") = std::nullopt, py::arg("steps") = std::nullopt,
      py::arg("preset") = std::nullopt);

  m.def(
      "gen_data",
      [](const std::string& cfg, const std::filesystem::path& out, bool force) {
        return dump(cmd_gen_data(config_from(cfg), {out, force}));
      },
      py::arg("config"), py::arg("out"), py::arg("force") = false);
  m.def(
      "train",
      [](const std::string& cfg, const std::filesystem::path& data, const std::filesystem::path& out, bool force) {
        py::gil_scoped_release release;
        return dump(cmd_train(config_from(cfg), {data, out, force, true}));
      },
      py::arg("config"), py::arg("data"), py::arg("out"), py::arg("force") = false);
  m.def(
      "finetune",
      [](const std::string& cfg, const std::filesystem::path& data, const std::filesystem::path& ckpt,
         const std::filesystem::path& out, bool force) {
        py::gil_scoped_release release;
        return dump(cmd_finetune(config_from(cfg), {data, ckpt, out, force, true}));
      },
      py::arg("config"), py::arg("data"), py::arg("ckpt"), py::arg("out"), py::arg("force") = false);
  m.def(
      "synth",
      [](const std::string& cfg, const std::filesystem::path& ckpt, const std::filesystem::path& data,
         const std::filesystem::path& out, const std::string& split, int limit, bool force) {
        SynthOptions o;
        o.ckpt = ckpt;
        o.data = data;
        o.out = out;
        o.split = split;
        o.limit = limit;
        o.force = force;
        py::gil_scoped_release release;
        return dump(cmd_synth(config_from(cfg), o));
      },
      py::arg("config"), py::arg("ckpt"), py::arg("data"), py::arg("out"), py::arg("split") = "heldout",
      py::arg("limit") = 0, py::arg("force") = false);
  m.def(
      "evaluate",
      [](const std::string& cfg, const std::filesystem::path& data, const std::filesystem::path& streams,
         const std::filesystem::path& out, bool force) {
        return dump(cmd_eval(config_from(cfg), {data, streams, out, force}));
      },
      py::arg("config"), py::arg("data"), py::arg("streams"), py::arg("out"), py::arg("force") = false);
  m.def(
      "gradcheck",
      [](const std::string& cfg, int probes, double eps) {
        py::gil_scoped_release release;
        const GradcheckReport r = run_gradcheck(config_from(cfg), probes, eps);
        return std::make_pair(r.forward_loss, r.orpo_loss);
      },
      py::arg("config") = "", py::arg("probes") = 50, py::arg("eps") = 1e-5);

  py::class_<Synthesizer>(m, "Synthesizer")
      .def(py::init<const std::filesystem::path&, const std::string&>(), py::arg("ckpt"), py::arg("sample_config") = "")
      .def("synthesize", &Synthesizer::synthesize, py::arg("text"), py::arg("speaker"), py::arg("style") = "regular",
           py::arg("mode") = "shallow", py::arg("ref_transcript") = std::nullopt, py::arg("seed") = 0)
      .def("model_config", &Synthesizer::config_json);
}
