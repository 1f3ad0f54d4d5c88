#include <CLI11.hpp>

#include <iostream>

#include "patchtts/pipeline.hpp"

using namespace patchtts;

namespace {

std::string json_escape(const std::string& s) { return nlohmann::json(s).dump(); }

// One line on stderr: {"error":"<code>","message":"..."}.
int report(const std::string& code, const std::string& message) {
  std::string flat = message;
  for (char& c : flat)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "{\"error\":" << json_escape(code) << ",\"message\":" << json_escape(flat) << "}\n";
  return code == "check" ? 1 : 2;
}

struct Common {
  std::string config;
  std::string out;
  bool force = false;
  ConfigOverrides flags;
  std::string preset;
  uint64_t seed = 0;
  int steps = 0;
  std::string mode;
  double top_p = 0.0;
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  cmd->add_option("--config", c.config, "JSON config file (flags override it)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Run seed");
  cmd->add_option("--preset", c.preset, "Model preset")->check(CLI::IsMember({"desk", "paper"}));
  if (with_out) {
    cmd->add_option("--out", c.out, "Output directory")->required();
    cmd->add_flag("--force", c.force, "Overwrite existing outputs");
  }
}

RunConfig resolve(CLI::App* cmd, Common& c, const std::string& steps_target = "train") {
  if (cmd->count("--preset")) c.flags.preset = c.preset;
  if (cmd->count("--seed")) c.flags.seed = c.seed;
  if (cmd->get_option_no_throw("--steps") && cmd->count("--steps")) c.flags.steps = c.steps;
  if (cmd->get_option_no_throw("--mode") && cmd->count("--mode")) c.flags.mode = c.mode;
  if (cmd->get_option_no_throw("--top-p") && cmd->count("--top-p")) c.flags.top_p = c.top_p;
  std::optional<std::filesystem::path> file;
  if (!c.config.empty()) file = c.config;
  return resolve_config(file, c.flags, steps_target);
}

void print_manifest(const RunManifest& m) { std::cout << nlohmann::json(m).dump() << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical-codec TTS toolkit on a synthetic toy codec"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  Common gen_c;
  auto* gen = app.add_subcommand("gen-data", "Generate the toy corpus");
  add_common(gen, gen_c);
  int n_speakers = 0, n_utts = 0, n_heldout = 0;
  gen->add_option("--n-speakers", n_speakers, "Number of speakers");
  gen->add_option("--n-utts", n_utts, "Training utterances");
  gen->add_option("--n-heldout", n_heldout, "Held-out utterances");

  Common train_c;
  std::string train_data;
  bool verbose = false;
  auto* train_cmd = app.add_subcommand("train", "Pretrain on a generated corpus");
  add_common(train_cmd, train_c);
  train_cmd->add_option("--data", train_data, "Dataset directory")->required();
  train_cmd->add_option("--steps", train_c.steps, "Training steps");
  train_cmd->add_flag("--no-flux", train_c.flags.no_flux, "Disable the flux loss");
  train_cmd->add_flag("--verbose", verbose, "Print progress to stderr");

  Common ft_c;
  std::string ft_data, ft_ckpt;
  auto* ft = app.add_subcommand("finetune", "Build RIO pairs and fine-tune with ORPO");
  add_common(ft, ft_c);
  ft->add_option("--data", ft_data, "Dataset directory")->required();
  ft->add_option("--ckpt", ft_ckpt, "Pretrained checkpoint")->required();
  ft->add_option("--steps", ft_c.steps, "Fine-tuning steps");
  ft->add_flag("--no-flux", ft_c.flags.no_flux, "Disable the flux loss");
  ft->add_flag("--no-ras", ft_c.flags.no_ras, "Disable repetition-aware sampling while building pairs");
  ft->add_flag("--verbose", verbose, "Print progress to stderr");

  Common syn_c;
  SynthOptions syn_o;
  std::string syn_ckpt, syn_data, syn_text, syn_style = "regular", syn_ref;
  auto* syn = app.add_subcommand("synth", "Synthesize token streams");
  add_common(syn, syn_c);
  syn->add_option("--ckpt", syn_ckpt, "Checkpoint")->required();
  syn->add_option("--data", syn_data, "Dataset directory to synthesize");
  syn->add_option("--split", syn_o.split, "Dataset split")->check(CLI::IsMember({"train", "heldout"}));
  syn->add_option("--limit", syn_o.limit, "Synthesize at most this many utterances");
  syn->add_option("--text", syn_text, "Single text to synthesize");
  syn->add_option("--speaker", syn_o.speaker, "Speaker id for --text");
  syn->add_option("--style", syn_style, "Speaker style for --text")
      ->check(CLI::IsMember({"regular", "loud", "whisper", "fast", "sad"}));
  syn->add_option("--mode", syn_c.mode, "Clone mode")->check(CLI::IsMember({"shallow", "deep"}));
  syn->add_option("--ref-transcript", syn_ref, "Reference transcript for deep clone");
  syn->add_option("--top-p", syn_c.top_p, "Initial top-p")->check(CLI::Range(1e-9, 1.0));
  syn->add_flag("--no-ras", syn_c.flags.no_ras, "Disable repetition-aware sampling");
  syn->add_flag("--no-quality-prefix", syn_c.flags.no_quality_prefix, "Omit the [48000] tag");

  Common ev_c;
  EvalOptions ev_o;
  std::string ev_data, ev_streams;
  auto* ev = app.add_subcommand("eval", "Score synthesized streams");
  add_common(ev, ev_c);
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--streams", ev_streams, "streams.jsonl or the synth output directory")->required();

  Common gc_c;
  int probes = 50;
  double eps = 1e-5;
  double threshold = 1e-3;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full model losses");
  add_common(gc, gc_c, false);
  gc->add_option("--probes", probes, "Probed coordinates per loss");
  gc->add_option("--eps", eps, "Finite-difference step");
  gc->add_option("--threshold", threshold, "Pass when max relative error is below this");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what());
  }

  try {
    if (*gen) {
      if (gen->count("--n-speakers")) gen_c.flags.n_speakers = n_speakers;
      if (gen->count("--n-utts")) gen_c.flags.n_utts = n_utts;
      if (gen->count("--n-heldout")) gen_c.flags.n_heldout = n_heldout;
      print_manifest(cmd_gen_data(resolve(gen, gen_c), {gen_c.out, gen_c.force}));
    } else if (*train_cmd) {
      TrainOptions o{train_data, train_c.out, train_c.force, !verbose};
      print_manifest(cmd_train(resolve(train_cmd, train_c), o));
    } else if (*ft) {
      FinetuneOptions o{ft_data, ft_ckpt, ft_c.out, ft_c.force, !verbose};
      print_manifest(cmd_finetune(resolve(ft, ft_c, "finetune"), o));
    } else if (*syn) {
      syn_o.ckpt = syn_ckpt;
      syn_o.out = syn_c.out;
      syn_o.force = syn_c.force;
      if (syn->count("--data")) syn_o.data = syn_data;
      if (syn->count("--text")) syn_o.text = syn_text;
      if (syn->count("--ref-transcript")) syn_o.ref_transcript = syn_ref;
      syn_o.style = parse_style(syn_style);
      print_manifest(cmd_synth(resolve(syn, syn_c), syn_o));
    } else if (*ev) {
      ev_o.data = ev_data;
      ev_o.streams = ev_streams;
      ev_o.out = ev_c.out;
      ev_o.force = ev_c.force;
      print_manifest(cmd_eval(resolve(ev, ev_c), ev_o));
    } else if (*gc) {
      const GradcheckReport r = run_gradcheck(resolve(gc, gc_c), probes, eps);
      const bool pass = r.max() < threshold;
      std::cout << nlohmann::json{{"forward_loss", r.forward_loss},
                                  {"orpo_loss", r.orpo_loss},
                                  {"max_rel_error", r.max()},
                                  {"probes", r.probes},
                                  {"eps", r.eps},
                                  {"threshold", threshold},
                                  {"pass", pass}}
                       .dump()
                << '\n';
      if (!pass) return report("check", "max relative error " + std::to_string(r.max()) + " >= threshold");
    }
  } catch (const CommandError& e) {
    return report(e.code(), e.what());
  } catch (const std::exception& e) {
    return report("internal", e.what());
  }
  return 0;
}
