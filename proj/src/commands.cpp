#include "avedit/commands.hpp"

#include "avedit/synth.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <ostream>

namespace avedit {

using nlohmann::json;

namespace {

std::string numbered(const char* prefix, std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03zu", prefix, k);
  return buf;
}

std::string grid_name(double alpha, double beta) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "a%.1f_b%.1f", alpha, beta);
  return buf;
}

json optional_path(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

JointModel base_model(const std::optional<fs::path>& base, const RunConfig& cfg) {
  return base ? load_model(base->string()) : JointModel(cfg.model);
}

TrainingPair pick_pair(const fs::path& data, const std::string& sample, const RunConfig& cfg) {
  const auto records = ingest_dataset(data, cfg.model.stft.sample_rate);
  if (records.empty()) throw DataError("dataset " + data.string() + " is empty");
  return load_pair(sample.empty() ? records.front() : find_sample(records, sample));
}

GenerationOptions generation_options(const RunConfig& cfg) {
  GenerationOptions o;
  o.seed = cfg.sample_seed();
  o.ddim_steps = cfg.sampling.ddim_steps;
  o.griffin_lim_iterations = cfg.sampling.griffin_lim_iterations;
  if (cfg.enhance) o.enhancement = cfg.enhancement;
  o.keep_attention = true;
  return o;
}

std::string token_table(const Generation& g) {
  std::string s = "index\ttoken\tclass\n";
  for (int i = 0; i < g.tokens.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    s += std::to_string(i) + "\t" + g.tokens.words[k] + "\t" + to_string(g.classes.classes[k]) + "\n";
  }
  return s;
}

}  // namespace

void cmd_synth(const fs::path& out, std::uint64_t seed, int count) {
  synth_dataset(out, seed, count);
}

void cmd_pretrain(const fs::path& data, const fs::path& model_path, const RunConfig& cfg,
                  const std::vector<std::string>& exclude) {
  cfg.validate();
  std::vector<TrainingPair> corpus;
  for (const auto& r : ingest_dataset(data, cfg.model.stft.sample_rate)) {
    const auto words = split_words(r.prompt);
    const bool skip = std::any_of(exclude.begin(), exclude.end(), [&](const std::string& w) {
      return std::find(words.begin(), words.end(), w) != words.end();
    });
    if (!skip) corpus.push_back(load_pair(r));
  }
  if (corpus.empty()) throw DataError("pretrain: no samples left after exclusions");
  JointModel model(cfg.model);
  const auto trace = pretrain(model, corpus, cfg.pretrain);
  if (model_path.has_parent_path()) fs::create_directories(model_path.parent_path());
  save_model(model, model_path.string());
  fs::path trace_path = model_path;
  write_loss_trace(trace_path.replace_extension(".loss.csv").string(), trace);
  fs::path sidecar = model_path;
  write_sidecar(sidecar.replace_extension(".run.json"), cfg, "pretrain",
                {{"data", data.string()}, {"exclude", exclude}, {"samples", corpus.size()}});
}

AdaptedCheckpoint cmd_adapt(const fs::path& data, const std::string& sample, const std::optional<fs::path>& base,
                            const RunConfig& cfg) {
  cfg.validate();
  const TrainingPair pair = pick_pair(data, sample, cfg);
  const JointModel model = base_model(base, cfg);
  AdaptedCheckpoint ckpt = adapt(model, pair, cfg.adaptation);
  const fs::path out(cfg.out);
  fs::create_directories(out);
  save_checkpoint(ckpt, (out / "checkpoint.aved").string());
  write_loss_trace((out / "loss.csv").string(), ckpt.trace);
  write_sidecar(out / "run.json", cfg, "adapt",
                {{"data", data.string()}, {"sample", pair.id}, {"base", optional_path(base)}});
  return ckpt;
}

void cmd_edit(const fs::path& checkpoint, std::vector<std::string> prompts, const RunConfig& cfg) {
  cfg.validate();
  AdaptedCheckpoint ckpt = load_checkpoint(checkpoint.string());
  if (prompts.empty()) prompts = edit_prompts(ckpt.prompt);
  const GenerationOptions opts = generation_options(cfg);
  const fs::path out(cfg.out);
  const int rate = ckpt.model.config().stft.sample_rate;
  for (std::size_t k = 0; k < prompts.size(); ++k) {
    const Generation g = generate(ckpt, prompts[k], opts);
    const fs::path dir = out / numbered("edit", k);
    write_generation(dir, g, prompts[k], rate);
    write_attention(dir / "attention.aved", g.vision_attention);
    write_text(dir / "tokens.tsv", token_table(g));
  }
  write_sidecar(out / "run.json", cfg, "edit", {{"checkpoint", checkpoint.string()}, {"prompts", prompts}});
}

MetricReport cmd_eval(const fs::path& reference, const fs::path& generated, const fs::path& out) {
  const MediaSet ref = load_media_dir(reference);
  const MediaSet gen = load_media_dir(generated);
  const MetricReport report = evaluate(ref, gen, Embedders::standard());
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  json j = report.to_json();
  j["reference"] = reference.string();
  j["generated"] = generated.string();
  write_text(out, j.dump(2) + "\n");
  return report;
}

const std::vector<std::pair<double, double>>& ablation_grid() {
  static const std::vector<std::pair<double, double>> grid = {{0.4, 4.0}, {0.6, 3.0}, {0.8, 2.0}, {1.0, 1.0}};
  return grid;
}

void cmd_ablate(const fs::path& data, const std::string& sample, const std::optional<fs::path>& base,
                const RunConfig& cfg, std::vector<std::string> prompts) {
  cfg.validate();
  const TrainingPair pair = pick_pair(data, sample, cfg);
  const JointModel model = base_model(base, cfg);
  if (prompts.empty()) prompts = edit_prompts(pair.prompt);
  MediaSet reference;
  reference.audio.push_back(pair.audio);
  reference.images.push_back(pair.image);
  reference.prompts.push_back(pair.prompt);
  const fs::path out(cfg.out);
  fs::create_directories(out);
  const int rate = model.config().stft.sample_rate;

  std::string summary = "mode,fusion,alpha,beta,clip_i,dino,clap_a,clip_t,clap_t,avss,edit_attention_mass,final_loss\n";
  for (AdaptationMode mode : {AdaptationMode::kTextOnly, AdaptationMode::kUnimodal, AdaptationMode::kMultimodal}) {
    for (FusionPoint fusion : {FusionPoint::kEarly, FusionPoint::kLate}) {
      RunConfig c = cfg;
      c.adaptation.mode = mode;
      c.adaptation.fusion = fusion;
      AdaptedCheckpoint ckpt = adapt(model, pair, c.adaptation);
      const fs::path cell = out / (std::string(to_string(mode)) + "_" + to_string(fusion));
      fs::create_directories(cell);
      save_checkpoint(ckpt, (cell / "checkpoint.aved").string());
      write_loss_trace((cell / "loss.csv").string(), ckpt.trace);

      for (const auto& [alpha, beta] : ablation_grid()) {
        c.enhance = true;
        c.enhancement.alpha = alpha;
        c.enhancement.beta = beta;
        const GenerationOptions opts = generation_options(c);
        const fs::path dir = cell / grid_name(alpha, beta);
        MediaSet generated;
        double mass = 0.0;
        for (std::size_t k = 0; k < prompts.size(); ++k) {
          const Generation g = generate(ckpt, prompts[k], opts);
          write_generation(dir / numbered("edit", k), g, prompts[k], rate);
          mass += edit_attention_mass(g.vision_attention, g.classes);
          generated.audio.push_back(g.audio);
          generated.images.push_back(g.image);
          generated.prompts.push_back(prompts[k]);
        }
        mass /= static_cast<double>(prompts.size());
        const MetricReport report = evaluate(reference, generated, Embedders::standard());
        json j = report.to_json();
        j["mode"] = to_string(mode);
        j["fusion_point"] = to_string(fusion);
        j["alpha"] = alpha;
        j["beta"] = beta;
        j["edit_attention_mass"] = mass;
        j["final_loss"] = ckpt.final_loss;
        write_text(dir / "report.json", j.dump(2) + "\n");
        write_sidecar(dir / "run.json", c, "ablate",
                      {{"data", data.string()}, {"sample", pair.id}, {"base", optional_path(base)}, {"prompts", prompts}});
        char line[512];
        std::snprintf(line, sizeof line, "%s,%s,%.1f,%.1f,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", to_string(mode),
                      to_string(fusion), alpha, beta, *report.clip_i, *report.dino, *report.clap_a, *report.clip_t,
                      *report.clap_t, *report.avss, mass, ckpt.final_loss);
        summary += line;
      }
    }
  }
  write_text(out / "summary.csv", summary);
  write_sidecar(out / "run.json", cfg, "ablate",
                {{"data", data.string()}, {"sample", pair.id}, {"base", optional_path(base)}, {"prompts", prompts}});
}

// ---------------------------------------------------------------------------

namespace {

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  int steps = 0;
  std::string mode, fusion;
  double alpha = 0.6, beta = 3.0;
  bool no_enhance = false;
  std::vector<std::string> prompts;

  CLI::Option *seed_opt = nullptr, *steps_opt = nullptr, *mode_opt = nullptr, *fusion_opt = nullptr,
              *alpha_opt = nullptr, *beta_opt = nullptr;
};

enum Flag : unsigned {
  kSeed = 1,
  kOut = 2,
  kSteps = 4,
  kMode = 8,
  kFusion = 16,
  kEnhance = 32,
  kPrompt = 64,
};

void add_common(CLI::App* app, CommonFlags& f, unsigned which) {
  app->add_option("--config", f.config, "RunConfig JSON; flags override its values")->check(CLI::ExistingFile);
  if (which & kSeed) f.seed_opt = app->add_option("--seed", f.seed, "Master seed");
  if (which & kOut) app->add_option("--out", f.out, "Output directory")->required();
  if (which & kSteps) f.steps_opt = app->add_option("--steps", f.steps, "Training steps")->check(CLI::PositiveNumber);
  if (which & kMode) {
    f.mode_opt = app->add_option("--mode", f.mode, "Adaptation mode")
                     ->check(CLI::IsMember({"text", "text_only", "unimodal", "multimodal"}));
  }
  if (which & kFusion) f.fusion_opt = app->add_option("--fusion", f.fusion, "Fusion point")->check(CLI::IsMember({"early", "late"}));
  if (which & kEnhance) {
    f.alpha_opt = app->add_option("--alpha", f.alpha, "<sot> attention gain")->check(CLI::Range(0.0, 1.0));
    f.beta_opt = app->add_option("--beta", f.beta, "Edit-token attention gain")->check(CLI::Range(1.0, 4.0));
    app->add_flag("--no-enhance", f.no_enhance, "Disable attention enhancement");
  }
  if (which & kPrompt) app->add_option("--prompt", f.prompts, "Editing prompt (repeatable)");
}

RunConfig resolve(const CommonFlags& f, bool steps_are_pretrain = false) {
  RunConfig c = f.config.empty() ? RunConfig{} : RunConfig::load(f.config);
  if (f.seed_opt && f.seed_opt->count()) c.reseed(f.seed);
  if (!f.out.empty()) c.out = f.out;
  if (f.steps_opt && f.steps_opt->count()) (steps_are_pretrain ? c.pretrain.steps : c.adaptation.steps) = f.steps;
  if (f.mode_opt && f.mode_opt->count()) c.adaptation.mode = parse_mode(f.mode);
  if (f.fusion_opt && f.fusion_opt->count()) c.adaptation.fusion = parse_fusion(f.fusion);
  if (f.alpha_opt && f.alpha_opt->count()) c.enhancement.alpha = f.alpha;
  if (f.beta_opt && f.beta_opt->count()) c.enhancement.beta = f.beta;
  if (f.no_enhance) c.enhance = false;
  c.validate();
  return c;
}

void mark_failed(const std::string& out, const std::string& message) {
  if (out.empty() || !fs::is_directory(out)) return;
  try {
    write_text(fs::path(out) / "FAILED", message + "\n");
  } catch (const Error&) {
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"One-shot joint audio-visual adaptation and editing"};
  app.require_subcommand(1);

  CommonFlags synth_f, pre_f, adapt_f, edit_f, eval_f, ablate_f;
  std::string data, sample, base, checkpoint, reference, generated, model_out;
  std::vector<std::string> exclude;
  int count = 25;

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  add_common(synth, synth_f, kSeed | kOut);
  synth->add_option("--count", count, "Number of samples")->check(CLI::PositiveNumber);

  auto* pre = app.add_subcommand("pretrain", "Train base U-Nets on a dataset");
  add_common(pre, pre_f, kSeed | kSteps);
  pre->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--model", model_out, "Output model file")->required();
  pre->add_option("--exclude", exclude, "Skip samples whose prompt contains this word (repeatable)");

  auto* adapt_cmd = app.add_subcommand("adapt", "Adapt a model to one audio-visual pair");
  add_common(adapt_cmd, adapt_f, kSeed | kOut | kSteps | kMode | kFusion);
  adapt_cmd->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  adapt_cmd->add_option("--sample", sample, "Sample id (default: first)");
  adapt_cmd->add_option("--base", base, "Base model file (default: fresh initialization)")->check(CLI::ExistingFile);

  auto* edit_cmd = app.add_subcommand("edit", "Generate edited audio and images");
  add_common(edit_cmd, edit_f, kSeed | kOut | kEnhance | kPrompt);
  edit_cmd->add_option("--checkpoint", checkpoint, "Adapted checkpoint")->required()->check(CLI::ExistingFile);

  auto* eval_cmd = app.add_subcommand("eval", "Score generated media against references");
  eval_cmd->add_option("--reference", reference, "Reference media directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--generated", generated, "Generated media directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--out", eval_f.out, "Report file")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "Sweep adaptation modes, fusion points and enhancement");
  add_common(ablate_cmd, ablate_f, kSeed | kOut | kSteps | kPrompt);
  ablate_cmd->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  ablate_cmd->add_option("--sample", sample, "Sample id (default: first)");
  ablate_cmd->add_option("--base", base, "Base model file (default: fresh initialization)")->check(CLI::ExistingFile);

  std::vector<const char*> argv;
  argv.push_back("avedit");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto opt_path = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<fs::path>(s); };
  CommonFlags& f = *synth ? synth_f : *pre ? pre_f : *adapt_cmd ? adapt_f : *edit_cmd ? edit_f : *eval_cmd ? eval_f : ablate_f;
  try {
    if (*synth) {
      const RunConfig c = resolve(f);
      cmd_synth(c.out, derive_seed(c.seed, "data"), count);
      write_sidecar(fs::path(c.out) / "run.json", c, "synth", {{"count", count}});
      out << "wrote " << count << " samples to " << c.out << "\n";
    } else if (*pre) {
      const RunConfig c = resolve(f, true);
      cmd_pretrain(data, model_out, c, exclude);
      out << "wrote " << model_out << "\n";
    } else if (*adapt_cmd) {
      const RunConfig c = resolve(f);
      const AdaptedCheckpoint ck = cmd_adapt(data, sample, opt_path(base), c);
      const std::size_t n = ck.trace.size(), w = std::min<std::size_t>(50, n);
      out << "adapted in " << n << " steps; loss " << mean_loss(ck.trace, 0, w) << " -> "
          << mean_loss(ck.trace, n - w, n) << "\n";
    } else if (*edit_cmd) {
      const RunConfig c = resolve(f);
      cmd_edit(checkpoint, f.prompts, c);
      out << "wrote edits to " << c.out << "\n";
    } else if (*eval_cmd) {
      const MetricReport r = cmd_eval(reference, generated, f.out);
      out << r.to_json().dump(2) << "\n";
    } else if (*ablate_cmd) {
      const RunConfig c = resolve(f);
      cmd_ablate(data, sample, opt_path(base), c, f.prompts);
      out << "wrote ablation to " << c.out << "\n";
    }
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    mark_failed(f.out, e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    mark_failed(f.out, e.what());
    return kExitData;
  }
  return kExitOk;
}

}  // namespace avedit
